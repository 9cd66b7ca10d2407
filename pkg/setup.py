"""Build script: compiles the optional Cython kernel core.

The package works without the extension (numpy reference backend is selected
at import); compilation failures therefore only emit a warning.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "phrasecap.numerics.kernels._core",
                sources=["src/phrasecap/numerics/kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    sys.stderr.write(f"warning: building without Cython kernels ({exc})\n")

setup(ext_modules=ext_modules)
