"""Kernel backend selection.

Two interchangeable backends implement the hot numeric kernels: the compiled
Cython core (`_core`) and the numpy reference (`reference`). Selection happens
once at import, controlled by PHRASECAP_KERNELS:

  auto       compiled core when available, else reference (default)
  cython     require the compiled core, fail otherwise
  reference  force the numpy implementation

The active backend is re-exported at module level; `backend_name()` reports
which one won.
"""

import os

from ...errors import ConfigError

_choice = os.environ.get("PHRASECAP_KERNELS", "auto").lower()

if _choice not in ("auto", "cython", "reference"):
    raise ConfigError(f"PHRASECAP_KERNELS must be auto|cython|reference, got {_choice!r}")

impl = None
if _choice in ("auto", "cython"):
    try:
        from . import _core as impl  # type: ignore[no-redef]
    except ImportError as exc:
        if _choice == "cython":
            raise ConfigError("compiled kernel core requested but not built") from exc
if impl is None:
    from . import reference as impl  # type: ignore[no-redef]

affine_fwd = impl.affine_fwd
affine_bwd = impl.affine_bwd
rows_affine_fwd = impl.rows_affine_fwd
rows_affine_bwd = impl.rows_affine_bwd
lstm_fwd = impl.lstm_fwd
lstm_bwd = impl.lstm_bwd
lstm_seq_fwd = impl.lstm_seq_fwd
lstm_seq_bwd = impl.lstm_seq_bwd
embed_mean_fwd = impl.embed_mean_fwd
embed_mean_bwd = impl.embed_mean_bwd
tanh_fwd = impl.tanh_fwd
tanh_bwd = impl.tanh_bwd
sigmoid_fwd = impl.sigmoid_fwd
sigmoid_bwd = impl.sigmoid_bwd
relu_fwd = impl.relu_fwd
relu_bwd = impl.relu_bwd
softmax_fwd = impl.softmax_fwd
softmax_bwd = impl.softmax_bwd
logprob_fwd = impl.logprob_fwd
logprob_bwd = impl.logprob_bwd
matvec_fwd = impl.matvec_fwd
matvec_bwd = impl.matvec_bwd
wsum_fwd = impl.wsum_fwd
wsum_bwd = impl.wsum_bwd


def backend_name() -> str:
    return impl.NAME
