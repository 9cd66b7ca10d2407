"""Benchmark: compiled Cython kernel core vs the numpy reference backend.

Times the hot kernels standalone and one end-to-end training step of each
model. Run: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from phrasecap import captioner as cap_mod
from phrasecap import corpus, fbn
from phrasecap.config import DatasetSettings
from phrasecap.numerics import tape
from phrasecap.numerics.kernels import reference as R

try:
    from phrasecap.numerics.kernels import _core as C
except ImportError:
    C = None


def bench(fn, n=2000):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(n):
        fn()
    return (time.perf_counter() - t0) / n * 1e6  # microseconds


def kernel_row(name, ref_fn, core_fn, n=2000):
    t_ref = bench(ref_fn, n)
    if core_fn is None:
        print(f"{name:24s} {t_ref:9.1f} us        (core not built)")
        return
    t_core = bench(core_fn, n)
    print(f"{name:24s} {t_ref:9.1f} us {t_core:9.1f} us   {t_ref / t_core:5.2f}x")


def main():
    rng = np.random.default_rng(0)
    hid, nin, e, v = 64, 96, 32, 60
    w = rng.normal(size=(4 * hid, nin + hid)) * 0.1
    b = rng.normal(size=4 * hid) * 0.1
    x, h, c = rng.normal(size=nin), rng.normal(size=hid), rng.normal(size=hid)
    gh, gc = rng.normal(size=hid), rng.normal(size=hid)
    table = rng.normal(size=(v, e)) * 0.3
    wseq = rng.normal(size=(4 * hid, e + hid)) * 0.1
    ids = list(rng.integers(0, v, size=12))
    z0 = np.zeros(hid)
    aw, ab, ax = rng.normal(size=(hid, nin)), rng.normal(size=hid), rng.normal(size=nin)
    cache = R.lstm_fwd(w, b, x, h, c)[2]
    seq_cache_r = R.lstm_seq_fwd(wseq, b, table, ids, z0, z0)[1]

    print(f"{'kernel':24s} {'reference':>12s} {'cython':>12s}   speedup")
    kernel_row("affine fwd", lambda: R.affine_fwd(aw, ab, ax),
               C and (lambda: C.affine_fwd(aw, ab, ax)))
    kernel_row("lstm cell fwd", lambda: R.lstm_fwd(w, b, x, h, c),
               C and (lambda: C.lstm_fwd(w, b, x, h, c)))
    kernel_row("lstm cell bwd", lambda: R.lstm_bwd(w, x, h, c, cache, gh, gc),
               C and (lambda: C.lstm_bwd(w, x, h, c, cache, gh, gc)))
    kernel_row("lstm 12-token seq fwd", lambda: R.lstm_seq_fwd(wseq, b, table, ids, z0, z0),
               C and (lambda: C.lstm_seq_fwd(wseq, b, table, ids, z0, z0)), n=500)
    kernel_row("lstm 12-token seq bwd",
               lambda: R.lstm_seq_bwd(wseq, table, ids, seq_cache_r, gh),
               C and (lambda: C.lstm_seq_bwd(wseq, table, ids, seq_cache_r, gh)), n=500)

    # end-to-end: one caption MLE step and one FBN example under each backend
    ds = DatasetSettings(n_train=2, n_heldout=0, captions_per_scene=1)
    data = corpus.gen_dataset(ds, seed=0)
    ccfg = cap_mod.CaptionerConfig(vocab_size=len(data.vocab),
                                   feature_dim=corpus.feature_dim(ds),
                                   hidden=64, embed=32, max_words=8)
    store = cap_mod.build_params(ccfg, np.random.default_rng(0))
    feats = data.features_for(data.records[0].scene).array
    gold = cap_mod.encode_gold(data.records[0].captions[0][0], data.vocab, ccfg)

    def caption_step():
        pv = store.as_vars()
        loss, _ = cap_mod.mle_loss(pv, ccfg, feats, gold)
        tape.backward(loss)

    fcfg = fbn.FBNConfig(vocab_size=len(data.vocab), hidden=64, embed=32)
    fstore = fbn.build_params(fcfg, np.random.default_rng(0))
    cap_ids = data.vocab.encode_all(data.records[0].captions[0][0].tokens())
    fb_ids = cap_ids[:6]

    def fbn_step():
        pv = fstore.as_vars()
        logits = fbn.fbn_logits(pv, fcfg, cap_ids, cap_ids[:3], fb_ids,
                                fbn.mistake_onehot("object"))
        tape.backward(tape.scale_shift(tape.logprob(logits, 0), -1.0))

    from phrasecap.numerics.kernels import backend_name
    print(f"\nactive backend: {backend_name()}")
    print(f"caption MLE fwd+bwd:   {bench(caption_step, 100):9.1f} us")
    print(f"FBN example fwd+bwd:   {bench(fbn_step, 200):9.1f} us")
    print("\nswitch backends with PHRASECAP_KERNELS=reference|cython and rerun")


if __name__ == "__main__":
    main()
