"""Backend selection for the sequential kernels.

The compiled extension is used when importable; set ``COGPSG_PURE_PYTHON=1``
to force the reference implementation.
"""
import os

import numpy as np

from cogpsg import _kernels_py

_compiled = None
if os.environ.get("COGPSG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from cogpsg import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def threshold_peaks(cand_idx, cand_val, refractory, spki, npki, searchback=1.66):
    cand_idx = np.ascontiguousarray(cand_idx, dtype=np.int64)
    cand_val = np.ascontiguousarray(cand_val, dtype=np.float64)
    impl = _compiled if _compiled is not None else _kernels_py
    return impl.threshold_peaks(cand_idx, cand_val, int(refractory), float(spki),
                                float(npki), float(searchback))


def epoch_stats(x, epoch_len):
    x = np.ascontiguousarray(x, dtype=np.float64)
    impl = _compiled if _compiled is not None else _kernels_py
    return impl.epoch_stats(x, int(epoch_len))
