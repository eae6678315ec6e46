"""Scatter-kernel dispatch: compiled extension when available, numpy otherwise.

Set ``CROSSGAD_NO_EXT=1`` before import to force the numpy fallback (used by
the benchmark and by the backend-parity tests).
"""

import os

import numpy as np

if os.environ.get("CROSSGAD_NO_EXT"):
    _ext = None
else:
    try:
        from crossgad import _scatter as _ext
    except ImportError:  # pure-python install
        _ext = None

BACKEND = "cython" if _ext is not None else "numpy"


def scatter_rows(values, take, put, num_rows):
    """Accumulate ``values[take[e], :]`` into row ``put[e]`` of a fresh output.

    Both backends apply the additions sequentially in edge order, so the
    result is deterministic (and identical between backends).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    take = np.ascontiguousarray(take, dtype=np.int64)
    put = np.ascontiguousarray(put, dtype=np.int64)
    out = np.zeros((num_rows, values.shape[1]), dtype=np.float64)
    if _ext is not None:
        _ext.scatter_rows(values, take, put, out)
    else:
        np.add.at(out, put, values[take])
    return out
