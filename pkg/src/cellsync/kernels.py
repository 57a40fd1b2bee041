"""Backend selection for the all-pairs MI kernel.

The compiled extension ``cellsync._mikernel`` is used when importable;
otherwise, or when the environment variable ``CELLSYNC_BACKEND=python`` is
set, the numpy implementation in ``cellsync._mikernel_py`` is used.
"""

import os

import numpy as np

from . import _mikernel_py

_py = _mikernel_py
_ext = None
try:
    from . import _mikernel as _ext
except ImportError:  # extension not built
    _ext = None

BACKENDS = ("python",) + (("cython",) if _ext is not None else ())


def _default_backend():
    want = os.environ.get("CELLSYNC_BACKEND", "").strip().lower()
    if want == "python" or _ext is None:
        return "python"
    return "cython"


BACKEND = _default_backend()


def get_backend(name=None):
    """Return the kernel module for `name` (``"cython"``/``"python"``; default: active)."""
    name = name or BACKEND
    if name == "cython":
        if _ext is None:
            raise ImportError("compiled kernel cellsync._mikernel is not built")
        return _ext
    if name == "python":
        return _py
    raise ValueError(f"unknown backend {name!r}")


def prepare(z, n_bins):
    """Precompute the kernel inputs shared by every pair.

    Parameters
    ----------
    z : ndarray (n_cells, n_days, n_slots), NaN for missing
    n_bins : int

    Returns
    -------
    z, valid, codes, complete
        C-contiguous arrays in the dtypes the kernels expect. ``codes``
        holds equal-frequency bin codes for every complete cell-day.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    valid = np.ascontiguousarray(~np.isnan(z))
    complete = np.ascontiguousarray(valid.all(axis=2))
    n_slots = z.shape[2]
    order = np.argsort(z, axis=2, kind="stable")
    ranks = np.empty(z.shape, dtype=np.intp)
    np.put_along_axis(ranks, order, np.arange(n_slots, dtype=np.intp)[None, None, :], axis=2)
    codes = np.ascontiguousarray(ranks * n_bins // n_slots, dtype=np.intp)
    return z, valid, codes, complete


def pair_mi_batch(z, pairs, n_bins, miller_madow, min_valid, n_threads=1, backend=None, prepared=None):
    """Average daily MI and usable-day count for each ``(i, j)`` row of `pairs`."""
    impl = get_backend(backend)
    if prepared is None:
        prepared = prepare(z, n_bins)
    zc, valid, codes, complete = prepared
    pairs = np.ascontiguousarray(np.asarray(pairs, dtype=np.intp).reshape(-1, 2))
    if impl is _ext:
        valid = valid.view(np.uint8)
        complete = complete.view(np.uint8)
    return impl.pair_mi_batch(
        zc, valid, codes, complete, pairs, int(n_bins), bool(miller_madow), int(min_valid), int(n_threads)
    )
