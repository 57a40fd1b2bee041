"""Pure numpy implementation of the all-pairs MI kernel.

Mirrors the compiled ``_mikernel`` extension function for function; used
when the extension is unavailable or ``CELLSYNC_BACKEND=python``.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def clogc_table(n_max):
    """``c * log(c)`` for ``c = 0..n_max`` with the ``0 log 0 = 0`` convention."""
    c = np.arange(n_max + 1, dtype=np.float64)
    return c * np.log(np.where(c > 0, c, 1.0))


def rank_codes(x, n_bins):
    """Equal-frequency bin codes: stable rank ``r`` maps to ``r * n_bins // n``."""
    n = len(x)
    order = np.argsort(x, kind="stable")
    codes = np.empty(n, dtype=np.intp)
    codes[order] = np.arange(n, dtype=np.intp) * n_bins // n
    return codes


def mi_from_table(table, n, miller_madow, clogc):
    """MI in nats from a joint count table (or a stack of them).

    The off-diagonal terms are accumulated as ``C[a, b] + C[b, a]`` over the
    upper triangle so that transposing the table (swapping the variables)
    gives a bit-identical result.
    """
    table = np.asarray(table)
    px = table.sum(axis=-1)
    py = table.sum(axis=-2)
    sx = clogc[px].sum(axis=-1)
    sy = clogc[py].sum(axis=-1)
    c = clogc[table]
    sym = c + np.swapaxes(c, -1, -2)
    off = np.triu(sym, 1).sum(axis=(-2, -1))
    diag = np.trace(c, axis1=-2, axis2=-1)
    mi = np.log(n) - ((sx + sy) - (off + diag)) / n
    mi = np.maximum(mi, 0.0)
    if miller_madow:
        mx = (px > 0).sum(axis=-1)
        my = (py > 0).sum(axis=-1)
        mxy = (table > 0).sum(axis=(-2, -1))
        mi = mi + (mx + my - mxy - 1) / (2.0 * n)
    return mi


def mi_from_codes(cx, cy, n_bins, miller_madow, clogc):
    n = len(cx)
    table = np.bincount(cx * n_bins + cy, minlength=n_bins * n_bins).reshape(n_bins, n_bins)
    return float(mi_from_table(table, n, miller_madow, clogc))


def _general_day(zi, zj, vi, vj, n_bins, need, miller_madow, clogc):
    common = vi & vj
    n = int(common.sum())
    if n < need:
        return None
    cx = rank_codes(zi[common], n_bins)
    cy = rank_codes(zj[common], n_bins)
    return mi_from_codes(cx, cy, n_bins, miller_madow, clogc)


def _pair(z, valid, codes, complete, i, j, n_bins, need, miller_madow, clogc):
    n_days, n_slots = codes.shape[1], codes.shape[2]
    daily = np.full(n_days, np.nan)
    both = complete[i] & complete[j]
    if n_slots >= need and both.any():
        days = np.flatnonzero(both)
        nd = len(days)
        flat = (
            np.arange(nd)[:, None] * (n_bins * n_bins)
            + codes[i, days] * n_bins
            + codes[j, days]
        ).ravel()
        tables = np.bincount(flat, minlength=nd * n_bins * n_bins).reshape(nd, n_bins, n_bins)
        daily[days] = mi_from_table(tables, n_slots, miller_madow, clogc)
    for d in np.flatnonzero(~both):
        v = _general_day(z[i, d], z[j, d], valid[i, d], valid[j, d], n_bins, need, miller_madow, clogc)
        if v is not None:
            daily[d] = v
    used = ~np.isnan(daily)
    n_used = int(used.sum())
    if n_used == 0:
        return np.nan, 0
    acc = 0.0
    for v in daily[used]:
        acc += v
    return acc / n_used, n_used


def pair_mi_batch(z, valid, codes, complete, pairs, n_bins, miller_madow, min_valid, n_threads=1):
    """Average daily MI for each row of `pairs`.

    Parameters
    ----------
    z : float64 (n_cells, n_days, n_slots)
    valid : bool, same shape
    codes : intp, same shape
        Precomputed bin codes, meaningful where `complete` holds.
    complete : bool (n_cells, n_days)
        Day has every slot valid.
    pairs : intp (n_pairs, 2)
    n_bins : int
    miller_madow : bool
    min_valid : int
        Minimum number of jointly valid slots for a day to count.
    n_threads : int

    Returns
    -------
    mi_avg : float64 (n_pairs,), NaN where no day was usable
    n_days : intp (n_pairs,)
    """
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    n_pairs = len(pairs)
    need = max(int(min_valid), int(n_bins))
    clogc = clogc_table(z.shape[2])
    mi = np.empty(n_pairs)
    nd = np.zeros(n_pairs, dtype=np.intp)

    def work(lo, hi):
        for p in range(lo, hi):
            mi[p], nd[p] = _pair(
                z, valid, codes, complete, pairs[p, 0], pairs[p, 1], n_bins, need, miller_madow, clogc
            )

    n_threads = max(1, int(n_threads))
    if n_threads == 1 or n_pairs < 2:
        work(0, n_pairs)
    else:
        bounds = np.linspace(0, n_pairs, n_threads + 1).astype(int)
        with ThreadPoolExecutor(n_threads) as ex:
            list(ex.map(work, bounds[:-1], bounds[1:]))
    return mi, nd
