"""Hot kernels for delay-domain peak extraction.

Each kernel has a numba @njit build and a vectorized numpy build. The numpy
path is selected when numba is unavailable or when DOPPLERLAB_NO_NUMBA=1 is
set in the environment. Both paths implement the same scan rules; results
agree to float round-off (summation order differs in the DTFT).
"""
import os

import numpy as np

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("DOPPLERLAB_NO_NUMBA", "0") != "1"


def _scan_peaks_loop(power, thresh, min_sep):
    """Per row: two strongest local maxima above thresh, at least min_sep apart.

    Returns (B, 2) integer bin positions as floats, strongest first; NaN when
    a peak is missing.
    """
    B, M = power.shape
    out = np.full((B, 2), np.nan)
    for b in range(B):
        p = power[b]
        th = thresh[b]
        i1 = -1
        for i in range(1, M - 1):
            if p[i] > th and p[i] >= p[i - 1] and p[i] > p[i + 1]:
                if i1 < 0 or p[i] > p[i1]:
                    i1 = i
        if i1 < 0:
            continue
        out[b, 0] = i1
        i2 = -1
        for i in range(1, M - 1):
            if abs(i - i1) < min_sep:
                continue
            if p[i] > th and p[i] >= p[i - 1] and p[i] > p[i + 1]:
                if i2 < 0 or p[i] > p[i2]:
                    i2 = i
        if i2 >= 0:
            out[b, 1] = i2
    return out


def _scan_peaks_numpy(power, thresh, min_sep):
    B, M = power.shape
    inner = power[:, 1:-1]
    is_max = (inner > thresh[:, None]) & (inner >= power[:, :-2]) & (inner > power[:, 2:])
    cand = np.where(is_max, inner, -np.inf)
    out = np.full((B, 2), np.nan)
    rows = np.arange(B)
    i1 = np.argmax(cand, axis=1)
    ok1 = np.isfinite(cand[rows, i1])
    cols = np.arange(1, M - 1)
    sep_ok = np.abs(cols[None, :] - (i1 + 1)[:, None]) >= min_sep
    cand2 = np.where(sep_ok, cand, -np.inf)
    i2 = np.argmax(cand2, axis=1)
    ok2 = ok1 & np.isfinite(cand2[rows, i2])
    out[ok1, 0] = (i1 + 1)[ok1]
    out[ok2, 1] = (i2 + 1)[ok2]
    return out


def _dtft_row(h, tau):
    """sum_i h[i] exp(+2j pi i tau) via incremental rotation."""
    n = h.shape[0]
    ang = 2.0 * np.pi * tau
    step = complex(np.cos(ang), np.sin(ang))
    rot = complex(1.0, 0.0)
    acc = complex(0.0, 0.0)
    for i in range(n):
        acc += h[i] * rot
        rot *= step
    return acc


def _refine_read_loop(h, centers, half, l_fine):
    """Refine peaks near given fine-grid positions and read them out.

    h: (B, n) windowed CFR rows. centers: (B, P) approximate peak positions
    in fine-grid bins (NaN allowed). Evaluates the 2*half+1 fine bins around
    each center, takes the interior maximum, applies parabolic interpolation,
    then reads the CFR at the refined delay. Returns (bins, z) with shapes
    (B, P) float / complex: refined positions and complex peak values.
    """
    B = h.shape[0]
    P = centers.shape[1]
    m = 2 * half + 1
    bins = np.full((B, P), np.nan)
    z = np.full((B, P), np.nan + 0.0j, dtype=np.complex128)
    pw = np.empty(m)
    for b in range(B):
        for q in range(P):
            c = centers[b, q]
            if np.isnan(c):
                continue
            base = int(round(c)) - half
            for j in range(m):
                v = _dtft_row(h[b], (base + j) / l_fine)
                pw[j] = v.real * v.real + v.imag * v.imag
            mi = 1
            for j in range(2, m - 1):
                if pw[j] > pw[mi]:
                    mi = j
            den = pw[mi - 1] - 2.0 * pw[mi] + pw[mi + 1]
            d = 0.0
            if den < 0.0:
                d = 0.5 * (pw[mi - 1] - pw[mi + 1]) / den
                if d > 0.5:
                    d = 0.5
                elif d < -0.5:
                    d = -0.5
            pos = base + mi + d
            bins[b, q] = pos
            z[b, q] = _dtft_row(h[b], pos / l_fine)
    return bins, z


def _refine_read_numpy(h, centers, half, l_fine):
    B, n = h.shape
    P = centers.shape[1]
    m = 2 * half + 1
    idx = np.arange(n)
    cbase = np.nan_to_num(centers, nan=0.0).round().astype(np.int64) - half
    pw = np.empty((B, P, m))
    for j in range(m):
        ph = np.exp((2j * np.pi / l_fine) * np.einsum("bq,i->bqi", cbase + j, idx))
        pw[:, :, j] = np.abs(np.einsum("bi,bqi->bq", h, ph)) ** 2
    mi = np.argmax(pw[:, :, 1:m - 1], axis=2) + 1
    rows = np.arange(B)[:, None]
    cols = np.arange(P)[None, :]
    pm = pw[rows, cols, mi - 1]
    p0 = pw[rows, cols, mi]
    pp = pw[rows, cols, mi + 1]
    den = pm - 2.0 * p0 + pp
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(den < 0.0, 0.5 * (pm - pp) / np.where(den < 0.0, den, 1.0), 0.0)
    d = np.clip(d, -0.5, 0.5)
    bins = cbase + mi + d
    ph = np.exp((2j * np.pi / l_fine) * np.einsum("bq,i->bqi", bins, idx))
    z = np.einsum("bi,bqi->bq", h, ph)
    bad = np.isnan(centers)
    bins = np.where(bad, np.nan, bins)
    z = np.where(bad, np.nan + 0.0j, z)
    return bins, z


if USE_NUMBA:
    _dtft_row = njit(cache=True)(_dtft_row)
    scan_peaks = njit(cache=True)(_scan_peaks_loop)
    refine_read = njit(cache=True)(_refine_read_loop)
else:
    scan_peaks = _scan_peaks_numpy
    refine_read = _refine_read_numpy
