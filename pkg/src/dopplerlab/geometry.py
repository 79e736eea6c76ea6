"""Planar scene geometry: angles, path lengths, bistatic Doppler, AoA localization.

Conventions used throughout the package:
  - positions are (x, y) in meters, angles in radians in (-pi, pi]
  - the AoA of a source seen from a receiver is the direction angle of the
    vector receiver -> source
  - receiver 1 (index 0) is the reference receiver
"""
import numpy as np

C = 299792458.0


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    return np.pi - (np.pi - np.asarray(x)) % (2.0 * np.pi)


def direction_angle(a, b):
    """Direction angle of the vector a -> b. Broadcasts over leading dims."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = b - a
    return np.arctan2(d[..., 1], d[..., 0])


def advance(pos, vel, dt):
    """Constant-velocity update."""
    return np.asarray(pos, float) + np.asarray(vel, float) * dt


def heading(vel):
    vel = np.asarray(vel, float)
    return np.arctan2(vel[..., 1], vel[..., 0])


def speed(vel):
    return np.linalg.norm(np.asarray(vel, float), axis=-1)


# ---------------------------------------------------------------------------
# bistatic angles
# ---------------------------------------------------------------------------

def zeta_angles(tx, vel_tx, rx):
    """Angle between the TX velocity and the direction TX -> RX n, per receiver."""
    return wrap_angle(heading(vel_tx) - direction_angle(tx, rx))


def eta_angle(tx, vel_tx, tgt):
    """Angle between the TX velocity and the direction TX -> target."""
    return wrap_angle(heading(vel_tx) - direction_angle(tx, tgt))


def alpha_angle(tx, tgt, rx1):
    """Angle at the TX between the target direction and the reference receiver."""
    return wrap_angle(direction_angle(tx, tgt) - direction_angle(tx, rx1))


def bisector_angle(tgt, tx, rx_n):
    """Direction of the bisector at the target between TX and receiver n.

    Shortest-arc mean of the two outgoing directions; broadcasts over rx_n.
    """
    a = direction_angle(tgt, tx)
    b = direction_angle(tgt, rx_n)
    return wrap_angle(a + wrap_angle(b - a) / 2.0)


def beta_angles(tgt, tx, rx):
    """Bistatic angle at the target between TX and each receiver (nonnegative)."""
    a = direction_angle(tgt, tx)
    b = direction_angle(tgt, rx)
    return np.abs(wrap_angle(a - b))


def gamma_angles(tgt, vel_tgt, tx, rx):
    """Angle between the target velocity and the TX/RX-n bisector, per receiver."""
    return wrap_angle(heading(vel_tgt) - bisector_angle(tgt, tx, rx))


# ---------------------------------------------------------------------------
# Doppler components
# ---------------------------------------------------------------------------
# The target-path Doppler uses the factor g = 2: the derivative of the
# bistatic path length d(TX,tgt) + d(tgt,RX) under target motion is
# -2 v cos(gamma) cos(beta/2).
G_BISTATIC = 2.0


def doppler_los(tx, vel_tx, rx, lam):
    """LoS Doppler at each receiver from TX motion, (v/lam) cos(zeta_n)."""
    return (speed(vel_tx) / lam) * np.cos(zeta_angles(tx, vel_tx, rx))


def doppler_tx_tgt(tx, vel_tx, tgt, lam):
    """Doppler of the TX -> target leg from TX motion, (v/lam) cos(eta)."""
    return (speed(vel_tx) / lam) * np.cos(eta_angle(tx, vel_tx, tgt))


def doppler_tgt(tgt, vel_tgt, tx, rx, lam, g=G_BISTATIC):
    """Target-induced Doppler on the reflected path at each receiver.

    g = 2 matches the path-length derivative; g = 1 reports half that rate
    (a convention some processing chains use for the bistatic term).
    """
    gam = gamma_angles(tgt, vel_tgt, tx, rx)
    bet = beta_angles(tgt, tx, rx)
    return g * (speed(vel_tgt) / lam) * np.cos(gam) * np.cos(bet / 2.0)


def path_lengths(tx, tgt, rx):
    """(d_los, d_tx_tgt, d_tgt_rx): LoS per receiver, TX->target, target->receiver."""
    rx = np.asarray(rx, float)
    d_los = np.linalg.norm(np.asarray(tx, float) - rx, axis=-1)
    d1 = np.linalg.norm(np.asarray(tx, float) - np.asarray(tgt, float), axis=-1)
    d2 = np.linalg.norm(np.asarray(tgt, float) - rx, axis=-1)
    return d_los, d1, d2


# ---------------------------------------------------------------------------
# AoA localization
# ---------------------------------------------------------------------------

def localize(rx, aoas, min_sin=1e-6):
    """Point estimate from bearings: mean of all pairwise ray intersections.

    Near-parallel pairs (|sin of the crossing angle| < min_sin) are skipped.
    Returns None when no usable pair remains.
    """
    rx = np.asarray(rx, float)
    aoas = np.asarray(aoas, float)
    n = len(rx)
    ii, jj = np.triu_indices(n, 1)
    d = np.stack([np.cos(aoas), np.sin(aoas)], axis=1)
    p1, p2 = rx[ii], rx[jj]
    d1, d2 = d[ii], d[jj]
    cr = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    ok = np.abs(cr) >= min_sin
    if not ok.any():
        return None
    rel = p2 - p1
    t1 = (rel[:, 0] * d2[:, 1] - rel[:, 1] * d2[:, 0]) / np.where(ok, cr, 1.0)
    pts = p1 + t1[:, None] * d1
    return pts[ok].mean(axis=0)


def localize_series(rx, aoas, min_sin=1e-6):
    """Vectorized localize over a (K, N) AoA series; rows with no usable pair are NaN."""
    rx = np.asarray(rx, float)
    aoas = np.asarray(aoas, float)
    K, n = aoas.shape
    ii, jj = np.triu_indices(n, 1)
    d = np.stack([np.cos(aoas), np.sin(aoas)], axis=2)
    p1, p2 = rx[ii], rx[jj]
    d1, d2 = d[:, ii, :], d[:, jj, :]
    cr = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    rel = (p2 - p1)[None, :, :]
    t1 = (rel[..., 0] * d2[..., 1] - rel[..., 1] * d2[..., 0]) \
        / np.where(np.abs(cr) < min_sin, np.nan, cr)
    pts = p1[None] + t1[..., None] * d1
    cnt = np.sum(np.isfinite(pts[..., 0]), axis=1)
    tot = np.nansum(pts, axis=1)
    return np.where(cnt[:, None] > 0, tot / np.maximum(cnt, 1)[:, None], np.nan)


# ---------------------------------------------------------------------------
# cross-receiver angle recursions
# ---------------------------------------------------------------------------

def cumulative_aoa_offsets(aoas):
    """Cumulative wrapped AoA increments relative to receiver 1.

    aoas: per-receiver AoA of one source, shape (..., N).
    Element n is sum_{m<n} wrap(aoa[m+1] - aoa[m]); element 0 is 0.
    """
    aoas = np.asarray(aoas, float)
    inc = wrap_angle(np.diff(aoas, axis=-1))
    zeros = np.zeros(aoas.shape[:-1] + (1,))
    return np.concatenate([zeros, np.cumsum(inc, axis=-1)], axis=-1)


def zeta_from_reference(zeta1, d_tx):
    """zeta_n given zeta_1 and cumulative TX-AoA offsets."""
    return zeta1 - d_tx


def gamma_from_reference(gamma1, d_tgt):
    """gamma_n given gamma_1 and cumulative target-AoA offsets (half rate)."""
    return gamma1 - d_tgt / 2.0
