"""Clock-free Doppler recovery from two-path phase and AoA streams.

Pipeline per run: condition the per-receiver AoA series, localize TX and
target from the conditioned bearings, reduce each frame to a small
cross-receiver system in (v_tx, v_tgt, zeta_1, gamma_1), chain damped
least-squares solves across frames, smooth the parameter track, and
reconstruct the target Doppler at receiver 1.

Frame systems use temporally differenced two-path phase differences, so
receiver clock terms (frequency, phase, and timing offsets) never enter.
"""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import geometry
from .geometry import G_BISTATIC, wrap_angle
from .lm import STALLED, LmOptions, lm_solve

# cold-start search grid: speeds in m/s, angles in rad
V_GRID = np.arange(0.0, 33.0, 2.0)
ANG_GRID = -np.pi + np.arange(16) * np.pi / 8

# multi-frame bootstrap: angle grid size and local zoom schedule
BOOT_ANGLE_POINTS = 48
BOOT_ZOOM_LEVELS = 2
BOOT_ZOOM_POINTS = 9

# track restart gates: fresh global solution must beat the drift-corrected
# anchor by the configured cost ratio AND differ materially in some parameter
RESTART_ANGLE_TOL = np.deg2rad(8.0)
RESTART_SPEED_TOL = 2.0        # m/s, absolute
RESTART_SPEED_REL = 0.2        # fraction of the anchored target speed

_WARM_OPTS_CACHE = {}
_POLISH_OPTS = LmOptions(max_iter=30, gtol=1e-10, xtol=1e-12)


def condition_series(series, window):
    """Trailing quadratic-fit endpoint of a wrapped angle series.

    The series is unwrapped along axis 0, then each sample is replaced by the
    endpoint value of a least-squares parabola over the trailing window
    (shorter near the start). A line would do for noise suppression, but its
    endpoint lags curving series by O(curvature * window^2); the quadratic
    endpoint is exact through second order. Output is wrapped to (-pi, pi].
    series: (K,) or (K, N), must be finite.
    """
    y = np.asarray(series, float)
    one = y.ndim == 1
    if one:
        y = y[:, None]
    n_k = len(y)
    if n_k == 0:
        return y[:, 0] if one else y
    inc = wrap_angle(np.diff(y, axis=0))
    y = np.concatenate([y[:1], y[:1] + np.cumsum(inc, axis=0)], axis=0)
    t = np.arange(n_k, dtype=float)
    w = np.minimum(t + 1.0, float(window))
    lo = (t - w + 1.0).astype(int)
    zrow = np.zeros((1, y.shape[1]))
    c_y = np.concatenate([zrow, np.cumsum(y, axis=0)])
    c_ty = np.concatenate([zrow, np.cumsum(t[:, None] * y, axis=0)])
    c_tty = np.concatenate([zrow, np.cumsum((t * t)[:, None] * y, axis=0)])
    ks = np.arange(n_k)
    sy = c_y[ks + 1] - c_y[lo]
    sty = c_ty[ks + 1] - c_ty[lo]
    stty = c_tty[ks + 1] - c_tty[lo]
    # moments of s = t - k over the window {k-w+1 .. k}: s runs -(w-1) .. 0,
    # so the fitted endpoint value is just the constant coefficient
    m = w - 1.0
    s1 = -m * w / 2.0
    s2 = m * w * (2.0 * m + 1.0) / 6.0
    s3 = -(m * w / 2.0) ** 2
    s4 = m * w * (2.0 * m + 1.0) * (3.0 * m * m + 3.0 * m - 1.0) / 30.0
    k2 = (ks * ks).astype(float)
    ssy = sty - ks[:, None] * sy
    sssy = stty - 2.0 * ks[:, None] * sty + k2[:, None] * sy
    quad = w >= 4.0
    a = np.empty((n_k, 3, 3))
    a[:, 0, 0] = w
    a[:, 0, 1] = a[:, 1, 0] = s1
    a[:, 0, 2] = a[:, 2, 0] = a[:, 1, 1] = s2
    a[:, 1, 2] = a[:, 2, 1] = s3
    a[:, 2, 2] = s4
    a[~quad] = np.eye(3)
    rhs = np.stack([sy, ssy, sssy], axis=1)
    rhs[~quad] = 0.0
    coef = np.linalg.solve(a, rhs)
    out = wrap_angle(np.where(quad[:, None], coef[:, 0, :], y[ks]))
    return out[:, 0] if one else out


def _fill_gaps(x):
    # forward then backward constant fill of NaN entries in a 1-D series
    x = np.asarray(x, float).copy()
    good = np.isfinite(x)
    if good.all() or not good.any():
        return x
    idx = np.where(good, np.arange(len(x)), -1)
    idx = np.maximum.accumulate(idx)
    x[idx >= 0] = x[idx[idx >= 0]]
    first = np.argmax(good)
    x[:first] = x[first]
    return x


class FrameSystem(NamedTuple):
    """One frame's reduced cross-receiver system."""
    alpha: float          # TX-frame angle between target and receiver 1
    beta: np.ndarray      # (N,) bistatic opening angle per receiver
    d_tx: np.ndarray      # (N,) cumulative TX-AoA offsets from receiver 1
    d_tgt: np.ndarray     # (N,) cumulative target-AoA offsets
    cb2: np.ndarray       # (N,) cos(beta / 2)
    meas: np.ndarray      # (N,) temporally differenced phase difference
    kc: float             # 2 pi T / lambda
    g: float = G_BISTATIC  # bistatic Doppler factor in the model


@dataclass
class ReducedRun:
    """Per-frame reduced systems plus the conditioned drift references."""
    rx_pos: np.ndarray
    slot_time: float
    lam: float
    window: int
    alpha: np.ndarray     # (K,)
    beta: np.ndarray      # (K, N)
    d_tx: np.ndarray      # (K, N)
    d_tgt: np.ndarray     # (K, N)
    meas: np.ndarray      # (K, N)
    valid: np.ndarray     # (K,) bool
    cond_tx1: np.ndarray  # (K,) conditioned TX AoA at receiver 1
    cond_bis: np.ndarray  # (K,) conditioned bisector angle at receiver 1
    g: float = G_BISTATIC

    @property
    def n_frames(self):
        return len(self.alpha)

    @property
    def kc(self):
        return 2.0 * np.pi * self.slot_time / self.lam

    def frame(self, k):
        if not self.valid[k]:
            return None
        return FrameSystem(self.alpha[k], self.beta[k], self.d_tx[k],
                           self.d_tgt[k], np.cos(self.beta[k] / 2.0),
                           self.meas[k], self.kc, self.g)


def reduce_run(rx_pos, aoa_tx, aoa_tgt, dphi, slot_time, lam, window,
               gamma_aoa="target", g=G_BISTATIC):
    """Build per-frame reduced systems from AoA and phase-difference series.

    aoa_tx, aoa_tgt: (K, N) noisy bearings per receiver (finite).
    dphi: (K, N) wrapped per-frame two-path phase difference; NaN rows mark
    frames without a usable phase readout and invalidate that frame and the
    next one (the temporal difference needs both).
    gamma_aoa selects which AoA stream drives the gamma recursion across
    receivers: "target" (reflected-path bearings, geometrically consistent)
    or "tx" (reuse the direct-path offsets for both recursions).
    """
    rx = np.asarray(rx_pos, float)
    if len(rx) < 2:
        raise ValueError("need at least two receivers to localize")
    if gamma_aoa not in ("target", "tx"):
        raise ValueError(f"gamma_aoa must be 'target' or 'tx', got {gamma_aoa!r}")
    dphi = np.asarray(dphi, float)
    c_tx = condition_series(aoa_tx, window)
    c_tgt = condition_series(aoa_tgt, window)
    p_tx = geometry.localize_series(rx, c_tx)
    p_tgt = geometry.localize_series(rx, c_tgt)
    rel = p_tgt - p_tx
    alpha = wrap_angle(np.arctan2(rel[:, 1], rel[:, 0])
                       - np.arctan2(rx[0, 1] - p_tx[:, 1], rx[0, 0] - p_tx[:, 0]))
    a_tx_at = np.arctan2(p_tx[:, 1] - p_tgt[:, 1], p_tx[:, 0] - p_tgt[:, 0])
    a_rx_at = np.arctan2(rx[None, :, 1] - p_tgt[:, 1, None],
                         rx[None, :, 0] - p_tgt[:, 0, None])
    beta = np.abs(wrap_angle(a_tx_at[:, None] - a_rx_at))
    d_tx = geometry.cumulative_aoa_offsets(c_tx)
    d_tgt = geometry.cumulative_aoa_offsets(
        c_tgt if gamma_aoa == "target" else c_tx)
    bis_raw = _fill_gaps(a_tx_at + wrap_angle(a_rx_at[:, 0] - a_tx_at) / 2.0)
    cond_bis = condition_series(bis_raw, window)
    meas = np.full_like(dphi, np.nan)
    meas[1:] = wrap_angle(dphi[1:] - dphi[:-1])
    valid = (np.isfinite(meas).all(axis=1) & np.isfinite(alpha)
             & np.isfinite(beta).all(axis=1))
    return ReducedRun(rx, float(slot_time), float(lam), int(window),
                      alpha, beta, d_tx, d_tgt, meas, valid,
                      c_tx[:, 0], cond_bis, float(g))


def reduce_channel_run(run, cfg):
    """ReducedRun from a simulated (or replayed) channel run.

    cfg is the full run configuration; its reference receiver is moved to
    index 0 so downstream reporting refers to it.
    """
    n = len(run.rx_pos)
    ref = cfg.reference_rx - 1
    order = [ref] + [j for j in range(n) if j != ref]
    dphi = wrap_angle(run.phi_tgt - run.phi_los)[:, order]
    return reduce_run(run.rx_pos[order], run.aoa_los[:, order],
                      run.aoa_tgt[:, order], dphi,
                      run.slot_time, run.lam,
                      cfg.estimator.conditioning_window,
                      gamma_aoa=cfg.gamma_recursion_aoa,
                      g=cfg.doppler_gain)


# ---------------------------------------------------------------------------
# per-frame model: parameters p = [u_tx, u_tgt, zeta_1, gamma_1], speeds u^2
# ---------------------------------------------------------------------------

def model_at(fs, p):
    u1, u2, z, g = p
    v1, v2 = u1 * u1, u2 * u2
    return fs.kc * (v1 * np.cos(z - fs.alpha)
                    + fs.g * v2 * np.cos(g - fs.d_tgt / 2.0) * fs.cb2
                    - v1 * np.cos(z - fs.d_tx))


def residual_at(fs, p):
    return fs.meas - model_at(fs, p)


def jacobian_at(fs, p):
    u1, u2, z, g = p
    ca, cn = np.cos(z - fs.alpha), np.cos(z - fs.d_tx)
    sa, sn = np.sin(z - fs.alpha), np.sin(z - fs.d_tx)
    cg = np.cos(g - fs.d_tgt / 2.0) * fs.cb2
    sg = np.sin(g - fs.d_tgt / 2.0) * fs.cb2
    J = np.empty((len(fs.meas), 4))
    J[:, 0] = -fs.kc * 2.0 * u1 * (ca - cn)
    J[:, 1] = -fs.kc * fs.g * 2.0 * u2 * cg
    J[:, 2] = -fs.kc * u1 * u1 * (sn - sa)
    J[:, 3] = fs.kc * fs.g * u2 * u2 * sg
    return J


def _solve(fs, x0, options):
    res = lm_solve(lambda p: residual_at(fs, p), lambda p: jacobian_at(fs, p),
                   x0, options)
    return res.x, res.cost, res.status


def _warm_options(max_iter):
    opts = _WARM_OPTS_CACHE.get(max_iter)
    if opts is None:
        opts = LmOptions(max_iter=max_iter, gtol=1e-8, xtol=1e-8)
        _WARM_OPTS_CACHE[max_iter] = opts
    return opts


def cold_candidates(fs, m_top=10):
    """Best grid points of the per-frame cost over the full parameter box."""
    vt, vg, zz, gg = np.meshgrid(V_GRID, V_GRID, ANG_GRID, ANG_GRID,
                                 indexing="ij")
    vt, vg = vt.ravel(), vg.ravel()
    zz, gg = zz.ravel(), gg.ravel()
    mod = fs.kc * (vt[:, None] * np.cos(zz[:, None] - fs.alpha)
                   + fs.g * vg[:, None]
                   * np.cos(gg[:, None] - fs.d_tgt[None, :] / 2.0) * fs.cb2[None, :]
                   - vt[:, None] * np.cos(zz[:, None] - fs.d_tx[None, :]))
    cost = np.sum((fs.meas[None, :] - mod) ** 2, axis=1)
    idx = np.argpartition(cost, m_top)[:m_top]
    idx = idx[np.argsort(cost[idx])]
    return [np.array([np.sqrt(max(vt[i], 0.1)), np.sqrt(max(vg[i], 0.1)),
                      zz[i], gg[i]]) for i in idx]


def solve_frame(fs, warm_start=None, max_iter=60):
    """Solve one frame: damped least squares from a warm start, or the best
    of the refined grid candidates when none is given."""
    opts = LmOptions(max_iter=max_iter)
    if warm_start is not None:
        return _solve(fs, warm_start, opts)
    best = None
    for p0 in cold_candidates(fs):
        x, c, status = _solve(fs, p0, opts)
        if best is None or c < best[1]:
            best = (x, c, status)
    return best


# ---------------------------------------------------------------------------
# multi-frame bootstrap: variable projection over an angle grid
# ---------------------------------------------------------------------------

def varpro_scan(frames, zz, gg):
    """Stacked cost over lookback frames at candidate angle pairs.

    frames: list of (FrameSystem, dz, dg) where dz/dg rotate the candidate
    angles to that frame's epoch. Speeds enter linearly and are solved in
    closed form per candidate with a nonnegativity clamp.
    Returns (v_tx, v_tgt, cost) arrays matching zz/gg.
    """
    m = len(zz)
    aa = np.zeros(m)
    bb = np.zeros(m)
    ab = np.zeros(m)
    ay = np.zeros(m)
    by = np.zeros(m)
    yy = 0.0
    for fs, dz, dg in frames:
        z = zz[:, None] + dz
        g = gg[:, None] + dg
        a = fs.kc * (np.cos(z - fs.alpha) - np.cos(z - fs.d_tx[None, :]))
        b = fs.kc * fs.g * np.cos(g - fs.d_tgt[None, :] / 2.0) * fs.cb2[None, :]
        y = fs.meas[None, :]
        aa += np.sum(a * a, axis=1)
        bb += np.sum(b * b, axis=1)
        ab += np.sum(a * b, axis=1)
        ay += np.sum(a * y, axis=1)
        by += np.sum(b * y, axis=1)
        yy += float(fs.meas @ fs.meas)
    det = aa * bb - ab * ab
    det = np.where(np.abs(det) < 1e-30, 1e-30, det)
    v1 = (bb * ay - ab * by) / det
    v2 = (aa * by - ab * ay) / det
    neg1, neg2 = v1 < 0, v2 < 0
    v1c = np.where(neg1, 0.0, v1)
    v2c = np.where(neg2, 0.0, v2)
    v2c = np.where(neg1, by / np.where(bb > 1e-30, bb, 1e-30), v2c)
    v1c = np.where(neg2, ay / np.where(aa > 1e-30, aa, 1e-30), v1c)
    v1c = np.maximum(v1c, 0.0)
    v2c = np.maximum(v2c, 0.0)
    cost = (yy - 2 * v1c * ay - 2 * v2c * by
            + v1c * v1c * aa + 2 * v1c * v2c * ab + v2c * v2c * bb)
    return v1c, v2c, cost


def lookback_frames(reduced, k0, span, n_frames):
    """Evenly spaced valid frames over [k0 - span, k0] with drift offsets.

    Offsets rotate angles solved at frame kp to frame k0's epoch using the
    conditioned TX-AoA (zeta) and bisector (gamma) references.
    """
    lo = max(1, k0 - span)
    ks = np.unique(np.round(np.linspace(lo, k0, n_frames)).astype(int))
    frames = []
    for kp in ks:
        fs = reduced.frame(kp)
        if fs is None:
            continue
        dz = -wrap_angle(reduced.cond_tx1[kp] - reduced.cond_tx1[k0])
        dg = -wrap_angle(reduced.cond_bis[kp] - reduced.cond_bis[k0])
        frames.append((fs, dz, dg))
    return frames


def matched_cost(frames, p):
    """Stacked squared residual of parameter vector p across lookback frames."""
    tot = 0.0
    for fs, dz, dg in frames:
        r = residual_at(fs, np.array([p[0], p[1], p[2] + dz, p[3] + dg]))
        tot += float(r @ r)
    return tot


def stack_solve(frames, p0):
    """Polish p0 against the stacked lookback system.

    The stacked system spans many frames, so per-frame ghost roots (which a
    square single-frame system cannot reject) carry a visibly higher cost
    here; polishing before any cost comparison keeps candidate selection
    honest.
    """
    res = lm_solve(
        lambda p: np.concatenate(
            [residual_at(fs, np.array([p[0], p[1], p[2] + dz, p[3] + dg]))
             for fs, dz, dg in frames]),
        lambda p: np.vstack(
            [jacobian_at(fs, np.array([p[0], p[1], p[2] + dz, p[3] + dg]))
             for fs, dz, dg in frames]),
        p0, _POLISH_OPTS)
    return res.x, res.cost


def bootstrap_solve(reduced, k0, est_cfg):
    """Global angle-grid scan with zoom over stacked lookback frames.

    Returns (params, stacked_cost, frames) or None when no usable frames
    exist. params is in u-space, angles at frame k0's epoch.
    """
    frames = lookback_frames(reduced, k0, est_cfg.bootstrap_span,
                             est_cfg.bootstrap_frames)
    if not frames:
        return None
    ang = -np.pi + np.arange(BOOT_ANGLE_POINTS) * (2 * np.pi / BOOT_ANGLE_POINTS)
    zz, gg = np.meshgrid(ang, ang, indexing="ij")
    v1, v2, cost = varpro_scan(frames, zz.ravel(), gg.ravel())
    j = int(np.argmin(cost))
    zc, gc = zz.ravel()[j], gg.ravel()[j]
    h = 2 * np.pi / BOOT_ANGLE_POINTS
    for _ in range(BOOT_ZOOM_LEVELS):
        dz = np.linspace(-h, h, BOOT_ZOOM_POINTS)
        zg, gz = np.meshgrid(zc + dz, gc + dz, indexing="ij")
        w1, w2, c = varpro_scan(frames, zg.ravel(), gz.ravel())
        j = int(np.argmin(c))
        zc, gc, h = zg.ravel()[j], gz.ravel()[j], h / 4.0
    p = np.array([np.sqrt(max(w1[j], 0.1)), np.sqrt(max(w2[j], 0.1)), zc, gc])
    p, cost = stack_solve(frames, p)
    return p, cost, frames


# ---------------------------------------------------------------------------
# chained estimation over a run
# ---------------------------------------------------------------------------

@dataclass
class EstimateResult:
    """Per-frame Doppler estimates and solver diagnostics.

    f_est is NaN before k_start and on frames without a usable system.
    params holds the smoothed [v_tx, v_tgt, zeta_1, gamma_1] track.
    """
    f_est: np.ndarray
    params: np.ndarray
    k_start: int
    n_bootstraps: int = 0
    n_restarts: int = 0
    n_degraded: int = 0
    n_skipped: int = 0


def estimate_run(reduced, est_cfg, k_start=None):
    """Run the chained solver over all frames from k_start on.

    k_start defaults to the conditioning window so every estimate uses a
    fully populated trailing fit.
    """
    n_k = reduced.n_frames
    nw = est_cfg.smoothing_window
    lam = reduced.lam
    if k_start is None:
        k_start = reduced.window
    k_start = max(1, int(k_start))
    out = EstimateResult(np.full(n_k, np.nan), np.full((n_k, 4), np.nan),
                         k_start)
    warm_opts = _warm_options(est_cfg.chain_max_iter)

    sols = []
    sum_v = np.zeros(2)
    sum_c = np.zeros(2, complex)
    prev = None
    cold = True
    vbar = None
    zbar = gbar = 0.0
    next_check = None
    for k in range(k_start, n_k):
        fs = reduced.frame(k)
        if fs is None:
            prev = None
            cold = True
            out.n_skipped += 1
            continue
        restarted = None
        if cold or prev is None:
            boot = bootstrap_solve(reduced, k, est_cfg)
            if boot is None:
                out.n_skipped += 1
                continue
            p0, _, _ = boot
            x, _, status = _solve(fs, p0, _POLISH_OPTS)
            cold = False
            out.n_bootstraps += 1
            sols = []
            sum_v = np.zeros(2)
            sum_c = np.zeros(2, complex)
            next_check = k + est_cfg.check_every
        else:
            if k >= next_check and len(sols) >= nw:
                boot = bootstrap_solve(reduced, k, est_cfg)
                next_check = k + est_cfg.check_every
                if boot is not None:
                    p_f, c_f, frames = boot
                    # anchor: smoothed track, angles advanced to frame k by the
                    # conditioned references (the smoothed value lags by half a
                    # window)
                    lag = (min(len(sols), nw) - 1) // 2
                    kl = max(k - lag, 0)
                    dz_lag = -wrap_angle(reduced.cond_tx1[kl] - reduced.cond_tx1[k])
                    dg_lag = -wrap_angle(reduced.cond_bis[kl] - reduced.cond_bis[k])
                    anchor = np.array([np.sqrt(max(vbar[0], 1e-3)),
                                       np.sqrt(max(vbar[1], 1e-3)),
                                       wrap_angle(zbar + dz_lag),
                                       wrap_angle(gbar + dg_lag)])
                    anchor, c_a = stack_solve(frames, anchor)
                    v2_anchor = anchor[1] ** 2
                    speed_same = (abs(p_f[1] ** 2 - v2_anchor)
                                  <= max(RESTART_SPEED_TOL,
                                         RESTART_SPEED_REL * v2_anchor))
                    # gamma and -gamma reconstruct the same Doppler, so a
                    # sign-mirrored candidate is not a material difference
                    mirror = (speed_same
                              and abs(wrap_angle(p_f[2] - anchor[2]))
                              <= RESTART_ANGLE_TOL
                              and abs(wrap_angle(p_f[3] + anchor[3]))
                              <= RESTART_ANGLE_TOL)
                    if c_f < est_cfg.adopt_ratio * c_a and not mirror and (
                            abs(wrap_angle(p_f[2] - anchor[2])) > RESTART_ANGLE_TOL
                            or abs(wrap_angle(p_f[3] - anchor[3])) > RESTART_ANGLE_TOL
                            or not speed_same):
                        out.n_restarts += 1
                        x, _, status = _solve(fs, p_f, _POLISH_OPTS)
                        sols = []
                        sum_v = np.zeros(2)
                        sum_c = np.zeros(2, complex)
                        restarted = x
            if restarted is None:
                x, _, status = _solve(fs, prev, warm_opts)
        if restarted is None and status == STALLED and prev is not None:
            # keep the previous solution and force a fresh bootstrap next frame
            out.n_degraded += 1
            cold = True
            x = prev
        prev = x
        v1, v2 = x[0] ** 2, x[1] ** 2
        z1, g1 = wrap_angle(x[2]), wrap_angle(x[3])
        sols.append((v1, v2, z1, g1))
        sum_v += (v1, v2)
        sum_c += (np.exp(1j * z1), np.exp(1j * g1))
        if len(sols) > nw:
            old = sols[len(sols) - nw - 1]
            sum_v -= old[:2]
            sum_c -= (np.exp(1j * old[2]), np.exp(1j * old[3]))
        m = min(len(sols), nw)
        vbar = sum_v / m
        zbar = float(np.angle(sum_c[0]))
        gbar = float(np.angle(sum_c[1]))
        out.params[k] = (vbar[0], vbar[1], zbar, gbar)
        out.f_est[k] = (fs.g * (vbar[1] / lam) * np.cos(gbar)
                        * np.cos(fs.beta[0] / 2.0))
    return out
