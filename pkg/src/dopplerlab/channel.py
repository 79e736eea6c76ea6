"""OFDM pilot-level channel simulation and delay-domain path extraction.

Per slot each receiver sees two paths: the direct TX path and the TX ->
target -> RX reflection. Receivers run on their own clocks, so every RX n
applies a constant carrier frequency offset (phase ramp over slots), a
constant phase offset, and a constant timing offset (linear phase over
subcarriers). Extraction works in the delay domain: windowed CFR, oversampled
IDFT, two-peak search, parabolic refinement, phase read-out at the refined
delay. The earlier peak is labeled LoS.
"""
from dataclasses import dataclass

import numpy as np

from . import geometry, kernels
from .geometry import C

# independent substreams per draw purpose so one can be overridden
# without disturbing the others
_TAG_CLOCK = 1
_TAG_RCS = 2
_TAG_AOA = 3
_TAG_AWGN = 4
_TAG_PILOT = 5

CHANNEL_DUMP_COLUMNS = ("k", "rx", "phi_los_rad", "phi_tgt_rad",
                        "aoa_los_rad", "aoa_tgt_rad", "amp_los", "amp_tgt")


@dataclass
class ClockState:
    """Per-receiver clock impairments, constant over a run."""
    cfo_hz: np.ndarray
    po_rad: np.ndarray
    to_s: np.ndarray


@dataclass
class RunData:
    """Per-slot channel observables plus ground truth for one run."""
    seed: int
    rx_pos: np.ndarray        # (N, 2)
    slot_time: float
    lam: float
    valid: np.ndarray         # (K,) both paths extracted at every RX
    phi_los: np.ndarray       # (K, N) extracted peak phases, NaN where invalid
    phi_tgt: np.ndarray
    aoa_los: np.ndarray       # (K, N) bearing measurements
    aoa_tgt: np.ndarray
    amp_los: np.ndarray
    amp_tgt: np.ndarray
    delay_los: np.ndarray     # (K, N) refined delays, seconds
    delay_tgt: np.ndarray
    f_true: np.ndarray        # (K,) target Doppler at the reference RX
    f_net_max: float          # worst-case net per-slot Doppler over the run
    clocks: ClockState
    rho: float                # RCS draw used for the run

    @property
    def n_frames(self):
        return len(self.valid)

    @property
    def n_dropped(self):
        return int((~self.valid).sum())


def stream(seed, tag):
    return np.random.default_rng([int(seed), int(tag)])


def draw_clocks(seed, n_rx, clock_cfg):
    rng = stream(seed, _TAG_CLOCK)
    return ClockState(
        cfo_hz=rng.uniform(-clock_cfg.cfo_max_hz, clock_cfg.cfo_max_hz, n_rx),
        po_rad=rng.uniform(0.0, 2.0 * np.pi, n_rx),
        to_s=rng.uniform(0.0, clock_cfg.to_max_s, n_rx),
    )


def draw_rcs(seed, mean, spread):
    """Lognormal RCS moment-matched to the given mean and variance ratio.

    spread = E[rho^2]/E[rho]^2; spread <= 1 disables fluctuation.
    """
    if spread <= 1.0:
        return float(mean)
    sig2 = np.log(spread)
    mu = np.log(mean) - 0.5 * sig2
    return float(np.exp(stream(seed, _TAG_RCS).normal(mu, np.sqrt(sig2))))


def pilot_phase_table(seed, n_frames, n_pilot):
    """Unit-magnitude pilot symbols; row k is the slot-k sequence."""
    ph = stream(seed, _TAG_PILOT).uniform(0.0, 2.0 * np.pi, (n_frames, n_pilot))
    return np.exp(1j * ph)


def path_amplitudes(tx_power, lam, d_los, d1, d2, rho):
    """Free-space LoS amplitude and bistatic radar-equation target amplitude."""
    a_los = np.sqrt(tx_power) * lam / (4.0 * np.pi * d_los)
    a_tgt = np.sqrt(tx_power * lam**2 * rho / (4.0 * np.pi) ** 3) / (d1 * d2)
    return a_los, a_tgt


def synth_pilot_frames(wf, pilots, t_slot, tau_los, tau_tgt, a_los, a_tgt,
                       clocks, noise_var, rng_awgn):
    """Received pilot subcarriers for a batch of slots.

    pilots: (B, Np); t_slot: (B,); tau/a: (B, N). Returns (B, N, Np).
    """
    freqs = (np.arange(wf.n_pilot) * wf.comb) * wf.scs_hz       # baseband
    phase_common = (clocks.po_rad[None, :, None]
                    + 2.0 * np.pi * clocks.cfo_hz[None, :, None] * t_slot[:, None, None])
    tau_eff_los = tau_los[:, :, None] + clocks.to_s[None, :, None]
    tau_eff_tgt = tau_tgt[:, :, None] + clocks.to_s[None, :, None]
    h = (a_los[:, :, None]
         * np.exp(-1j * 2.0 * np.pi * (wf.fc_hz * tau_los[:, :, None]
                                       + freqs * tau_eff_los))
         + a_tgt[:, :, None]
         * np.exp(-1j * 2.0 * np.pi * (wf.fc_hz * tau_tgt[:, :, None]
                                       + freqs * tau_eff_tgt)))
    y = pilots[:, None, :] * np.exp(1j * phase_common) * h
    if noise_var > 0.0:
        shape = y.shape
        y = y + rng_awgn.normal(0.0, np.sqrt(noise_var / 2.0), shape) \
            + 1j * rng_awgn.normal(0.0, np.sqrt(noise_var / 2.0), shape)
    return y


def interp_pilot_grid(hp, wf):
    """Linear interpolation from the pilot comb to the full subcarrier grid
    (edge values held)."""
    idx = np.arange(wf.n_sc)
    pos = idx / wf.comb
    i0 = np.minimum(pos.astype(int), wf.n_pilot - 1)
    i1 = np.minimum(i0 + 1, wf.n_pilot - 1)
    frac = np.clip(pos - i0, 0.0, 1.0)
    return (1.0 - frac) * hp[..., i0] + frac * hp[..., i1]


def ls_estimate(y, pilots, wf):
    """Least-squares CFR at pilot subcarriers, interpolated to the full grid."""
    return interp_pilot_grid(y / pilots[:, None, :], wf)


def cir_from_cfr(h, wf, oversampling=None):
    """Windowed, zero-padded, oversampled IDFT of the CFR.

    Delay bin width is 1/(fft_size*oversampling*scs). A lower oversampling
    may be requested for the peak scan; extraction always refines onto the
    configured fine grid, so the result does not depend on the scan grid as
    long as peaks stay separated.
    """
    win = np.hanning(wf.n_sc)
    L = wf.fft_size * (oversampling or wf.oversampling)
    return np.fft.ifft(h * win, n=L, axis=-1)


# power threshold above the median delay bin, and minimum peak separation
# (half of the Hann main lobe for the occupied bandwidth)
PEAK_THRESHOLD_DB = 6.0


def min_separation_bins(wf, grid_len):
    return max(2, int(round(2.0 * grid_len / wf.n_sc)))


def extract_paths(cir, h, wf):
    """Two-path delay/phase/amplitude estimates from a batch of CIR rows.

    cir: (..., L) peak-scan grid; h: (..., n_sc) interpolated CFR; leading
    dims are flattened. Peaks found on the cir grid are refined on the fine
    grid (fft_size * oversampling bins) by parabolic interpolation with the
    CFR read out at the refined delay. Readout works on the raw pilot comb
    (zero-stuffed to subcarrier positions): linear interpolation preserves
    the pilot values but bends the lobe shape between them, which would bias
    the refined delays and phases. The two paths are then re-read
    alternately, each time after subtracting the other's modeled comb
    response; three rounds reach the fixed point of this cancellation at
    the separations the scan accepts. Returns dict with delay, phi, amp of
    shape (..., 2) (LoS first by delay) and a validity mask of the leading
    shape.
    """
    lead = cir.shape[:-1]
    L = cir.shape[-1]
    l_fine = wf.fft_size * wf.oversampling
    ratio = l_fine // L
    if ratio * L != l_fine:
        raise ValueError("cir grid must divide the fine grid")
    power = np.abs(cir.reshape(-1, L)) ** 2
    med = np.median(power, axis=-1)
    thresh = med * 10.0 ** (PEAK_THRESHOLD_DB / 10.0)
    coarse = kernels.scan_peaks(power, thresh, min_separation_bins(wf, L))
    valid = ~np.isnan(coarse).any(axis=-1)
    coarse = np.where(np.isnan(coarse), 1.0, coarse)   # masked out below
    win = np.hanning(wf.n_sc)
    pil_sc = np.arange(wf.n_pilot) * wf.comb
    win_gain = win[pil_sc].sum()
    h2 = h.reshape(len(power), -1)
    hc = np.zeros_like(h2)
    hc[:, pil_sc] = h2[:, pil_sc]
    bins, z = kernels.refine_read(hc * win, coarse * ratio, ratio, l_fine)

    rows = np.arange(len(power))
    strong = np.argmax(np.abs(z), axis=1)
    weak = 1 - strong
    # re-read window size is fixed so accuracy does not depend on the scan grid
    half = max(ratio, 4)

    def resid_without(idx):
        amp = z[rows, idx] / win_gain
        model = np.zeros_like(h2)
        model[:, pil_sc] = amp[:, None] * np.exp(
            (-2j * np.pi / l_fine) * pil_sc[None, :] * bins[rows, idx][:, None])
        return (hc - model) * win

    for which, other in ((weak, strong), (strong, weak), (weak, strong),
                         (strong, weak), (weak, strong)):
        b1, z1 = kernels.refine_read(resid_without(other),
                                     bins[rows, which][:, None], half, l_fine)
        bins[rows, which] = b1[:, 0]
        z[rows, which] = z1[:, 0]

    order = np.argsort(bins, axis=-1)             # earlier delay first -> LoS
    bins = bins[rows[:, None], order]
    z = z[rows[:, None], order]
    delay = bins / (l_fine * wf.scs_hz)
    phi = np.angle(z)
    amp = np.abs(z) / win_gain
    bad = ~valid
    for arr in (delay, phi, amp):
        arr[bad] = np.nan
    return dict(delay=delay.reshape(lead + (2,)),
                phi=phi.reshape(lead + (2,)),
                amp=amp.reshape(lead + (2,)),
                valid=valid.reshape(lead))


def truth_track(cfg):
    """Per-slot true target Doppler at the configured reference receiver.

    Pure geometry (no impairments, no waveform synthesis); uses the run's
    Doppler convention factor.
    """
    wf, sc = cfg.waveform, cfg.scene
    tk = np.arange(cfg.n_frames) * wf.slot_time_s
    txk = sc.tx_start[None, :] + sc.tx_velocity()[None, :] * tk[:, None]
    tgtk = sc.tgt_start[None, :] + sc.tgt_velocity()[None, :] * tk[:, None]
    rx = np.asarray(sc.rx_pos, float)[cfg.reference_rx - 1]
    return geometry.doppler_tgt(tgtk, sc.tgt_velocity(), txk, rx, wf.lam,
                                g=cfg.doppler_gain)


def simulate_run(cfg, seed, clocks=None, chunk=64):
    """Simulate a full run and extract per-slot observables.

    clocks overrides the drawn ClockState (other random draws are unchanged).
    Raises RuntimeError when more than half of the frames fail extraction.
    """
    wf = cfg.waveform
    sc = cfg.scene
    K = cfg.n_frames
    N = sc.n_rx
    T = wf.slot_time_s
    rx = np.asarray(sc.rx_pos, float)
    if clocks is None:
        clocks = draw_clocks(seed, N, cfg.clocks)
    rho = draw_rcs(seed, cfg.rcs_mean_m2, cfg.rcs_spread)
    pilots = pilot_phase_table(seed, K, wf.n_pilot)
    rng_awgn = stream(seed, _TAG_AWGN)
    rng_aoa = stream(seed, _TAG_AOA)

    tk = np.arange(K) * T
    txk = sc.tx_start[None, :] + sc.tx_velocity()[None, :] * tk[:, None]
    tgtk = sc.tgt_start[None, :] + sc.tgt_velocity()[None, :] * tk[:, None]

    rel_tx = txk[:, None, :] - rx[None, :, :]
    rel_tgt = tgtk[:, None, :] - rx[None, :, :]
    d_los = np.linalg.norm(rel_tx, axis=2)
    d1 = np.linalg.norm(txk - tgtk, axis=1)
    d2 = np.linalg.norm(rel_tgt, axis=2)
    aoa_tx_true = np.arctan2(rel_tx[..., 1], rel_tx[..., 0])
    aoa_tgt_true = np.arctan2(rel_tgt[..., 1], rel_tgt[..., 0])

    # unit draws scaled by sigma: the same seed sees the same noise shape
    # at every noise level
    sig = np.deg2rad(cfg.aoa_sigma_deg)
    aoa_noise = rng_aoa.normal(0.0, 1.0, (2, K, N))
    aoa_los = aoa_tx_true + sig * aoa_noise[0]
    aoa_tgt = aoa_tgt_true + sig * aoa_noise[1]

    # truth and the aliasing margin
    vel_tgt = sc.tgt_velocity()
    vel_tx = sc.tx_velocity()
    a_tx_at = np.arctan2((txk - tgtk)[:, 1], (txk - tgtk)[:, 0])
    a_rx_at = np.arctan2(-rel_tgt[..., 1], -rel_tgt[..., 0])
    bis = a_tx_at[:, None] + geometry.wrap_angle(a_rx_at - a_tx_at[:, None]) / 2.0
    beta = np.abs(geometry.wrap_angle(a_tx_at[:, None] - a_rx_at))
    gamma = geometry.wrap_angle(geometry.heading(vel_tgt) - bis)
    f_tgt_all = geometry.G_BISTATIC * (sc.tgt_speed_mps / wf.lam) \
        * np.cos(gamma) * np.cos(beta / 2.0)
    f_true = truth_track(cfg)
    f_los_all = (sc.tx_speed_mps / wf.lam) * np.cos(
        geometry.wrap_angle(geometry.heading(vel_tx)
                            - np.arctan2(rx[None, :, 1] - txk[:, None, 1],
                                         rx[None, :, 0] - txk[:, None, 0])))
    eta = geometry.wrap_angle(
        geometry.heading(vel_tx) - np.arctan2(tgtk[:, 1] - txk[:, 1],
                                              tgtk[:, 0] - txk[:, 0]))
    f_txtgt = (sc.tx_speed_mps / wf.lam) * np.cos(eta)
    f_net_max = float(np.max(np.abs(f_txtgt[:, None] + f_tgt_all - f_los_all)))

    noise_var = 0.0
    if cfg.noise_enabled:
        n0 = 10.0 ** ((cfg.noise_density_dbm_hz - 30.0) / 10.0)
        noise_var = n0 * wf.scs_hz

    a_los, a_tgt = path_amplitudes(cfg.tx_power_w, wf.lam, d_los, d1[:, None], d2, rho)
    tau_los = d_los / C
    tau_tgt = (d1[:, None] + d2) / C

    phi = np.full((2, K, N), np.nan)
    amp = np.full((2, K, N), np.nan)
    delay = np.full((2, K, N), np.nan)
    valid = np.zeros(K, dtype=bool)

    for lo in range(0, K, chunk):
        hi = min(lo + chunk, K)
        y = synth_pilot_frames(wf, pilots[lo:hi], tk[lo:hi],
                               tau_los[lo:hi], tau_tgt[lo:hi],
                               a_los[lo:hi], a_tgt[lo:hi],
                               clocks, noise_var, rng_awgn)
        h = ls_estimate(y, pilots[lo:hi], wf)
        cir = cir_from_cfr(h, wf, oversampling=2)
        res = extract_paths(cir, h, wf)
        delay[0, lo:hi] = res["delay"][..., 0]
        delay[1, lo:hi] = res["delay"][..., 1]
        phi[0, lo:hi] = res["phi"][..., 0]
        phi[1, lo:hi] = res["phi"][..., 1]
        amp[0, lo:hi] = res["amp"][..., 0]
        amp[1, lo:hi] = res["amp"][..., 1]
        valid[lo:hi] = res["valid"].all(axis=1)

    n_dropped = int((~valid).sum())
    if n_dropped > K // 2:
        raise RuntimeError(
            f"simulation aborted: {n_dropped}/{K} frames dropped "
            "(two-path extraction failed on more than half of the slots)")

    return RunData(seed=seed, rx_pos=rx, slot_time=T, lam=wf.lam, valid=valid,
                   phi_los=phi[0], phi_tgt=phi[1],
                   aoa_los=aoa_los, aoa_tgt=aoa_tgt,
                   amp_los=amp[0], amp_tgt=amp[1],
                   delay_los=delay[0], delay_tgt=delay[1],
                   f_true=f_true, f_net_max=f_net_max,
                   clocks=clocks, rho=rho)


def dump_channel_csv(run, path):
    """Write the per-slot channel observables, one row per (slot, receiver)."""
    K, N = run.phi_los.shape
    with open(path, "w") as fh:
        fh.write(",".join(CHANNEL_DUMP_COLUMNS) + "\n")
        for k in range(K):
            for n in range(N):
                fh.write("%d,%d,%.9f,%.9f,%.9f,%.9f,%.6e,%.6e\n" % (
                    k, n + 1, run.phi_los[k, n], run.phi_tgt[k, n],
                    run.aoa_los[k, n], run.aoa_tgt[k, n],
                    run.amp_los[k, n], run.amp_tgt[k, n]))


def load_channel_csv(path):
    """Read a channel dump back into (phi_los, phi_tgt, aoa_los, aoa_tgt) arrays."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    k = data["k"].astype(int)
    n = data["rx"].astype(int) - 1
    K, N = k.max() + 1, n.max() + 1
    out = {}
    for col in ("phi_los_rad", "phi_tgt_rad", "aoa_los_rad", "aoa_tgt_rad",
                "amp_los", "amp_tgt"):
        arr = np.full((K, N), np.nan)
        arr[k, n] = data[col]
        out[col] = arr
    return out
