"""Run configuration: typed defaults plus a flat dotted-key text format.

A config file is plain text, one `key = value` per line, `#` comments. Keys
are dotted paths (`waveform.fft_size = 1024`). Vectors use commas, point
lists use semicolons between points (`scene.rx_pos = 15,4; 15,2; 15,0; 15,-2`).
An empty file (or no file) yields the reference setup.
"""
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class WaveformConfig:
    n_rb: int = 52
    scs_hz: float = 120e3
    fc_hz: float = 28e9
    comb: int = 2
    fft_size: int = 1024
    oversampling: int = 8
    slot_time_s: float = 125e-6

    @property
    def n_sc(self):
        return 12 * self.n_rb

    @property
    def n_pilot(self):
        return self.n_sc // self.comb

    @property
    def lam(self):
        return 299792458.0 / self.fc_hz

    def validate(self):
        if self.fft_size < self.n_sc:
            raise ValueError(
                f"waveform.fft_size ({self.fft_size}) must cover {self.n_sc} subcarriers")
        if self.comb < 1 or self.n_sc % self.comb:
            raise ValueError(f"waveform.comb ({self.comb}) must divide {self.n_sc}")
        if self.oversampling < 1:
            raise ValueError("waveform.oversampling must be >= 1")


@dataclass
class ClockConfig:
    cfo_max_hz: float = 2.8e3
    to_max_s: float = 100e-9


@dataclass
class SceneConfig:
    tx_start: np.ndarray = field(default_factory=lambda: np.array([8.0, 0.0]))
    tx_heading_deg: float = 225.0
    tx_speed_mps: float = 4.0
    tgt_start: np.ndarray = field(default_factory=lambda: np.array([12.0, -12.0]))
    tgt_heading_deg: float = 315.0
    tgt_speed_mps: float = 4.0
    rx_pos: np.ndarray = field(default_factory=lambda: np.array(
        [[15.0, 4.0], [15.0, 2.0], [15.0, 0.0], [15.0, -2.0]]))

    @property
    def n_rx(self):
        return len(self.rx_pos)

    def tx_velocity(self):
        a = np.deg2rad(self.tx_heading_deg)
        return self.tx_speed_mps * np.array([np.cos(a), np.sin(a)])

    def tgt_velocity(self):
        a = np.deg2rad(self.tgt_heading_deg)
        return self.tgt_speed_mps * np.array([np.cos(a), np.sin(a)])


@dataclass
class EstimatorConfig:
    smoothing_window: int = 500
    conditioning_window: int = 2000
    chain_max_iter: int = 8
    check_every: int = 250
    adopt_ratio: float = 0.25
    bootstrap_span: int = 1500
    bootstrap_frames: int = 16
    allow_underdetermined: bool = False


@dataclass
class RunConfig:
    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    clocks: ClockConfig = field(default_factory=ClockConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    n_frames: int = 5000
    aoa_sigma_deg: float = 2.0
    tx_power_w: float = 0.2
    noise_enabled: bool = True
    noise_density_dbm_hz: float = -174.0
    rcs_mean_m2: float = 50.0
    rcs_spread: float = 1.04
    runs_per_point: int = 12
    base_seed: int = 1
    doppler_convention: str = "derivative"
    gamma_recursion_aoa: str = "target"
    reference_rx: int = 1

    @property
    def doppler_gain(self):
        """Factor g in the bistatic target Doppler: 2 matches the path-length
        derivative, 1 reports half that rate."""
        return 2.0 if self.doppler_convention == "derivative" else 1.0

    def validate(self):
        self.waveform.validate()
        if self.n_frames < 2:
            raise ValueError("run.n_frames must be at least 2")
        if self.scene.n_rx < 4 and not self.estimator.allow_underdetermined:
            raise ValueError(
                f"scene.rx_pos has {self.scene.n_rx} receivers; the per-frame "
                "system has 4 unknowns and needs at least 4 receivers to be "
                "solvable (set estimator.allow_underdetermined to bypass)")
        if self.doppler_convention not in ("derivative", "half"):
            raise ValueError(
                f"run.doppler_convention must be 'derivative' or 'half', "
                f"got {self.doppler_convention!r}")
        if self.gamma_recursion_aoa not in ("target", "tx"):
            raise ValueError(
                f"run.gamma_recursion_aoa must be 'target' or 'tx', "
                f"got {self.gamma_recursion_aoa!r}")
        if not 1 <= self.reference_rx <= self.scene.n_rx:
            raise ValueError(
                f"run.reference_rx ({self.reference_rx}) must be in "
                f"1..{self.scene.n_rx}")
        if self.runs_per_point < 1:
            raise ValueError("run.runs_per_point must be at least 1")
        return self


# key path -> (section attr or None, field name, parser)
def _as_bool(s):
    sl = s.strip().lower()
    if sl in ("1", "true", "yes", "on"):
        return True
    if sl in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _as_vec2(s):
    v = np.array([float(x) for x in s.split(",")])
    if v.shape != (2,):
        raise ValueError(f"expected 'x,y', got {s!r}")
    return v


def _as_points(s):
    rows = [r for r in (p.strip() for p in s.split(";")) if r]
    return np.array([[float(x) for x in r.split(",")] for r in rows])


_KEYS = {
    "waveform.n_rb": ("waveform", "n_rb", int),
    "waveform.scs_hz": ("waveform", "scs_hz", float),
    "waveform.fc_hz": ("waveform", "fc_hz", float),
    "waveform.comb": ("waveform", "comb", int),
    "waveform.fft_size": ("waveform", "fft_size", int),
    "waveform.oversampling": ("waveform", "oversampling", int),
    "waveform.slot_time_s": ("waveform", "slot_time_s", float),
    "clocks.cfo_max_hz": ("clocks", "cfo_max_hz", float),
    "clocks.to_max_s": ("clocks", "to_max_s", float),
    "scene.tx_start": ("scene", "tx_start", _as_vec2),
    "scene.tx_heading_deg": ("scene", "tx_heading_deg", float),
    "scene.tx_speed_mps": ("scene", "tx_speed_mps", float),
    "scene.tgt_start": ("scene", "tgt_start", _as_vec2),
    "scene.tgt_heading_deg": ("scene", "tgt_heading_deg", float),
    "scene.tgt_speed_mps": ("scene", "tgt_speed_mps", float),
    "scene.rx_pos": ("scene", "rx_pos", _as_points),
    "estimator.smoothing_window": ("estimator", "smoothing_window", int),
    "estimator.conditioning_window": ("estimator", "conditioning_window", int),
    "estimator.chain_max_iter": ("estimator", "chain_max_iter", int),
    "estimator.check_every": ("estimator", "check_every", int),
    "estimator.adopt_ratio": ("estimator", "adopt_ratio", float),
    "estimator.bootstrap_span": ("estimator", "bootstrap_span", int),
    "estimator.bootstrap_frames": ("estimator", "bootstrap_frames", int),
    "estimator.allow_underdetermined": ("estimator", "allow_underdetermined", _as_bool),
    "run.n_frames": (None, "n_frames", int),
    "run.aoa_sigma_deg": (None, "aoa_sigma_deg", float),
    "run.tx_power_w": (None, "tx_power_w", float),
    "run.runs_per_point": (None, "runs_per_point", int),
    "run.base_seed": (None, "base_seed", int),
    "run.doppler_convention": (None, "doppler_convention", str),
    "run.gamma_recursion_aoa": (None, "gamma_recursion_aoa", str),
    "run.reference_rx": (None, "reference_rx", int),
    "noise.enabled": (None, "noise_enabled", _as_bool),
    "noise.density_dbm_hz": (None, "noise_density_dbm_hz", float),
    "rcs.mean_m2": (None, "rcs_mean_m2", float),
    "rcs.spread": (None, "rcs_spread", float),
}


def parse_config(text):
    """Parse flat-key config text into a validated RunConfig."""
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown config key '{key}'")
        section, attr, conv = _KEYS[key]
        try:
            parsed = conv(val)
        except ValueError as e:
            raise ValueError(f"line {lineno}: bad value for '{key}': {e}") from None
        if section is None:
            setattr(cfg, attr, parsed)
        else:
            setattr(getattr(cfg, section), attr, parsed)
    return cfg.validate()


def load_config(path=None):
    """Load a config file; None or a missing value yields reference defaults."""
    if path is None:
        return RunConfig().validate()
    with open(path) as fh:
        return parse_config(fh.read())


def with_updates(cfg, **flat):
    """Copy cfg with flat dotted-key overrides, e.g. with_updates(c, **{'run.aoa_sigma_deg': 5})."""
    cfg = replace(
        cfg,
        waveform=replace(cfg.waveform),
        clocks=replace(cfg.clocks),
        scene=replace(cfg.scene),
        estimator=replace(cfg.estimator),
    )
    for key, value in flat.items():
        if key not in _KEYS:
            raise ValueError(f"unknown config key '{key}'")
        section, attr, _ = _KEYS[key]
        if section is None:
            setattr(cfg, attr, value)
        else:
            setattr(getattr(cfg, section), attr, value)
    return cfg.validate()
