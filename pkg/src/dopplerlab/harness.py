"""Run orchestration: seeded batches, parameter sweeps, and CSV reporting.

Batch semantics: a "run point" executes `runs_per_point` independent runs
with seeds base_seed + 0 .. base_seed + runs - 1, writes one track CSV per
run plus a summary CSV, and is a pure function of (config, base_seed).
Runs are independent, so they can execute in worker processes; set the
DOPPLERLAB_WORKERS environment variable to a process count (default 1).
"""
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import channel, config, estimator

WORKERS_ENV = "DOPPLERLAB_WORKERS"

RUN_HEADER = "k,f_true_hz,f_est_hz"
SUMMARY_HEADER = "run_id,seed,mae_hz,frames_dropped"
SWEEP_HEADER = "point,min_hz,q1_hz,median_hz,mean_hz,q3_hz,max_hz"

AOA_SWEEP_DEG = (1.0, 2.0, 3.0, 10.0, 20.0)
SPACING_SWEEP_M = (0.5, 1.0, 2.0)
TX_DISTANCE_SWEEP_M = (10.0, 7.0, 5.0, 0.0)
SPEED_SWEEP_MPS = (2.0, 6.0, 20.0)
TGT_NEAR = (12.0, -12.0)
TGT_FAR = (8.0, -12.0)


@dataclass
class RunOutcome:
    """One simulated run reduced to its reported track and summary row."""
    run_id: int
    seed: int
    mae_hz: float
    frames_dropped: int
    f_true: np.ndarray
    f_est: np.ndarray
    n_restarts: int = 0
    n_degraded: int = 0


def workers_from_env():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_once(cfg, seed):
    """Simulate one run, estimate, and summarize the track."""
    run = channel.simulate_run(cfg, seed)
    reduced = estimator.reduce_channel_run(run, cfg)
    est = estimator.estimate_run(reduced, cfg.estimator)
    finite = np.isfinite(est.f_est)
    mae = float(np.mean(np.abs(est.f_est[finite] - run.f_true[finite]))) \
        if finite.any() else float("nan")
    return RunOutcome(run_id=0, seed=int(seed), mae_hz=mae,
                      frames_dropped=run.n_dropped,
                      f_true=run.f_true, f_est=est.f_est,
                      n_restarts=est.n_restarts, n_degraded=est.n_degraded)


def _run_task(args):
    cfg, seed = args
    return run_once(cfg, seed)


def ensure_out_dir(out_dir):
    """Create out_dir and fail with an OSError now if it is not writable."""
    os.makedirs(out_dir, exist_ok=True)
    probe = os.path.join(out_dir, ".write-probe")
    with open(probe, "w") as fh:
        fh.write("ok")
    os.remove(probe)
    return out_dir


def write_track_csv(path, f_true, f_est):
    with open(path, "w") as fh:
        fh.write(RUN_HEADER + "\n")
        for k in range(len(f_true)):
            fh.write("%d,%.6f,%.6f\n" % (k, f_true[k], f_est[k]))


def write_summary_csv(path, outcomes):
    with open(path, "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for oc in outcomes:
            fh.write("%d,%d,%.6f,%d\n"
                     % (oc.run_id, oc.seed, oc.mae_hz, oc.frames_dropped))


def run_point(cfg, out_dir=None, base_seed=None, runs=None):
    """Execute a seeded batch of runs; write per-run tracks and a summary.

    Returns the list of RunOutcome in run order. out_dir=None skips all
    file output.
    """
    if base_seed is None:
        base_seed = cfg.base_seed
    if runs is None:
        runs = cfg.runs_per_point
    if out_dir is not None:
        ensure_out_dir(out_dir)
    tasks = [(cfg, int(base_seed) + i) for i in range(runs)]
    workers = workers_from_env()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_task, tasks))
    else:
        outcomes = [run_once(cfg, seed) for _, seed in tasks]
    for i, oc in enumerate(outcomes):
        oc.run_id = i
    if out_dir is not None:
        for oc in outcomes:
            write_track_csv(os.path.join(out_dir, "run_%03d.csv" % oc.run_id),
                            oc.f_true, oc.f_est)
        write_summary_csv(os.path.join(out_dir, "summary.csv"), outcomes)
    return outcomes


def aggregate_mae(maes):
    """Boxplot statistics of a set of per-run MAEs."""
    m = np.asarray(maes, float)
    q1, med, q3 = np.percentile(m, [25.0, 50.0, 75.0])
    return {"min": float(m.min()), "q1": float(q1), "median": float(med),
            "mean": float(m.mean()), "q3": float(q3), "max": float(m.max())}


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _spacing_patch(cfg, spacing):
    """Scale receiver y-offsets about the third receiver to the given
    adjacent spacing (the receiver line stays vertical)."""
    rx = np.asarray(cfg.scene.rx_pos, float)
    if len(rx) < 3:
        raise ValueError("rx-spacing sweep needs at least three receivers")
    ref_y = rx[2, 1]
    base = np.abs(np.diff(rx[:, 1]))
    base = float(np.median(base[base > 0]))
    new = rx.copy()
    new[:, 1] = ref_y + (rx[:, 1] - ref_y) * (spacing / base)
    return {"scene.rx_pos": new}


def sweep_points(cfg, name):
    """Named sweep -> list of (point label, config patch).

    Built-in names: aoa-noise, rx-spacing, tx-distance-near,
    tx-distance-far, target-speed. Any other name of the form
    `dotted.key=v1,v2,...` sweeps that config key over the listed values.
    """
    if name == "aoa-noise":
        return [("%g" % v, {"run.aoa_sigma_deg": v}) for v in AOA_SWEEP_DEG]
    if name == "rx-spacing":
        return [("%g" % s, _spacing_patch(cfg, s)) for s in SPACING_SWEEP_M]
    if name in ("tx-distance-near", "tx-distance-far"):
        tgt = np.array(TGT_NEAR if name.endswith("near") else TGT_FAR)
        return [("%g" % x, {"scene.tx_start": np.array([x, 0.0]),
                            "scene.tgt_start": tgt.copy()})
                for x in TX_DISTANCE_SWEEP_M]
    if name == "target-speed":
        return [("%g" % v, {"scene.tx_heading_deg": 270.0,
                            "scene.tgt_heading_deg": 270.0,
                            "scene.tgt_speed_mps": v})
                for v in SPEED_SWEEP_MPS]
    if "=" in name:
        key, _, vals = name.partition("=")
        key = key.strip()
        if key not in config._KEYS:
            raise ValueError(f"unknown sweep key '{key}'")
        conv = config._KEYS[key][2]
        values = [v.strip() for v in vals.split(",") if v.strip()]
        if not values:
            raise ValueError(f"sweep '{name}' lists no values")
        return [(v, {key: conv(v)}) for v in values]
    raise ValueError(
        f"unknown sweep '{name}'; expected one of aoa-noise, rx-spacing, "
        "tx-distance-near, tx-distance-far, target-speed, or 'key=v1,v2,...'")


def _slug(text):
    return "".join(c if c.isalnum() or c in "-_." else "-" for c in text)


def run_sweep(cfg, name, out_dir=None, base_seed=None, runs=None):
    """Run every point of a named sweep and write boxplot aggregates.

    Each point re-runs the full seeded batch under its patched config in
    its own subdirectory; the aggregate CSV is recomputable from the
    per-point summaries.
    """
    points = sweep_points(cfg, name)
    if not points:
        raise ValueError(f"sweep '{name}' has no points")
    if out_dir is not None:
        ensure_out_dir(out_dir)
    slug = _slug(name.partition("=")[0])
    rows = []
    for label, patch in points:
        pt_cfg = config.with_updates(cfg, **patch)
        pt_dir = None
        if out_dir is not None:
            pt_dir = os.path.join(out_dir, "%s_%s" % (slug, _slug(label)))
        outcomes = run_point(pt_cfg, pt_dir, base_seed=base_seed, runs=runs)
        stats = aggregate_mae([oc.mae_hz for oc in outcomes])
        rows.append((label, stats, outcomes))
    if out_dir is not None:
        path = os.path.join(out_dir, "sweep_%s.csv" % slug)
        with open(path, "w") as fh:
            fh.write(SWEEP_HEADER + "\n")
            for label, st, _ in rows:
                fh.write("%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n"
                         % (label, st["min"], st["q1"], st["median"],
                            st["mean"], st["q3"], st["max"]))
    return rows


def write_oracle_csv(cfg, out_dir):
    """Write the per-slot true Doppler track (geometry only, no simulation)."""
    ensure_out_dir(out_dir)
    f_true = channel.truth_track(cfg)
    path = os.path.join(out_dir, "oracle.csv")
    with open(path, "w") as fh:
        fh.write("k,f_true_hz\n")
        for k in range(len(f_true)):
            fh.write("%d,%.6f\n" % (k, f_true[k]))
    return f_true
