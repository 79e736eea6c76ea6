"""Command-line front end: seeded run batches, sweeps, truth tracks, selftest."""
import argparse
import sys

import numpy as np

from . import channel, config, estimator, geometry, harness, kernels, lm


def _add_io_args(p, seeded):
    p.add_argument("--config", metavar="PATH", default=None,
                   help="config file (key = value lines); omit for the "
                        "reference setup")
    p.add_argument("--out", metavar="DIR", default="out",
                   help="output directory (default ./out)")
    if seeded:
        p.add_argument("--seed", metavar="U64", type=int, default=None,
                       help="base seed; run i uses seed + i (default from "
                            "config)")
        p.add_argument("--runs", metavar="N", type=int, default=None,
                       help="runs per point (default from config)")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="dopplerlab",
        description="Multistatic Doppler estimation runs over a simulated "
                    "OFDM channel with unsynchronized receivers.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a seeded batch of runs and "
                                   "write track + summary CSVs")
    _add_io_args(p, seeded=True)

    p = sub.add_parser("sweep", help="run a named parameter sweep and "
                                     "write boxplot aggregates")
    _add_io_args(p, seeded=True)
    p.add_argument("--sweep", metavar="NAME", required=True,
                   help="aoa-noise | rx-spacing | tx-distance-near | "
                        "tx-distance-far | target-speed | 'key=v1,v2,...'")

    p = sub.add_parser("oracle", help="write the true per-slot Doppler "
                                      "track (no simulation)")
    _add_io_args(p, seeded=False)

    p = sub.add_parser("selftest", help="run quick internal consistency "
                                        "checks and exit nonzero on failure")
    return ap


def cmd_run(args):
    cfg = config.load_config(args.config)
    outcomes = harness.run_point(cfg, args.out, base_seed=args.seed,
                                 runs=args.runs)
    stats = harness.aggregate_mae([oc.mae_hz for oc in outcomes])
    print("%d runs -> %s" % (len(outcomes), args.out))
    print("mae_hz: median %.3f  mean %.3f  min %.3f  max %.3f"
          % (stats["median"], stats["mean"], stats["min"], stats["max"]))
    return 0


def cmd_sweep(args):
    cfg = config.load_config(args.config)
    rows = harness.run_sweep(cfg, args.sweep, args.out, base_seed=args.seed,
                             runs=args.runs)
    print("sweep %s -> %s" % (args.sweep, args.out))
    for label, st, _ in rows:
        print("  %-8s median %.3f Hz  (q1 %.3f, q3 %.3f)"
              % (label, st["median"], st["q1"], st["q3"]))
    return 0


def cmd_oracle(args):
    cfg = config.load_config(args.config)
    f_true = harness.write_oracle_csv(cfg, args.out)
    print("oracle track (%d slots) -> %s" % (len(f_true), args.out))
    print("f_true_hz: first %.3f  last %.3f" % (f_true[0], f_true[-1]))
    return 0


def _check(name, fn):
    try:
        fn()
    except Exception as e:  # noqa: BLE001 - report and count any failure
        print("FAIL %s: %s" % (name, e))
        return 1
    print("ok   %s" % name)
    return 0


def _selftest_geometry():
    cfg = config.RunConfig()
    sc = cfg.scene
    zeta = geometry.zeta_angles(sc.tx_start, sc.tx_velocity(), sc.rx_pos)
    ref = np.deg2rad([-164.7448813, -150.9453959, -135.0, -119.0546041])
    assert np.allclose(geometry.wrap_angle(zeta), ref, atol=1e-7)
    f0 = channel.truth_track(cfg)[0]
    assert abs(f0 - (-545.1119)) < 0.05, f0


def _selftest_lm():
    A = np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 1.0]])
    b = np.array([2.0, 3.0, 2.5])
    res = lm.lm_solve(lambda x: A @ x - b, lambda x: A, np.zeros(2),
                      lm.LmOptions(max_iter=10))
    x_ref = np.linalg.lstsq(A, b, rcond=None)[0]
    assert res.iterations <= 2 and np.abs(res.x - x_ref).max() < 1e-10


def _selftest_kernels():
    rng = np.random.default_rng(3)
    h = (rng.normal(size=(4, 64)) + 1j * rng.normal(size=(4, 64)))
    p = np.abs(np.fft.ifft(h * np.hanning(64), 256, axis=-1)) ** 2
    th = 4.0 * np.median(p, axis=1)
    a = np.asarray(kernels.scan_peaks(p, th, 8))
    b = np.asarray(kernels._scan_peaks_numpy(p, th, 8))
    assert np.array_equal(a, b, equal_nan=True)
    centers = np.full((4, 2), 32.0)
    ba, za = kernels.refine_read(h * np.hanning(64), centers, 6, 1024)
    bb, zb = kernels._refine_read_numpy(h * np.hanning(64), centers, 6, 1024)
    assert np.allclose(ba, bb, equal_nan=True) and np.allclose(za, zb,
                                                               equal_nan=True)


def _selftest_conditioning():
    rng = np.random.default_rng(5)
    y = rng.uniform(-np.pi, np.pi, 200)
    out = estimator.condition_series(y, 40)
    k = 137
    yy = np.unwrap(y)[:k + 1][-40:]
    t = np.arange(len(yy), dtype=float)
    fit = np.polyval(np.polyfit(t, yy, 2), t[-1])
    assert abs(geometry.wrap_angle(out[k] - fit)) < 1e-9


def _selftest_channel():
    cfg = config.with_updates(config.RunConfig(),
                              **{"run.n_frames": 48, "noise.enabled": False,
                                 "rcs.spread": 1.0})
    run = channel.simulate_run(cfg, 11)
    assert run.valid.all()
    sc = cfg.scene
    d_los, d1, d2 = geometry.path_lengths(sc.tx_start, sc.tgt_start,
                                          sc.rx_pos)
    tau = d_los / geometry.C
    err = np.abs(run.delay_los[0] - (tau + run.clocks.to_s))
    assert err.max() < 2e-9, err.max()


def cmd_selftest(args):
    failures = 0
    failures += _check("geometry reference angles and Doppler", _selftest_geometry)
    failures += _check("damped least squares on a linear system", _selftest_lm)
    failures += _check("peak-scan and readout backends agree", _selftest_kernels)
    failures += _check("trailing-fit conditioning matches direct fit",
                       _selftest_conditioning)
    failures += _check("noise-free channel delays", _selftest_channel)
    print("selftest: %s" % ("PASS" if failures == 0 else "%d FAILED" % failures))
    return 1 if failures else 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "oracle": cmd_oracle,
                "selftest": cmd_selftest}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
