"""Command line entry point: `hhvems run|experiment|stats|grade-fit|bench`."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cycles import resolve_cycle
from .driver_model import DualSpeedModel, accel_setpoint, stationary
from .harness import (ALGOS, RunConfig, experiment_crosstrain, experiment_progression,
                      initial_stats, learn_stats_from_cycle, run_closed_loop, write_log,
                      write_summary)
from .params import load_config
from .terrain import SAMPLE_OFFSETS, ElevationProfile, grade_at


def _run_config(a) -> RunConfig:
    cfg = load_config(a.config)
    if a.seed is not None:
        cfg = replace(cfg, sgdm=replace(cfg.sgdm, seed=a.seed))
    return RunConfig(resolve_cycle(a.cycle), a.algo, cfg, max_time=a.max_time,
                     seed=cfg.sgdm.seed, backend=a.backend)


def _stats(a, cfg):
    return DualSpeedModel.load(a.stats) if a.stats else initial_stats(cfg)


def cmd_run(a) -> int:
    rc = _run_config(a)
    res = run_closed_loop(rc, _stats(a, rc.config))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_log(res.log, out / "log.csv")
    write_summary(res, rc, out / "summary.json")
    res.stats.save(out / "stats.json")
    print(json.dumps(res.metrics.to_dict(), indent=2))
    return 0 if res.fault is None else 2


def cmd_experiment(a) -> int:
    rc = _run_config(a)
    if a.kind == "progression":
        metrics = experiment_progression(rc, a.runs, _stats(a, rc.config), a.out)
    else:
        if a.source_stats:
            src = DualSpeedModel.load(a.source_stats)
        else:
            src = learn_stats_from_cycle(resolve_cycle(a.source_cycle), rc.config)
        metrics = experiment_crosstrain(rc, src, a.runs, a.out)
    for k, m in enumerate(metrics):
        print(f"run {k}: fuel {m.fuel_g:.2f} g, tracking {m.tracking_m_per_km:.3f} m/km")
    return 0


def cmd_stats(a) -> int:
    cfg = load_config(a.config)
    if a.action == "learn":
        stats = learn_stats_from_cycle(resolve_cycle(a.cycle), cfg, a.passes)
        stats.save(a.out)
        print(f"wrote {a.out}")
        return 0
    stats = DualSpeedModel.load(a.file)
    np.set_printoptions(precision=3, suppress=True, linewidth=160)
    for name, m in (("low", stats.low), ("high", stats.high)):
        nu = stationary(m)
        w_set = accel_setpoint(m, cfg.cost.alpha_w, cfg.cost.beta_w, nu)
        print(f"[{name}] alpha={m.alpha} w_set={w_set:.4f} m/s^2")
        print("  levels     ", m.grid.levels)
        print("  stationary ", nu)
    return 0


def cmd_grade_fit(a) -> int:
    trace = resolve_cycle(a.cycle)
    prof = ElevationProfile.from_trace(trace)
    if prof is None:
        print("cycle has no elevation column", file=sys.stderr)
        return 1
    rows = []
    for ell in np.arange(0.0, prof.dist[-1], a.step):
        gm = prof.fit_ahead(float(ell))
        rows.append((ell, prof.grade(float(ell)), float(grade_at(gm, float(ell)))))
    arr = np.array(rows)
    err = np.degrees(np.abs(arr[:, 1] - arr[:, 2]))
    print(f"{len(rows)} fits over {SAMPLE_OFFSETS[-1]:.0f} m windows; "
          f"grade error mean {err.mean():.3f} deg, max {err.max():.3f} deg")
    if a.out:
        np.savetxt(a.out, arr, delimiter=",", header="ell_m,grade_profile_rad,grade_fit_rad",
                   comments="")
    return 0


def cmd_bench(a) -> int:
    from .bench import run_benchmarks
    report = run_benchmarks(repeats=a.repeats)
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hhvems", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def run_args(sp):
        sp.add_argument("--cycle", required=True, help="CSV path, 'udds', 'us06' or 'synth[:seed]'")
        sp.add_argument("--algo", required=True, choices=ALGOS)
        sp.add_argument("--config", default=None, help="JSON config (defaults if omitted)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--max-time", type=float, default=None)
        sp.add_argument("--stats", default=None, help="initial demand statistics (JSON)")
        sp.add_argument("--backend", default="auto", choices=("auto", "python"))

    sp = sub.add_parser("run", help="one closed-loop simulation")
    run_args(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("experiment", help="learning progression or cross-training")
    sp.add_argument("kind", choices=("progression", "crosstrain"))
    run_args(sp)
    sp.add_argument("--runs", type=int, default=4)
    sp.add_argument("--source-cycle", default="us06")
    sp.add_argument("--source-stats", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("stats", help="learn or inspect demand statistics")
    ssub = sp.add_subparsers(dest="action", required=True)
    sl = ssub.add_parser("learn")
    sl.add_argument("--cycle", required=True)
    sl.add_argument("--out", required=True)
    sl.add_argument("--passes", type=int, default=3)
    sl.add_argument("--config", default=None)
    ss = ssub.add_parser("show")
    ss.add_argument("file")
    ss.add_argument("--config", default=None)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("grade-fit", help="fit the look-ahead elevation model along a cycle")
    sp.add_argument("--cycle", required=True)
    sp.add_argument("--step", type=float, default=50.0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_grade_fit)

    sp = sub.add_parser("bench", help="compiled vs pure-Python kernel timings")
    sp.add_argument("--repeats", type=int, default=20)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    a = build_parser().parse_args(argv)
    return a.func(a)


if __name__ == "__main__":
    sys.exit(main())
