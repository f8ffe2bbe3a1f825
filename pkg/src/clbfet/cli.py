"""Command line entry point: ``clbfet run | sweep | validate``."""

import argparse
import logging
import sys

from .config import VARIANTS, ConfigError, RunConfig, load_config, validate
from .harness import build_obstacles, export, run_experiment, sweep
from .trajectories import KINDS, Reference

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4


def _load(path):
    return load_config(path) if path else RunConfig()


def cmd_run(args):
    cfg = _load(args.config)
    over = {k: v for k, v in (("variant", args.variant), ("trajectory", args.trajectory),
                              ("seed", args.seed)) if v is not None}
    if over:
        cfg = validate(cfg.with_run(**over))
    sim, metrics = run_experiment(cfg)
    obstacles = build_obstacles(cfg, Reference(cfg.run.trajectory, 0.0, cfg.run.duration))
    export(sim, metrics, args.out, plot=args.plot, obstacles=obstacles, config=cfg)
    print(f"{cfg.run.variant} {cfg.run.trajectory} seed={cfg.run.seed}: "
          f"error={metrics.avg_tracking_error:.4f} m  min_dist={metrics.min_center_distance:.4f} m  "
          f"collided={metrics.collided}  updates={metrics.update_count}  status={metrics.status}")
    return EXIT_DIVERGED if sim.status != "ok" else EXIT_OK


def cmd_sweep(args):
    cfg = _load(args.config)
    trajectories = args.trajectories.split(",") if args.trajectories else KINDS
    variants = args.variants.split(",") if args.variants else VARIANTS
    seeds = range(args.seeds)
    for v in variants:
        validate(cfg.with_run(variant=v))
    for tr in trajectories:
        validate(cfg.with_run(trajectory=tr))
    results = sweep(cfg, args.out, trajectories, variants, seeds, args.workers)
    bad = [r for r in results if r[3].status != "ok"]
    for tr, v, s, m in results:
        print(f"{tr:18s} {v:10s} seed={s} error={m.avg_tracking_error:.4f} collided={m.collided} status={m.status}")
    return EXIT_DIVERGED if bad else EXIT_OK


def cmd_validate(args):
    cfg = load_config(args.config)
    print(f"{args.config}: ok ({cfg.run.variant}, {cfg.run.trajectory}, {cfg.n_ticks} ticks)")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="clbfet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one configuration")
    r.add_argument("--config", help="INI file; defaults are used when omitted")
    r.add_argument("--variant", choices=VARIANTS)
    r.add_argument("--trajectory", choices=KINDS)
    r.add_argument("--seed", type=int)
    r.add_argument("--plot", action="store_true", help="also write path_xy.svg and path_3d.svg")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run the trajectory x variant x seed grid")
    s.add_argument("--config", help="INI file used as the base configuration")
    s.add_argument("--out", required=True)
    s.add_argument("--trajectories", help="comma separated subset (default: all)")
    s.add_argument("--variants", help="comma separated subset (default: all)")
    s.add_argument("--seeds", type=int, default=5, help="number of wind seeds (default: 5)")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a configuration file")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
