"""Command-line entry point: ``cebound run | heatmap | griddensity``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import data
from .experiments import ExperimentError, feature_heatmap, grid_density_solver, load_config, run
from .nn import CorruptCheckpointError, load_checkpoint


def _cmd_run(args):
    env = dict(os.environ)
    if args.out:
        env["CEBOUND_OUT"] = args.out
    if args.seed is not None:
        env["CEBOUND_SEED"] = str(args.seed)
    cfg = load_config(args.config, env)
    art = run(cfg)
    print(json.dumps({**art.summary, "metrics": str(art.metrics_csv), "checkpoint": str(art.checkpoint)},
                     sort_keys=True))


def _cmd_heatmap(args):
    nets, _, _ = load_checkpoint(args.checkpoint)
    if "encoder" not in nets:
        raise ValueError(f"{args.checkpoint} holds no encoder (networks: {sorted(nets)})")
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("heatmap.csv")
    feature_heatmap(nets["encoder"], args.resolution, out)
    print(out)


def _cmd_griddensity(args):
    env_out = os.environ.get("CEBOUND_OUT")
    out = args.out or env_out or f"griddensity_{args.dataset}"
    seed = args.seed if args.seed is not None else int(os.environ.get("CEBOUND_SEED", 0))
    ds = data.gen_toy(args.dataset, args.n, seed)
    if ds.d != 2:
        raise ValueError(f"the grid solver needs 2-D data; {args.dataset} is {ds.d}-D")
    res = grid_density_solver(ds, args.resolution, args.y_points, args.v, args.iterations, seed=seed, out_dir=out)
    print(json.dumps({"out": str(out), "final_objective": float(res.objective[-1])}))


def build_parser():
    p = argparse.ArgumentParser(prog="cebound", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configured experiment")
    r.add_argument("--config", required=True, help="JSON experiment config")
    r.add_argument("--out", help="output directory (overrides CEBOUND_OUT and the config)")
    r.add_argument("--seed", type=int, help="seed (overrides CEBOUND_SEED and the config)")
    r.set_defaults(func=_cmd_run)

    h = sub.add_parser("heatmap", help="encoder features on a grid over the unit box")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--resolution", type=int, default=50)
    h.add_argument("--out", help="CSV path (default: heatmap.csv beside the checkpoint)")
    h.set_defaults(func=_cmd_heatmap)

    g = sub.add_parser("griddensity", help="solve the discretized autoencoder objective")
    g.add_argument("--dataset", required=True, choices=[k for k in data.KINDS if k != "UNIFORM5D"])
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--resolution", type=int, default=50)
    g.add_argument("--y-points", type=int, default=3000)
    g.add_argument("--v", type=float, default=0.00025)
    g.add_argument("--iterations", type=int, default=2000)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out")
    g.set_defaults(func=_cmd_griddensity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ExperimentError, CorruptCheckpointError, ValueError, OSError, ArithmeticError) as exc:
        print(f"cebound {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
