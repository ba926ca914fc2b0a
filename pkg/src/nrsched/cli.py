"""Command-line entry point: ``nrsched {train,eval,baseline,sweep,inspect-checkpoint}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig

log = logging.getLogger("nrsched")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.out is not None:
        run["out_dir"] = args.out
    if getattr(args, "deterministic", None):
        run["deterministic"] = True
    if getattr(args, "threaded", None):
        run["deterministic"] = False
    ev = {"plots": True} if getattr(args, "plots", False) else {}
    return cfg.replace(run=run, eval=ev)


def cmd_train(args) -> int:
    from .training import run_training

    cfg = _load_config(args)
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.ini")
    result = run_training(cfg, out)
    print(f"trained {result.learner_steps} learner steps over {result.actor_ttis} actor TTIs "
          f"in {result.runtime:.1f} s -> {result.checkpoint}")
    if cfg.eval.plots:
        from .report import plot_training

        plot_training(result.log_lines, out / "training_loss.png")
    return 0


def cmd_eval(args) -> int:
    from .experiments import run_eval, toysort_accuracy
    from .neural import load_checkpoint

    cfg = _load_config(args)
    if cfg.run.env == "toysort":
        acc = toysort_accuracy(load_checkpoint(args.checkpoint), cfg)
        print(json.dumps({"sorted_fraction": acc}))
        return 0
    cfg = cfg.replace(run={"td_policy": "qadra"})
    summary, _ = run_eval(cfg, args.checkpoint, cfg.run.out_dir, n_ttis=args.ttis)
    print(summary.to_json())
    return 0


def cmd_baseline(args) -> int:
    from .experiments import run_eval

    cfg = _load_config(args)
    run = {}
    if args.policy:
        run["td_policy"] = args.policy
    if args.voip_first:
        run["voip_first"] = True
    cfg = cfg.replace(run=run)
    if cfg.run.td_policy == "qadra":
        raise ConfigError("baseline needs td_policy round_robin or proportional_fair (use --policy)")
    summary, _ = run_eval(cfg, None, cfg.run.out_dir, n_ttis=args.ttis)
    print(summary.to_json())
    return 0


def cmd_sweep(args) -> int:
    from .experiments import starvation_sweep

    cfg = _load_config(args)
    if args.policy:
        cfg = cfg.replace(run={"td_policy": args.policy})
    if cfg.run.td_policy == "qadra":
        cfg = cfg.replace(run={"td_policy": "round_robin"})
    counts = [int(c) for c in args.counts.split(",") if c.strip()]
    rows = starvation_sweep(cfg, counts, n_ttis=args.ttis, out_dir=cfg.run.out_dir)
    print("n_voip,mean_dl_bps")
    for c, v in rows:
        print(f"{c},{v:.1f}")
    return 0


def cmd_inspect(args) -> int:
    from .neural import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    info = {
        "meta": ckpt.meta,
        "n_params": ckpt.params.n_params(),
        "shapes": ckpt.params.shapes(),
        "feature_mean": None if not ckpt.stats.finalized else ckpt.stats.mean.tolist(),
        "feature_std": None if not ckpt.stats.finalized else ckpt.stats.std.tolist(),
    }
    print(json.dumps(info, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrsched", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, training=False):
        p.add_argument("--config", type=Path, help="INI config file (defaults are used when omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--plots", action="store_true", help="also render PNG figures")
        if training:
            mode = p.add_mutually_exclusive_group()
            mode.add_argument("--deterministic", action="store_true",
                              help="single-threaded interleaved actors/learner")
            mode.add_argument("--threaded", action="store_true", help="actor and learner threads")

    p = sub.add_parser("train", help="train the learned scheduler")
    common(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--ttis", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate round robin / proportional fair")
    common(p)
    p.add_argument("--policy", choices=("round_robin", "proportional_fair"))
    p.add_argument("--voip-first", action="store_true")
    p.add_argument("--ttis", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="DL throughput versus number of VoIP users")
    common(p)
    p.add_argument("--policy", choices=("round_robin", "proportional_fair"))
    p.add_argument("--counts", default="0,5,10,15,20")
    p.add_argument("--ttis", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata and shapes")
    p.add_argument("checkpoint", type=Path)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FloatingPointError, OSError, RuntimeError) as exc:
        print(f"nrsched {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
