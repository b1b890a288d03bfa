"""Command-line interface: map generation, training, evaluation, invariance
reports, baselines and the oracle selftest.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import Config, ConfigError


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; runtime problems exit 2 (argparse defaults to 2)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key")


def _load_config(args) -> Config:
    cfg = Config()
    if args.config:
        cfg.update_from_file(args.config)
    cfg.update_pairs(args.overrides)
    return cfg


def build_parser() -> _Parser:
    parser = _Parser(prog="symnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-maps", help="emit map files for a suite")
    p.add_argument("--suite", required=True, choices=["iid", "ood"])
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("train", help="train a policy variant")
    p.add_argument("--variant", required=True, choices=["ans", "e-ans", "g-ans", "s-ans"])
    p.add_argument("--suite", default="iid", choices=["iid", "ood"])
    p.add_argument("--updates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="coverage report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", default=None, choices=["ans", "e-ans", "g-ans", "s-ans"],
                   help="expected variant; a mismatching checkpoint is refused")
    p.add_argument("--suite", default="ood", choices=["iid", "ood"])
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--map-seed-base", type=int, default=10_000)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("baselines", help="run FBE / FBE-RL / random")
    p.add_argument("--policy", required=True, choices=["fbe", "fbe-rl", "random"])
    p.add_argument("--checkpoint", default=None, help="actor checkpoint for fbe-rl")
    p.add_argument("--suite", default="ood", choices=["iid", "ood"])
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--map-seed-base", type=int, default=10_000)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("invariance-report",
                       help="rotation std and similarity matrix for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", default="iid", choices=["iid", "ood"])
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("selftest",
                       help="run the oracle/property checks and print a table")
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    return parser


def cmd_gen_maps(args) -> int:
    from .mapgen import generate_map, save_map_text, spec_for_suite
    from .reports import save_map_preview
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    grids = []
    for i in range(args.count):
        grid = generate_map(spec_for_suite(cfg, args.suite, args.seed + i))
        save_map_text(os.path.join(args.out, f"{args.suite}_{args.seed + i:04d}.txt"), grid)
        grids.append(grid)
    save_map_preview(os.path.join(args.out, f"{args.suite}_preview.png"), grids,
                     f"{args.suite} suite, seeds {args.seed}..{args.seed + args.count - 1}")
    print(f"wrote {args.count} {args.suite} maps to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .a2c import train
    from .reports import save_training_figure
    cfg = _load_config(args)
    if args.updates is not None:
        cfg.set("train.updates", args.updates)
    result = train(args.variant, args.suite, cfg, args.out, seed=args.seed,
                   progress=lambda u, row: print(
                       f"update {row[0]}: coverage {row[1]:.2f} m^2, entropy {row[4]:.3f}",
                       flush=True) if row[0] % 10 == 0 else None)
    fig_path = os.path.join(args.out, f"curves_{args.variant}_{args.suite}.png")
    save_training_figure(fig_path, result.curve)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"figure: {fig_path}")
    return 0


def _eval_common(args, policy_kind, net, label) -> int:
    from .metrics import evaluate_coverage
    from .reports import save_coverage_figure
    cfg = _load_config(args)
    runs = args.runs if args.runs is not None else cfg["eval.runs"]
    steps = args.steps if args.steps is not None else cfg["eval.steps"]
    os.makedirs(args.out, exist_ok=True)
    stats = evaluate_coverage(policy_kind, args.suite, cfg, runs, steps, args.seed,
                              net=net, out_dir=args.out, map_seed_base=args.map_seed_base)
    stats.write_summary_csv(os.path.join(args.out, "summary.csv"), label)
    save_coverage_figure(os.path.join(args.out, "coverage.png"), stats.records,
                         f"{label} on {args.suite} ({runs} runs)")
    print(f"{label}: coverage {stats.mean:.2f} +- {stats.std:.2f} m^2 "
          f"at step {steps} over {runs} runs")
    return 0


def cmd_eval(args) -> int:
    from .networks import load_checkpoint
    cfg = _load_config(args)
    net = load_checkpoint(args.checkpoint, cfg, expect_variant=args.variant)
    return _eval_common(args, "network", net, net.variant.tag)


def cmd_baselines(args) -> int:
    net = None
    if args.policy == "fbe-rl":
        if not args.checkpoint:
            raise ConfigError("fbe-rl needs --checkpoint for the actor map")
        from .networks import load_checkpoint
        net = load_checkpoint(args.checkpoint, _load_config(args))
    return _eval_common(args, args.policy, net, args.policy)


def cmd_invariance_report(args) -> int:
    from .metrics import collect_probe_states, invariance_report, make_probe
    from .networks import load_checkpoint
    from .reports import save_similarity_figure
    cfg = _load_config(args)
    k = args.k if args.k is not None else cfg["probe.K"]
    q = args.q if args.q is not None else cfg["probe.Q"]
    net = load_checkpoint(args.checkpoint, cfg)
    states = collect_probe_states(args.suite, cfg, q, args.seed)
    probe = make_probe(states, k)
    report = invariance_report(net, probe)
    os.makedirs(args.out, exist_ok=True)
    report.write_similarity_csv(os.path.join(args.out, "similarity_matrix.csv"))
    report.write_summary_csv(os.path.join(args.out, "rotation_std.csv"))
    save_similarity_figure(os.path.join(args.out, "similarity_matrix.png"),
                           report.similarity,
                           f"{report.variant}: rotation similarity (K={k})")
    print(f"{report.variant}: rotation std {report.std_arithmetic:.6f} "
          f"(legacy centring {report.std_legacy:.6f}), "
          f"avg off-diagonal similarity {report.avg_off_diagonal:.4f} "
          f"[K={k}, Q={probe.Q}]")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest, write_results_csv
    results = run_selftest()
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.metric}")
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_results_csv(os.path.join(args.out, "selftest.csv"), results)
    return 0 if n_fail == 0 else 2


_COMMANDS = {
    "gen-maps": cmd_gen_maps,
    "train": cmd_train,
    "eval": cmd_eval,
    "baselines": cmd_baselines,
    "invariance-report": cmd_invariance_report,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"symnav {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
