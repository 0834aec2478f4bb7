"""Command-line entry points.

Exit codes: 0 on success, 2 on configuration or argument errors, 3 when a
run finished but a --check gate failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import controller as ctl
from .env import ConfigError
from .harness import (
    check_ablation,
    check_compare,
    check_theory,
    emit_results,
    ensure_outdir,
    load_spec,
    run_ablation,
    run_compare,
    run_theory,
    write_svg,
)
from .rng import RNG_VERSION
from .scorer import ProtocolError, ScorerBackend, TransportError, check_remote


def _ints(text: str):
    return tuple(int(x) for x in text.split(",") if x)


def _floats(text: str):
    return tuple(float(x) for x in text.split(",") if x)


def _common(sub):
    sub.add_argument("--config", default="", help="JSON file with env/params overrides")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--reps", type=int, default=None)
    sub.add_argument("--out", default="out", help="directory for results.csv and charts")
    sub.add_argument("--backend", choices=("local", "remote"), default="local")
    sub.add_argument("--endpoint", default="", help="scorer service base URL for --backend remote")
    sub.add_argument("--check", action="store_true", help="gate the run on its acceptance checks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uats",
        description="Uncertainty-aware tree search experiments on a synthetic reasoning environment",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("theory", help="chain-selection degradation over a horizon grid")
    _common(p)
    p.add_argument("--t-grid", type=_ints, default=None)
    p.set_defaults(func=cmd_theory)

    p = subs.add_parser("compare", help="methods versus candidate-path count at equal budget")
    _common(p)
    p.add_argument("--n-grid", type=_ints, default=None)
    p.add_argument("--methods", default="", help="comma-separated subset of the method names")
    p.add_argument("--checkpoint", default="", help="controller checkpoint enabling a-uats")
    p.set_defaults(func=cmd_compare)

    p = subs.add_parser("ablate", help="sweep one search knob, compute-matched")
    _common(p)
    p.add_argument("--parameter", default=None)
    p.add_argument("--grid", type=_floats, default=None)
    p.add_argument("--paths", type=int, default=16, help="candidate-path count N to size the beam")
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("train-controller", help="train the search controller and save a checkpoint")
    _common(p)
    p.add_argument("--rounds", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lam", type=float, default=0.05)
    p.add_argument("--hidden", type=_ints, default=(256, 256))
    p.add_argument("--eval-episodes", type=int, default=400)
    p.set_defaults(func=cmd_train)

    return parser


def make_backend(args, env) -> ScorerBackend:
    if args.backend == "local":
        return ScorerBackend(kind="local", clamp_scores=env.clamp_scores)
    if not args.endpoint:
        raise ConfigError("--backend remote requires --endpoint")
    backend = ScorerBackend(
        kind="remote", endpoint=args.endpoint.rstrip("/"), clamp_scores=env.clamp_scores
    )
    version = check_remote(backend)
    if version != RNG_VERSION:
        raise ConfigError(f"scorer service speaks {version!r}, expected {RNG_VERSION!r}")
    return backend


def _report(failures) -> int:
    for line in failures:
        print(f"CHECK FAIL: {line}")
    if failures:
        return 3
    print("CHECK PASS")
    return 0


def cmd_theory(args) -> int:
    spec = load_spec(
        args.config, "theory", {"seed": args.seed, "reps": args.reps, "t_grid": args.t_grid}
    )
    backend = make_backend(args, spec.env)
    rows, summary = run_theory(spec.env, spec.params, spec.t_grid, spec.reps, spec.seed, backend)
    out = ensure_outdir(args.out)
    emit_results(rows, os.path.join(out, "results.csv"))
    with open(os.path.join(out, "theory_summary.json"), "w") as f:
        json.dump({k: v for k, v in summary.items() if k != "per_episode_final"}, f, indent=2, sort_keys=True)
    write_svg(rows, os.path.join(out, "theory.svg"), "horizon T", "Final accuracy vs horizon")
    s1 = summary["scenario1"]
    print(f"scenario1 slope {s1['slope']:.6f}  r^2 {s1['r_squared']:.4f}")
    print(f"doubling ratios {s1['doubling_ratios']}")
    print(f"wrote {out}/results.csv, theory_summary.json, theory.svg")
    if args.check:
        return _report(check_theory(summary, spec.env, spec.params, spec.t_grid))
    return 0


def cmd_compare(args) -> int:
    overrides = {"seed": args.seed, "reps": args.reps}
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    spec = load_spec(args.config, "compare", overrides)
    policy = ctl.load_checkpoint(args.checkpoint) if args.checkpoint else None
    if "a-uats" in spec.methods and policy is None:
        raise ConfigError("a-uats requires --checkpoint")
    backend = make_backend(args, spec.env)
    rows, detail = run_compare(
        spec.env, spec.params, spec.n_grid, spec.methods, spec.reps, spec.seed, backend, policy
    )
    out = ensure_outdir(args.out)
    emit_results(rows, os.path.join(out, "results.csv"))
    write_svg(rows, os.path.join(out, "compare.svg"), "paths N", "Final accuracy vs compute")
    for r in sorted(rows, key=lambda r: (r.method, r.x)):
        print(f"{r.method:>14}  N={int(r.x):>4}  acc {r.accuracy:.4f} +- {r.stderr:.4f}")
    print(f"wrote {out}/results.csv, compare.svg")
    if args.check:
        return _report(check_compare(detail, spec.n_grid))
    return 0


def cmd_ablate(args) -> int:
    overrides = {"seed": args.seed, "reps": args.reps, "parameter": args.parameter}
    if args.grid is not None:
        overrides["grid"] = args.grid
    spec = load_spec(args.config, "ablate", overrides)
    if not spec.grid:
        raise ConfigError("ablate needs --grid or a grid entry in the config")
    backend = make_backend(args, spec.env)
    rows, detail = run_ablation(
        spec.env, spec.params, spec.parameter, spec.grid, spec.reps, spec.seed, args.paths, backend
    )
    out = ensure_outdir(args.out)
    emit_results(rows, os.path.join(out, "results.csv"))
    write_svg(rows, os.path.join(out, "ablate.svg"), spec.parameter, f"Accuracy vs {spec.parameter}")
    for r in rows:
        print(f"{spec.parameter}={r.x:g}  acc {r.accuracy:.4f} +- {r.stderr:.4f}")
    print(f"wrote {out}/results.csv, ablate.svg")
    if args.check:
        return _report(check_ablation(spec.parameter, rows, detail))
    return 0


def cmd_train(args) -> int:
    spec = load_spec(args.config, "train-controller", {"seed": args.seed})
    mixture = ctl.default_training_mixture()
    policy, log_rows = ctl.train(
        mixture,
        spec.params,
        spec.seed,
        rounds=args.rounds,
        batch_size=args.batch_size,
        lr=args.lr,
        lam=args.lam,
        hidden=tuple(args.hidden),
    )
    out = ensure_outdir(args.out)
    ckpt = os.path.join(out, "controller.json")
    ctl.save_checkpoint(policy, ckpt)
    with open(os.path.join(out, "training_log.csv"), "w") as f:
        f.write("round,mean_reward,baseline,grad_norm\n")
        for row in log_rows:
            f.write(f"{row['round']},{row['mean_reward']:.9g},{row['baseline']:.9g},{row['grad_norm']:.9g}\n")
    acc_ctl, acc_static = ctl.evaluate(policy, mixture, spec.params, spec.seed + 1, args.eval_episodes)
    print(f"controller accuracy {acc_ctl:.4f}  static accuracy {acc_static:.4f}")
    print(f"wrote {ckpt}, {out}/training_log.csv")
    if args.check:
        failures = []
        half = min(50, max(1, len(log_rows) // 2))
        first = sum(r["mean_reward"] for r in log_rows[:half]) / half
        last = sum(r["mean_reward"] for r in log_rows[-half:]) / half
        if last < first:
            failures.append(f"mean reward fell from {first:.4f} to {last:.4f} over training")
        if acc_ctl < acc_static - 0.01:
            failures.append(f"controller {acc_ctl:.4f} more than a point below static {acc_static:.4f}")
        return _report(failures)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TransportError, ProtocolError) as exc:
        print(f"scorer backend error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
