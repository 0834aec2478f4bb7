"""Experiment drivers: the two theory scenarios, compute-matched method
comparisons, single-parameter ablations, controller training, and the CSV/SVG
emitters they share.

Seed policy: one base seed; episode e of grid point x draws its seed from the
stream label "ep|{base}|{x}|{e}", so every method at a grid point sees the same
question sequence (paired seeds) and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import controller as ctl
from .env import ConfigError, EnvConfig
from .rng import stream_for
from .scorer import ScorerBackend
from .search import (
    METHODS,
    SearchParams,
    run_baseline,
    run_tree_episode,
    sized_tree_params,
)

CSV_HEADER = ("method", "x", "accuracy", "stderr", "final_true_reward", "used_units", "degradation")
ABLATION_PARAMETERS = ("k0", "tau", "delta", "sigma-ood", "b-budget")


@dataclass(frozen=True)
class ResultRow:
    method: str
    x: float
    accuracy: float
    stderr: float
    final_true_reward: float
    used_units: float
    degradation: float


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str  # theory | compare | ablate | train-controller
    env: EnvConfig
    params: SearchParams
    methods: tuple = ("best-of-n", "beam-search", "rebase", "h-uats", "oracle-pass@k")
    n_grid: tuple = (4, 16, 64, 256)
    t_grid: tuple = (5, 10, 20, 40, 80)
    reps: int = 500
    seed: int = 1
    parameter: str = "k0"
    grid: tuple = ()

    def __post_init__(self):
        if self.kind not in ("theory", "compare", "ablate", "train-controller"):
            raise ConfigError("kind in {theory, compare, ablate, train-controller} violated")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if self.reps < 1:
            raise ConfigError("reps >= 1 violated")


def default_theory_env() -> EnvConfig:
    """Unbiased environment isolating the selection-flip mechanism: exact
    scores in distribution, wide scores out of distribution."""
    return EnvConfig(
        M=4, T=20, epsilon=0.2, r0=1.0,
        delta_min=0.02, delta_max=0.10,
        sigma_id=0.0, sigma_ood=0.3,
        bias_ood=0.0, ood_mode="runner-up", clamp_scores=False,
    )


def default_compare_env() -> EnvConfig:
    return EnvConfig(
        M=4, T=20, epsilon=0.2, r0=0.9,
        delta_min=0.02, delta_max=0.10,
        sigma_id=0.01, sigma_ood=0.3,
        bias_ood=0.0, ood_mode="runner-up", clamp_scores=False,
    )


def episode_seed(base: int, x, rep: int) -> int:
    return int(stream_for(f"ep|{base}|{x}|{rep}"))


def compare_params(params: SearchParams, n: int, cfg: EnvConfig) -> SearchParams:
    """Size the uncertainty-aware beam to the compute-matched step budget
    N * (gen_cost + 1), reserving about a tenth of it for re-evaluation."""
    return sized_tree_params(params, n, cfg)


def _budget_cap(params: SearchParams, n: int, cfg: EnvConfig) -> int:
    return n * cfg.T * (params.gen_cost + 1)


def _row(method, x, hits, finals, used, r0) -> ResultRow:
    acc = float(np.mean(hits))
    return ResultRow(
        method=method,
        x=float(x),
        accuracy=acc,
        stderr=math.sqrt(acc * (1.0 - acc) / len(hits)),
        final_true_reward=float(np.mean(finals)),
        used_units=float(np.mean(used)),
        degradation=r0 - float(np.mean(finals)),
    )


# ------------------------------------------------------------------ theory

def theory_budget(scenario: str, cfg: EnvConfig, params: SearchParams) -> int:
    """Exact spend of a guided chain over the horizon."""
    gen = cfg.T * cfg.M * params.gen_cost
    if scenario == "greedy-chain":
        return gen + cfg.T * cfg.M
    passes = params.k0 * cfg.T * (cfg.T + 1) // 2
    return gen + cfg.M * passes


def run_theory(cfg: EnvConfig, params: SearchParams, t_grid, reps: int, seed: int, backend=None):
    """Scenario 1 (single-pass greedy chain) and Scenario 2 (growing-replica
    confidence-bound chain) over a horizon grid. Returns rows plus the linear
    fit, doubling ratios, and the Scenario-2 analytic bound."""
    if not cfg.unbiased:
        raise ConfigError("theory runs need bias_ood = 0 and clamp_scores = false")
    backend = backend or ScorerBackend(clamp_scores=cfg.clamp_scores)
    rows = []
    degr = {"greedy-chain": {}, "ucb-chain": {}}
    per_ep = {"greedy-chain": {}, "ucb-chain": {}}
    for t in t_grid:
        cfg_t = replace(cfg, T=t)
        for method in ("greedy-chain", "ucb-chain"):
            p = replace(params, total_budget=theory_budget(method, cfg_t, params))
            hits, finals, used = [], [], []
            for rep in range(reps):
                outcome, ledger = run_baseline(method, cfg_t, p, backend, episode_seed(seed, t, rep))
                hits.append(outcome.correct)
                finals.append(outcome.final_true_reward)
                used.append(ledger.used_units)
            rows.append(_row(method, t, hits, finals, used, cfg.r0))
            degr[method][t] = cfg.r0 - float(np.mean(finals))
            per_ep[method][t] = np.array(finals)

    ts = np.array(sorted(degr["greedy-chain"]))
    ds = np.array([degr["greedy-chain"][t] for t in ts])
    slope, intercept = np.polyfit(ts, ds, 1)
    pred = slope * ts + intercept
    ss_res = float(np.sum((ds - pred) ** 2))
    ss_tot = float(np.sum((ds - ds.mean()) ** 2))
    summary = {
        "scenario1": {
            "slope": float(slope),
            "intercept": float(intercept),
            "r_squared": 1.0 - ss_res / ss_tot if ss_tot else 1.0,
            "doubling_ratios": _doubling_ratios(degr["greedy-chain"]),
        },
        "scenario2": {
            "doubling_ratios": _doubling_ratios(degr["ucb-chain"]),
            "bound": {
                str(t): scenario2_bound(t, cfg.epsilon, params.k0) for t in ts.tolist()
            },
            "degradation": {str(t): degr["ucb-chain"][t] for t in ts.tolist()},
        },
        "per_episode_final": {m: {str(t): v.tolist() for t, v in d.items()} for m, d in per_ep.items()},
    }
    return rows, summary


def _doubling_ratios(d: dict) -> dict:
    out = {}
    for t in sorted(d):
        if 2 * t in d and d[t] > 0:
            out[f"{2 * t}/{t}"] = d[2 * t] / d[t]
    return out


def scenario2_bound(t_max: int, epsilon: float, k_scale: int) -> float:
    """2 eps * sum_{t=2..T} sqrt(2 ln t / K_t) with K_t = k_scale * t."""
    return 2.0 * epsilon * sum(
        math.sqrt(2.0 * math.log(t) / (k_scale * t)) for t in range(2, t_max + 1)
    )


def phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def scenario1_step_loss(cfg: EnvConfig, k: int = 1) -> float:
    """Closed-form expected per-step loss of the greedy chain: the flagged
    runner-up (minimum of M-1 uniform gaps) wins iff its mean noise exceeds the
    gap, and the loss is that gap. Simpson quadrature over the gap density."""
    m = cfg.M - 1
    a, b = cfg.delta_min, cfg.delta_max
    sd = cfg.sigma_ood / math.sqrt(k)
    if b == a:
        return cfg.epsilon * a * (1.0 - phi(a / sd))

    def f(g):
        dens = m * (b - g) ** (m - 1) / (b - a) ** m
        return g * (1.0 - phi(g / sd)) * dens

    n = 2000
    h = (b - a) / n
    acc = f(a) + f(b)
    for i in range(1, n):
        acc += f(a + i * h) * (4 if i % 2 else 2)
    return cfg.epsilon * acc * h / 3.0


# ------------------------------------------------------------------ compare

def run_compare(
    cfg: EnvConfig,
    params: SearchParams,
    n_grid,
    methods,
    reps: int,
    seed: int,
    backend=None,
    policy=None,
):
    """Accuracy vs candidate-path count under equal budget N*T*(gen_cost+1).
    Returns rows plus per-episode hit vectors for paired tests."""
    backend = backend or ScorerBackend(clamp_scores=cfg.clamp_scores)
    rows, detail = [], {}
    for n in n_grid:
        cap = _budget_cap(params, n, cfg)
        for method in methods:
            if method in ("h-uats", "a-uats"):
                p = compare_params(params, n, cfg)
            else:
                p = replace(params, total_budget=cap)
            hits, finals, used = [], [], []
            for rep in range(reps):
                ep_seed = episode_seed(seed, n, rep)
                if method == "a-uats":
                    if policy is None:
                        raise ConfigError("a-uats requires a controller checkpoint")
                    hook = ctl.make_hook(policy, cfg.T, None, [])
                    outcome, ledger, _ = run_tree_episode(cfg, p, backend, ep_seed, hook=hook)
                else:
                    outcome, ledger = run_baseline(method, cfg, p, backend, ep_seed)
                if ledger.used_units > cap:
                    raise AssertionError(f"{method} overdrew the budget at N={n}")
                hits.append(outcome.correct)
                finals.append(outcome.final_true_reward)
                used.append(ledger.used_units)
            rows.append(_row(method, n, hits, finals, used, cfg.r0))
            detail[(method, n)] = np.array(hits, dtype=bool)
    return rows, detail


def paired_exceedance(hits_a: np.ndarray, hits_b: np.ndarray, margin: float = 0.0):
    """One-sided paired test that mean(a - b) > margin via the normal
    approximation on per-episode differences. Returns (mean diff, p value)."""
    diff = hits_a.astype(float) - hits_b.astype(float)
    mean = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(len(diff)))
    if se == 0.0:
        return mean, 0.0 if mean > margin else 1.0
    z = (mean - margin) / se
    return mean, 1.0 - phi(z)


# ------------------------------------------------------------------ ablate

def run_ablation(
    cfg: EnvConfig,
    params: SearchParams,
    parameter: str,
    grid,
    reps: int,
    seed: int,
    n: int = 16,
    backend=None,
):
    """Sweep one knob with everything else fixed, re-sizing the beam whenever
    the knob changes the per-step cost so every point stays compute-matched."""
    if parameter not in ABLATION_PARAMETERS:
        raise ConfigError(f"parameter in {ABLATION_PARAMETERS} violated")
    backend = backend or ScorerBackend(clamp_scores=cfg.clamp_scores)
    rows, detail = [], {}
    for value in grid:
        cfg_v, label = cfg, "h-uats"
        if parameter == "k0":
            p = sized_tree_params(params, n, cfg, k0=int(value))
        elif parameter == "tau":
            p = replace(compare_params(params, n, cfg), tau=float(value))
        elif parameter == "delta":
            p = replace(compare_params(params, n, cfg), delta=float(value))
        elif parameter == "b-budget":
            # hold the tree shape at the target split, vary only the spend
            p = replace(sized_tree_params(params, n, cfg), b_budget=int(value))
        else:  # sigma-ood
            cfg_v = replace(cfg, sigma_ood=float(value))
            p = compare_params(params, n, cfg_v)
        hits, finals, used = [], [], []
        for rep in range(reps):
            # same episode seed at every grid value: paired sweeps
            outcome, ledger = run_baseline(
                label, cfg_v, p, backend, episode_seed(seed, "ablate", rep)
            )
            hits.append(outcome.correct)
            finals.append(outcome.final_true_reward)
            used.append(ledger.used_units)
        rows.append(_row(label, float(value), hits, finals, used, cfg.r0))
        detail[float(value)] = np.array(hits, dtype=bool)
    return rows, detail


# ------------------------------------------------------------------ emit

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return format(float(v), ".9g")


def emit_results(rows, path: str) -> None:
    """results.csv: fixed header, 9 significant digits, rows sorted by
    (method, x) so concurrent production order cannot leak into the bytes."""
    ordered = sorted(rows, key=lambda r: (r.method, r.x))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for r in ordered:
            writer.writerow([_fmt(getattr(r, field)) for field in CSV_HEADER])


def parse_results(path: str) -> list:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected results header {header}")
        for rec in reader:
            rows.append(
                ResultRow(
                    method=rec[0],
                    **{k: float(v) for k, v in zip(CSV_HEADER[1:], rec[1:])},
                )
            )
    return rows


def write_svg(rows, path: str, x_label: str, title: str) -> None:
    """Self-contained accuracy-vs-x line chart, one polyline per method."""
    width, height, pad = 640, 400, 56
    methods = sorted({r.method for r in rows})
    xs = sorted({r.x for r in rows})
    if not xs:
        raise ConfigError("no rows to plot")
    x_lo, x_hi = min(xs), max(xs)
    y_lo = min(r.accuracy for r in rows)
    y_hi = max(r.accuracy for r in rows)
    y_lo, y_hi = min(0.0, y_lo), max(1.0, y_hi)
    span_x = (x_hi - x_lo) or 1.0
    span_y = (y_hi - y_lo) or 1.0

    def px(x):
        return pad + (width - 2 * pad) * (x - x_lo) / span_x

    def py(y):
        return height - pad - (height - 2 * pad) * (y - y_lo) / span_y

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
    ]
    for i, method in enumerate(methods):
        pts = sorted(((r.x, r.accuracy) for r in rows if r.method == method))
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        color = palette[i % len(palette)]
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{width - pad + 4}" y="{pad + 16 * i}" font-family="sans-serif" '
            f'font-size="11" fill="{color}">{method}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


# ------------------------------------------------------------------ checks

def check_theory(summary: dict, cfg: EnvConfig, params: SearchParams, t_grid) -> list:
    """Gate the theory run: linear Scenario 1 matching the closed form,
    saturating Scenario 2 under its analytic bound."""
    failures = []
    s1 = summary["scenario1"]
    if s1["r_squared"] < 0.98:
        failures.append(f"scenario1 r^2 {s1['r_squared']:.4f} < 0.98")
    big = max(t_grid)
    ratio_key = f"{big}/{big // 2}"
    r = s1["doubling_ratios"].get(ratio_key)
    if r is None or not 1.8 <= r <= 2.2:
        failures.append(f"scenario1 D({big})/D({big // 2}) = {r} outside [1.8, 2.2]")
    loss = scenario1_step_loss(cfg)
    finals = summary["per_episode_final"]["greedy-chain"]
    for t_str, vals in finals.items():
        t = int(t_str)
        arr = np.array(vals)
        d = cfg.r0 - float(arr.mean())
        se = float(arr.std(ddof=1) / math.sqrt(len(arr)))
        if abs(d - t * loss) > 3 * se:
            failures.append(
                f"scenario1 D({t}) = {d:.5f} vs closed form {t * loss:.5f} beyond 3 sigma ({se:.5f})"
            )
    s2 = summary["scenario2"]
    r2 = s2["doubling_ratios"].get(ratio_key)
    if r2 is None or r2 > 1.6:
        failures.append(f"scenario2 D({big})/D({big // 2}) = {r2} > 1.6")
    for t_str, d in s2["degradation"].items():
        if d > s2["bound"][t_str] + 0.02:
            failures.append(f"scenario2 D({t_str}) = {d:.5f} above bound {s2['bound'][t_str]:.5f} + 0.02")
    return failures


def check_compare(detail: dict, n_grid, margin: float = 0.02) -> list:
    failures = []
    for n in n_grid:
        a = detail.get(("h-uats", n))
        b = detail.get(("rebase", n))
        if a is None or b is None:
            continue
        mean, p = paired_exceedance(a, b)
        if mean < margin:
            failures.append(f"h-uats - rebase = {mean * 100:.2f} points < {margin * 100:.0f} at N={n}")
        if p >= 0.05:
            failures.append(f"h-uats vs rebase one-sided p = {p:.4f} >= 0.05 at N={n}")
    oracle = {n: detail[("oracle-pass@k", n)].mean() for n in n_grid if ("oracle-pass@k", n) in detail}
    for n, acc in oracle.items():
        for (method, nn), hits in detail.items():
            if nn == n and hits.mean() > acc:
                failures.append(f"{method} accuracy {hits.mean():.4f} above oracle {acc:.4f} at N={n}")
    return failures


def check_ablation(parameter: str, rows, detail) -> list:
    failures = []
    by_x = {r.x: r for r in rows}
    xs = sorted(by_x)
    if parameter == "k0":
        ref = by_x.get(7.0)
        if ref is None:
            failures.append("k0 grid must include 7")
            return failures
        lo = min(xs)
        if by_x[lo].accuracy > ref.accuracy:
            failures.append(f"accuracy at k0={lo:.0f} exceeds the k0=7 point")
        for x in xs:
            if x > 7.0 and by_x[x].accuracy > ref.accuracy + by_x[x].stderr:
                failures.append(
                    f"k0={x:.0f} accuracy {by_x[x].accuracy:.4f} exceeds plateau "
                    f"{ref.accuracy:.4f} by more than one stderr"
                )
    elif parameter in ("tau", "delta"):
        best = max(xs, key=lambda x: by_x[x].accuracy)
        if best in (xs[0], xs[-1]):
            failures.append(f"{parameter} maximum sits on the grid boundary ({best})")
        for end in (xs[0], xs[-1]):
            if by_x[end].accuracy >= by_x[best].accuracy:
                failures.append(f"{parameter} endpoint {end} not strictly below the interior maximum")
    return failures


# ------------------------------------------------------------------ config io

def load_spec(path: str, kind: str, overrides: dict) -> ExperimentSpec:
    payload = {}
    if path:
        with open(path) as f:
            payload = json.load(f)
    known = {"env", "params", "methods", "n_grid", "t_grid", "reps", "seed", "parameter", "grid"}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if kind == "theory":
        env = EnvConfig.from_dict(payload.get("env", {})) if "env" in payload else default_theory_env()
    else:
        env = EnvConfig.from_dict(payload.get("env", {})) if "env" in payload else default_compare_env()
    params = SearchParams.from_dict(payload.get("params", {})) if "params" in payload else SearchParams()
    fields = dict(
        kind=kind,
        env=env,
        params=params,
        methods=tuple(payload.get("methods", ExperimentSpec.methods)),
        n_grid=tuple(payload.get("n_grid", ExperimentSpec.n_grid)),
        t_grid=tuple(payload.get("t_grid", ExperimentSpec.t_grid)),
        reps=int(payload.get("reps", ExperimentSpec.reps)),
        seed=int(payload.get("seed", ExperimentSpec.seed)),
        parameter=payload.get("parameter", ExperimentSpec.parameter),
        grid=tuple(payload.get("grid", ExperimentSpec.grid)),
    )
    fields.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(**fields)


def ensure_outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
