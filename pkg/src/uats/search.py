"""Search over the synthetic tree: the uncertainty-aware step, plain chains,
and the compute-matched baselines.

Cost accounting runs through a ledger charged before every action: one unit
per scoring pass, gen_cost units per generated child. Methods interpret a
shared total budget (paths * horizon * (gen_cost + 1)) their own way, and a
denied charge ends the episode cleanly with the best current candidate.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, replace

from .env import ConfigError, EnvConfig, EpisodeOutcome, Node, init_episode, propose_children, resolve_outcome
from .rng import StreamRng, stream_for
from .scorer import ScorerBackend, ScoreStats, draw_scores, merge_stats, summarize

log = logging.getLogger(__name__)

METHODS = ("best-of-n", "beam-search", "rebase", "h-uats", "a-uats", "oracle-pass@k")
FINAL_RULES = ("max-mean", "weighted-vote")


@dataclass(frozen=True)
class SearchParams:
    k0: int = 7
    tau: float = 0.003
    delta: float = 0.04
    nu1: float = 0.5
    nu2: float = 0.2
    alpha: float = 0.3
    b_budget: int = 54
    c_budget: int = 10
    beam_width: int = 10
    gen_cost: int = 18
    total_budget: int = 6080
    final_rule: str = "max-mean"

    def __post_init__(self):
        if self.k0 < 1:
            raise ConfigError("k0 >= 1 violated")
        if self.tau < 0.0:
            raise ConfigError("tau >= 0 violated")
        if self.delta < 0.0:
            raise ConfigError("delta >= 0 violated")
        if self.nu1 <= 0.0 or self.nu2 <= 0.0:
            raise ConfigError("nu1, nu2 > 0 violated")
        if self.alpha < 0.0:
            raise ConfigError("alpha >= 0 violated")
        if self.b_budget < 0 or self.c_budget < 0:
            raise ConfigError("b_budget, c_budget >= 0 violated")
        if self.beam_width < 1:
            raise ConfigError("beam_width >= 1 violated")
        if self.gen_cost < 0:
            raise ConfigError("gen_cost >= 0 violated")
        if self.total_budget < 1:
            raise ConfigError("total_budget >= 1 violated")
        if self.final_rule not in FINAL_RULES:
            raise ConfigError("final_rule in {max-mean, weighted-vote} violated")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SearchParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SearchParams keys: {sorted(unknown)}")
        return cls(**d)


class BudgetLedger:
    """Unit accounting. Charges are recorded before the action they pay for;
    a charge that would overdraw is refused and nothing is recorded."""

    __slots__ = ("total_units", "used_units", "generation_units", "scoring_units")

    def __init__(self, total_units: int):
        if total_units < 0:
            raise ConfigError("total_units >= 0 violated")
        self.total_units = total_units
        self.used_units = 0
        self.generation_units = 0
        self.scoring_units = 0

    @property
    def remaining(self) -> int:
        return self.total_units - self.used_units

    def try_charge(self, kind: str, units: int) -> bool:
        if units < 0:
            raise ValueError("units >= 0 violated")
        if self.used_units + units > self.total_units:
            return False
        self.used_units += units
        if kind == "generation":
            self.generation_units += units
        elif kind == "scoring":
            self.scoring_units += units
        else:
            raise ValueError(f"unknown charge kind {kind!r}")
        return True


@dataclass(frozen=True)
class AllocationResult:
    counts: tuple


def allocate_proportional(values, budget: int, temperature: float) -> AllocationResult:
    """Integer split of `budget` proportional to softmax(values / temperature).

    Apportionment is by largest remainder: floor every raw share, then hand the
    leftover units to the largest fractional parts (ties: higher value first,
    then lower index). Counts always sum to budget exactly.
    """
    if not len(values):
        raise ValueError("values must be non-empty")
    if temperature <= 0.0:
        raise ValueError("temperature > 0 violated")
    if budget < 0:
        raise ValueError("budget >= 0 violated")
    if budget == 0:
        return AllocationResult(counts=(0,) * len(values))
    scaled = [v / temperature for v in values]
    top = max(scaled)
    weights = [math.exp(s - top) for s in scaled]
    norm = sum(weights)
    raw = [budget * w / norm for w in weights]
    counts = [int(math.floor(r)) for r in raw]
    leftover = budget - sum(counts)
    order = sorted(range(len(values)), key=lambda i: (counts[i] - raw[i], -values[i], i))
    for i in order[:leftover]:
        counts[i] += 1
    return AllocationResult(counts=tuple(counts))


def partition_by_uncertainty(stats, tau: float):
    """Split candidate indices into (trusted, suspect) by sample variance.
    The boundary is inclusive: variance == tau stays trusted."""
    id_idx = [i for i, s in enumerate(stats) if s.variance <= tau]
    ood_idx = [i for i, s in enumerate(stats) if s.variance > tau]
    return id_idx, ood_idx


def filter_ood_by_margin(stats, ood_idx, best_id_mean, delta: float):
    """Suspect candidates worth re-evaluating: optimistic estimate within delta
    of the best trusted mean. With no trusted anchor, keep them all."""
    if best_id_mean is None:
        return list(ood_idx)
    return [i for i in ood_idx if stats[i].ucb >= best_id_mean - delta]


def select_point_estimate(stats) -> int:
    best = 0
    for i in range(1, len(stats)):
        if stats[i].mean > stats[best].mean:
            best = i
    return best


def select_ucb(stats) -> int:
    best = 0
    for i in range(1, len(stats)):
        if stats[i].ucb > stats[best].ucb:
            best = i
    return best


def finalize(leaves, rule: str) -> int:
    """Pick the answer index among (node, stats) pairs. weighted-vote needs
    distinct surface answers to vote over; every episode here resolves one
    scalar, so it collapses to max-mean."""
    if not leaves:
        raise ValueError("no leaves to finalize")
    if rule == "weighted-vote":
        log.info("weighted-vote has a single answer surface here; using max-mean")
    elif rule != "max-mean":
        raise ConfigError("final_rule in {max-mean, weighted-vote} violated")
    return select_point_estimate([s for _, s in leaves])


def _score_stream(seed: int, node_id: str, round_no: int) -> StreamRng:
    return StreamRng(seed, stream_for(f"{node_id}|score{round_no}"))


def _gen_stream(seed: int, node_id: str) -> StreamRng:
    return StreamRng(seed, stream_for(f"{node_id}|gen"))


def _outcome_stream(seed: int, node_id: str) -> StreamRng:
    return StreamRng(seed, stream_for(f"{node_id}|outcome"))


@dataclass
class StepResult:
    children: list
    stats: list
    record: dict
    stopped: bool
    action_info: dict | None = None


def h_uats_step(
    candidates,
    params: SearchParams,
    backend: ScorerBackend,
    ledger: BudgetLedger,
    cfg: EnvConfig,
    seed: int,
    step: int,
    hook=None,
    expand: bool = True,
    use_uncertainty: bool = True,
) -> StepResult:
    """One uncertainty-aware search step over a candidate set at depth `step`:
    score everyone k0 times, split trusted/suspect by variance, re-score the
    suspects that still look competitive, then apportion expansion slots over
    the updated means. Children come back truncated to beam_width."""
    record = {"step": step, "candidates": [n.id for n in candidates]}
    n = len(candidates)
    if n == 0:
        record["stopped"] = "empty"
        return StepResult([], [], record, stopped=True)

    if not ledger.try_charge("scoring", n * params.k0):
        record["stopped"] = "scoring"
        return StepResult([], [], record, stopped=True)
    stats = [
        summarize(draw_scores(node, params.k0, backend, _score_stream(seed, node.id, 0)), step, params.alpha)
        for node in candidates
    ]

    action_info = None
    if hook is not None:
        params, action_info = hook(stats, step, ledger, params)

    stopped = False
    if use_uncertainty:
        id_idx, ood_idx = partition_by_uncertainty(stats, params.tau)
        best_id_mean = max((stats[i].mean for i in id_idx), default=None)
        retained = filter_ood_by_margin(stats, ood_idx, best_id_mean, params.delta)
        record.update(id_set=id_idx, ood_set=ood_idx, retained=retained)
        realloc = [0] * n
        if retained and params.b_budget > 0:
            counts = allocate_proportional(
                [stats[i].ucb for i in retained], params.b_budget, params.nu1
            ).counts
            for i, k in zip(retained, counts):
                if k == 0:
                    continue
                if not ledger.try_charge("scoring", k):
                    stopped = True
                    record["stopped"] = "re-eval"
                    break
                extra = summarize(
                    draw_scores(candidates[i], k, backend, _score_stream(seed, candidates[i].id, 1)),
                    step,
                    params.alpha,
                )
                stats[i] = merge_stats(stats[i], extra)
                realloc[i] = k
        record["realloc"] = realloc
    else:
        record.update(id_set=list(range(n)), ood_set=[], retained=[], realloc=[0] * n)

    record["means"] = [s.mean for s in stats]
    record["vars"] = [s.variance for s in stats]

    children: list = []
    expand_counts = [0] * n
    if expand and not stopped:
        expand_counts = list(
            allocate_proportional([s.mean for s in stats], params.c_budget, params.nu2).counts
        )
        if params.c_budget == 0:
            expand_counts[select_point_estimate(stats)] = 1
        for i, slots in enumerate(expand_counts):
            if slots == 0 or stopped:
                expand_counts[i] = 0 if stopped else slots
                continue
            afford = min(slots, ledger.remaining // params.gen_cost) if params.gen_cost else slots
            if afford < slots:
                stopped = True
                record["stopped"] = "generation"
            if afford == 0:
                expand_counts[i] = 0
                continue
            ledger.try_charge("generation", afford * params.gen_cost)
            expand_counts[i] = afford
            kids = propose_children(candidates[i], afford, cfg, _gen_stream(seed, candidates[i].id))
            children.extend((stats[i].mean, i, kid) for kid in kids)
        children.sort(key=lambda triple: (-triple[0], triple[1]))
        children = [kid for _, _, kid in children[: params.beam_width]]
    record["expand"] = expand_counts
    record["used"] = ledger.used_units
    return StepResult(children, stats, record, stopped=stopped, action_info=action_info)


def _lineage_mistakes(leaf: Node, nodes: dict) -> int:
    # every strict true_reward drop along the path is one mis-selection
    count = 0
    node = leaf
    while node.parent is not None:
        parent = nodes[node.parent]
        if node.true_reward < parent.true_reward:
            count += 1
        node = parent
    return count


def run_tree_episode(
    cfg: EnvConfig,
    params: SearchParams,
    backend: ScorerBackend,
    seed: int,
    hook=None,
    use_uncertainty: bool = True,
    ledger: BudgetLedger | None = None,
    trace: list | None = None,
):
    """Full beam episode: expand the root into a first beam, run T
    uncertainty-aware steps, finalize on the depth-T candidate set."""
    if ledger is None:
        ledger = BudgetLedger(params.total_budget)
    root = init_episode(cfg, seed)
    nodes = {root.id: root}

    first = min(params.beam_width, ledger.remaining // params.gen_cost) if params.gen_cost else params.beam_width
    first = max(first, 0)
    candidates: list = []
    if first > 0 and ledger.try_charge("generation", first * params.gen_cost):
        candidates = propose_children(root, first, cfg, _gen_stream(seed, root.id))
    trajectory: list = []
    stats: list = []
    final_pool = [(root, summarize_root(cfg, root))]

    for node in candidates:
        nodes[node.id] = node
    for t in range(1, cfg.T + 1):
        if not candidates:
            break
        res = h_uats_step(
            candidates, params, backend, ledger, cfg, seed, t,
            hook=hook, expand=(t < cfg.T), use_uncertainty=use_uncertainty,
        )
        if trace is not None:
            trace.append(res.record)
        if res.action_info is not None:
            trajectory.append(res.action_info)
        if res.stats:
            stats = res.stats
            final_pool = list(zip(candidates, stats))
        if res.stopped or t == cfg.T or not res.children:
            break
        candidates = res.children
        for node in candidates:
            nodes[node.id] = node

    pick = finalize(final_pool, params.final_rule)
    leaf = final_pool[pick][0]
    outcome = resolve_outcome(
        leaf, _outcome_stream(seed, leaf.id), mistakes=_lineage_mistakes(leaf, nodes)
    )
    return outcome, ledger, trajectory


def summarize_root(cfg: EnvConfig, root: Node) -> ScoreStats:
    # degenerate anchor used only when the budget dies before any scoring
    return ScoreStats(
        mean=root.score_mu, variance=0.0, count=1, step=1, ucb=root.score_mu,
        alpha=0.0, single_sample=True,
    )


def run_chain_episode(
    cfg: EnvConfig,
    params: SearchParams,
    backend: ScorerBackend,
    seed: int,
    k_of_t,
    select,
    root_tag: str = "",
    ledger: BudgetLedger | None = None,
):
    """Single guided chain: every step proposes M siblings, scores each with
    k_of_t(t) passes, descends into select(stats)."""
    if ledger is None:
        ledger = BudgetLedger(params.total_budget)
    root = init_episode(cfg, seed)
    if root_tag:
        root = replace(root, id=f"0{root_tag}")
    node = root
    selections = []
    for t in range(1, cfg.T + 1):
        k = k_of_t(t)
        if not ledger.try_charge("generation", cfg.M * params.gen_cost):
            break
        children = propose_children(node, cfg.M, cfg, _gen_stream(seed, node.id))
        if not ledger.try_charge("scoring", cfg.M * k):
            break
        stats = [
            summarize(draw_scores(kid, k, backend, _score_stream(seed, kid.id, 0)), t, params.alpha)
            for kid in children
        ]
        pick = select(stats)
        selections.append((t, children[pick].id, children[0].id))
        node = children[pick]
    outcome = resolve_outcome(node, _outcome_stream(seed, node.id), selections=tuple(selections))
    return outcome, ledger


def _run_sampled_chain(cfg, params, backend, seed, tag, scored, ledger):
    """Unguided policy sample: one continuation per step (it keeps the parent's
    solve probability), optionally scored once per step for final ranking."""
    root = replace(init_episode(cfg, seed), id=f"0{tag}")
    node = root
    stats = None
    for t in range(1, cfg.T + 1):
        if not ledger.try_charge("generation", params.gen_cost):
            break
        node = propose_children(node, 1, cfg, _gen_stream(seed, node.id))[0]
        if scored:
            if not ledger.try_charge("scoring", 1):
                break
            stats = summarize(draw_scores(node, 1, backend, _score_stream(seed, node.id, 0)), t, params.alpha)
    return node, stats


def paths_for_budget(params: SearchParams, cfg: EnvConfig) -> int:
    """Recover N, the number of candidate paths a compute-matched budget buys:
    total = N * T * (gen_cost + 1)."""
    n = params.total_budget // (cfg.T * (params.gen_cost + 1))
    if n < 1:
        raise ConfigError("total_budget too small for one path over the horizon")
    return n


def sized_tree_params(
    params: SearchParams,
    n: int,
    cfg: EnvConfig,
    k0: int | None = None,
    b_target: int | None = None,
) -> SearchParams:
    """Fit (C, beam width, B) to the per-step budget N * (gen_cost + 1).

    Beam width is half the expansion slots so every expanded candidate gets a
    sibling pair on average; b_target reserves roughly that many units for
    re-evaluation and the integer remainder of the split lands on B too.
    """
    k = params.k0 if k0 is None else k0
    per_step = n * (params.gen_cost + 1)
    reserve = round(0.1 * per_step) if b_target is None else int(b_target)
    c = max(1, (per_step - reserve) // params.gen_cost)
    while c > 1:
        cost = c * params.gen_cost + k * max(1, c // 2)
        if cost <= per_step - reserve:
            break
        c -= 1
    width = max(1, c // 2)
    cost = c * params.gen_cost + k * width
    if cost > per_step:
        raise ConfigError(f"per-step budget {per_step} cannot fund one candidate at k0={k}")
    return replace(
        params,
        k0=k,
        b_budget=per_step - cost,
        c_budget=c,
        beam_width=width,
        total_budget=cfg.T * per_step,
    )


def run_baseline(method: str, cfg: EnvConfig, params: SearchParams, backend: ScorerBackend, seed: int):
    """Dispatch one episode of a named method under its budget interpretation."""
    if method == "h-uats":
        outcome, ledger, _ = run_tree_episode(cfg, params, backend, seed)
        return outcome, ledger
    if method == "rebase":
        n = paths_for_budget(params, cfg)
        p = replace(sized_tree_params(params, n, cfg, k0=1, b_target=0), b_budget=0)
        outcome, ledger, _ = run_tree_episode(cfg, p, backend, seed)
        return outcome, ledger
    if method == "greedy-chain":
        return run_chain_episode(cfg, params, backend, seed, lambda t: 1, select_point_estimate)
    if method == "ucb-chain":
        return run_chain_episode(cfg, params, backend, seed, lambda t: params.k0 * t, select_ucb)
    if method == "best-of-n":
        ledger = BudgetLedger(params.total_budget)
        n = paths_for_budget(params, cfg)
        leaves = []
        for c in range(n):
            node, stats = _run_sampled_chain(cfg, params, backend, seed, f"b{c}", True, ledger)
            if stats is not None:
                leaves.append((node, stats))
        if not leaves:
            raise ConfigError("total_budget too small for one scored chain")
        pick = finalize(leaves, params.final_rule)
        winner = leaves[pick][0]
        outcome = resolve_outcome(winner, _outcome_stream(seed, winner.id), mistakes=0)
        return outcome, ledger
    if method == "oracle-pass@k":
        ledger = BudgetLedger(params.total_budget)
        n = paths_for_budget(params, cfg)
        correct = False
        last = None
        for c in range(n):
            node, _ = _run_sampled_chain(cfg, params, backend, seed, f"o{c}", False, ledger)
            last = node
            out = resolve_outcome(node, _outcome_stream(seed, node.id), mistakes=0)
            correct = correct or out.correct
        outcome = EpisodeOutcome(
            final_true_reward=last.true_reward, correct=correct, mistakes=0, selections=()
        )
        return outcome, ledger
    if method == "beam-search":
        return _run_beam_search(cfg, params, backend, seed)
    if method == "a-uats":
        raise ConfigError("a-uats requires a controller checkpoint; run it through the harness")
    raise ConfigError(f"unknown method {method!r}")


def _run_beam_search(cfg: EnvConfig, params: SearchParams, backend: ScorerBackend, seed: int):
    """Fixed-width beam with single-pass scores: N candidates per step, keep the
    top N/M, expand each survivor M ways."""
    ledger = BudgetLedger(params.total_budget)
    n = paths_for_budget(params, cfg)
    width = max(1, n // cfg.M)
    root = init_episode(cfg, seed)
    nodes = {root.id: root}

    def expand(parents, counts):
        out = []
        for parent, count in zip(parents, counts):
            if count == 0:
                continue
            afford = min(count, ledger.remaining // params.gen_cost) if params.gen_cost else count
            if afford == 0:
                break
            ledger.try_charge("generation", afford * params.gen_cost)
            out.extend(propose_children(parent, afford, cfg, _gen_stream(seed, parent.id)))
        return out

    candidates = expand([root], [n])
    final_pool = [(root, summarize_root(cfg, root))]
    for node in candidates:
        nodes[node.id] = node
    for t in range(1, cfg.T + 1):
        if not candidates:
            break
        if not ledger.try_charge("scoring", len(candidates)):
            break
        stats = [
            summarize(draw_scores(node, 1, backend, _score_stream(seed, node.id, 0)), t, params.alpha)
            for node in candidates
        ]
        final_pool = list(zip(candidates, stats))
        if t == cfg.T:
            break
        ranked = sorted(range(len(candidates)), key=lambda i: (-stats[i].mean, i))
        survivors = [candidates[i] for i in ranked[:width]]
        candidates = expand(survivors, [cfg.M] * len(survivors))
        for node in candidates:
            nodes[node.id] = node

    pick = finalize(final_pool, params.final_rule)
    leaf = final_pool[pick][0]
    outcome = resolve_outcome(leaf, _outcome_stream(seed, leaf.id), mistakes=_lineage_mistakes(leaf, nodes))
    return outcome, ledger
