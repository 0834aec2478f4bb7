"""Synthetic reasoning environment.

A problem is a depth-T tree. Every node carries a latent solve probability
(true_reward); expanding a node yields one child that inherits it and
count - 1 children degraded by i.i.d. uniform gaps. Some non-best children are
flagged out-of-distribution, which only widens (and optionally biases) the
score distribution the scorer draws from. Selection mistakes are therefore the
sole source of quality loss, and the final answer resolves as a Bernoulli draw
on the leaf's true_reward.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .rng import StreamRng


class ConfigError(ValueError):
    """Raised when a configuration violates a stated invariant."""


OOD_MODES = ("runner-up", "independent")


@dataclass(frozen=True)
class EnvConfig:
    M: int = 4
    T: int = 20
    epsilon: float = 0.2
    r0: float = 0.9
    delta_min: float = 0.02
    delta_max: float = 0.10
    sigma_id: float = 0.01
    sigma_ood: float = 0.3
    bias_ood: float = 0.0
    ood_mode: str = "runner-up"
    clamp_scores: bool = False

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M >= 1 violated")
        if self.T < 1:
            raise ConfigError("T >= 1 violated")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("0 <= epsilon <= 1 violated")
        if not 0.0 <= self.r0 <= 1.0:
            raise ConfigError("0 <= r0 <= 1 violated")
        if self.delta_min <= 0.0:
            raise ConfigError("delta_min > 0 violated")
        if self.delta_min > self.delta_max:
            raise ConfigError("delta_min <= delta_max violated")
        if self.sigma_id < 0.0 or self.sigma_ood < 0.0:
            raise ConfigError("sigma_id, sigma_ood >= 0 violated")
        if self.ood_mode not in OOD_MODES:
            raise ConfigError("ood_mode in {runner-up, independent} violated")

    @property
    def unbiased(self) -> bool:
        """Theory mode: scores are exact draws around true_reward, never clamped."""
        return self.bias_ood == 0.0 and not self.clamp_scores

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown EnvConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "EnvConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Node:
    id: str
    parent: str | None
    depth: int
    true_reward: float
    is_ood: bool
    score_mu: float
    score_sigma: float


@dataclass(frozen=True)
class EpisodeOutcome:
    final_true_reward: float
    correct: bool
    mistakes: int
    selections: tuple  # (step, chosen id, best sibling id) for chain methods


def init_episode(cfg: EnvConfig, seed: int) -> Node:
    """Root node; all later draws derive from this seed via labeled streams."""
    del seed  # the root is deterministic; callers key streams off node ids
    return Node(
        id="0",
        parent=None,
        depth=0,
        true_reward=cfg.r0,
        is_ood=False,
        score_mu=cfg.r0,
        score_sigma=cfg.sigma_id,
    )


def propose_children(parent: Node, count: int, cfg: EnvConfig, rng: StreamRng) -> list[Node]:
    """Expand a node. Child 0 inherits the parent's true_reward; the rest drop
    by a uniform gap, clamped at zero. Draw order: gaps for children 1..count-1,
    then the OOD event (one uniform in runner-up mode, one per non-best child
    in independent mode)."""
    if count < 1:
        raise ConfigError("count >= 1 violated")
    gaps = [rng.uniform_in(cfg.delta_min, cfg.delta_max) for _ in range(count - 1)]
    rewards = [parent.true_reward] + [max(0.0, parent.true_reward - g) for g in gaps]

    flagged = [False] * count
    if count > 1:
        if cfg.ood_mode == "runner-up":
            if rng.bernoulli(cfg.epsilon):
                runner = 1 + min(range(count - 1), key=lambda i: gaps[i])
                flagged[runner] = True
        else:
            q = 1.0 - (1.0 - cfg.epsilon) ** (1.0 / (count - 1))
            for i in range(1, count):
                if rng.bernoulli(q):
                    flagged[i] = True

    children = []
    for i in range(count):
        ood = flagged[i]
        children.append(
            Node(
                id=f"{parent.id}.{i}",
                parent=parent.id,
                depth=parent.depth + 1,
                true_reward=rewards[i],
                is_ood=ood,
                score_mu=rewards[i] + (cfg.bias_ood if ood else 0.0),
                score_sigma=cfg.sigma_ood if ood else cfg.sigma_id,
            )
        )
    return children


def resolve_outcome(
    final: Node,
    rng: StreamRng,
    selections: tuple = (),
    mistakes: int | None = None,
) -> EpisodeOutcome:
    """Bernoulli answer check on the chosen leaf. Chain runners pass their
    per-step selection log; tree runners pass the mistake count recovered from
    the leaf's lineage (each strict true_reward drop is one mis-selection)."""
    if mistakes is None:
        mistakes = sum(1 for _, chosen, best in selections if chosen != best)
    return EpisodeOutcome(
        final_true_reward=final.true_reward,
        correct=rng.uniform() < final.true_reward,
        mistakes=mistakes,
        selections=tuple(selections),
    )
