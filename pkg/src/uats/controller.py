"""Learned per-step search controller.

A small MLP maps a 7-feature summary of the candidate set to a squashed
Gaussian over six search knobs (re-eval scale, expansion scale, variance
threshold, retention margin, two allocation temperatures). Training is plain
REINFORCE with a batch-mean baseline on episodes drawn from a mixture of
environment variants; a behavioral-cloning warm start regresses the pre-squash
means onto the static defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .env import EnvConfig
from .rng import StreamRng, stream_for
from .scorer import ScorerBackend
from .search import BudgetLedger, SearchParams, run_tree_episode, sized_tree_params

FEATURES = 7
ACTION_DIMS = 6
ACTION_NAMES = ("beta", "gamma", "tau", "delta", "nu1", "nu2")
ACTION_LO = np.array([0.25, 0.25, 1e-4, 0.0, 0.05, 0.05])
ACTION_HI = np.array([2.0, 2.0, 0.02, 0.2, 2.0, 2.0])
LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
_ATANH_CLIP = 1.0 - 1e-6
CHECKPOINT_VERSION = 1


def featurize(stats, step: int, horizon: int, ledger: BudgetLedger) -> np.ndarray:
    """Seven summary features: mean/max of candidate means, population variance
    of means, mean/max of sample variances, depth fraction, budget fraction."""
    means = np.array([s.mean for s in stats])
    variances = np.array([s.variance for s in stats])
    return np.array(
        [
            float(means.mean()),
            float(means.max()),
            float(means.var()),  # population form, N denominator
            float(variances.mean()),
            float(variances.max()),
            step / horizon,
            ledger.remaining / ledger.total_units if ledger.total_units else 0.0,
        ]
    )


@dataclass(frozen=True)
class PolicyParams:
    weights: tuple  # tuple of np.ndarray, layer order
    biases: tuple

    @property
    def shape(self):
        return tuple(w.shape[0] for w in self.weights[:-1])


def init_policy(seed: int, hidden: tuple = (256, 256)) -> PolicyParams:
    """He-initialized ReLU MLP, FEATURES -> hidden... -> 2 * ACTION_DIMS."""
    rng = StreamRng(seed, stream_for("policy-init"))
    sizes = [FEATURES, *hidden, 2 * ACTION_DIMS]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = math.sqrt(2.0 / fan_in)
        w = scale * rng.normals(fan_out * fan_in).reshape(fan_out, fan_in)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    # start cautious: small exploration noise around the cloned means
    biases[-1][ACTION_DIMS:] = -1.5
    return PolicyParams(weights=tuple(weights), biases=tuple(biases))


def _forward(policy: PolicyParams, x: np.ndarray):
    acts = [x]
    h = x
    for w, b in zip(policy.weights[:-1], policy.biases[:-1]):
        h = np.maximum(w @ h + b, 0.0)
        acts.append(h)
    out = policy.weights[-1] @ h + policy.biases[-1]
    return out, acts


def policy_heads(policy: PolicyParams, features: np.ndarray):
    out, _ = _forward(policy, features)
    mean = out[:ACTION_DIMS]
    log_std = np.clip(out[ACTION_DIMS:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def squash(u: np.ndarray) -> np.ndarray:
    return ACTION_LO + (ACTION_HI - ACTION_LO) * (np.tanh(u) + 1.0) / 2.0


def unsquash(x: np.ndarray) -> np.ndarray:
    y = 2.0 * (x - ACTION_LO) / (ACTION_HI - ACTION_LO) - 1.0
    return np.arctanh(np.clip(y, -_ATANH_CLIP, _ATANH_CLIP))


def _log_prob(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> float:
    """Density of the squashed sample via change of variables; the tanh term
    uses the softplus form to stay finite for large |u|."""
    std = np.exp(log_std)
    gauss = -0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * math.log(2.0 * math.pi)
    log_det = (
        np.log((ACTION_HI - ACTION_LO) / 2.0)
        + 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    )
    return float(np.sum(gauss - log_det))


def sample_action(policy: PolicyParams, features: np.ndarray, rng: StreamRng):
    """Returns (action in bounds, pre-squash sample, log probability)."""
    mean, log_std = policy_heads(policy, features)
    u = mean + np.exp(log_std) * rng.normals(ACTION_DIMS)
    return squash(u), u, _log_prob(u, mean, log_std)


def deterministic_action(policy: PolicyParams, features: np.ndarray) -> np.ndarray:
    mean, _ = policy_heads(policy, features)
    return squash(mean)


def action_log_prob(policy: PolicyParams, features: np.ndarray, u: np.ndarray) -> float:
    mean, log_std = policy_heads(policy, features)
    return _log_prob(u, mean, log_std)


def apply_action(params: SearchParams, action: np.ndarray) -> SearchParams:
    """Modulate the step's search knobs. Budgets scale multiplicatively and
    round half-to-even; thresholds and temperatures are replaced outright."""
    beta, gamma, tau, delta, nu1, nu2 = (float(v) for v in action)
    return replace(
        params,
        b_budget=round(beta * params.b_budget),
        c_budget=round(gamma * params.c_budget),
        tau=tau,
        delta=delta,
        nu1=nu1,
        nu2=nu2,
    )


@dataclass(frozen=True)
class TrajectoryStep:
    features: np.ndarray
    action: np.ndarray
    u: np.ndarray
    log_prob: float


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    reward: float
    correct: bool
    used_units: int


def episode_reward(correct: bool, used_units: int, total_units: int, lam: float) -> float:
    return float(correct) - lam * (used_units / total_units if total_units else 0.0)


def make_hook(policy: PolicyParams, horizon: int, action_rng: StreamRng | None, recorder: list):
    """Per-step controller hook for the search pipeline. A None action_rng
    means deterministic deployment (squashed means, nothing recorded)."""

    def hook(stats, step, ledger, params):
        features = featurize(stats, step, horizon, ledger)
        if action_rng is None:
            action = deterministic_action(policy, features)
            info = None
        else:
            action, u, logp = sample_action(policy, features, action_rng)
            info = TrajectoryStep(features=features, action=action, u=u, log_prob=logp)
            recorder.append(info)
        return apply_action(params, action), info

    return hook


# ---------------------------------------------------------------- gradients

def _zero_grads(policy: PolicyParams):
    return [np.zeros_like(w) for w in policy.weights], [np.zeros_like(b) for b in policy.biases]


def _accumulate_logp_grad(policy, features, u, weight, gw, gb):
    """Add weight * d logp(u | features) / d params into (gw, gb).

    Only the Gaussian term depends on the network outputs: the squash
    correction is a function of u alone.
    """
    out, acts = _forward(policy, features)
    raw_log_std = out[ACTION_DIMS:]
    mean = out[:ACTION_DIMS]
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    z = (u - mean) / std
    d_mean = z / std
    d_log_std = z * z - 1.0
    # clamp gate: no gradient where the clip is active
    gate = (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
    d_out = weight * np.concatenate([d_mean, np.where(gate, d_log_std, 0.0)])

    delta = d_out
    for layer in range(len(policy.weights) - 1, -1, -1):
        gw[layer] += np.outer(delta, acts[layer])
        gb[layer] += delta
        if layer > 0:
            delta = (policy.weights[layer].T @ delta) * (acts[layer] > 0.0)


def reinforce_gradient(policy: PolicyParams, batch):
    """Batch-mean-baseline policy gradient: (1/M) sum_i sum_t grad logp * (r_i - b)."""
    if not batch:
        raise ValueError("empty batch")
    rewards = np.array([traj.reward for traj in batch])
    baseline = float(rewards.mean())
    gw, gb = _zero_grads(policy)
    scale = 1.0 / len(batch)
    for traj in batch:
        adv = (traj.reward - baseline) * scale
        if adv == 0.0:
            continue
        for step in traj.steps:
            _accumulate_logp_grad(policy, step.features, step.u, adv, gw, gb)
    return gw, gb, baseline


def grad_norm(gw, gb) -> float:
    total = 0.0
    for g in (*gw, *gb):
        total += float(np.sum(g * g))
    return math.sqrt(total)


def reinforce_update(policy: PolicyParams, batch, lr: float):
    """One plain gradient-ascent step. Returns (new policy, baseline, grad norm)."""
    gw, gb, baseline = reinforce_gradient(policy, batch)
    weights = tuple(w + lr * g for w, g in zip(policy.weights, gw))
    biases = tuple(b + lr * g for b, g in zip(policy.biases, gb))
    return PolicyParams(weights=weights, biases=biases), baseline, grad_norm(gw, gb)


def behavioral_clone(policy: PolicyParams, states, target: np.ndarray, lr: float, epochs: int):
    """Regress pre-squash means onto unsquash(target) over the state set.
    Full-batch gradient descent; returns (policy, per-epoch losses)."""
    u_star = unsquash(np.asarray(target, dtype=float))
    losses = []
    for _ in range(epochs):
        gw, gb = _zero_grads(policy)
        total = 0.0
        for features in states:
            out, acts = _forward(policy, features)
            err = out[:ACTION_DIMS] - u_star
            total += float(np.sum(err * err))
            d_out = np.concatenate([2.0 * err, np.zeros(ACTION_DIMS)]) / len(states)
            delta = d_out
            for layer in range(len(policy.weights) - 1, -1, -1):
                gw[layer] += np.outer(delta, acts[layer])
                gb[layer] += delta
                if layer > 0:
                    delta = (policy.weights[layer].T @ delta) * (acts[layer] > 0.0)
        losses.append(total / len(states))
        weights = tuple(w - lr * g for w, g in zip(policy.weights, gw))
        biases = tuple(b - lr * g for b, g in zip(policy.biases, gb))
        policy = PolicyParams(weights=weights, biases=biases)
    return policy, losses


# ---------------------------------------------------------------- training

def static_action(params: SearchParams) -> np.ndarray:
    """The action vector that reproduces the static defaults (scales at 1)."""
    return np.array([1.0, 1.0, params.tau, params.delta, params.nu1, params.nu2])


def default_training_mixture() -> list:
    """Small spread of scorer behaviors, standing in for random policy-scorer
    pairings: vary how often steps go out of distribution and how noisy they are."""
    base = dict(M=4, T=10, r0=0.9, delta_min=0.02, delta_max=0.10, sigma_id=0.01)
    return [
        EnvConfig(epsilon=0.15, sigma_ood=0.20, **base),
        EnvConfig(epsilon=0.25, sigma_ood=0.30, **base),
        EnvConfig(epsilon=0.20, sigma_ood=0.45, **base),
        EnvConfig(epsilon=0.30, sigma_ood=0.15, **base),
    ]


def sized_for_mixture(mixture, params: SearchParams, n: int = 16) -> SearchParams:
    """Training and evaluation run the compute-matched tree at N paths."""
    return sized_tree_params(params, n, mixture[0])


def collect_states(mixture, params: SearchParams, seed: int, episodes: int) -> list:
    """Feature vectors visited by the static policy, for cloning and eval."""
    backend = ScorerBackend()
    states: list = []
    for i in range(episodes):
        cfg = mixture[i % len(mixture)]

        def probe_hook(stats, step, ledger, p, horizon=cfg.T):
            states.append(featurize(stats, step, horizon, ledger))
            return p, None

        run_tree_episode(cfg, params, backend, seed=int(stream_for(f"probe|{i}")), hook=probe_hook)
    return states


def rollout(policy, cfg, params, ep_seed: int, action_seed: int, deterministic: bool = False):
    """One controller-driven episode; shares env streams across a batch so the
    baseline removes question difficulty."""
    backend = ScorerBackend()
    recorder: list = []
    rng = None if deterministic else StreamRng(action_seed, stream_for("action"))
    hook = make_hook(policy, cfg.T, rng, recorder)
    outcome, ledger, _ = run_tree_episode(cfg, params, backend, ep_seed, hook=hook)
    return outcome, ledger, recorder


def train(
    mixture,
    params: SearchParams,
    seed: int,
    rounds: int = 500,
    batch_size: int = 10,
    lr: float = 1e-4,
    lam: float = 0.05,
    hidden: tuple = (256, 256),
    bc_states: int = 320,
    bc_lr: float = 5e-3,
    bc_epochs: int = 800,
    log_rows: list | None = None,
):
    """REINFORCE over the mixture: each round takes one slot from a rotating
    pool of 50 (environment, question) pairs, rolls out batch_size stochastic
    episodes on it, and applies a batch-mean-baseline update. Recycling the
    pool keeps the question composition of any aligned 50-round window
    identical, so reward curves compare like for like across training phases.
    Returns (policy, per-round log rows)."""
    params = sized_for_mixture(mixture, params)
    policy = init_policy(seed, hidden)
    if bc_states > 0:
        states = collect_states(mixture, params, seed, max(4, bc_states // 8))
        states = states[:bc_states] if len(states) > bc_states else states
        policy, _ = behavioral_clone(policy, states, static_action(params), bc_lr, bc_epochs)

    if log_rows is None:
        log_rows = []
    pool = 50
    for rnd in range(rounds):
        slot = rnd % pool
        cfg = mixture[slot % len(mixture)]
        ep_seed = int(stream_for(f"train-ep|{seed}|{slot}"))
        batch = []
        for j in range(batch_size):
            outcome, ledger, steps = rollout(
                policy, cfg, params, ep_seed, action_seed=int(stream_for(f"train-act|{seed}|{rnd}|{j}"))
            )
            reward = episode_reward(outcome.correct, ledger.used_units, ledger.total_units, lam)
            batch.append(
                Trajectory(steps=tuple(steps), reward=reward, correct=outcome.correct, used_units=ledger.used_units)
            )
        policy, baseline, gnorm = reinforce_update(policy, batch, lr)
        log_rows.append(
            {
                "round": rnd,
                "mean_reward": float(np.mean([t.reward for t in batch])),
                "baseline": baseline,
                "grad_norm": gnorm,
            }
        )
    return policy, log_rows


def evaluate(policy, mixture, params: SearchParams, seed: int, episodes: int):
    """Paired accuracy of the deterministic controller vs the static defaults
    over shared episode seeds."""
    params = sized_for_mixture(mixture, params)
    backend = ScorerBackend()
    hits_controller = 0
    hits_static = 0
    for i in range(episodes):
        cfg = mixture[i % len(mixture)]
        ep_seed = int(stream_for(f"eval-ep|{seed}|{i}"))
        out_c, _, _ = rollout(policy, cfg, params, ep_seed, action_seed=0, deterministic=True)
        out_s, _, _ = run_tree_episode(cfg, params, backend, ep_seed)
        hits_controller += out_c.correct
        hits_static += out_s.correct
    return hits_controller / episodes, hits_static / episodes


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(policy: PolicyParams, path: str) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "hidden": [int(w.shape[0]) for w in policy.weights[:-1]],
        "bounds": {"lo": ACTION_LO.tolist(), "hi": ACTION_HI.tolist()},
        "tensors": {},
    }
    for i, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        payload["tensors"][f"w{i}"] = {"shape": list(w.shape), "data": w.ravel().tolist()}
        payload["tensors"][f"b{i}"] = {"shape": list(b.shape), "data": b.tolist()}
    with open(path, "w") as f:
        json.dump(payload, f)


def load_checkpoint(path: str) -> PolicyParams:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    weights, biases = [], []
    for i in range(len(payload["tensors"]) // 2):
        w = payload["tensors"][f"w{i}"]
        b = payload["tensors"][f"b{i}"]
        weights.append(np.array(w["data"]).reshape(w["shape"]))
        biases.append(np.array(b["data"]).reshape(b["shape"]))
    return PolicyParams(weights=tuple(weights), biases=tuple(biases))
