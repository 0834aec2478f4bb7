"""Stochastic scorer: repeated passes over a node and their running statistics.

Each pass is one Gaussian draw around the node's score_mu. The local backend
draws in-process; the remote backend ships (mu, sigma, k, seed, stream_id) to
a scoring service speaking the same RNG construction, so both produce the same
samples for the same stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import requests

from .env import Node
from .rng import RNG_VERSION, StreamRng


class TransportError(RuntimeError):
    def __init__(self, endpoint: str, attempts: int, cause: str):
        super().__init__(f"scoring endpoint {endpoint} unreachable after {attempts} attempts: {cause}")
        self.endpoint = endpoint
        self.attempts = attempts


class ProtocolError(RuntimeError):
    """Remote answered, but not with a valid score response."""


@dataclass(frozen=True)
class ScorerBackend:
    kind: str = "local"  # local | remote
    endpoint: str = ""
    clamp_scores: bool = False
    timeout: float = 5.0
    retries: int = 3

    def __post_init__(self):
        if self.kind not in ("local", "remote"):
            raise ValueError("backend kind must be local or remote")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")


@dataclass(frozen=True)
class ScoreSamples:
    node_id: str
    values: np.ndarray


@dataclass(frozen=True)
class ScoreStats:
    mean: float
    variance: float  # sample variance, K-1 denominator; 0.0 when count == 1
    count: int
    step: int
    ucb: float
    alpha: float
    single_sample: bool


def _ucb(mean: float, count: int, step: int, alpha: float) -> float:
    # log(1) = 0, so the first step carries no bonus
    return mean + alpha * math.sqrt(2.0 * math.log(step) / count)


def draw_scores(node: Node, k: int, backend: ScorerBackend, rng: StreamRng) -> ScoreSamples:
    """k scoring passes over one node, consuming 2k uniforms from rng."""
    if k < 1:
        raise ValueError("k >= 1 violated")
    if backend.kind == "remote":
        return _draw_remote(node, k, backend, rng)
    values = node.score_mu + node.score_sigma * rng.normals(k)
    if backend.clamp_scores:
        np.clip(values, 0.0, 1.0, out=values)
    return ScoreSamples(node_id=node.id, values=values)


def _draw_remote(node: Node, k: int, backend: ScorerBackend, rng: StreamRng) -> ScoreSamples:
    if rng.calls != 0:
        raise ValueError("remote scoring needs a fresh stream: the wire request carries no offset")
    body = {
        "mu": node.score_mu,
        "sigma": node.score_sigma,
        "k": k,
        "seed": rng.seed,
        "stream_id": rng.stream_id,
        "clamp": backend.clamp_scores,
    }
    url = backend.endpoint.rstrip("/") + "/v1/score"
    last = "no attempt made"
    for _ in range(backend.retries):
        try:
            resp = requests.post(url, json=body, timeout=backend.timeout)
        except requests.RequestException as exc:
            last = str(exc)
            continue
        if resp.status_code != 200:
            raise ProtocolError(f"score request rejected: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            samples = [float(v) for v in payload["samples"]]
            version = payload["rng_version"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed score response: {exc}")
        if version != RNG_VERSION:
            raise ProtocolError(f"rng_version mismatch: got {version}, client speaks {RNG_VERSION}")
        if len(samples) != k:
            raise ProtocolError(f"expected {k} samples, got {len(samples)}")
        rng.skip(2 * k)  # keep local stream accounting aligned with server draws
        return ScoreSamples(node_id=node.id, values=np.asarray(samples))
    raise TransportError(backend.endpoint, backend.retries, last)


def check_remote(backend: ScorerBackend) -> str:
    """Health-check a remote backend; returns its rng_version or raises."""
    url = backend.endpoint.rstrip("/") + "/v1/health"
    try:
        resp = requests.get(url, timeout=backend.timeout)
    except requests.RequestException as exc:
        raise TransportError(backend.endpoint, 1, str(exc))
    try:
        payload = resp.json()
    except ValueError as exc:
        raise ProtocolError(f"malformed health response: {exc}")
    if payload.get("status") != "ok":
        raise ProtocolError(f"unhealthy scorer: {payload}")
    return payload.get("rng_version", "")


def summarize(samples: ScoreSamples, step: int, alpha: float) -> ScoreStats:
    if step < 1:
        raise ValueError("step >= 1 violated")
    k = len(samples.values)
    mean = float(np.mean(samples.values))
    variance = float(np.var(samples.values, ddof=1)) if k > 1 else 0.0
    return ScoreStats(
        mean=mean,
        variance=variance,
        count=k,
        step=step,
        ucb=_ucb(mean, k, step, alpha),
        alpha=alpha,
        single_sample=(k == 1),
    )


def merge_stats(a: ScoreStats, b: ScoreStats) -> ScoreStats:
    """Pool two summaries of the same node as if their samples were concatenated.
    The result is stamped with the later step and a's alpha."""
    if a.alpha != b.alpha:
        raise ValueError("cannot merge stats computed under different alpha")
    n = a.count + b.count
    mean = (a.count * a.mean + b.count * b.mean) / n
    m2 = (
        a.variance * (a.count - 1)
        + b.variance * (b.count - 1)
        + (b.mean - a.mean) ** 2 * a.count * b.count / n
    )
    step = max(a.step, b.step)
    return ScoreStats(
        mean=mean,
        variance=m2 / (n - 1),
        count=n,
        step=step,
        ucb=_ucb(mean, n, step, a.alpha),
        alpha=a.alpha,
        single_sample=False,
    )


def restamp(stats: ScoreStats, step: int) -> ScoreStats:
    """Recompute the bonus for the same samples at a later step."""
    return replace(stats, step=step, ucb=_ucb(stats.mean, stats.count, step, stats.alpha))
