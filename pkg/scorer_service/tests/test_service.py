"""Endpoint behavior and wire parity against the search client's local backend."""
import numpy as np
import pytest
from fastapi.testclient import TestClient

from uats.env import Node
from uats.rng import RNG_VERSION, StreamRng, stream_for
from uats.scorer import ScorerBackend, draw_scores

from scorer_service.app import create_app


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


def _node(mu: float, sigma: float, node_id: str = "0.1") -> Node:
    return Node(id=node_id, parent="0", depth=1, true_reward=0.8,
                is_ood=False, score_mu=mu, score_sigma=sigma)


def _body(**over):
    body = {"mu": 0.5, "sigma": 0.1, "k": 3, "seed": 42, "stream_id": 7}
    body.update(over)
    return body


def test_health_reports_ok_and_contract_version(client):
    first = client.get("/v1/health")
    second = client.get("/v1/health")
    assert first.status_code == 200
    assert first.json() == {"status": "ok", "rng_version": RNG_VERSION}
    assert first.content == second.content


def test_zero_sigma_returns_mu_exactly(client):
    resp = client.post("/v1/score", json=_body(sigma=0.0))
    assert resp.status_code == 200
    assert resp.json()["samples"] == [0.5, 0.5, 0.5]


def test_identical_requests_get_identical_bodies(client):
    a = client.post("/v1/score", json=_body())
    client.get("/v1/health")  # interleaved traffic must not matter
    b = client.post("/v1/score", json=_body())
    assert a.status_code == b.status_code == 200
    assert a.content == b.content


def test_golden_request_matches_local_backend(client):
    resp = client.post("/v1/score", json=_body())
    local = draw_scores(_node(0.5, 0.1), 3, ScorerBackend(), StreamRng(42, 7))
    got = np.asarray(resp.json()["samples"])
    assert np.allclose(got, local.values, rtol=1e-9, atol=0.0)
    assert resp.json()["rng_version"] == RNG_VERSION


def test_clamp_clips_into_unit_interval(client):
    resp = client.post("/v1/score", json=_body(mu=1.5, sigma=2.0, k=8, clamp=True))
    samples = resp.json()["samples"]
    assert all(0.0 <= s <= 1.0 for s in samples)
    local = draw_scores(
        _node(1.5, 2.0), 8, ScorerBackend(clamp_scores=True), StreamRng(42, 7)
    )
    assert np.allclose(np.asarray(samples), local.values, rtol=1e-9, atol=0.0)


def test_malformed_bodies_get_400_with_field_messages(client):
    missing = client.post("/v1/score", json={"mu": 0.5, "sigma": 0.1, "k": 3, "seed": 1})
    assert missing.status_code == 400
    assert any(e["field"] == "stream_id" for e in missing.json()["detail"])

    wrong_type = client.post("/v1/score", json=_body(k="three"))
    assert wrong_type.status_code == 400
    assert any(e["field"] == "k" for e in wrong_type.json()["detail"])

    extra = client.post("/v1/score", json=_body(temperature=0.7))
    assert extra.status_code == 400

    overflow = client.post("/v1/score", json=_body(seed=1 << 64))
    assert overflow.status_code == 400
    assert any(e["field"] == "seed" for e in overflow.json()["detail"])

    no_mu = client.post("/v1/score", json={"sigma": 0.1, "k": 3, "seed": 1, "stream_id": 2})
    assert no_mu.status_code == 400
    assert any(e["field"] == "mu" for e in no_mu.json()["detail"])


def test_invariant_violations_get_422(client):
    assert client.post("/v1/score", json=_body(k=0)).status_code == 422
    assert client.post("/v1/score", json=_body(sigma=-0.1)).status_code == 422


def test_reserved_payload_variant_gets_501(client):
    resp = client.post(
        "/v1/score",
        json={"payload": "step 1: add the fractions", "k": 3, "seed": 1, "stream_id": 2},
    )
    assert resp.status_code == 501
    with_latents = client.post("/v1/score", json=_body(payload="trace"))
    assert with_latents.status_code == 501


def test_parity_against_local_backend_over_randomized_requests(client):
    rng = StreamRng(2024, stream_for("service-parity"))
    checked = 0
    for i in range(10_000):
        mu = rng.uniform_in(-2.0, 2.0)
        sigma = 0.0 if i % 97 == 0 else rng.uniform_in(0.0, 2.0)
        k = 1 + int(rng.uniform() * 16)
        seed = int(rng.uniform() * (1 << 63))
        stream_id = stream_for(f"parity|{i}")
        clamp = i % 5 == 0
        resp = client.post("/v1/score", json={
            "mu": mu, "sigma": sigma, "k": k,
            "seed": seed, "stream_id": stream_id, "clamp": clamp,
        })
        assert resp.status_code == 200
        got = np.asarray(resp.json()["samples"])
        local = draw_scores(
            _node(mu, sigma), k, ScorerBackend(clamp_scores=clamp), StreamRng(seed, stream_id)
        )
        assert got.shape == local.values.shape
        assert np.all(
            np.abs(got - local.values) <= 1e-9 * np.maximum(np.abs(local.values), 1.0)
        ), (mu, sigma, k, seed, stream_id)
        checked += k
    assert checked >= 10_000
