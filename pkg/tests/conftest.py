"""Shared fixtures: deterministic mock endpoints and small benchmarks."""

from __future__ import annotations

import numpy as np
import pytest

from ctxgenie.corpus import save_benchmark, synthetic_benchmark
from ctxgenie.gateway import ROLES, EndpointProfile, LlmGateway
from ctxgenie.mockserver import MockEndpointServer


@pytest.fixture(autouse=True)
def _no_ambient_endpoints(monkeypatch):
    """Keep tests hermetic: ignore any CTXGENIE_* endpoint vars in the host env."""
    import os

    for name in list(os.environ):
        if name.startswith("CTXGENIE_") and name != "CTXGENIE_KERNELS":
            monkeypatch.delenv(name, raising=False)


@pytest.fixture(scope="session")
def records():
    return synthetic_benchmark(8, seed=0)


@pytest.fixture(scope="session")
def bench_path(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("bench") / "bench.jsonl"
    save_benchmark(records, path)
    return path


@pytest.fixture
def make_server():
    """Factory for mock endpoint servers; stops them all on teardown."""
    servers: list[MockEndpointServer] = []

    def _make(roles: dict) -> MockEndpointServer:
        server = MockEndpointServer(roles)
        server.start()
        servers.append(server)
        return server

    yield _make
    for server in servers:
        server.stop()


def profiles_for(server: MockEndpointServer, roles=None, **overrides) -> dict:
    """Endpoint profiles pointing every role at the mock server."""
    selected = tuple(roles) if roles is not None else tuple(server.roles)
    params = {"api": "chat", "backoff_base": 0.01, "timeout": 10.0}
    params.update(overrides)
    return {
        role: EndpointProfile(
            role=role, url=server.url_for(role), model=f"mock-{role}", **params
        )
        for role in selected
    }


@pytest.fixture
def standard_roles(bench_path):
    """The five-role policy set most pipeline tests run against."""
    return {
        "generation": {"kind": "hash-text", "marker": "ctx", "leak_mod": 3},
        "reader": {"kind": "gold-letter", "records_path": str(bench_path)},
        "embedding": {"kind": "hash", "dim": 32},
        "rerank": {"kind": "marker", "marker": "ctx"},
        "judge": {"kind": "all-yes"},
    }


@pytest.fixture
def standard_server(make_server, standard_roles):
    return make_server(standard_roles)


@pytest.fixture
def gateway(standard_server):
    return LlmGateway(profiles=profiles_for(standard_server, ROLES))


def unit_rows(n: int, dim: int, seed: int = 0) -> np.ndarray:
    """Random Gaussian unit-norm rows (float64)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    matrix = rng.standard_normal((n, dim))
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
