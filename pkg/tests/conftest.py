"""Shared fixtures: a seeded fixture bundle, registry and engine factory."""

from __future__ import annotations

import pytest

from flowpilot.engine import CopilotEngine, EngineConfig
from flowpilot.fixtures import (
    SINK_KIND_OVERRIDES,
    scripted_backends,
    seed_registry,
    write_fixture_bundle,
)
from flowpilot.registry import Registry
from flowpilot.services import MockServiceState, builtin_adapters

PREAUTH = {"google": "gd-secret-token-1", "adma": "adma-secret-token-2"}


@pytest.fixture(scope="session")
def bundle_dir(tmp_path_factory):
    return write_fixture_bundle(tmp_path_factory.mktemp("bundle"))


@pytest.fixture()
def registry_dir(tmp_path):
    seed_registry(tmp_path / "registry")
    return tmp_path / "registry"


@pytest.fixture()
def registry(registry_dir):
    return Registry(registry_dir)


@pytest.fixture()
def make_engine(bundle_dir, registry):
    """Factory for engines over fresh mock state but a shared registry."""

    def factory(config: EngineConfig | None = None, backends=None, **kwargs) -> CopilotEngine:
        state = MockServiceState.from_dir(bundle_dir)
        return CopilotEngine(
            registry=kwargs.pop("registry", registry),
            adapters=builtin_adapters(state),
            backends=backends or scripted_backends(),
            config=config,
            sink_kind_overrides=SINK_KIND_OVERRIDES,
            record_sessions=False,
            **kwargs,
        )

    return factory


@pytest.fixture()
def engine(make_engine):
    return make_engine()
