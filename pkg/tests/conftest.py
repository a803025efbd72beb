import hashlib
from dataclasses import replace

import numpy as np
import pytest

from galforge import __version__
from galforge import generator as G
from galforge.classifier import ClassifierConfig
from galforge.worldgen import WorldSpec, make_world

SMALL_SPEC = WorldSpec(pretrain_n=600, pool_n=240, test_n=300, seed=3)
FAST_CLF = ClassifierConfig(epochs=15)

# filled by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_world():
    return make_world(WorldSpec())


@pytest.fixture(scope="session")
def small_world():
    return make_world(SMALL_SPEC)


@pytest.fixture(scope="session")
def pretrained_gen(default_world, request):
    """Default-config generator on the default world, cached across sessions."""
    cfg = G.GeneratorConfig()
    key = hashlib.sha256(repr((__version__, cfg, default_world.spec)).encode()).hexdigest()[:16]
    path = request.config.cache.mkdir("galforge") / f"gen-{key}.glt"
    if path.exists():
        return G.load_generator(path)
    x, y = default_world.splits["pretrain"]
    model = G.pretrain_generator(x, y, default_world.table, cfg)
    G.save_generator(model, path)
    return model


@pytest.fixture(scope="session")
def tiny_gen(small_world):
    """Briefly trained T=5 generator: fast, deterministic, good enough for plumbing tests."""
    x, y = small_world.splits["pretrain"]
    cfg = G.GeneratorConfig(T=5, beta_start=0.05, beta_end=0.5, hidden=(32, 32), epochs=15, batch=100)
    return G.pretrain_generator(x, y, small_world.table, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
