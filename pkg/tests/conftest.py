from __future__ import annotations

import pytest

from latentcomp.models import toy_bundle
from latentcomp.models.data import make_toy_domains
from latentcomp.models.trained import TrainConfig, save_weights, train_toy_denoiser

TRAIN_SEED = 0
TRAIN_SIZE = 32
BENCH_SEED = 1
BENCH_SIZE = 20


@pytest.fixture(scope="session")
def trained_denoiser():
    """Toy denoiser trained once per session on the training split."""
    return train_toy_denoiser(make_toy_domains(TRAIN_SEED, TRAIN_SIZE), TrainConfig()).denoiser


@pytest.fixture(scope="session")
def trained_bundle(trained_denoiser):
    return toy_bundle(trained_denoiser)


@pytest.fixture(scope="session")
def trained_weights(trained_denoiser, tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "toy.bin"
    save_weights(trained_denoiser, path)
    return path


@pytest.fixture(scope="session")
def benchmark():
    return make_toy_domains(BENCH_SEED, BENCH_SIZE)


# acceptance bookkeeping: one pass/fail line per criterion in the terminal summary

def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        request.config._acceptance[number] = (title, bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
