import numpy as np
import pytest


def crand(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_network(rng, B=2, U_b=2, N=2, NR=2, NT=4, S=2, scale=1.0):
    """Random channels, serving map and transmit beamformers."""
    U = B * U_b
    H = crand(rng, B, U, N, NR, NT) * scale
    serving = np.repeat(np.arange(B), U_b)
    tx = crand(rng, U, N, NT, S)
    return H, serving, tx


def random_pd(rng, S, cond=10.0):
    """Random Hermitian PD matrix with eigenvalues in [1, cond]."""
    q, _ = np.linalg.qr(crand(rng, S, S))
    ev = rng.uniform(1.0, cond, S)
    return (q * ev) @ q.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_results = {}


def pytest_terminal_summary(terminalreporter, config):
    results = config.acceptance_results
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
