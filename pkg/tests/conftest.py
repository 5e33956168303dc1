import numpy as np
import pytest

from privae.model import VAE


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_model(input_dim=3, latent_dim=2, hidden=(5, 4), likelihood="gaussian"):
    return VAE(input_dim, latent_dim, hidden, likelihood)


def rel_err(a, b, floor=1e-7):
    """Coordinate-wise relative error; coordinates where both sides are tiny count as absolute."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    return np.where(scale < floor, 0.0, diff / np.where(scale > 0, scale, 1.0)), diff


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Each coordinate must satisfy the relative bound or, near zero, the absolute one."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (diff <= rtol * scale) | (diff <= atol)
    assert ok.all(), f"worst coordinate: analytic={analytic[~ok][:3]}, numeric={numeric[~ok][:3]}"


# one line per acceptance criterion, collected by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[2:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
