import numpy as np
import pytest

from bayes_input_design.bayes import GaussianBelief
from bayes_input_design.config import load_preset
from bayes_input_design.pipeline import reproduce_study
from bayes_input_design.sysmodel import LinearParamSystem, discretize

ACCEPTANCE_LINES = {}


def record_acceptance(key, passed, detail=""):
    line = f"{key}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
    ACCEPTANCE_LINES[key] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (len(k.split()[0]), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


def oscillator(T=10.0, kappa=2.0, delta=0.25, sigma=0.25):
    return LinearParamSystem(A=[[0.0, 1.0], [-kappa, -delta]], B=[[[0.0], [1.0]], [[0.0], [1.0]]],
                             C=[[0.0, 1.0]], sigma=[[sigma]], T=T)


def scalar_system(A=0.0, B0=1.0, B1=1.0, C=1.0, sigma=1.0, T=1.0):
    return LinearParamSystem(A=[[A]], B=[[[B0]], [[B1]]], C=[[C]], sigma=[[sigma]], T=T)


def random_spd(rng, p, floor=0.2):
    G = rng.standard_normal((p, p))
    return G @ G.T / p + floor * np.eye(p)


def random_instance(rng, n_max=3, p_max=2, m_max=2, q=None, T=None):
    """Random stable system satisfying q <= p <= n, m <= n, with a random Gaussian prior."""
    n = int(rng.integers(1, n_max + 1))
    p = int(rng.integers(1, min(p_max, n) + 1))
    m = int(rng.integers(1, min(m_max, n) + 1))
    q = 1 if q is None else min(q, p)
    A = rng.standard_normal((n, n)) * 0.8
    A -= (np.max(np.linalg.eigvals(A).real) + 0.3) * np.eye(n)
    B = rng.standard_normal((p + 1, n, m))
    C = rng.standard_normal((q, n))
    sigma = np.linalg.cholesky(random_spd(rng, q)) * 0.5
    T = float(rng.uniform(0.5, 3.0)) if T is None else T
    sys = LinearParamSystem(A=A, B=B, C=C, sigma=sigma, T=T)
    prior = GaussianBelief(rng.standard_normal(p) * 0.5, random_spd(rng, p) * 0.5)
    return sys, prior


def random_control(rng, K, m):
    return rng.uniform(-1.0, 1.0, size=(K, m))


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture(scope="session")
def preset():
    return load_preset()


@pytest.fixture(scope="session")
def study(preset):
    return reproduce_study(preset)


@pytest.fixture(scope="session")
def preset_disc(preset):
    return discretize(preset.system, preset.K)
