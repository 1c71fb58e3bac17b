import numpy as np
import pytest

from proofbandit.environment import EnvSpec, make_env
from proofbandit.spaces import FiniteActions, UnitBall

ACCEPTANCE_LINES: list[str] = []


def small_spec(m=2, d=2, n=1, F=None, mu=None, sigma_label=0.0, sigma_bandit=0.0, space=None, **kw):
    return EnvSpec(
        m=m,
        d=d,
        n=n,
        F=np.eye(d, m) if F is None else F,
        mu=np.zeros(d) if mu is None else mu,
        sigma_label=sigma_label,
        sigma_bandit=sigma_bandit,
        action_space=space or UnitBall(d),
        feature_cov=kw.pop("feature_cov", np.eye(m)),
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def base_env(rng):
    return make_env(m=6, d=3, n=4, K_F=2.0, label_var=0.1, bandit_var=1e-4, rng=rng)


@pytest.fixture
def finite_env(rng):
    acts = FiniteActions(np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [-0.6, -0.8, 0]]))
    return make_env(m=4, d=3, n=3, K_F=2.0, label_var=0.05, bandit_var=1e-4, rng=rng,
                    variant="per_action", action_space=acts)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
