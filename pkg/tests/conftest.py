import numpy as np
import pytest

from etfdss.data import AlignedData, ReturnsPanel
from etfdss.dss import PairedDraw
from etfdss.synthetic import month_labels


def make_aligned(X, R, cand_prefix="C", targ_prefix="R"):
    X = np.asarray(X, dtype=float)
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    dates = month_labels(X.shape[0])
    return AlignedData(
        ReturnsPanel(dates, [f"{targ_prefix}{i}" for i in range(R.shape[1])], R),
        ReturnsPanel(dates, [f"{cand_prefix}{j}" for j in range(X.shape[1])], X),
    )


def random_paired_draws(S, p, q, seed=0):
    """Scripted generator of paired posterior draws with PD covariances."""
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(S):
        A = rng.normal(size=(p, p)) * 0.1
        Sigma = A @ A.T + np.diag(rng.uniform(0.01, 0.05, size=p))
        draws.append(PairedDraw(
            beta=rng.normal(size=(p, q)),
            psi=rng.uniform(0.5, 1.5, size=q),
            mu_x=rng.normal(0.01, 0.02, size=p),
            Sigma_x=Sigma,
        ))
    return draws


@pytest.fixture
def small_regression():
    rng = np.random.default_rng(11)
    T, p, q = 80, 5, 3
    X = rng.normal(size=(T, p))
    beta = np.zeros((p, q))
    beta[[0, 2]] = rng.normal(size=(2, q))
    R = X @ beta + rng.normal(size=(T, q))
    return make_aligned(X, R)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
