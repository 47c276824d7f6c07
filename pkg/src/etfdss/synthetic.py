"""Synthetic return panels with known generating structure."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .data import AlignedData, ReturnsPanel, load_returns_csv, write_returns_csv

BUNDLED_TARGETS = ["Mkt.RF", "SMB", "HML", "Mom"]
BUNDLED_CANDIDATES = ["SPY", "IWM", "IWV", "IWO", "IWD", "IVE", "IJR", "RSP", "VTI", "EFA",
                      "EEM", "XLE", "XLF", "TLT", "GLD"]


def month_labels(T: int, start_year: int = 1995, start_month: int = 3) -> list[str]:
    out = []
    for i in range(T):
        m = start_month - 1 + i
        out.append(f"{start_year + m // 12:04d}-{m % 12 + 1:02d}")
    return out


@dataclass(frozen=True)
class SelectionProblem:
    data: AlignedData
    true_index: np.ndarray
    beta: np.ndarray  # p x q

    @property
    def true_labels(self) -> set[str]:
        return {self.data.candidates.labels[j] for j in self.true_index}


def make_selection_problem(p: int = 15, q: int = 4, n_true: int = 3, T: int = 400, r2: float = 0.6,
                           n_factors: int = 2, loading_scale: float = 0.01, seed: int = 0, labels=None,
                           target_labels=None) -> SelectionProblem:
    """Candidates with a common factor structure; each target loads on the same ``n_true`` of them.

    Residual variances are set so every target has population R^2 equal to ``r2``.
    ``loading_scale`` sets how correlated the candidates are: the default gives
    mean absolute pairwise correlation around 0.15. Much stronger correlation
    breaks lasso sign consistency and the path starts picking correlated
    decoys before all true candidates are in.
    """
    rng = np.random.default_rng(seed)
    B = rng.normal(0.0, loading_scale, size=(p, n_factors))
    B[:, 0] = np.abs(B[:, 0]) + 0.4 * loading_scale
    idio = rng.uniform(0.0004, 0.0012, size=p)
    Sigma = B @ B.T + np.diag(idio)
    mu = np.sqrt(np.diag(Sigma)) * rng.uniform(0.05, 0.25, size=p)
    X = rng.multivariate_normal(mu, Sigma, size=T, method="cholesky")

    true_index = np.sort(rng.choice(p, size=n_true, replace=False))
    beta = np.zeros((p, q))
    beta[true_index] = rng.choice([-1.0, 1.0], size=(n_true, q)) * rng.uniform(0.4, 1.0, size=(n_true, q))
    signal_var = np.diag(beta.T @ Sigma @ beta)
    noise_var = signal_var * (1.0 - r2) / r2
    R = X @ beta + rng.standard_normal((T, q)) * np.sqrt(noise_var)

    dates = month_labels(T)
    labels = list(labels) if labels is not None else [f"ETF{j + 1:02d}" for j in range(p)]
    target_labels = list(target_labels) if target_labels is not None else [f"T{i + 1}" for i in range(q)]
    data = AlignedData(ReturnsPanel(dates, target_labels, R), ReturnsPanel(dates, labels, X))
    return SelectionProblem(data, true_index, beta)


def bundled_panels(T: int = 240, seed: int = 1992):
    """The demo dataset shipped with the package.

    SPY, IWM and IWV drive the four targets; a few candidates start late so
    that rolling windows see the candidate universe grow.
    """
    prob = make_selection_problem(p=len(BUNDLED_CANDIDATES), q=len(BUNDLED_TARGETS), n_true=3, T=T,
                                  r2=0.6, seed=seed, labels=BUNDLED_CANDIDATES,
                                  target_labels=BUNDLED_TARGETS)
    # relabel so the true drivers are SPY, IWM, IWV
    order = list(prob.true_index) + [j for j in range(len(BUNDLED_CANDIDATES)) if j not in prob.true_index]
    X = prob.data.X[:, order]
    R = prob.data.R
    late = {"XLF": 60, "TLT": 60, "GLD": 120}
    X = X.copy()
    for lab, start in late.items():
        X[:start, BUNDLED_CANDIDATES.index(lab)] = np.nan
    dates = prob.data.targets.dates
    targets = ReturnsPanel(dates, BUNDLED_TARGETS, np.round(R, 6))
    candidates = ReturnsPanel(dates, BUNDLED_CANDIDATES, np.round(X, 6))
    return targets, candidates


def write_bundled(directory) -> None:
    targets, candidates = bundled_panels()
    write_returns_csv(targets, f"{directory}/targets.csv")
    write_returns_csv(candidates, f"{directory}/candidates.csv")


def bundled_paths():
    base = resources.files("etfdss") / "data"
    return base / "targets.csv", base / "candidates.csv"


def load_bundled():
    t, c = bundled_paths()
    return load_returns_csv(t), load_returns_csv(c)
