"""Bivariate closed forms (conditional loss vs graphical lasso) and the simulation study."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import portfolio
from .data import AlignedData, ReturnsPanel
from .pipeline import PipelineConfig, fit_pipeline


class SingularPathError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BivariateParams:
    """Posterior-mean covariance [[a, c], [c, b]] of (target, candidate)."""

    a_bar: float
    b_bar: float
    c_bar: float

    def __post_init__(self):
        if not (self.a_bar > 0 and self.b_bar > 0 and self.a_bar * self.b_bar - self.c_bar**2 > 0):
            raise ValueError(f"not positive definite: {self}")

    @property
    def det(self) -> float:
        return self.a_bar * self.b_bar - self.c_bar**2


def conditional_loss_optimum(params: BivariateParams, lam: float) -> float:
    """argmax of -1/2 b gamma^2 + c gamma - lam |gamma|, a soft threshold of c."""
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    c = params.c_bar
    return math.copysign(max(abs(c) - lam, 0.0), c) / params.b_bar


def glasso_optimum(params: BivariateParams, rho: float) -> tuple[float, float]:
    """Closed-form off-diagonal precision g* and its implied coefficient -g* det(Sigma_bar).

    g* takes the sign opposite to c: for c > 0 the active branch is
    g = (rho/2 - c) / (det + c rho - rho^2/4), mirrored for c < 0. Both
    vanish for rho >= 2|c|.
    """
    if rho < 0:
        raise ValueError("penalty must be nonnegative")
    c = params.c_bar
    if c == 0 or rho >= 2 * abs(c):
        return 0.0, 0.0
    if c > 0:
        num, den = 0.5 * rho - c, params.det + c * rho - 0.25 * rho**2
    else:
        num, den = -0.5 * rho - c, params.det - c * rho - 0.25 * rho**2
    if abs(den) < 1e-12:
        raise SingularPathError(f"glasso denominator vanishes at rho={rho}")
    g = num / den
    return g, -g * params.det


def glasso_stationary_diagonals(params: BivariateParams, g: float) -> tuple[float, float]:
    """(kappa, psi) solving the diagonal first-order conditions for a given g."""
    root = 1.0 + math.sqrt(1.0 + 4.0 * params.a_bar * params.b_bar * g * g)
    return root / (2.0 * params.b_bar), root / (2.0 * params.a_bar)


def glasso_objective(params: BivariateParams, rho: float, g: float, psi: float, kappa: float) -> float:
    det = psi * kappa - g * g
    if det <= 0:
        return math.inf
    return rho * abs(g) - math.log(det) + params.a_bar * psi + params.b_bar * kappa + 2 * params.c_bar * g


def glasso_foc_residuals(params: BivariateParams, rho: float, g: float, psi: float, kappa: float):
    """Gradient of the glasso objective in (psi, kappa, g); the g entry uses sign(g)."""
    det = psi * kappa - g * g
    return (
        params.a_bar - kappa / det,
        params.b_bar - psi / det,
        rho * np.sign(g) + 2 * g / det + 2 * params.c_bar,
    )


def path_comparison_table(params: BivariateParams, grid_size: int = 101) -> np.ndarray:
    """Rows (t, gamma_conditional, gamma_glasso) with lambda = t|c| and rho = 2t|c|."""
    ts = np.linspace(0.0, 1.0, grid_size)
    c = abs(params.c_bar)
    rows = [(t, conditional_loss_optimum(params, t * c), glasso_optimum(params, 2 * t * c)[1]) for t in ts]
    return np.array(rows)


def max_path_gap(params: BivariateParams, grid_size: int = 101) -> float:
    """Largest gap between the two paths, each normalized by its unpenalized value."""
    tab = path_comparison_table(params, grid_size)
    return float(np.max(np.abs(tab[:, 1] / tab[0, 1] - tab[:, 2] / tab[0, 2])))


def write_path_table(path, table: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "gamma_conditional", "gamma_glasso"])
        for row in table:
            w.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# simulation study

@dataclass(frozen=True)
class GeneratingMoments:
    mu_x: np.ndarray
    Sigma_x: np.ndarray
    beta: np.ndarray  # p x q
    psi: np.ndarray  # q residual variances

    @property
    def target_mean(self) -> np.ndarray:
        return self.beta.T @ self.mu_x

    @property
    def target_cov(self) -> np.ndarray:
        return self.beta.T @ self.Sigma_x @ self.beta + np.diag(self.psi)

    def tangency_sharpe(self) -> float:
        return portfolio.max_sharpe(self.target_mean, self.target_cov)


def default_generating_moments(p: int = 10, q: int = 4, k: int = 2, seed: int = 20150201) -> GeneratingMoments:
    """Synthetic stand-in for fitted posterior means: monthly-scale returns with a k-factor structure."""
    rng = np.random.default_rng(seed)
    B = rng.normal(0.0, 0.03, size=(p, k))
    B[:, 0] = np.abs(B[:, 0]) + 0.02
    Psi = rng.uniform(0.0002, 0.0008, size=p)
    Sigma = B @ B.T + np.diag(Psi)
    vol = np.sqrt(np.diag(Sigma))
    mu = vol * rng.uniform(0.10, 0.30, size=p)
    beta = np.zeros((p, q))
    active = rng.choice(p, size=min(4, p), replace=False)
    beta[active] = rng.choice([-1, 1], size=(len(active), q)) * rng.uniform(0.3, 0.9, size=(len(active), q))
    explained = np.diag(beta.T @ Sigma @ beta)
    psi = 0.5 * explained
    return GeneratingMoments(mu, Sigma, beta, psi)


def simulate_returns(moments: GeneratingMoments, T: int, seed: int) -> AlignedData:
    rng = np.random.default_rng(seed)
    p, q = moments.beta.shape
    X = rng.multivariate_normal(moments.mu_x, moments.Sigma_x, size=T, method="cholesky")
    R = X @ moments.beta + rng.standard_normal((T, q)) * np.sqrt(moments.psi)
    dates = [f"{2000 + i // 12:04d}-{i % 12 + 1:02d}" for i in range(T)]
    return AlignedData(
        ReturnsPanel(dates, [f"R{i + 1}" for i in range(q)], R),
        ReturnsPanel(dates, [f"X{j + 1}" for j in range(p)], X),
    )


@dataclass
class RecoveryReport:
    true_beta: np.ndarray
    posterior_mean_beta: np.ndarray
    beta_rmse: float
    inclusion: np.ndarray
    true_sharpe: float
    sharpe_samples: np.ndarray
    truth_quantile: float
    interval_90: tuple[float, float] = field(default=(np.nan, np.nan))

    @property
    def covered(self) -> bool:
        lo, hi = self.interval_90
        return lo <= self.true_sharpe <= hi

    def summary_lines(self) -> list[str]:
        lo, hi = self.interval_90
        return [
            f"beta_rmse {self.beta_rmse:.6f}",
            f"true_tangency_sharpe {self.true_sharpe:.6f}",
            f"posterior_mean_sharpe {self.sharpe_samples.mean():.6f}",
            f"interval_90 {lo:.6f} {hi:.6f}",
            f"truth_quantile {self.truth_quantile:.4f}",
            f"covered {int(self.covered)}",
        ]


SIMULATION_CONFIG = PipelineConfig(n_sweeps=6000, n_burn=1000, thin=5, k=2)


def run_simulation_study(moments: GeneratingMoments | None = None, T: int = 500, seed: int = 0,
                         config: PipelineConfig = SIMULATION_CONFIG) -> RecoveryReport:
    """Simulate from known moments, refit, and compare beta and the tangency Sharpe ratio."""
    moments = moments or default_generating_moments()
    data = simulate_returns(moments, T, seed)
    chain, _, paired = fit_pipeline(data, config, seed)
    post_beta = chain.posterior_mean_beta
    rmse = float(np.sqrt(np.mean((post_beta - moments.beta) ** 2)))
    samples = portfolio.tangency_sharpe_distribution(paired, "targets").values
    truth = moments.tangency_sharpe()
    return RecoveryReport(
        moments.beta, post_beta, rmse, chain.inclusion, truth, samples,
        float(np.mean(samples <= truth)),
        (float(np.quantile(samples, 0.05)), float(np.quantile(samples, 0.95))),
    )


def write_recovery_csv(path, report: RecoveryReport) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true_beta", "posterior_mean_beta"])
        for t, m in zip(report.true_beta.ravel(), report.posterior_mean_beta.ravel()):
            w.writerow([repr(float(t)), repr(float(m))])
