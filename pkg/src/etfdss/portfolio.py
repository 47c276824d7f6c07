"""Posterior Sharpe-ratio allocation and Sharpe-ratio sample distributions."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dss import DrawStack

logger = logging.getLogger(__name__)


class DegeneratePortfolioError(ArithmeticError):
    pass


class PortfolioConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PortfolioWeights:
    tickers: tuple[str, ...]
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "w", w)
        if w.shape != (len(self.tickers),):
            raise ValueError("one weight per ticker")
        if np.any(w < 0) or abs(w.sum() - 1.0) >= 1e-8:
            raise ValueError("weights must be nonnegative and sum to one")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.tickers, map(float, self.w)))


@dataclass(frozen=True)
class SharpeSamples:
    values: np.ndarray
    label: str

    def summary(self) -> dict[str, float]:
        v = self.values
        return {"mean": float(v.mean()), "q05": float(np.quantile(v, 0.05)),
                "median": float(np.median(v)), "q95": float(np.quantile(v, 0.95))}


@dataclass(frozen=True)
class DEConfig:
    """Differential evolution settings (rand/1/bin).

    ``popsize`` is a multiplier on the dimension. The run stops after
    ``max_generations`` or once the best objective has improved by less than
    ``stall_tol`` over ``stall_generations`` consecutive generations, but never
    before ``min_generations``.
    """

    mutation: float = 0.8
    crossover: float = 0.9
    popsize: int = 10
    min_generations: int = 300
    max_generations: int = 2000
    stall_generations: int = 100
    stall_tol: float = 1e-12


class CandidateMoments:
    """Per-draw (mu, Sigma) of the candidate assets, with ticker lookup."""

    def __init__(self, mu: np.ndarray, Sigma: np.ndarray, tickers):
        self.mu = np.asarray(mu, dtype=float)
        self.Sigma = np.asarray(Sigma, dtype=float)
        self.tickers = list(tickers)
        if self.mu.ndim == 1:
            self.mu = self.mu[None]
            self.Sigma = self.Sigma[None]

    @classmethod
    def from_draws(cls, draws, tickers) -> "CandidateMoments":
        if isinstance(draws, CandidateMoments):
            return draws
        if isinstance(draws, DrawStack):
            return cls(draws.mu_x, draws.Sigma_x, tickers)
        draws = list(draws)
        return cls(np.stack([d.mu_x for d in draws]), np.stack([d.Sigma_x for d in draws]), tickers)

    def subset(self, tickers) -> "CandidateMoments":
        tickers = list(tickers)
        unknown = [t for t in tickers if t not in self.tickers]
        if unknown:
            raise KeyError(f"tickers not in the draw universe: {unknown}")
        idx = [self.tickers.index(t) for t in tickers]
        return CandidateMoments(self.mu[:, idx], self.Sigma[:, idx][:, :, idx], tickers)

    def __len__(self):
        return self.mu.shape[0]


def sharpe_per_draw(w, mu, Sigma) -> float:
    w = np.asarray(getattr(w, "w", w), dtype=float)
    var = float(w @ np.asarray(Sigma) @ w)
    if not var > 0:
        raise DegeneratePortfolioError("portfolio variance is not positive")
    return float(w @ np.asarray(mu) / np.sqrt(var))


def sharpe_matrix(W: np.ndarray, moments: CandidateMoments) -> np.ndarray:
    """Sharpe ratios of each row of W at each draw, shape (n_portfolios, S)."""
    W = np.atleast_2d(W)
    means = W @ moments.mu.T
    var = np.einsum("nj,sjk,nk->ns", W, moments.Sigma, W)
    if np.any(var <= 0):
        raise DegeneratePortfolioError("portfolio variance is not positive")
    return means / np.sqrt(var)


def project_simplex_clip(W: np.ndarray) -> np.ndarray:
    """Clip negatives to zero and renormalize; an all-zero row becomes uniform."""
    W = np.maximum(np.atleast_2d(W), 0.0)
    tot = W.sum(axis=1, keepdims=True)
    zero = tot[:, 0] <= 0
    W[zero] = 1.0
    tot[zero] = W.shape[1]
    return W / tot


def differential_evolution_simplex(objective, dim: int, config: DEConfig = DEConfig(), seed: int = 0):
    """Maximize ``objective`` (vectorized over rows) over the probability simplex.

    Returns (best_weights, best_value, n_generations).
    """
    rng = np.random.default_rng(seed)
    n = max(config.popsize * dim, 4)
    pop = rng.dirichlet(np.ones(dim), size=n)
    # seed vertices and the barycentre so corner optima are present from the start
    extra = np.vstack([np.eye(dim), np.full((1, dim), 1.0 / dim)])[: n]
    pop[: len(extra)] = extra
    fit = objective(pop)
    best_hist = [fit.max()]
    gen = 0
    for gen in range(1, config.max_generations + 1):
        idx = np.arange(n)
        r = np.empty((n, 3), dtype=int)
        for i in range(n):
            r[i] = rng.choice(np.delete(idx, i), 3, replace=False)
        mutant = pop[r[:, 0]] + config.mutation * (pop[r[:, 1]] - pop[r[:, 2]])
        cross = rng.random((n, dim)) < config.crossover
        cross[idx, rng.integers(0, dim, size=n)] = True
        trial = project_simplex_clip(np.where(cross, mutant, pop))
        tfit = objective(trial)
        better = tfit >= fit
        pop[better] = trial[better]
        fit[better] = tfit[better]
        best_hist.append(fit.max())
        if gen >= config.min_generations and gen > config.stall_generations:
            if best_hist[-1] - best_hist[-1 - config.stall_generations] < config.stall_tol:
                break
    b = int(np.argmax(fit))
    return pop[b].copy(), float(fit[b]), gen


def posterior_mean_sharpe(W, moments: CandidateMoments) -> np.ndarray:
    return sharpe_matrix(W, moments).mean(axis=1)


def maximize_posterior_mean_sharpe(draws, subset, de_config: DEConfig = DEConfig(), seed: int = 0,
                                   tickers=None) -> PortfolioWeights:
    """Long-only weights on ``subset`` maximizing the posterior mean Sharpe ratio.

    ``draws`` is a ``CandidateMoments`` or paired draws (then ``tickers``
    names their candidate columns).
    """
    subset = list(subset)
    if not subset:
        raise PortfolioConfigError("empty asset subset")
    moments = draws if isinstance(draws, CandidateMoments) else CandidateMoments.from_draws(draws, tickers)
    sub = moments.subset(subset)
    if len(subset) == 1:
        return PortfolioWeights(subset, np.ones(1))
    w, _, _ = differential_evolution_simplex(lambda W: posterior_mean_sharpe(W, sub), len(subset),
                                             de_config, seed)
    w = np.maximum(w, 0.0)
    return PortfolioWeights(subset, w / w.sum())


def sharpe_distribution_for_weights(w: PortfolioWeights, draws, label: str = "portfolio",
                                    tickers=None) -> SharpeSamples:
    moments = draws if isinstance(draws, CandidateMoments) else CandidateMoments.from_draws(draws, tickers)
    sub = moments.subset(w.tickers)
    return SharpeSamples(sharpe_matrix(w.w, sub)[0], label)


def target_moments(draws) -> tuple[np.ndarray, np.ndarray]:
    """Implied target mean beta' mu_x and covariance beta' Sigma_x beta + diag(psi) per draw."""
    stack = draws if isinstance(draws, DrawStack) else DrawStack(draws)
    mu = stack.mu_r
    Sigma = np.einsum("spq,spr,srt->sqt", stack.beta, stack.Sigma_x, stack.beta)
    Sigma = Sigma + np.einsum("sq,qt->sqt", stack.psi, np.eye(stack.psi.shape[1]))
    return mu, Sigma


def max_sharpe(mu: np.ndarray, Sigma: np.ndarray) -> float:
    """Unconstrained (long/short) maximal Sharpe ratio sqrt(mu' Sigma^-1 mu)."""
    L = np.linalg.cholesky(np.atleast_2d(Sigma))
    z = np.linalg.solve(L, np.atleast_1d(mu))
    return float(np.sqrt(z @ z))


def tangency_sharpe_distribution(draws, universe: str = "targets", max_skip_fraction: float = 0.01,
                                 label: str | None = None) -> SharpeSamples:
    """Per-draw tangency Sharpe ratio of the target or candidate universe."""
    if universe == "targets":
        mu, Sigma = target_moments(draws)
    elif universe == "candidates":
        if isinstance(draws, CandidateMoments):
            mu, Sigma = draws.mu, draws.Sigma
        else:
            stack = draws if isinstance(draws, DrawStack) else DrawStack(draws)
            mu, Sigma = stack.mu_x, stack.Sigma_x
    else:
        raise ValueError(f"universe must be 'targets' or 'candidates', got {universe!r}")
    out, skipped = [], 0
    for m, S in zip(mu, Sigma):
        try:
            out.append(max_sharpe(m, S))
        except np.linalg.LinAlgError:
            skipped += 1
    if skipped:
        logger.warning("skipped %d draws with singular covariance", skipped)
    if skipped > max_skip_fraction * len(mu):
        raise np.linalg.LinAlgError(f"{skipped} of {len(mu)} draws had singular covariance")
    return SharpeSamples(np.array(out), label or f"tangency-{universe}")


def write_weights_csv(path, w: PortfolioWeights) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["ticker", "weight"])
        for t, v in zip(w.tickers, w.w):
            wr.writerow([t, repr(float(v))])


def read_weights_csv(path) -> PortfolioWeights:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "ticker" not in rows[0] or "weight" not in rows[0]:
        raise PortfolioConfigError(f"{path}: expected columns ticker,weight")
    tickers = [r["ticker"].strip() for r in rows]
    w = np.array([float(r["weight"]) for r in rows])
    if np.any(w < 0):
        raise PortfolioConfigError(f"{path}: negative weight")
    return PortfolioWeights(tickers, w / w.sum())


def write_sharpe_csv(path, samples: SharpeSamples, annualize: bool = False) -> None:
    scale = np.sqrt(12.0) if annualize else 1.0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["label", "draw_index", "sharpe"])
        for i, v in enumerate(samples.values):
            wr.writerow([samples.label, i, repr(float(v * scale))])
