"""Matrix-variate stochastic search variable selection.

One inclusion vector ``gamma`` over the p candidate assets is shared by all q
target regressions. Each target column gets an independent Zellner g-prior,
so the Bayes factor of a model against the empty model is a product of q
univariate g-prior Bayes factors. Regressions are run on centered data; the
intercept is carried implicitly by the centering.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit, gammaln

from .data import AlignedData

logger = logging.getLogger(__name__)

EMPIRICAL_BAYES = "empirical-bayes"
UNIFORM = "uniform"
MULTIPLICITY = "multiplicity-adjusted"


class SingularDesignError(np.linalg.LinAlgError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"selected design is rank deficient; offending columns: {self.columns}")


class DegreesOfFreedomError(ValueError):
    pass


class ChainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelIndicator:
    gamma: tuple[int, ...]

    def __post_init__(self):
        g = tuple(int(v) for v in self.gamma)
        if any(v not in (0, 1) for v in g):
            raise ValueError("gamma entries must be 0 or 1")
        object.__setattr__(self, "gamma", g)

    @classmethod
    def empty(cls, p: int) -> "ModelIndicator":
        return cls((0,) * p)

    @classmethod
    def from_bits(cls, bits: str) -> "ModelIndicator":
        return cls(tuple(int(c) for c in bits))

    @property
    def p(self) -> int:
        return len(self.gamma)

    @property
    def k(self) -> int:
        return sum(self.gamma)

    @property
    def bits(self) -> str:
        return "".join(map(str, self.gamma))

    @property
    def index(self) -> np.ndarray:
        return np.flatnonzero(np.array(self.gamma, dtype=bool))

    def with_coord(self, j: int, value: int) -> "ModelIndicator":
        g = list(self.gamma)
        g[j] = value
        return ModelIndicator(tuple(g))


@dataclass(frozen=True)
class ModelPrior:
    kind: str = MULTIPLICITY

    def __post_init__(self):
        if self.kind not in (UNIFORM, MULTIPLICITY):
            raise ValueError(f"model prior must be {UNIFORM!r} or {MULTIPLICITY!r}, got {self.kind!r}")


@dataclass(frozen=True)
class BayesFactorParts:
    per_column_log_bf: np.ndarray
    g_values: np.ndarray
    sse_gamma: np.ndarray
    sse_null: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.per_column_log_bf))


@dataclass(frozen=True)
class ConditionalDraw:
    gamma: ModelIndicator
    beta: np.ndarray  # p x q, rows outside gamma are zero
    sigma: np.ndarray  # q residual standard deviations
    psi_resid: np.ndarray  # q residual variances (sigma**2)


class RegressionSummary:
    """Centered sufficient statistics of the q target regressions."""

    def __init__(self, X: np.ndarray, R: np.ndarray, candidate_labels=None):
        X = np.asarray(X, dtype=float)
        R = np.asarray(R, dtype=float)
        if R.ndim == 1:
            R = R[:, None]
        self.T, self.p = X.shape
        self.q = R.shape[1]
        self.labels = list(candidate_labels) if candidate_labels is not None else [str(j) for j in range(self.p)]
        Xc = X - X.mean(axis=0)
        Rc = R - R.mean(axis=0)
        self.Xc, self.Rc = Xc, Rc
        self.gram = Xc.T @ Xc
        self.xty = Xc.T @ Rc
        self.sse_null = np.einsum("ti,ti->i", Rc, Rc)
        if np.any(self.sse_null <= 0):
            raise ValueError("target column with zero variance")

    @classmethod
    def from_data(cls, data) -> "RegressionSummary":
        if isinstance(data, RegressionSummary):
            return data
        return cls(data.X, data.R, data.candidates.labels)

    def factor(self, idx: np.ndarray) -> np.ndarray:
        """Lower Cholesky factor of the centered Gram submatrix, with a rank check."""
        G = self.gram[np.ix_(idx, idx)]
        try:
            L = np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise SingularDesignError(self._offenders(idx)) from None
        # relative pivot check: a collapsed pivot means a near-collinear column
        scale = np.sqrt(np.maximum(np.diag(G), 1e-300))
        if np.any(np.diag(L) <= 1e-6 * scale):
            raise SingularDesignError(self._offenders(idx))
        return L

    def _offenders(self, idx):
        # greedy: columns that add nothing to the span of those before them
        bad, kept = [], []
        for j in idx:
            trial = kept + [j]
            s = np.linalg.svd(self.Xc[:, trial], compute_uv=False)
            if s[-1] <= 1e-6 * s[0] or s[0] == 0:
                bad.append(self.labels[j])
            else:
                kept.append(j)
        return bad or [self.labels[j] for j in idx]

    def fit(self, idx: np.ndarray):
        """Least squares of every centered target on the selected centered columns.

        Returns (L, coef, sse) with coef of shape (k, q).
        """
        if len(idx) == 0:
            return None, np.zeros((0, self.q)), self.sse_null.copy()
        L = self.factor(idx)
        b = self.xty[idx]
        coef = cho_solve((L, True), b)
        explained = np.einsum("ji,ji->i", b, coef)
        sse = np.maximum(self.sse_null - explained, self.sse_null * 1e-15)
        return L, coef, sse


def empirical_bayes_g(r_squared: float, T: int, k: int) -> float:
    """Local empirical-Bayes g: ``max(F - 1, 0)`` with F the regression F statistic."""
    dof = T - 1 - k
    if dof <= 0:
        raise DegreesOfFreedomError(f"T - 1 - k must be positive (T={T}, k={k})")
    if k <= 0:
        raise ValueError("k must be a positive integer")
    if r_squared >= 1.0:
        return math.inf
    F = (r_squared / k) / ((1.0 - r_squared) / dof)
    return max(F - 1.0, 0.0)


def _resolve_g(g_policy, r2: np.ndarray, T: int, k: int) -> np.ndarray:
    if g_policy == EMPIRICAL_BAYES:
        return np.array([empirical_bayes_g(float(r), T, k) for r in r2])
    g = float(g_policy)
    if g < 0:
        raise ValueError("fixed g must be nonnegative")
    return np.full(len(r2), g)


def log_bayes_factor(gamma: ModelIndicator, data, g_policy=EMPIRICAL_BAYES) -> BayesFactorParts:
    """Per-target log Bayes factors of ``gamma`` against the empty model.

    ``g_policy`` is ``"empirical-bayes"`` or a fixed nonnegative number.
    """
    s = RegressionSummary.from_data(data)
    if gamma.p != s.p:
        raise ValueError(f"gamma has length {gamma.p}, data has p={s.p}")
    k = gamma.k
    if k == 0:
        zeros = np.zeros(s.q)
        return BayesFactorParts(zeros, zeros.copy(), s.sse_null.copy(), s.sse_null.copy())
    _, _, sse = s.fit(gamma.index)
    ratio = sse / s.sse_null
    g = _resolve_g(g_policy, 1.0 - ratio, s.T, k)
    T = s.T
    log_bf = 0.5 * (T - k - 1) * np.log1p(g) - 0.5 * (T + 1) * np.log1p(g * ratio)
    return BayesFactorParts(log_bf, g, sse, s.sse_null.copy())


def log_model_prior(gamma: ModelIndicator, prior: ModelPrior, p: int) -> float:
    if prior.kind == UNIFORM:
        return -p * math.log(2.0)
    k = gamma.k
    log_choose = gammaln(p + 1) - gammaln(k + 1) - gammaln(p - k + 1)
    return -math.log(p + 1) - float(log_choose)


class StochasticSearch:
    """Gibbs sampler over inclusion vectors with memoized Bayes factors."""

    def __init__(self, data, prior: ModelPrior = ModelPrior(), g_policy=EMPIRICAL_BAYES):
        self.summary = RegressionSummary.from_data(data)
        self.prior = prior
        self.g_policy = g_policy
        self._cache: dict[tuple, BayesFactorParts] = {}

    @property
    def p(self) -> int:
        return self.summary.p

    def parts(self, gamma: ModelIndicator) -> BayesFactorParts:
        hit = self._cache.get(gamma.gamma)
        if hit is None:
            hit = log_bayes_factor(gamma, self.summary, self.g_policy)
            self._cache[gamma.gamma] = hit
        return hit

    def log_posterior(self, gamma: ModelIndicator) -> float:
        """Unnormalized log posterior model probability."""
        return self.parts(gamma).total + log_model_prior(gamma, self.prior, self.p)

    def inclusion_probability(self, state: ModelIndicator, j: int) -> float:
        la = self.log_posterior(state.with_coord(j, 1))
        lb = self.log_posterior(state.with_coord(j, 0))
        return float(expit(la - lb))

    def sweep(self, state: ModelIndicator, rng: np.random.Generator, shuffle: bool = False) -> ModelIndicator:
        order = rng.permutation(self.p) if shuffle else range(self.p)
        for j in order:
            u = rng.random()
            try:
                pj = self.inclusion_probability(state, j)
            except SingularDesignError as err:
                logger.warning("skipping coordinate %s: %s", self.summary.labels[j], err)
                continue
            state = state.with_coord(j, int(u < pj))
        return state


def gibbs_sweep(state: ModelIndicator, data, prior: ModelPrior, rng: np.random.Generator,
                g_policy=EMPIRICAL_BAYES, shuffle: bool = False) -> ModelIndicator:
    """One full scan over coordinates ``0..p-1``.

    ``data`` may be an ``AlignedData`` or a ``StochasticSearch`` (which keeps
    its Bayes-factor cache across calls).
    """
    search = data if isinstance(data, StochasticSearch) else StochasticSearch(data, prior, g_policy)
    return search.sweep(state, rng, shuffle=shuffle)


def sample_beta_sigma(gamma: ModelIndicator, data, g, rng: np.random.Generator) -> ConditionalDraw:
    """Draw (beta, sigma^2) per target column from the g-prior posterior.

    sigma_i^2 ~ InvGamma((T-1)/2, S_i/2) with S_i = SSE0 - s (SSE0 - SSE_gamma)
    and s = g/(1+g); beta_i | sigma_i^2 ~ N(s b_ols, s sigma_i^2 (Xc'Xc)^-1).
    """
    s = RegressionSummary.from_data(data)
    g = np.broadcast_to(np.asarray(g, dtype=float), (s.q,))
    if np.any(g < 0):
        raise ValueError("g values must be nonnegative")
    idx = gamma.index
    L, coef, sse = s.fit(idx)
    shrink = np.where(np.isinf(g), 1.0, g / (1.0 + g))
    scale = s.sse_null - shrink * (s.sse_null - sse)
    shape = 0.5 * (s.T - 1)
    psi = 0.5 * scale / rng.gamma(shape, 1.0, size=s.q)
    beta = np.zeros((s.p, s.q))
    if len(idx):
        z = rng.standard_normal((len(idx), s.q))
        noise = solve_triangular(L.T, z, lower=False)
        beta[idx] = shrink * coef + np.sqrt(shrink * psi) * noise
    return ConditionalDraw(gamma, beta, np.sqrt(psi), psi)


@dataclass
class ChainResult:
    draws: list[ConditionalDraw]
    inclusion: np.ndarray
    candidate_labels: list[str]
    target_labels: list[str]
    visits: dict[str, int] = field(default_factory=dict)

    @property
    def posterior_mean_beta(self) -> np.ndarray:
        return np.mean([d.beta for d in self.draws], axis=0)

    @property
    def posterior_mean_psi(self) -> np.ndarray:
        return np.mean([d.psi_resid for d in self.draws], axis=0)


def run_chain(data: AlignedData, prior: ModelPrior = ModelPrior(), n_sweeps: int = 10_000,
              n_burn: int = 2_000, thin: int = 5, seed: int = 0, g_policy=EMPIRICAL_BAYES,
              shuffle: bool = False, init: ModelIndicator | None = None) -> ChainResult:
    """Run the stochastic search and draw (beta, sigma) at every retained sweep."""
    if n_burn < 0 or thin < 1:
        raise ChainConfigError("need n_burn >= 0 and thin >= 1")
    if n_sweeps <= n_burn:
        raise ChainConfigError(f"n_sweeps={n_sweeps} leaves no sweeps after n_burn={n_burn}")
    rng = np.random.default_rng(seed)
    search = StochasticSearch(data, prior, g_policy)
    state = init or ModelIndicator.empty(search.p)
    draws, visits = [], {}
    for it in range(n_sweeps):
        state = search.sweep(state, rng, shuffle=shuffle)
        if it < n_burn or (it - n_burn) % thin:
            continue
        visits[state.bits] = visits.get(state.bits, 0) + 1
        parts = search.parts(state)
        draws.append(sample_beta_sigma(state, search.summary, parts.g_values, rng))
    inclusion = np.mean([d.gamma.gamma for d in draws], axis=0)
    return ChainResult(draws, inclusion, list(data.candidates.labels), list(data.targets.labels), visits)


def write_chain(path, result: ChainResult) -> None:
    """One JSON record per retained sweep after a header record."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "ssvs", "candidates": result.candidate_labels,
                             "targets": result.target_labels}) + "\n")
        for i, d in enumerate(result.draws):
            rows, cols = np.nonzero(d.beta)
            rec = {
                "draw": i,
                "gamma": d.gamma.bits,
                "sigma": [float(v) for v in d.sigma],
                "psi": [float(v) for v in d.psi_resid],
                "beta": [[int(r), int(c), float(d.beta[r, c])] for r, c in zip(rows, cols)],
            }
            fh.write(json.dumps(rec) + "\n")


def read_chain(path) -> ChainResult:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "ssvs":
            raise ValueError(f"{path}: not a stochastic-search draw file")
        cands, targs = header["candidates"], header["targets"]
        draws = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            beta = np.zeros((len(cands), len(targs)))
            for r, c, v in rec["beta"]:
                beta[r, c] = v
            draws.append(ConditionalDraw(ModelIndicator.from_bits(rec["gamma"]), beta,
                                         np.array(rec["sigma"]), np.array(rec["psi"])))
    inclusion = np.mean([d.gamma.gamma for d in draws], axis=0) if draws else np.zeros(len(cands))
    return ChainResult(draws, inclusion, cands, targs)


def write_inclusion_csv(path, labels, inclusion) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("ticker,probability\n")
        for lab, v in zip(labels, inclusion):
            fh.write(f"{lab},{float(v)!r}\n")
