"""Decoupled shrinkage and selection over the conditional loss.

Posterior draws of the conditional regression (beta, psi) and of the candidate
marginal (mu_x, Sigma_x) are reduced to two moment matrices

    H = E[Sigma_x] + Cov(mu_x) + E[mu_x] E[mu_x]'                (p x p)
    f = E[beta' Sigma_x] + Cov(mu_r, mu_x) + E[mu_r] E[mu_x]'    (q x p)

and the action gamma (q x p) maximizing

    -1/2 tr(D gamma H gamma') + tr(D f gamma')

is sparsified with a weighted l1 penalty on gamma_tilde = D^{1/2} gamma.
With H = L L', the penalized problem is a lasso with design (L' kron I) and
response vec(D^{1/2} f L^{-T}); because the rows of gamma_tilde decouple, the
solver works from H and D^{1/2} f directly and never forms the Kronecker
product.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

logger = logging.getLogger(__name__)

EDGE_THRESHOLD = 1e-8
RESIDUAL_PRECISION = "residual-precision"
IDENTITY = "identity"


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class PairedDraw:
    """One joint posterior draw: conditional (beta, psi) and marginal (mu_x, Sigma_x)."""

    beta: np.ndarray  # p x q
    psi: np.ndarray  # q residual variances
    mu_x: np.ndarray  # p
    Sigma_x: np.ndarray  # p x p

    @property
    def mu_r(self) -> np.ndarray:
        return self.beta.T @ self.mu_x


def pair_draws(conditional_draws, factor_draws) -> list[PairedDraw]:
    """Pair the two samplers' retained draws by position."""
    if len(conditional_draws) != len(factor_draws):
        raise PairingError(
            f"{len(conditional_draws)} conditional draws vs {len(factor_draws)} marginal draws"
        )
    return [PairedDraw(c.beta, c.psi_resid, m.mu_x, m.Sigma_x)
            for c, m in zip(conditional_draws, factor_draws)]


class DrawStack:
    """Posterior draws stacked into arrays for vectorized evaluation."""

    def __init__(self, draws):
        draws = list(draws)
        self.beta = np.stack([d.beta for d in draws])  # S x p x q
        self.psi = np.stack([d.psi for d in draws])  # S x q
        self.mu_x = np.stack([d.mu_x for d in draws])  # S x p
        self.Sigma_x = np.stack([d.Sigma_x for d in draws])  # S x p x p
        self.mu_r = np.einsum("spq,sp->sq", self.beta, self.mu_x)
        self.cross = np.einsum("spq,spr->sqr", self.beta, self.Sigma_x)  # beta' Sigma_x, S x q x p

    def __len__(self):
        return self.beta.shape[0]


@dataclass(frozen=True)
class PosteriorMoments:
    H: np.ndarray
    f: np.ndarray
    d: np.ndarray  # diagonal of D
    L: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.d)

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @property
    def q(self) -> int:
        return self.f.shape[0]

    def unpenalized_action(self) -> np.ndarray:
        """f H^-1, the maximizer of the conditional loss."""
        return solve_triangular(self.L, solve_triangular(self.L, self.f.T, lower=True), lower=True, trans="T").T


@dataclass(frozen=True)
class ActionMatrix:
    gamma_action: np.ndarray  # q x p

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.gamma_action))

    def edge_mask(self, threshold: float = EDGE_THRESHOLD) -> np.ndarray:
        return np.abs(self.gamma_action) > threshold

    def n_edges(self, threshold: float = EDGE_THRESHOLD) -> int:
        return int(self.edge_mask(threshold).sum())


@dataclass
class LossPath:
    lambdas: np.ndarray
    actions: list[ActionMatrix]
    loss_draws: np.ndarray  # n_points x S
    model_sizes: np.ndarray
    candidate_labels: list[str] = field(default_factory=list)
    target_labels: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.lambdas)


@dataclass(frozen=True)
class SelectionGraph:
    edges: frozenset
    selected_candidates: frozenset
    path_index: int = -1

    @classmethod
    def from_action(cls, action: ActionMatrix, candidate_labels, target_labels, index=-1):
        mask = action.edge_mask()
        edges = frozenset((candidate_labels[j], target_labels[i]) for i, j in zip(*np.nonzero(mask)))
        return cls(edges, frozenset(c for c, _ in edges), index)


def _d_vector(D_policy, stack: DrawStack) -> np.ndarray:
    q = stack.psi.shape[1]
    if isinstance(D_policy, str):
        if D_policy == RESIDUAL_PRECISION:
            return 1.0 / stack.psi.mean(axis=0)
        if D_policy == IDENTITY:
            return np.ones(q)
        raise ValueError(f"unknown D policy {D_policy!r}")
    d = np.asarray(D_policy, dtype=float)
    if d.ndim == 2:
        if np.any(d != np.diag(np.diag(d))):
            raise ValueError("fixed D must be diagonal")
        d = np.diag(d)
    d = np.broadcast_to(d, (q,)).astype(float)
    if np.any(d <= 0):
        raise ValueError("D must have positive diagonal entries")
    return d


def accumulate_moments(draws, factor_draws=None, D_policy=RESIDUAL_PRECISION) -> PosteriorMoments:
    """Posterior moments of the conditional loss.

    ``draws`` is a list of ``PairedDraw`` (or conditional draws, paired with
    ``factor_draws``), or a ``DrawStack``. Covariances use the 1/S
    normalization, so H and f are exact posterior means of
    Sigma_x + mu_x mu_x' and beta' Sigma_x + mu_r mu_x'.
    """
    if factor_draws is not None:
        draws = pair_draws(draws, factor_draws)
    stack = draws if isinstance(draws, DrawStack) else DrawStack(draws)
    S = len(stack)
    if S < 2:
        raise PairingError("need at least two paired draws for posterior covariance terms")
    mx = stack.mu_x.mean(axis=0)
    mr = stack.mu_r.mean(axis=0)
    dx = stack.mu_x - mx
    dr = stack.mu_r - mr
    H = stack.Sigma_x.mean(axis=0) + dx.T @ dx / S + np.outer(mx, mx)
    H = 0.5 * (H + H.T)
    f = stack.cross.mean(axis=0) + dr.T @ dx / S + np.outer(mr, mx)
    d = _d_vector(D_policy, stack)
    p = H.shape[0]
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        logger.warning("H not numerically PD; adding jitter")
        L = np.linalg.cholesky(H + 1e-10 * np.trace(H) / p * np.eye(p))
    return PosteriorMoments(H, f, d, L)


def loss_value(action, moments: PosteriorMoments) -> float:
    g = np.asarray(getattr(action, "gamma_action", action), dtype=float)
    if g.shape != moments.f.shape:
        raise ValueError(f"action shape {g.shape} does not match {moments.f.shape}")
    d = moments.d
    quad = np.einsum("i,ij,jk,ik->", d, g, moments.H, g)
    lin = np.einsum("i,ij,ij->", d, moments.f, g)
    return float(-0.5 * quad + lin)


def loss_value_per_draw(action, draws, d) -> np.ndarray:
    """Conditional loss at each posterior draw (no averaging).

    ``draws`` is a ``DrawStack``, a list of ``PairedDraw`` or a single one.
    Returns an array with one value per draw.
    """
    g = np.asarray(getattr(action, "gamma_action", action), dtype=float)
    if isinstance(draws, PairedDraw):
        draws = [draws]
    stack = draws if isinstance(draws, DrawStack) else DrawStack(draws)
    d = np.asarray(d, dtype=float)
    if d.ndim == 2:
        d = np.diag(d)
    gS = np.einsum("ij,sjk->sik", g, stack.Sigma_x)  # S x q x p
    quad = np.einsum("i,sik,ik->s", d, gS, g)
    gm = stack.mu_x @ g.T  # S x q
    quad_mean = np.einsum("i,si,si->s", d, gm, gm)
    lin = np.einsum("i,sik,ik->s", d, stack.cross, g)
    lin_mean = np.einsum("i,si,si->s", d, gm, stack.mu_r)
    return -0.5 * quad - 0.5 * quad_mean + lin + lin_mean


def build_lasso_problem(moments: PosteriorMoments):
    """Explicit (design, response) of the vectorized lasso.

    design = L' kron I_q (pq x pq) and response = vec(D^{1/2} f L^{-T}), with
    column-major vec so that design @ vec(G) == vec(G @ L). Only for small
    problems and checks; ``solution_path`` never materializes this.
    """
    q = moments.q
    design = np.kron(moments.L.T, np.eye(q))
    Y = solve_triangular(moments.L, (np.sqrt(moments.d)[:, None] * moments.f).T, lower=True).T
    return design, Y.reshape(-1, order="F")


def lasso_objective(gamma_tilde, moments: PosteriorMoments, lam: float, weights=None) -> float:
    """1/2 ||gamma_tilde L - D^{1/2} f L^{-T}||_F^2 + lam * sum(w |gamma_tilde|)."""
    G = np.asarray(gamma_tilde, dtype=float)
    w = _weights(weights, moments.q, moments.p)
    Y = solve_triangular(moments.L, (np.sqrt(moments.d)[:, None] * moments.f).T, lower=True).T
    return float(0.5 * np.sum((G @ moments.L - Y) ** 2) + lam * np.sum(w * np.abs(G)))


def _weights(weights, q, p) -> np.ndarray:
    if weights is None:
        return np.ones((q, p))
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        if w.size != p * q:
            raise ValueError(f"penalty weights need {p * q} entries, got {w.size}")
        w = w.reshape((q, p), order="F")
    if w.shape != (q, p):
        raise ValueError(f"penalty weights shape {w.shape}, expected {(q, p)}")
    if np.any(w < 0):
        raise ValueError("penalty weights must be nonnegative")
    return w


def _soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


class WeightedLasso:
    """Coordinate descent for min_G 1/2 tr(G H G') - tr(C G') + lam sum(W |G|).

    This is the lasso in covariance form: H = L L' is the Gram matrix of the
    design and C = D^{1/2} f its cross-product with the response. Rows of G
    are independent problems sharing H, so each coordinate update is applied
    to a whole column of G at once. After every sweep an active-set Newton
    step is tried per row; when its sign pattern and the inactive KKT
    conditions hold, the row is exact.
    """

    def __init__(self, H, C, weights=None, tol: float = 1e-13, max_sweeps: int = 100_000):
        self.H = np.asarray(H, dtype=float)
        self.C = np.asarray(C, dtype=float)
        self.q, self.p = self.C.shape
        self.W = _weights(weights, self.q, self.p)
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.hdiag = np.diag(self.H).copy()

    def objective(self, G, lam) -> np.ndarray:
        """Per-row penalized objective."""
        return (0.5 * np.einsum("ij,jk,ik->i", G, self.H, G) - np.einsum("ij,ij->i", self.C, G)
                + lam * np.sum(self.W * np.abs(G), axis=1))

    def lambda_max(self) -> float:
        G0 = self.unpenalized_start()
        grad = self.C - G0 @ self.H
        pen = self.W > 0
        if not pen.any():
            return 0.0
        return float(np.max(np.abs(grad[pen]) / self.W[pen]))

    def unpenalized_start(self) -> np.ndarray:
        """Least-squares fit on the zero-weight coordinates only."""
        G = np.zeros((self.q, self.p))
        for i in range(self.q):
            free = np.flatnonzero(self.W[i] == 0)
            if free.size:
                G[i, free] = np.linalg.solve(self.H[np.ix_(free, free)], self.C[i, free])
        return G

    def _newton_row(self, g, i, lam):
        active = np.flatnonzero(g != 0)
        if active.size == 0:
            cand = np.zeros(self.p)
        else:
            s = np.sign(g[active])
            rhs = self.C[i, active] - lam * self.W[i, active] * s
            try:
                sol = np.linalg.solve(self.H[np.ix_(active, active)], rhs)
            except np.linalg.LinAlgError:
                return None
            pen = self.W[i, active] > 0
            if np.any(np.sign(sol[pen]) != s[pen]):
                return None
            cand = np.zeros(self.p)
            cand[active] = sol
        grad = self.C[i] - cand @ self.H
        inactive = cand == 0
        slack = lam * self.W[i, inactive] * (1 + 1e-10) + 1e-14 * (np.abs(self.C[i]).max() + 1e-300)
        if np.all(np.abs(grad[inactive]) <= slack):
            return cand
        return None

    def solve(self, lam: float, G0=None, trace: list | None = None) -> np.ndarray:
        G = np.zeros((self.q, self.p)) if G0 is None else np.array(G0, dtype=float)
        GH = G @ self.H
        done = np.zeros(self.q, dtype=bool)
        scale = max(np.abs(self.C).max(), 1e-300)
        for sweep in range(self.max_sweeps):
            rows = ~done
            max_step = 0.0
            for j in range(self.p):
                hjj = self.hdiag[j]
                old = G[rows, j]
                z = self.C[rows, j] - GH[rows, j] + hjj * old
                new = _soft(z, lam * self.W[rows, j]) / hjj
                delta = new - old
                if np.any(delta):
                    G[rows, j] = new
                    GH[rows] += np.outer(delta, self.H[j])
                    max_step = max(max_step, float(np.max(np.abs(delta)) * hjj))
            if trace is not None:
                trace.append(self.objective(G, lam).sum())
            for i in np.flatnonzero(rows):
                exact = self._newton_row(G[i], i, lam)
                if exact is not None:
                    G[i] = exact
                    GH[i] = exact @ self.H
                    done[i] = True
            if done.all() or max_step <= self.tol * scale:
                break
        else:
            logger.warning("coordinate descent hit max_sweeps=%d at lambda=%g", self.max_sweeps, lam)
        return G


def lambda_grid(lam_max: float, size: int = 100, ratio: float = 1e-4) -> np.ndarray:
    if size < 2:
        raise ValueError("lambda grid needs at least two points")
    return lam_max * np.geomspace(1.0, ratio, size)


def solution_path(moments: PosteriorMoments, draws=None, lambda_grid_size: int = 100,
                  penalty_weights=None, lambdas=None, ratio: float = 1e-4,
                  candidate_labels=None, target_labels=None) -> LossPath:
    """Weighted-lasso path with warm starts, plus per-draw losses at each point.

    ``draws`` (paired draws or a ``DrawStack``) are used to evaluate the
    per-draw conditional loss of every path action; without them
    ``loss_draws`` is empty.
    """
    q, p = moments.q, moments.p
    sqd = np.sqrt(moments.d)
    C = sqd[:, None] * moments.f
    solver = WeightedLasso(moments.H, C, penalty_weights)
    if lambdas is None:
        if not np.any(solver.W > 0):
            logger.warning("all penalty weights are zero; the path is a single dense point")
            lambdas = np.array([0.0])
        else:
            lambdas = lambda_grid(solver.lambda_max(), lambda_grid_size, ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be strictly decreasing")

    stack = None
    if draws is not None:
        stack = draws if isinstance(draws, DrawStack) else DrawStack(draws)
    G = solver.unpenalized_start()
    actions, sizes, losses = [], [], []
    for lam in lambdas:
        G = solver.solve(lam, G)
        action = ActionMatrix(G / sqd[:, None])
        actions.append(action)
        sizes.append(action.n_edges())
        if stack is not None:
            losses.append(loss_value_per_draw(action, stack, moments.d))
    loss_draws = np.array(losses) if losses else np.zeros((len(lambdas), 0))
    return LossPath(lambdas, actions, loss_draws, np.array(sizes),
                    list(candidate_labels or range(p)), list(target_labels or range(q)))


def penalty_weights_for(unpenalized, candidate_labels, target_labels) -> np.ndarray:
    """q x p weight matrix with zeros at the given (candidate, target) pairs."""
    W = np.ones((len(target_labels), len(candidate_labels)))
    for cand, targ in unpenalized:
        if cand not in candidate_labels or targ not in target_labels:
            raise KeyError(f"unknown edge {cand}:{targ}")
        W[list(target_labels).index(targ), list(candidate_labels).index(cand)] = 0.0
    return W


def select_model(path: LossPath, band=(0.4, 0.6)) -> SelectionGraph:
    """Sparsest path point whose mean per-draw loss lies in the dense point's quantile band.

    The densest point is the one with the most edges (the last one on ties).
    Among qualifying points the fewest edges wins, ties going to the larger
    penalty.
    """
    lo, hi = band
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"invalid quantile band {band}")
    if len(path) == 0:
        raise ValueError("empty path")
    sizes = np.asarray(path.model_sizes)
    dense = len(sizes) - 1 - int(np.argmax(sizes[::-1]))
    if path.loss_draws.shape[1] == 0:
        raise ValueError("path carries no per-draw losses")
    q_lo, q_hi = np.quantile(path.loss_draws[dense], [lo, hi])
    means = path.loss_draws.mean(axis=1)
    inside = np.flatnonzero((means >= q_lo) & (means <= q_hi))
    if inside.size == 0:
        logger.warning("no path point inside the [%g, %g] band; returning the densest point", lo, hi)
        idx = dense
    else:
        idx = int(min(inside, key=lambda i: (sizes[i], i)))
    return SelectionGraph.from_action(path.actions[idx], path.candidate_labels, path.target_labels, idx)


def write_path_csv(path_file, path: LossPath) -> None:
    qs = [0.05, 0.40, 0.60, 0.95]
    with Path(path_file).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "model_size", "loss_mean", "loss_q05", "loss_q40", "loss_q60", "loss_q95"])
        for lam, size, row in zip(path.lambdas, path.model_sizes, path.loss_draws):
            quant = np.quantile(row, qs) if row.size else [np.nan] * 4
            mean = row.mean() if row.size else np.nan
            w.writerow([repr(float(lam)), int(size), repr(float(mean)), *(repr(float(v)) for v in quant)])


def write_edge_list(path_file, graph: SelectionGraph) -> None:
    with Path(path_file).open("w", encoding="utf-8") as fh:
        for cand, targ in sorted(graph.edges):
            fh.write(f"{cand}\t{targ}\n")


def read_edge_list(path_file) -> SelectionGraph:
    edges = []
    for line in Path(path_file).read_text(encoding="utf-8").splitlines():
        if line.strip():
            cand, targ = line.split("\t")
            edges.append((cand, targ))
    return SelectionGraph(frozenset(edges), frozenset(c for c, _ in edges))
