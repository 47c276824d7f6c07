"""Gibbs sampler for the candidate-return factor model.

    x_t = mu + B f_t + v_t,   f_t ~ N(0, I_k),   v_t ~ N(0, diag(Psi))

Only mu and Sigma_x = B B' + diag(Psi) are consumed downstream, so the
loadings are left unidentified (no rotation constraint).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class FactorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FactorDraw:
    mu_x: np.ndarray
    B: np.ndarray
    Psi: np.ndarray
    Sigma_x: np.ndarray

    @classmethod
    def build(cls, mu_x, B, Psi) -> "FactorDraw":
        B = np.asarray(B, dtype=float)
        Psi = np.asarray(Psi, dtype=float)
        Sigma = B @ B.T + np.diag(Psi)
        Sigma = 0.5 * (Sigma + Sigma.T)
        return cls(np.asarray(mu_x, dtype=float), B, Psi, Sigma)


@dataclass(frozen=True)
class FactorPriors:
    """Weakly informative defaults.

    loading_var: prior variance of each loading.
    psi_shape, psi_scale_mult: Psi_j ~ InvGamma(psi_shape, psi_scale_mult * s_j^2).
    mean_var_mult: mu ~ N(0, mean_var_mult * mean(s_j^2) * I).
    """

    loading_var: float = 1.0
    psi_shape: float = 2.5
    psi_scale_mult: float = 0.5
    mean_var_mult: float = 100.0


def default_factor_count(X: np.ndarray, cap: int = 6) -> int:
    """Number of sample-correlation eigenvalues above one, capped."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    if p < 2:
        return 0
    eig = np.linalg.eigvalsh(np.corrcoef(X, rowvar=False))
    return int(min(np.sum(eig > 1.0), cap, p - 1))


def _mvn_from_precision(rng, prec, b, size=None):
    """Sample N(prec^-1 b, prec^-1); b may hold one right-hand side per column."""
    L = np.linalg.cholesky(prec)
    mean = np.linalg.solve(L.T, np.linalg.solve(L, b))
    z = rng.standard_normal(mean.shape if size is None else size)
    return mean + np.linalg.solve(L.T, z)


def fit_factor_model(X, k: int | None = None, n_sweeps: int = 10_000, n_burn: int = 2_000,
                     thin: int = 5, seed: int = 0, priors: FactorPriors = FactorPriors(),
                     max_jitter_tries: int = 5) -> list[FactorDraw]:
    """Data-augmentation Gibbs sampler; returns one draw per retained sweep.

    ``X`` is a T x p array (or anything with a ``values`` attribute).
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    T, p = X.shape
    if k is None:
        k = default_factor_count(X)
    if k < 0 or k >= p:
        raise FactorConfigError(f"factor count k={k} must satisfy 0 <= k < p={p}")
    if T <= k:
        raise FactorConfigError(f"need T > k (T={T}, k={k})")
    if n_burn < 0 or thin < 1 or n_sweeps <= n_burn:
        raise FactorConfigError("need n_sweeps > n_burn >= 0 and thin >= 1")

    rng = np.random.default_rng(seed)
    s2 = X.var(axis=0, ddof=1)
    a0 = priors.psi_shape
    b0 = priors.psi_scale_mult * s2
    phi = priors.mean_var_mult * float(np.mean(s2))
    tau = 1.0 / priors.loading_var

    # start from the principal-component fit
    mu = X.mean(axis=0)
    Xc = X - mu
    S = np.cov(X, rowvar=False)
    if k:
        vals, vecs = np.linalg.eigh(S)
        top = np.argsort(vals)[::-1][:k]
        B = vecs[:, top] * np.sqrt(np.maximum(vals[top], 1e-12))
    else:
        B = np.zeros((p, 0))
    Psi = np.maximum(np.diag(S) - np.sum(B**2, axis=1), 0.1 * np.diag(S))

    draws = []
    eye_k = np.eye(k)
    for it in range(n_sweeps):
        Xc = X - mu
        if k:
            # factor scores, all t at once: shared precision I + B' Psi^-1 B
            BtPi = B.T / Psi
            F = _jittered(lambda j: _mvn_from_precision(rng, eye_k + BtPi @ B + j * eye_k, BtPi @ Xc.T),
                          max_jitter_tries).T
            # loading rows
            FtF = F.T @ F
            FtX = F.T @ Xc
            for j in range(p):
                prec = tau * eye_k + FtF / Psi[j]
                B[j] = _jittered(lambda jit: _mvn_from_precision(rng, prec + jit * eye_k, FtX[:, j] / Psi[j]),
                                 max_jitter_tries)
            resid = Xc - F @ B.T
        else:
            F = np.zeros((T, 0))
            resid = Xc
        # idiosyncratic variances
        Psi = (b0 + 0.5 * np.sum(resid**2, axis=0)) / rng.gamma(a0 + 0.5 * T, 1.0, size=p)
        # mean
        signal = X - F @ B.T
        prec = 1.0 / phi + T / Psi
        mu = signal.sum(axis=0) / Psi / prec + rng.standard_normal(p) / np.sqrt(prec)

        if it >= n_burn and (it - n_burn) % thin == 0:
            draw = FactorDraw.build(mu.copy(), B.copy(), Psi.copy())
            np.linalg.cholesky(draw.Sigma_x)
            draws.append(draw)
    return draws


def _jittered(sample, tries):
    jit = 0.0
    for attempt in range(tries + 1):
        try:
            return sample(jit)
        except np.linalg.LinAlgError:
            jit = 1e-10 if jit == 0.0 else jit * 100
            logger.warning("non-PD precision in factor sampler; retrying with jitter %g", jit)
    raise np.linalg.LinAlgError("factor sampler precision not positive definite after jitter")


def posterior_mean_sigma(draws) -> np.ndarray:
    return np.mean([d.Sigma_x for d in draws], axis=0)


def write_factor_draws(path, draws, labels) -> None:
    """Per retained sweep: mu_x and the row-major lower triangle of Sigma_x."""
    labels = list(labels)
    p = len(labels)
    rows, cols = np.tril_indices(p)
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "factor", "candidates": labels}) + "\n")
        for i, d in enumerate(draws):
            rec = {
                "draw": i,
                "mu_x": [float(v) for v in d.mu_x],
                "sigma_lower": [float(v) for v in d.Sigma_x[rows, cols]],
                "psi": [float(v) for v in d.Psi],
            }
            fh.write(json.dumps(rec) + "\n")


def read_factor_draws(path):
    """Returns (draws, labels). Loadings are not stored; B comes back as p x 0."""
    with Path(path).open(encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "factor":
            raise ValueError(f"{path}: not a factor draw file")
        labels = header["candidates"]
        p = len(labels)
        rows, cols = np.tril_indices(p)
        draws = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            S = np.zeros((p, p))
            S[rows, cols] = rec["sigma_lower"]
            S[cols, rows] = rec["sigma_lower"]
            draws.append(FactorDraw(np.array(rec["mu_x"]), np.zeros((p, 0)), np.array(rec["psi"]), S))
    return draws, labels
