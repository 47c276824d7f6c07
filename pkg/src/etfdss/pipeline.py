"""Fit -> select -> allocate, shared by the CLI and the simulation study."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dss, factor, portfolio, ssvs
from .data import AlignedData


@dataclass(frozen=True)
class PipelineConfig:
    n_sweeps: int = 10_000
    n_burn: int = 2_000
    thin: int = 5
    k: int | None = None
    model_prior: str = ssvs.MULTIPLICITY
    g_policy: object = ssvs.EMPIRICAL_BAYES
    shuffle_coords: bool = False
    factor_priors: factor.FactorPriors = factor.FactorPriors()


def fit_pipeline(data: AlignedData, config: PipelineConfig = PipelineConfig(), seed: int = 0):
    """Run both samplers with the same retained-draw schedule and pair the draws by position.

    The stochastic search uses ``seed`` and the factor sampler ``seed + 1``.
    Returns (chain_result, factor_draws, paired_draws).
    """
    chain = ssvs.run_chain(data, ssvs.ModelPrior(config.model_prior), config.n_sweeps, config.n_burn,
                           config.thin, seed=seed, g_policy=config.g_policy, shuffle=config.shuffle_coords)
    fdraws = factor.fit_factor_model(data.X, config.k, config.n_sweeps, config.n_burn, config.thin,
                                     seed=seed + 1, priors=config.factor_priors)
    return chain, fdraws, dss.pair_draws(chain.draws, fdraws)


@dataclass(frozen=True)
class SelectionConfig:
    D_policy: object = dss.RESIDUAL_PRECISION
    grid_size: int = 100
    lambda_ratio: float = 1e-4
    band: tuple[float, float] = (0.4, 0.6)
    unpenalized: tuple = ()


@dataclass
class SelectionResult:
    moments: dss.PosteriorMoments
    path: dss.LossPath
    graph: dss.SelectionGraph
    stack: dss.DrawStack = field(repr=False)


def select(paired, candidate_labels, target_labels, config: SelectionConfig = SelectionConfig()) -> SelectionResult:
    stack = paired if isinstance(paired, dss.DrawStack) else dss.DrawStack(paired)
    moments = dss.accumulate_moments(stack, D_policy=config.D_policy)
    weights = dss.penalty_weights_for(config.unpenalized, candidate_labels, target_labels)
    path = dss.solution_path(moments, stack, config.grid_size, weights, ratio=config.lambda_ratio,
                             candidate_labels=candidate_labels, target_labels=target_labels)
    return SelectionResult(moments, path, dss.select_model(path, config.band), stack)


def ordered_subset(graph: dss.SelectionGraph, candidate_labels) -> list[str]:
    return [c for c in candidate_labels if c in graph.selected_candidates]


def allocate(paired, candidate_labels, subset, de_config=portfolio.DEConfig(), seed: int = 0):
    """DE weights on ``subset`` and on the full candidate universe, with their Sharpe samples."""
    moments = portfolio.CandidateMoments.from_draws(paired, candidate_labels)
    selected = portfolio.maximize_posterior_mean_sharpe(moments, subset, de_config, seed)
    dense = portfolio.maximize_posterior_mean_sharpe(moments, candidate_labels, de_config, seed)
    return {
        "selected": (selected, portfolio.sharpe_distribution_for_weights(selected, moments, "selected")),
        "dense": (dense, portfolio.sharpe_distribution_for_weights(dense, moments, "dense")),
    }


def posterior_mean(samples) -> float:
    return float(np.mean(samples.values))
