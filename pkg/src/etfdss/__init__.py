"""Sparse ETF selection by decoupled shrinkage and selection, with posterior Sharpe-ratio allocation."""

from .bench import BivariateParams, conditional_loss_optimum, glasso_optimum, run_simulation_study
from .data import AlignedData, ReturnsPanel, align_panels, load_returns_csv
from .dss import accumulate_moments, loss_value, select_model, solution_path
from .factor import fit_factor_model
from .portfolio import maximize_posterior_mean_sharpe, sharpe_per_draw, tangency_sharpe_distribution
from .ssvs import ModelIndicator, ModelPrior, gibbs_sweep, log_bayes_factor, run_chain

__version__ = "0.1.0"
