"""Expectation maximisation of approximate posteriors driven by massively
parallel importance-weighted moment estimates."""

from .distributions import (BERNOULLI, BETA, GAMMA, GAUSSIAN, NEGATIVE_BINOMIAL, ConventionalParams, MeanParams,
                            NaturalParams, conventional_to_mean, conventional_to_natural, get_family, log_prob,
                            mean_to_conventional, natural_to_conventional, sample_it, scale_mean_params,
                            sufficient_stats)
from .graph import ModelIR, validate
from .model_dsl import load_dataset, parse, pretty_print
from .qem import EmaConfig, QemConfig, QState, run_qem

__version__ = "0.1.0"
