"""Score-based generative modelling of graphs with node features, at desk scale."""

__version__ = "0.1.0"

from .bounds import (BoundBreakdown, BoundInputs, bound_feature_fixed_structure, bound_joint,
                     bound_structure_fixed_features, estimate_lipschitz, select_hyperparams)
from .diffusion import (FEATURE_ONLY, JOINT, STRUCTURE_ONLY, TimeGrid, alpha, forward_sample,
                        gaussian_kl, prior_sample, sigma2)
from .errors import (ConfigError, DomainError, GenerationError, ParameterError, SamplingError,
                     TrainingError)
from .evaluation import EvalReport, degree_mmd, fit_gaussian_kl, structural_stats
from .graphs import (Graph, GeneratorConfig, gen_barabasi_albert, gen_regular, max_degree,
                     normalize_features, second_moment, spectral_norm)
from .sampling import SamplerConfig, ei_step, em_step, generate
from .score_net import init_params, score_backward, score_forward
from .training import TrainConfig, dsm_loss, train

__all__ = [
    "BoundBreakdown", "BoundInputs", "ConfigError", "DomainError", "EvalReport", "FEATURE_ONLY",
    "GenerationError", "GeneratorConfig", "Graph", "JOINT", "ParameterError", "STRUCTURE_ONLY",
    "SamplerConfig", "SamplingError", "TimeGrid", "TrainConfig", "TrainingError", "alpha",
    "bound_feature_fixed_structure", "bound_joint", "bound_structure_fixed_features", "degree_mmd",
    "dsm_loss", "ei_step", "em_step", "estimate_lipschitz", "fit_gaussian_kl", "forward_sample",
    "gaussian_kl", "gen_barabasi_albert", "gen_regular", "generate", "init_params", "max_degree",
    "normalize_features", "prior_sample", "score_backward", "score_forward", "second_moment",
    "select_hyperparams", "sigma2", "spectral_norm", "structural_stats", "train",
]
