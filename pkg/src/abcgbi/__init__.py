"""ABC and generalized Bayesian posteriors under a Gaussian model of the discrepancy."""

__version__ = "0.1.0"

from .calibration import (MATCH_RATIO, CalibrationReport, MatchResult, calibrate_w, estimate_delta0,
                          g_epsilon, implied_abc_epsilon, match_exponential_to_uniform,
                          select_delta_thomas)
from .exceptions import (ABCGBIError, CalibrationError, ConfigurationError, DomainError,
                         FactorizationError, ImproperPosteriorError, SimulationError,
                         ZeroAcceptanceError)
from .grid import (PosteriorGrid, distance, evaluate_on_grid, make_grid, normalize, prior_grid,
                   summarize)
from .loss import (GaussianDiscrepancyField, LossSpec, analytic_field, cf_loss_exponential,
                   cf_loss_gaussian, cf_loss_uniform, constant_variance_field, mc_field)
from .model import (ParameterBox, RngStream, SimulatorModel, make_deterministic_model,
                    make_example1_model)
from .samplers import SampleChain, pm_abc_mcmc, rejection_abc, surrogate_mh
from .surrogate import GPSurrogate, TrainingSet, to_field
from .weights import WeightFunction, eval_log_weight, transform_weight

import types as _types

__all__ = sorted(n for n, v in globals().items()
                 if not n.startswith("_") and not isinstance(v, _types.ModuleType))
