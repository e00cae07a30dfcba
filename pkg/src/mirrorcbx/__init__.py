"""Mirror consensus-based optimisation with constrained variants and baselines."""
from .core import Objective, OptimizerParams, SchedulerConfig, ResamplingConfig
from .errors import (ConfigurationError, DimensionError, DomainError, MirrorCBXError,
                     ProjectionError, StepError)
from .mirror_maps import make_constraint, make_mirror_map
from .dynamics import compute_consensus, mirrorcbo_step, run
from .variants import OPTIMIZER_KINDS, make_optimizer

__version__ = "0.1.0"
