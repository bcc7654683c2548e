"""Selective inference for time-varying effect moderation in MRTs.

Two-step workflow: a Gaussian-randomized lasso on the weighted-and-centered
least-squares objective selects moderators, then an exact conditional pivot
is inverted for post-selection confidence intervals. Polyhedral,
participant-splitting and naive comparators plus a Monte-Carlo benchmark
harness live alongside.
"""

from .data import CsvSchema, MrtDataset, ingest_csv, write_csv
from .design import FeatureMap, StackedDesign, stack_design
from .errors import (ConfigError, ConvergenceError, NumericError, ParseError,
                     SelmodError, SingularityError, ValidationError)
from .estimation import (NuisanceModel, SandwichMatrices, fit_nuisance,
                         sandwich, wcls_refit)
from .randlasso import (Randomization, SelectionResult, draw_randomization,
                        lambda_rule, selection_event_check, solve, tau_rule)
from .selective import (ConditioningGeometry, MasterStats, PivotContext,
                        adjustment_F, build_pivot_context, invert_interval,
                        kkt_reconstruction, master_statistics,
                        monotonicity_audit, pivot, selective_intervals,
                        truncation)
from .synth import GroundTruth, SimConfig, error_process, generate

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
