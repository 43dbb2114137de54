"""Change-point detection and piecewise parameter estimation for regime-switching ODEs.

Stage I fits small physics-informed networks on overlapping windows and
flags windows whose terminal residual energy is anomalous; Stage II refines
each candidate with a differentiable change point.  An exact oracle for
parameter-affine systems certifies the residual-floor theory.
"""
from .errors import (CandidateError, ConfigError, DomainError, IdentifiabilityError,
                     IntegrationError, NoCandidateError, ParseError, RegimeShiftError,
                     SpecificationError, TrainingError, WindowError)
from .dynamics import (DEFAULT_X0, BENCHMARK_SCHEDULES, SYSTEMS, RegimeSchedule, SystemSpec,
                       alpha_estimate, eval_field, get_system, information_matrix)
from .simulate import (Trajectory, TrajectoryDataset, integrate, read_dataset,
                       sample_observations, write_dataset)
from .kernels import BACKEND
from .local_pinn import LocalFit, TrainConfig, fit_window, residual_energy
from .screen import (ScreenReport, WindowPlan, build_windows, mad_normalize, run_screen,
                     select_candidates)
from .refine import Candidate, GateConfig, RefineConfig, RefineResult, refine, tau_of_eta
from .oracle import (certify_plan, certify_window, post_change_check, residual_floor,
                     theorem2_bound, wls_theta)
from .baselines import changepoint_probability, gmm_em_1d, pelt_segment, run_baselines
from .config import RunConfig, load_config, preset
from .pipeline import bench_parallel, run_pipeline

__version__ = "0.1.0"
