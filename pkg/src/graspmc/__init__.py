"""Kernel-adaptive MCMC (Kameleon) with simulated annealing for grasp learning."""
from ._kernels import BACKEND
from .errors import GraspMCError
from .geometry import (Grasp, PointCloud, RigidTransform, RimDetectionParams, RimSet,
                       align_to_canonical, approach_angle, detect_rims, nearest_rim,
                       quat_geodesic)
from .grasp_model import (HeuristicParams, SyntheticObject, SyntheticOracle, TargetDensity,
                          evaluate_target, heuristic_measure, normalize_measures,
                          synthetic_oracle)
from .history import ChainHistory, ChainRecord, load_history, save_history
from .kernel import (KernelConfig, centering_matrix, gauss_kernel, gradient_matrix,
                     kernel_gradient, proposal_covariance)
from .sampler import (AnnealingSchedule, InitSpec, KameleonConfig, RwConfig, kameleon_step,
                      mh_accept, run_chain, rw_step, sample_vmf, temperature)
from .transfer import init_from_chain, init_from_subsample, transfer_experiment

__version__ = "0.1.0"
