"""Mixed-precision preconditioned conjugate gradients with a Q-learned precision policy."""

from .cgsolver import CgConfig, PrecisionAction, SolveResult, SolveStatus, cg_solve, fixed_policy
from .precision import FORMATS, EmulationMode, PrecisionFormat, format_of, round_scalar, round_vector
from .precond import apply_precond, build_preconditioner, ilut_factor
from .rlagent import MdpConfig, QPolicy, RewardConfig, TrainConfig, greedy_policy, load_policy, save_policy, train
from .sparsela import CsrMatrix, dot_emulated, matvec_emulated

__version__ = "0.1.0"
