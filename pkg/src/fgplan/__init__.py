"""Tabular planning as inference with interchangeable backup rules."""

from .backups import BackupRule, Family, backup_q, backup_q_prob, backup_v, backup_v_prob
from .engine import (Boundary, ConvergenceReport, DivergenceError, HorizonSolution,
                     InfeasibleError, backward_sweep, forward_sweep, posteriors,
                     solve_horizon, steady_state)
from .model import (ACTION_NAMES, FLOOR, GridSpec, MapFormatError, MdpModel,
                    build_grid_model, load_map, read_map, validate_model)
from .policy import (DecodedPath, PolicyTable, extract_policy, greedy_rollout,
                     parallel_decode, policy_scale, progressive_decode, rule_policy)
from .softmax import g_alpha, h_alpha, lse, r_beta

__version__ = "0.1.0"
