"""Over-the-air imitation of a fully-connected layer on an AF relay chain."""

__version__ = "0.1.0"

from .channel import (ChannelSet, LinkParams, PathlossTable, Topology,
                      default_links, draw_small_scale, generate_channel_set,
                      generate_topology, los_probability, pathloss_db)
from .errors import (AirFcError, ConfigError, DimensionMismatch,
                     InvalidArgument, NumericalGuardWarning, ResourceLimit,
                     SolverDiverged, UnsupportedModel)
from .evaluate import (DigitalBaseline, GridPoint, SweepResult, SweepSettings,
                       SyntheticTask, TrialRecord, decode_classes,
                       evaluate_ota_accuracy, imitation_nmse,
                       make_synthetic_task, monte_carlo_sweep, run_trial,
                       train_digital_fc)
from .solver import (AoConfig, AoTrace, BlockFold, fold_chain,
                     noise_aware_regularizer, project_gains, residual_target,
                     run_ao, solve_relay_gains, update_f1, update_f2)
from .system import (AirFcParams, NoiseModel, ObjectiveValue, PowerBudget,
                     chain_rank_bound, effective_channel, max_power_ratio,
                     noise_covariance, objective, relay_input_power,
                     simulate_forward, thermal_noise_variance,
                     transfer_matrix)

__all__ = [name for name in dir() if not name.startswith("_")]
