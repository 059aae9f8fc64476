"""Multitime quantum noise processes: simulation, monotones, pulse optimization."""

__version__ = "0.1.0"

from .linalg import (CMatrix, SubsystemShape, herm_eig, herm_func, kron, op_norm,
                     partial_trace, permute_subsystems, propagator)
from .process import (Channel, LindbladGenerator, ProcessTensor, QState, SEDynamics,
                      build_dynamics, channel_apply, channel_compose, channel_from_unitary,
                      channel_of, choi_of_process, coarse_grain, contract, identity_channel,
                      insert_controls, lindblad_segment, load_dynamics, load_process,
                      maximally_entangled, maximally_mixed, parallel_compose, save_dynamics,
                      save_process, sequential_compose)
from .monotones import (MonotoneReport, channel_information, full_marginal, mkv_marginal,
                        monotone_report, rel_entropy)
from .control import (ControlSequence, PulseGroup, cdd_sequence, constant_channel,
                      dd_sequence, measure_reprepare, pauli_channel, qubit_pulse_group)
from .optimizer import (SdpResult, SeesawTrace, modd, nearest_unitary_channel, odd_seesaw,
                        probe_slot_functional, sdp_max_linear_cptp)
from .experiment import (ExperimentConfig, RunRecord, run_strategy, sample_model, sweep,
                         task_seed)
