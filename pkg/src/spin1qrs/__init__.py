"""Spin-1 chain simulation from ultrastrongly coupled qubit-resonator systems."""
from .circuit import (ChainConfig, ChainHamiltonian, CircuitParams, FluxSignal, build_chain,
                      build_modulated_chain, build_static_chain, chain_hamiltonian, effective_PQ,
                      resonator_mode_numbers)
from .config import ExperimentConfig, load_config
from .dynamics import (ChainState, DissipatorSet, PropagationOptions, build_dissipators,
                       evolve_effective, leakage, propagate_lindblad, propagate_unitary,
                       thermal_occupation)
from .errors import (CompilationError, ConfigError, ConvergenceError, LeakageError, ParityError,
                     PropagationError, Spin1QRSError)
from .experiment import FidelityReport, emit_csv, run_experiment, sweep, validate_gate
from .pulses import (DriveSignal, GapTable, GateSchedule, Segment, compile_rotation, compile_xx,
                     compile_xy, gap_table, schedule_heisenberg, schedule_ising, schedule_xxz)
from .qrs import (DressedSite, MatrixElements, QRSParams, QRSSpectrum, build_rabi_hamiltonian,
                  chi_elements, diagonalize, dressed_energies, dressed_site, parity_label, z_elements)
from .spin1 import (ModelSpec, Spin1Ops, exact_propagator, haar_random_state, model_hamiltonian,
                    rotations, spin1_ops, uhlmann_fidelity)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
