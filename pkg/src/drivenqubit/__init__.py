"""Driven qubit in a bosonic bath, propagated by a master equation or by Kadanoff-Baym
equations, with pulse optimisation on top."""

from .control import (ControlTask, OptimizationResult, OptimizerConfig, bloch, cost, optimize,
                      running_cost, standard_tasks)
from .model import (BathCorrelation, ConfigurationError, DomainError, DriveSignal, QubitState, SystemParams,
                    build_bath_correlation, drive_value, gibbs_state, hamiltonian)
from .negf import TwoTimeGF, negf_trajectory
from .qme import Trajectory, qme_trajectory
from .thermo import attach_ledger, negf_ledger

__version__ = "0.1.0"

__all__ = [
    "BathCorrelation", "ConfigurationError", "ControlTask", "DomainError", "DriveSignal", "OptimizationResult",
    "OptimizerConfig", "QubitState", "SystemParams", "Trajectory", "TwoTimeGF", "attach_ledger", "bloch",
    "build_bath_correlation", "cost", "drive_value", "gibbs_state", "hamiltonian", "negf_ledger",
    "negf_trajectory", "optimize", "qme_trajectory", "running_cost", "standard_tasks",
]
