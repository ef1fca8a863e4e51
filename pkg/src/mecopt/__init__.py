"""Energy-optimal partial offloading of computation to massive-MIMO edge servers."""

from .baselines import BinaryAssignment, solve_binary, solve_fixed_frequency
from .harness import SweepRow, SweepSpec, run_convergence_report, run_sweep
from .inner_pd import DualPoint, InnerConfig, InnerSolution, primal_from_dual, solve_inner
from .outer_descent import OuterConfig, OuterSolution, solve
from .phymodel import Allocation, EnergyBreakdown, TimingReport, evaluate
from .scenario import ChannelRealization, NetworkScenario, build_scenario, draw_channel, load_config

__all__ = [
    "Allocation", "BinaryAssignment", "ChannelRealization", "DualPoint", "EnergyBreakdown", "InnerConfig",
    "InnerSolution", "NetworkScenario", "OuterConfig", "OuterSolution", "SweepRow", "SweepSpec", "TimingReport",
    "build_scenario", "draw_channel", "evaluate", "load_config", "primal_from_dual", "run_convergence_report",
    "run_sweep", "solve", "solve_binary", "solve_fixed_frequency", "solve_inner",
]
__version__ = "0.1.0"
