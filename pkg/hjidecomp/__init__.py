__version__ = "0.1.0"

# the objects most scripts need, available at the top level
from hjidecomp.core.model import GameSpec, ControlGrid, TargetSet, Agent, agent_decoupled_game
from hjidecomp.core.grid import Grid, build_grid, ValueField, AnalyticField, ReducedField
from hjidecomp.core.solver import SolverConfig, solve
from hjidecomp.core.envelope import EnvelopeField, check_conditions, verify_viscosity
from hjidecomp.core.synthesis import simulate
from hjidecomp.games import build_family
