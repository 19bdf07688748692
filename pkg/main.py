import logging
from hjidecomp import build_family, build_grid, SolverConfig, solve, EnvelopeField, ReducedField, simulate
from hjidecomp.core.envelope import check_conditions
from hjidecomp.utils import init_logging

init_logging(log_file=None, log_level=logging.INFO)

family = None

# evader between two pursuers; the envelope of the reduced values is not the value of the game
family = build_family("p3", {"alpha": 0.5}, control_samples=5)
#family = build_family("p1", {"m": 2, "alpha": [0.5, 0.3], "beta": 1.0}, control_samples=5)
#family = build_family("p2", {"damping": "linear", "alpha": 0.4, "beta": [1.0, 1.0]}, control_samples=5)

# closed-form check of the two envelope hypotheses at a crossing point
#env = family.oracle.envelope_field(spacing=0.05)
#print(check_conditions(env, family.full, [0.0, 1.0, -1.0], gradients={0: [env.components[0].gradient([0.0, 1.0, -1.0])],
#                                                                       1: [env.components[1].gradient([0.0, 1.0, -1.0])]}))

if family is not None:
    components = []
    for game in family.reduced:
        grid = build_grid([(-3.0, 3.0)], [61], dim=game.spec.state_dim)
        value = solve(game.spec, grid, SolverConfig(tolerance=1e-6))
        components.append(ReducedField(value, game.projection, family.full.state_dim, label=game.label))
    env = EnvelopeField(components)
    print(check_conditions(env, family.full, [0.0, 1.0, -1.0]))
    print(simulate(family.full, env, [0.0, 1.0, 5.0], dt=0.05, t_max=10.0).outcome_line())
