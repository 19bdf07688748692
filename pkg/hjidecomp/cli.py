"""
Command-line front end.

    hjidecomp solve     solve the full game (or one reduced game with --reduced j); value.csv, convergence.jsonl, meta.json
    hjidecomp envelope  solve every reduced game and take the lower envelope; envelope.csv, sigma.csv, active.csv
    hjidecomp check     test the envelope hypotheses at --point (or at crossing nodes); conditions.jsonl, viscosity.csv
    hjidecomp simulate  closed-loop play from --point; trajectory.csv and an outcome line
    hjidecomp oracle    closed-form values at --point as json

Settings are taken from the built-in defaults, then from a JSON document given with --config, then from the
command-line flags, each overriding the one before.

Exit codes: 0 ok, 2 not converged, 3 incompatible inputs, 4 bad initial state, 5 unsupported family.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy

import hjidecomp
from hjidecomp.core.envelope import (EnvelopeField, IncompatibleFieldsError, Verdict, check_conditions, sigma_set,
                                     verify_viscosity)
from hjidecomp.core.grid import ReducedField, build_grid, load_value_field
from hjidecomp.core.model import DimensionError, UsageError
from hjidecomp.core.solver import SolveStatus, SolverConfig, solve
from hjidecomp.core.synthesis import simulate
from hjidecomp.games import UnsupportedFamilyError, build_family
from hjidecomp.utils import init_logging, read_json, to_jsonable, write_csv, write_json, write_jsonl

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INCOMPATIBLE = 3
EXIT_BAD_INITIAL_STATE = 4
EXIT_UNSUPPORTED = 5

COMMANDS = ("solve", "envelope", "check", "simulate", "oracle")


class InitialStateError(UsageError):
    pass


@dataclass
class RunConfig:
    """
    Everything a command needs; round-trips through json (lists only, no tuples) and rejects unknown keys
    """
    game: str = "p3"
    params: dict = field(default_factory=dict)
    control_samples: int = 21
    bounds: list = field(default_factory=lambda: [[-2.0, 2.0]])
    resolution: list = field(default_factory=lambda: [41])
    query_resolution: list = None          # grid for envelope/check queries on the full state; default resolution
    tolerance: float = 1e-6
    max_iterations: int = 2000
    order: str = "upper"
    sweep_mode: str = "gauss_seidel"
    time_step: float = None
    reduced: str = None                    # target label of the reduced game to solve
    relative: bool = False                 # use the relative-coordinate reduced games where a family has them
    analytic: bool = False                 # envelope from the family's closed forms instead of solves
    components: list = None                # output directories of earlier "solve --reduced" runs
    point: list = None
    threads: int = 1
    seed: int = 0
    tol_eq: float = None
    weights_per_axis: int = 10
    radius: float = None
    samples: int = 64
    max_points: int = 200
    viscosity_tolerance: float = 0.1
    dt: float = None
    t_max: float = 10.0
    out: str = "."
    log_file: str = None
    log_level: str = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError("Unknown config keys: {}".format(sorted(unknown)))
        return cls(**values)

    def solver_config(self):
        return SolverConfig(time_step=self.time_step, tolerance=self.tolerance, max_iterations=self.max_iterations,
                            sweep_mode=self.sweep_mode, order=self.order, threads=self.threads)


########################################################################################################################
# argument parsing

def parse_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def parse_bounds(text):
    """
    "lo:hi[,lo:hi...]" -> [[lo, hi], ...]
    """
    pairs = []
    for part in text.split(","):
        lo, hi = part.split(":")
        pairs.append([float(lo), float(hi)])
    return pairs


def parse_param(text):
    key, _, value = text.partition("=")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


VALUE_FLAGS = ("--bounds", "--point", "--alpha", "--beta")


def _join_negative_values(argv):
    """
    "--bounds -2:2" -> "--bounds=-2:2", so that values starting with a minus sign are not read as flags
    """
    joined = []
    i = 0
    while i < len(argv):
        if argv[i] in VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            joined.append("{}={}".format(argv[i], argv[i + 1]))
            i += 2
        else:
            joined.append(argv[i])
            i += 1
    return joined


def build_parser():
    parser = argparse.ArgumentParser(prog="hjidecomp", description="Target decomposition of differential games")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="json run configuration")
    parser.add_argument("--game", help="game family (p1, p2, p3)")
    parser.add_argument("--alpha", help="evader bound(s), comma separated")
    parser.add_argument("--beta", help="pursuer bound(s), comma separated")
    parser.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                        help="other family parameter, value in json (e.g. r=0.1, damping=\"linear\")")
    parser.add_argument("--control-samples", type=int, help="samples per control interval")
    parser.add_argument("--bounds", help="lo:hi[,lo:hi...]")
    parser.add_argument("--res", help="nodes per axis n[,n...]")
    parser.add_argument("--query-res", help="nodes per axis of the full-state query grid")
    parser.add_argument("--tol", type=float, help="sup-norm convergence tolerance")
    parser.add_argument("--max-iters", type=int, help="maximum solver sweeps")
    parser.add_argument("--order", choices=("upper", "lower"))
    parser.add_argument("--sweep", choices=("jacobi", "gauss_seidel"))
    parser.add_argument("--reduced", help="label of the reduced game to solve")
    parser.add_argument("--relative", action="store_true", default=None, help="use relative-coordinate reduced games")
    parser.add_argument("--analytic", action="store_true", default=None, help="use closed-form components")
    parser.add_argument("--component", action="append", help="directory of an earlier 'solve --reduced' run")
    parser.add_argument("--point", help="x1,x2,...")
    parser.add_argument("--dt", type=float)
    parser.add_argument("--t-max", type=float)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--log-file")
    parser.add_argument("--log-level")
    return parser


def _bounds_value(text):
    values = parse_floats(text)
    return values[0] if len(values) == 1 else values


def make_config(args):
    """
    defaults < --config document < flags
    """
    values = read_json(args.config) if args.config else {}
    config = RunConfig.from_dict(values)
    params = dict(config.params)
    if args.alpha is not None:
        params["alpha"] = _bounds_value(args.alpha)
    if args.beta is not None:
        params["beta"] = _bounds_value(args.beta)
    for text in args.param:
        key, value = parse_param(text)
        params[key] = value
    config.params = params

    overrides = {"game": args.game, "control_samples": args.control_samples, "tolerance": args.tol,
                 "max_iterations": args.max_iters, "order": args.order, "sweep_mode": args.sweep,
                 "reduced": args.reduced, "relative": args.relative, "analytic": args.analytic,
                 "components": args.component, "dt": args.dt, "t_max": args.t_max, "threads": args.threads,
                 "seed": args.seed, "out": args.out, "log_file": args.log_file, "log_level": args.log_level}
    if args.bounds is not None:
        overrides["bounds"] = parse_bounds(args.bounds)
    if args.res is not None:
        overrides["resolution"] = [int(v) for v in args.res.split(",")]
    if args.query_res is not None:
        overrides["query_resolution"] = [int(v) for v in args.query_res.split(",")]
    if args.point is not None:
        overrides["point"] = parse_floats(args.point)
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    return config


########################################################################################################################
# shared plumbing

def _family(config):
    return build_family(config.game, config.params, control_samples=config.control_samples)


def _reduced_games(config, family):
    games = family.relative if (config.relative and family.relative) else family.reduced
    if not games:
        raise IncompatibleFieldsError("Family '{}' has no reduced games".format(family.name))
    return games


def _select_game(config, family):
    """
    The game a solve works on, its projection into the full state and its label
    """
    if config.reduced is None:
        return family.full, None, ""
    for game in _reduced_games(config, family):
        if game.label == str(config.reduced):
            return game.spec, game.projection, game.label
    raise IncompatibleFieldsError("No reduced game labelled '{}' in family '{}'".format(config.reduced, family.name))


def _grid_for(config, dim, resolution=None):
    return build_grid(config.bounds, resolution or config.resolution, dim=dim)


def _meta(config, extra):
    meta = {"config": config.to_dict(), "versions": {"hjidecomp": hjidecomp.__version__, "numpy": np.__version__,
                                                     "scipy": scipy.__version__, "python": sys.version.split()[0]}}
    meta.update(extra)
    return meta


def _out(config, name):
    os.makedirs(config.out, exist_ok=True)
    return os.path.join(config.out, name)


def _solve_components(config, family):
    components, statuses = [], []
    for game in _reduced_games(config, family):
        grid = _grid_for(config, game.spec.state_dim)
        value = solve(game.spec, grid, config.solver_config())
        statuses.append(value.status)
        components.append(ReducedField(value, game.projection, family.full.state_dim, label=game.label))
    return components, statuses


def _load_components(config, family):
    targets = {game.label: game.spec.in_target for game in _reduced_games(config, family)}
    components = []
    for directory in config.components:
        meta = read_json(os.path.join(directory, "meta.json"))
        if meta["state_dim"] != family.full.state_dim:
            raise IncompatibleFieldsError("Component {} embeds into R^{}, the game lives in R^{}".format(
                directory, meta["state_dim"], family.full.state_dim))
        grid = build_grid(meta["grid"]["bounds"], meta["grid"]["resolution"])
        value = load_value_field(os.path.join(directory, "value.csv"), grid, transformed=meta["transformed"],
                                 target_fn=targets.get(meta["label"]))
        projection = meta["projection"]
        components.append(ReducedField(value, np.asarray(projection), family.full.state_dim, label=meta["label"]))
    return components, [SolveStatus[meta.get("status", "CONVERGED")]] * len(components)


def build_envelope(config, family):
    """
    The envelope of the family's reduced values: closed forms, earlier dumps or fresh solves
    :return: (EnvelopeField, list of solve statuses)
    """
    if config.analytic:
        if family.oracle is None or not hasattr(family.oracle, "envelope_field"):
            raise UnsupportedFamilyError("Family '{}' has no closed-form envelope".format(family.name))
        spacing = _grid_for(config, family.full.state_dim).h_max
        return family.oracle.envelope_field(spacing, tol_eq=config.tol_eq), []
    if config.components:
        components, statuses = _load_components(config, family)
    else:
        components, statuses = _solve_components(config, family)
    return EnvelopeField(components, tol_eq=config.tol_eq), statuses


def _query_grid(config, family):
    return _grid_for(config, family.full.state_dim, config.query_resolution)


def _exit_for(statuses):
    return EXIT_NOT_CONVERGED if any(s is SolveStatus.NOT_CONVERGED for s in statuses) else EXIT_OK


########################################################################################################################
# commands

def cmd_solve(config):
    family = _family(config)
    spec, projection, label = _select_game(config, family)
    grid = _grid_for(config, spec.state_dim)
    start = time.perf_counter()
    value = solve(spec, grid, config.solver_config())
    rows = value.dump_csv(_out(config, "value.csv"))
    write_jsonl(_out(config, "convergence.jsonl"), value.info["history"])
    write_json(_out(config, "meta.json"), _meta(config, {
        "status": value.status, "iterations": value.info["iterations"], "wall_s": time.perf_counter() - start,
        "grid": grid.to_dict(), "transformed": value.transformed, "label": label,
        "projection": projection if projection is not None else list(range(spec.state_dim)),
        "state_dim": family.full.state_dim if projection is not None else spec.state_dim, "rows": rows}))
    print("{} {} sweeps, {} rows".format(value.status.name, value.info["iterations"], rows))
    return EXIT_OK if value.status is SolveStatus.CONVERGED else EXIT_NOT_CONVERGED


def cmd_envelope(config):
    family = _family(config)
    env, statuses = build_envelope(config, family)
    query = _query_grid(config, family)
    nodes = query.node_list()
    dim = query.dim
    values = env.evaluate(nodes)
    active = env.active_map(query)
    labels = np.array(env.labels)
    coords = ["x{}".format(k + 1) for k in range(dim)]

    least = env.argmin(nodes)
    write_csv(_out(config, "envelope.csv"), coords + ["value", "argmin"],
              ([*map(float, x), float(v), labels[j]] for x, v, j in zip(nodes, values, least)))
    write_csv(_out(config, "active.csv"), coords + ["count", "active"],
              ([*map(float, x), int(a.sum()), "|".join(labels[a])] for x, a in zip(nodes, active.T)))
    sigma = sigma_set(env, query)
    write_csv(_out(config, "sigma.csv"), coords, ([*map(float, x)] for x in sigma))
    write_json(_out(config, "meta.json"), _meta(config, {"grid": query.to_dict(), "tol_eq": env.tol_eq,
                                                         "sigma_nodes": len(sigma),
                                                         "statuses": statuses}))
    print("envelope over {} nodes, {} crossing nodes".format(len(nodes), len(sigma)))
    return _exit_for(statuses)


def _check_points(config, env, family):
    if config.point is not None:
        return np.atleast_2d(np.asarray(config.point, dtype=float))
    sigma = sigma_set(env, _query_grid(config, family))
    if len(sigma) > config.max_points:
        rng = np.random.default_rng(config.seed)
        sigma = sigma[np.sort(rng.choice(len(sigma), config.max_points, replace=False))]
    return sigma


def cmd_check(config):
    family = _family(config)
    env, statuses = build_envelope(config, family)
    points = _check_points(config, env, family)
    if points.shape[1] != family.full.state_dim:
        raise DimensionError("Point of dimension {} for a game in R^{}".format(points.shape[1],
                                                                                family.full.state_dim))
    reports = [check_conditions(env, family.full, x, weights_per_axis=config.weights_per_axis, radius=config.radius,
                                samples=config.samples, seed=config.seed) for x in points]
    write_jsonl(_out(config, "conditions.jsonl"), [r.to_dict() for r in reports])
    viscosity = verify_viscosity(env, family.full, _query_grid(config, family), tol=config.viscosity_tolerance,
                                 radius=config.radius, seed=config.seed, threads=config.threads, points=points)
    viscosity.dump_csv(_out(config, "viscosity.csv"))

    counts = {v.name: sum(1 for r in reports if r.verdict is v) for v in Verdict}
    write_json(_out(config, "meta.json"), _meta(config, {"verdicts": counts, "viscosity": viscosity.summary(),
                                                         "statuses": statuses}))
    for report in reports[:10]:
        print("{} active={} residual_C={:.4g} residual_E={:.4g} {}".format(
            np.round(report.point, 6).tolist(), report.active, report.residual_C, report.residual_E,
            report.verdict.name))
    print(" ".join("{}={}".format(k, v) for k, v in counts.items()))
    return _exit_for(statuses)


def cmd_simulate(config):
    family = _family(config)
    spec = family.full
    if config.point is None:
        raise InitialStateError("simulate needs an initial state (--point)")
    x0 = np.asarray(config.point, dtype=float)
    if x0.shape != (spec.state_dim,):
        raise DimensionError("Initial state of dimension {} for a game in R^{}".format(len(x0), spec.state_dim))
    if bool(spec.in_target(x0)):
        raise InitialStateError("Initial state {} is inside the target".format(x0.tolist()))

    env, statuses = build_envelope(config, family)
    dt = config.dt if config.dt is not None else 0.5 * float(np.max(env.spacing))
    trajectory = simulate(spec, env, x0, dt, config.t_max)
    trajectory.dump_csv(_out(config, "trajectory.csv"))
    write_json(_out(config, "meta.json"), _meta(config, {
        "outcome": trajectory.outcome, "target": trajectory.target_label, "tau": trajectory.capture_time,
        "dt": dt, "statuses": statuses}))
    print(trajectory.outcome_line())
    return _exit_for(statuses)


def cmd_oracle(config):
    family = _family(config)
    if family.oracle is None:
        raise UnsupportedFamilyError("Family '{}' has no closed-form oracle".format(family.name))
    if config.point is None:
        raise UsageError("oracle needs --point")
    index = int(config.reduced) - 1 if (config.reduced is not None and family.name == "p1") else 0
    result = family.oracle.as_dict(config.point, index)
    print(json.dumps(to_jsonable(result), sort_keys=True))
    return EXIT_OK


HANDLERS = {"solve": cmd_solve, "envelope": cmd_envelope, "check": cmd_check, "simulate": cmd_simulate,
            "oracle": cmd_oracle}


def run(config, command):
    """
    Run one command and map failures to exit codes
    """
    try:
        return HANDLERS[command](config)
    except UnsupportedFamilyError as e:
        logging.log(logging.ERROR, str(e), extra={"source": "cli"})
        print("unsupported: {}".format(e.args[0]), file=sys.stderr)
        return EXIT_UNSUPPORTED
    except InitialStateError as e:
        logging.log(logging.ERROR, str(e), extra={"source": "cli"})
        print("bad initial state: {}".format(e), file=sys.stderr)
        return EXIT_BAD_INITIAL_STATE
    except (IncompatibleFieldsError, DimensionError, ValueError) as e:
        logging.log(logging.ERROR, str(e), extra={"source": "cli"})
        print("incompatible inputs: {}".format(e), file=sys.stderr)
        return EXIT_INCOMPATIBLE


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_negative_values(argv))
    try:
        config = make_config(args)
    except (ValueError, OSError) as e:
        print("incompatible inputs: {}".format(e), file=sys.stderr)
        return EXIT_INCOMPATIBLE
    init_logging(config.log_file, config.log_level)
    return run(config, args.command)


if __name__ == "__main__":
    sys.exit(main())
