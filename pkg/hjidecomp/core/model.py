"""
Differential games: the dynamics, the control sets of the two players, the payoff integrand, the discount and the
family of target sets, plus the Hamiltonians that these define.

Conventions used throughout the package:
  - states may be single points of shape (n,) or batches of shape (..., n)
  - controls are always single vectors (the control grids are enumerated point by point)
  - dynamics(x, a, b) returns an array shaped like x; payoff_integrand(x, a, b) returns x.shape[:-1]
  - the a-player maximizes the payoff and the b-player minimizes it
"""

import itertools
import logging
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


class UsageError(ValueError):
    pass


# one agent of an agent-decoupled game: its state coordinates, the entries of the owning player's control vector that
# drive it, its own dynamics f_i(x_i, c_i) and its own control set
Agent = namedtuple("Agent", ["name", "player", "state_index", "control_index", "dynamics", "control_set"])


class ControlGrid:
    """
    A finite sample of a control set.  Points are stored as a (K, m) array, one control vector per row, in the order
    in which they were generated; ties in the min/max over controls are broken by this order.
    """
    DEFAULT_SAMPLES = 21
    INSIDE_TOLERANCE = 1e-12

    def __init__(self, points, description="", lower=None, upper=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("A control grid needs at least one control vector")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("Duplicate points in control grid '{}'".format(description))

        self.lower = None if lower is None else np.broadcast_to(np.asarray(lower, dtype=float), (pts.shape[1],))
        self.upper = None if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), (pts.shape[1],))
        if self.lower is not None and np.any(pts < self.lower - self.INSIDE_TOLERANCE):
            raise ValueError("Control grid point below the declared set")
        if self.upper is not None and np.any(pts > self.upper + self.INSIDE_TOLERANCE):
            raise ValueError("Control grid point above the declared set")

        self.points = pts
        self.points.setflags(write=False)
        self.description = description

    @classmethod
    def interval(cls, lo, hi, samples=DEFAULT_SAMPLES):
        """
        Uniform samples of the interval [lo, hi] (a single point when lo == hi)
        """
        if hi < lo:
            raise ValueError("Inverted control interval [{}, {}]".format(lo, hi))
        if hi == lo or samples == 1:
            return cls.singleton(lo if hi == lo else 0.5 * (lo + hi))
        if samples < 2:
            raise ValueError("Need at least two samples of a control interval")
        return cls(np.linspace(lo, hi, samples),
                   description="interval [{:g},{:g}], {} samples".format(lo, hi, samples),
                   lower=lo, upper=hi)

    @classmethod
    def singleton(cls, point):
        point = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(point.reshape(1, -1), description="point {}".format(point.tolist()), lower=point, upper=point)

    @classmethod
    def product(cls, *grids):
        """
        Cartesian product of control grids; the first grid varies slowest (lexicographic order)
        """
        if not grids:
            raise ValueError("Product of no control grids")
        rows = [np.concatenate(combo) for combo in itertools.product(*[g.points for g in grids])]
        lower = None if any(g.lower is None for g in grids) else np.concatenate([g.lower for g in grids])
        upper = None if any(g.upper is None for g in grids) else np.concatenate([g.upper for g in grids])
        return cls(np.array(rows), description=" x ".join(g.description for g in grids), lower=lower, upper=upper)

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points)

    def __contains__(self, control):
        control = np.atleast_1d(np.asarray(control, dtype=float))
        if control.shape != (self.dim,):
            return False
        return bool(np.any(np.all(self.points == control, axis=1)))

    def __repr__(self):
        return "ControlGrid({})".format(self.description)


class TargetSet:
    """
    One of the closed sets T_j whose union is the target.  Either a membership test or a signed distance (negative
    inside) must be supplied; both are vectorized over the leading axes of x.
    """
    DEFAULT_TOLERANCE = 1e-9

    def __init__(self, membership=None, signed_distance=None, label="", tolerance=DEFAULT_TOLERANCE):
        if membership is None and signed_distance is None:
            raise ValueError("A target needs a membership test or a signed distance")
        self._membership = membership
        self.signed_distance = signed_distance
        self.label = label
        self.tolerance = tolerance

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        if self.signed_distance is not None:
            return np.asarray(self.signed_distance(x) <= self.tolerance)
        return np.asarray(self._membership(x), dtype=bool)

    def check_consistency(self, samples):
        """
        When both a membership test and a signed distance are given, they must agree on every sample
        (membership(x) <=> signed_distance(x) <= 0).
        """
        if self._membership is None or self.signed_distance is None:
            return True
        samples = np.asarray(samples, dtype=float)
        inside = np.asarray(self._membership(samples), dtype=bool)
        return bool(np.all(inside == (self.signed_distance(samples) <= 0.0)))

    def __repr__(self):
        return "TargetSet({})".format(self.label)


@dataclass(frozen=True)
class GameSpec:
    """
    A zero-sum differential game with union-of-targets termination.  payoff_integrand=None means the minimum time
    payoff l = 1.  agents is only set for agent-decoupled games (each agent driven by its own control block).
    """
    state_dim: int
    dynamics: object
    control_set_a: ControlGrid
    control_set_b: ControlGrid
    targets: tuple
    payoff_integrand: object = None
    discount: float = 0.0
    name: str = ""
    agents: tuple = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("State dimension must be positive")
        if len(self.targets) == 0:
            raise ValueError("A game needs at least one target set")
        if self.discount < 0:
            raise ValueError("Discount must be non-negative")
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.agents is not None:
            object.__setattr__(self, "agents", tuple(self.agents))

    @property
    def is_decoupled(self):
        return self.agents is not None

    @property
    def minimum_time(self):
        return self.payoff_integrand is None

    def velocity(self, x, a, b):
        return np.asarray(self.dynamics(x, a, b), dtype=float)

    def running_cost(self, x, a, b):
        x = np.asarray(x, dtype=float)
        if self.payoff_integrand is None:
            return np.ones(x.shape[:-1])
        return np.broadcast_to(np.asarray(self.payoff_integrand(x, a, b), dtype=float), x.shape[:-1])

    def in_target(self, x):
        """
        Whether x lies in the union of the targets (vectorized)
        """
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape[:-1], dtype=bool)
        for target in self.targets:
            inside |= target.contains(x)
        return inside

    def target_index(self, x):
        """
        Index of the first target containing x, or -1 (vectorized)
        """
        x = np.asarray(x, dtype=float)
        index = np.full(x.shape[:-1], -1, dtype=int)
        for j in reversed(range(len(self.targets))):
            index = np.where(self.targets[j].contains(x), j, index)
        return index

    def check_bounded(self, lower, upper, samples=64, seed=0, bound=1e8):
        """
        Sample the dynamics on the box [lower, upper] with both controls ranging over their grids; returns the largest
        speed seen and raises ValueError if any velocity is non-finite or exceeds bound.
        """
        rng = np.random.default_rng(seed)
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.state_dim,))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (self.state_dim,))
        points = lower + (upper - lower) * rng.random((samples, self.state_dim))
        fastest = 0.0
        for a in self.control_set_a:
            for b in self.control_set_b:
                speed = np.abs(self.velocity(points, a, b))
                if not np.all(np.isfinite(speed)) or np.any(speed > bound):
                    raise ValueError("Dynamics of '{}' unbounded on the sampled box".format(self.name))
                fastest = max(fastest, float(speed.max()))
        return fastest


def _check_state(spec, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (spec.state_dim,):
        raise DimensionError("State of shape {} for a game of dimension {}".format(x.shape, spec.state_dim))
    return x


def eval_dynamics(spec, x, a, b):
    """
    f(x, a, b) for a single state and a pair of controls
    """
    x = _check_state(spec, x)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != (spec.control_set_a.dim,) or b.shape != (spec.control_set_b.dim,):
        raise DimensionError("Controls of shapes {}, {} for control sets of dimension {}, {}".format(
            a.shape, b.shape, spec.control_set_a.dim, spec.control_set_b.dim))
    return spec.velocity(x, a, b)


def control_table(spec, x, p):
    """
    The table Q[i_a, i_b, ...] = -p.f(x, a, b) - l(x, a, b) over the two control grids, vectorized over the leading
    axes of x and p.
    """
    x = _check_state(spec, x)
    p = np.asarray(p, dtype=float)
    if p.shape[-1:] != (spec.state_dim,):
        raise DimensionError("Costate of shape {} for a game of dimension {}".format(p.shape, spec.state_dim))
    shape = np.broadcast_shapes(x.shape, p.shape)[:-1]
    table = np.empty((len(spec.control_set_a), len(spec.control_set_b)) + shape)
    for i, a in enumerate(spec.control_set_a):
        for k, b in enumerate(spec.control_set_b):
            table[i, k] = -np.sum(p * spec.velocity(x, a, b), axis=-1) - spec.running_cost(x, a, b)
    return table


def _scalar_if_single(value, x):
    return float(value) if np.ndim(x) == 1 else value


def hamiltonian_upper(spec, x, u, p):
    """
    F(x, u, p) = lambda u + min over a of max over b of { -p.f(x, a, b) - l(x, a, b) }
    """
    table = control_table(spec, x, p)
    value = spec.discount * np.asarray(u, dtype=float) + table.max(axis=1).min(axis=0)
    return _scalar_if_single(value, x)


def hamiltonian_lower(spec, x, u, p):
    """
    G(x, u, p) = lambda u + max over b of min over a of { -p.f(x, a, b) - l(x, a, b) }
    """
    table = control_table(spec, x, p)
    value = spec.discount * np.asarray(u, dtype=float) + table.min(axis=0).max(axis=0)
    return _scalar_if_single(value, x)


def isaacs_gap(spec, x, p):
    """
    F - G at u = 0; non-negative on finite control grids, zero when the controls decouple
    """
    table = control_table(spec, x, p)
    value = table.max(axis=1).min(axis=0) - table.min(axis=0).max(axis=0)
    return _scalar_if_single(value, x)


def decoupled_hamiltonian(spec, agent_index, x_i, p_i):
    """
    H^i(x_i, p_i) = sup over the agent's own control set of p_i . f_i(x_i, c)
    """
    if not spec.is_decoupled:
        raise UsageError("Game '{}' is not agent-decoupled".format(spec.name))
    agent = spec.agents[agent_index]
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    p_i = np.atleast_1d(np.asarray(p_i, dtype=float))
    if x_i.shape != (len(agent.state_index),) or p_i.shape != x_i.shape:
        raise DimensionError("Agent '{}' has {} state coordinates".format(agent.name, len(agent.state_index)))
    return max(float(np.dot(p_i, agent.dynamics(x_i, c))) for c in agent.control_set)


def agent_decoupled_game(agents, targets, name="", discount=0.0, payoff_integrand=None, meta=None):
    """
    Assemble a GameSpec from agents that each own a block of the state and a block of one player's controls.
    The player control grids are the products of the agents' grids, taken in agent order.
    """
    agents = tuple(agents)
    state_dim = sum(len(ag.state_index) for ag in agents)
    grids = {"a": [], "b": []}
    for ag in agents:
        if ag.player not in grids:
            raise ValueError("Agent player must be 'a' or 'b', not {}".format(ag.player))
        grids[ag.player].append(ag.control_set)
    control_a = ControlGrid.product(*grids["a"]) if grids["a"] else ControlGrid.singleton(0.0)
    control_b = ControlGrid.product(*grids["b"]) if grids["b"] else ControlGrid.singleton(0.0)

    def dynamics(x, a, b):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for ag in agents:
            c = (a if ag.player == "a" else b)[list(ag.control_index)]
            out[..., list(ag.state_index)] = ag.dynamics(x[..., list(ag.state_index)], c)
        return out

    logging.log(logging.DEBUG, "game '{}': {} agents, |A|={}, |B|={}".format(name, len(agents), len(control_a),
                                                                           len(control_b)),
                extra={"source": "model"})
    return GameSpec(state_dim=state_dim, dynamics=dynamics, control_set_a=control_a, control_set_b=control_b,
                    targets=tuple(targets), payoff_integrand=payoff_integrand, discount=discount, name=name,
                    agents=agents, meta=dict(meta or {}))
