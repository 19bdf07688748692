"""
The registered game families and their closed forms.

  p1  one pursuer against m evaders on a line, simple motion; target i is |x_p - x_i| <= r
  p2  m damped double-integrator pursuers chasing one evader; target i is "pursuer i has caught up"
  p3  one evader between two pursuers on a line; the counterexample where the envelope is not the value

Every family builds the full game, one reduced game per target (with the projection that embeds it), and, where one
exists, an oracle.  New families are added with register_family.
"""

import logging
from collections import namedtuple
from dataclasses import asdict, dataclass, fields

import numpy as np

from hjidecomp.core.envelope import EnvelopeField
from hjidecomp.core.grid import AnalyticField, ReducedField
from hjidecomp.core.model import Agent, ControlGrid, GameSpec, TargetSet, agent_decoupled_game


class UnsupportedFamilyError(KeyError):
    pass


GameFamily = namedtuple("GameFamily", ["name", "params", "full", "reduced", "relative", "oracle"])

# spec: the reduced game; projection: coordinate indices (or reduction matrix) into the full state
ReducedGame = namedtuple("ReducedGame", ["spec", "projection", "label"])


def params_from_dict(cls, values):
    """
    Build a parameter record from a dict, rejecting unknown keys
    """
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError("Unknown {} keys: {}".format(cls.__name__, sorted(unknown)))
    return cls(**values)


def _simple_motion(x, c):
    return np.zeros_like(x) + c


def _distance_target(i, j, radius, label):
    return TargetSet(signed_distance=lambda x: np.abs(x[..., i] - x[..., j]) - radius, label=label)


########################################################################################################################
# p1


@dataclass
class P1Params:
    m: int = 2
    alpha: tuple = (0.5, 0.5)
    beta: float = 1.0
    r: float = 0.1
    enforce_capture: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("p1 needs at least one evader")
        self.alpha = tuple(float(a) for a in np.broadcast_to(np.asarray(self.alpha, dtype=float), (self.m,)))
        if self.r < 0:
            raise ValueError("Capture radius must be non-negative")
        if self.enforce_capture and self.beta <= max(self.alpha):
            raise ValueError("Pursuer speed {} does not exceed evader speeds {}".format(self.beta, self.alpha))


class P1Oracle:
    """
    Capture time of the reduced game on (x_i, x_p): max(0, |x_p - x_i| - r) / (beta - alpha_i)
    """
    def __init__(self, params, pure_control=False):
        self.params = params
        self.pure_control = pure_control

    def closing_speed(self, i):
        return self.params.beta - (0.0 if self.pure_control else self.params.alpha[i])

    def reduced_value(self, i, x_i, x_p):
        gap = np.maximum(0.0, np.abs(np.asarray(x_p, dtype=float) - np.asarray(x_i, dtype=float)) - self.params.r)
        value = gap / self.closing_speed(i)
        return float(value) if np.ndim(value) == 0 else value

    def value(self, x):
        """
        The full game's value, the least of the reduced capture times
        """
        x = np.asarray(x, dtype=float)
        m = self.params.m
        return np.min([self.reduced_value(i, x[..., i], x[..., m]) for i in range(m)], axis=0)

    def as_dict(self, point, index=0):
        point = np.asarray(point, dtype=float)
        return {"family": "p1", "target": index + 1, "value": self.reduced_value(index, point[0], point[1])}


def p1_reduced_value(params, i, x_i, x_p):
    return P1Oracle(params).reduced_value(i, x_i, x_p)


def make_p1(params, control_samples=ControlGrid.DEFAULT_SAMPLES, pure_control=False):
    """
    Full game on (x_1..x_m, x_p) with evaders x_i' = a_i, |a_i| <= alpha_i and pursuer x_p' = b, |b| <= beta, plus the
    2-state reduced game for each target.  pure_control replaces every evader control set by {0}.
    """
    m = params.m

    def evader_controls(i):
        if pure_control:
            return ControlGrid.singleton(0.0)
        return ControlGrid.interval(-params.alpha[i], params.alpha[i], control_samples)

    pursuer_controls = ControlGrid.interval(-params.beta, params.beta, control_samples)
    agents = [Agent("evader{}".format(i + 1), "a", (i,), (i,), _simple_motion, evader_controls(i)) for i in range(m)]
    agents.append(Agent("pursuer", "b", (m,), (0,), _simple_motion, pursuer_controls))
    targets = [_distance_target(i, m, params.r, str(i + 1)) for i in range(m)]
    meta = {"family": "p1", "params": asdict(params), "pure_control": pure_control}
    full = agent_decoupled_game(agents, targets, name="p1", meta=meta)

    reduced = []
    for i in range(m):
        pair = [Agent("evader{}".format(i + 1), "a", (0,), (0,), _simple_motion, evader_controls(i)),
                Agent("pursuer", "b", (1,), (0,), _simple_motion, pursuer_controls)]
        spec = agent_decoupled_game(pair, [_distance_target(0, 1, params.r, str(i + 1))],
                                    name="p1.{}".format(i + 1), meta=meta)
        reduced.append(ReducedGame(spec, (i, m), str(i + 1)))
    return GameFamily("p1", params, full, reduced, [], P1Oracle(params, pure_control))


########################################################################################################################
# p2


@dataclass
class P2Params:
    m: int = 2
    alpha: float = 0.4
    beta: tuple = (1.0, 1.0)
    c_d: float = 0.2
    k_d: float = 1.0
    damping: str = "clamp"
    enforce_constraints: bool = True

    DAMPING_KINDS = ("clamp", "linear")

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("p2 needs at least one pursuer")
        self.beta = tuple(float(b) for b in np.broadcast_to(np.asarray(self.beta, dtype=float), (self.m,)))
        if self.damping not in self.DAMPING_KINDS:
            raise ValueError("Unknown damping '{}', expected one of {}".format(self.damping, self.DAMPING_KINDS))
        if self.enforce_constraints and not self.constraints_hold():
            raise ValueError("Pursuer bounds {} violate beta_i > alpha + 2 c_d = {}".format(
                self.beta, self.alpha + 2.0 * self.c_d))
        if self.damping == "linear":
            logging.log(logging.WARNING, "linear damping d(y) = y is unbounded (d(y) <= c_d fails)",
                        extra={"source": "games"})

    def constraints_hold(self):
        return all(b > self.alpha + 2.0 * self.c_d for b in self.beta)

    @property
    def bounded_damping(self):
        return self.damping == "clamp"

    def damping_fn(self):
        if self.damping == "linear":
            return lambda y: y
        c_d = self.c_d
        return lambda y: np.clip(y, -c_d, c_d)


def _damped_agent(name, player, state_index, control_index, damping, bound, control_samples):
    def dynamics(x, c):
        out = np.empty_like(x)
        out[..., 0] = x[..., 1]
        out[..., 1] = -damping(x[..., 1]) + c[0]
        return out
    return Agent(name, player, state_index, control_index, dynamics,
                 ControlGrid.interval(-bound, bound, control_samples))


def _overtake_target(evader, pursuer, label):
    # inside when the pursuer's position has reached the evader's
    return TargetSet(signed_distance=lambda x: x[..., evader] - x[..., pursuer], label=label)


def make_p2(params, control_samples=ControlGrid.DEFAULT_SAMPLES):
    """
    Full game on (x^1, x^2, .., x^{m+1}) in R^{2(m+1)}, x^1 the evader, each block (position, velocity) with
    x_1' = x_2, x_2' = -d(x_2) + control.  Target i (labelled i+1) is x^{i+1}_1 >= x^1_1.  Reduced games live on
    (x^1, x^{i+1}) in R^4; with linear damping there is also the relative game on y = x^1 - x^{i+1}.
    """
    m = params.m
    d = params.damping_fn()
    evader = _damped_agent("evader", "a", (0, 1), (0,), d, params.alpha, control_samples)
    agents = [evader] + [_damped_agent("pursuer{}".format(i + 2), "b", (2 * i + 2, 2 * i + 3), (i,), d, params.beta[i],
                                       control_samples) for i in range(m)]
    targets = [_overtake_target(0, 2 * i + 2, str(i + 2)) for i in range(m)]
    meta = {"family": "p2", "params": asdict(params), "bounded_damping": params.bounded_damping}
    full = agent_decoupled_game(agents, targets, name="p2", meta=meta)

    reduced, relative = [], []
    for i in range(m):
        label = str(i + 2)
        pair = [_damped_agent("evader", "a", (0, 1), (0,), d, params.alpha, control_samples),
                _damped_agent("pursuer" + label, "b", (2, 3), (0,), d, params.beta[i], control_samples)]
        spec = agent_decoupled_game(pair, [_overtake_target(0, 2, label)], name="p2." + label, meta=meta)
        reduced.append(ReducedGame(spec, (0, 1, 2 * i + 2, 2 * i + 3), label))
        if params.damping == "linear":
            relative.append(ReducedGame(make_p2_relative(params, i, control_samples), relative_matrix(m, i), label))
    oracle = P2Oracle(params) if params.damping == "linear" else None
    return GameFamily("p2", params, full, reduced, relative, oracle)


def relative_matrix(m, i):
    """
    The 2 x 2(m+1) map x -> y = x^1 - x^{i+1} onto the relative coordinates of pursuer i
    """
    matrix = np.zeros((2, 2 * (m + 1)))
    matrix[0, 0], matrix[0, 2 * i + 2] = 1.0, -1.0
    matrix[1, 1], matrix[1, 2 * i + 3] = 1.0, -1.0
    return matrix


def make_p2_relative(params, i, control_samples=ControlGrid.DEFAULT_SAMPLES):
    """
    Linear damping only: y = (x^1_1 - x^{i+1}_1, x^1_2 - x^{i+1}_2) obeys y1' = y2, y2' = -y2 + a - b, and the target is
    y1 <= 0
    """
    if params.damping != "linear":
        raise NotImplementedError("The relative-coordinate game needs linear damping")

    def dynamics(y, a, b):
        out = np.empty_like(y)
        out[..., 0] = y[..., 1]
        out[..., 1] = -y[..., 1] + a[0] - b[0]
        return out

    label = str(i + 2)
    return GameSpec(state_dim=2, dynamics=dynamics,
                    control_set_a=ControlGrid.interval(-params.alpha, params.alpha, control_samples),
                    control_set_b=ControlGrid.interval(-params.beta[i], params.beta[i], control_samples),
                    targets=(TargetSet(signed_distance=lambda y: y[..., 0], label=label),),
                    name="p2.rel." + label, meta={"family": "p2", "params": asdict(params)})


class P2Oracle:
    """
    Closed-form capture times of the linear-damping relative games.  Both sides at full thrust (a = +alpha,
    b = +beta_i) dominate every other play, y2 then relaxes to -s with s = beta_i - alpha, and the capture time is the
    root of

        y1 - s t + (y2 + s)(1 - e^-t) = 0

    which is unique for y1 > 0 (the left side is concave or decreasing in t).
    """
    BISECTIONS = 80

    def __init__(self, params):
        if params.damping != "linear":
            raise NotImplementedError("Closed-form p2 capture times need linear damping")
        self.params = params
        self.matrices = [relative_matrix(params.m, i) for i in range(params.m)]

    @property
    def state_dim(self):
        return 2 * (self.params.m + 1)

    def closing_speed(self, i):
        return self.params.beta[i] - self.params.alpha

    def capture_time(self, i, y):
        y = np.asarray(y, dtype=float)
        s = self.closing_speed(i)
        y1, c = y[..., 0], y[..., 1] + s
        lo = np.zeros(y1.shape)
        hi = (np.maximum(y1, 0.0) + np.maximum(c, 0.0)) / s + 1.0
        for _ in range(self.BISECTIONS):
            mid = 0.5 * (lo + hi)
            ahead = y1 - s * mid + c * -np.expm1(-mid) > 0.0
            lo, hi = np.where(ahead, mid, lo), np.where(ahead, hi, mid)
        t = np.where(y1 <= 0.0, 0.0, 0.5 * (lo + hi))
        return float(t) if np.ndim(t) == 0 else t

    def capture_gradient(self, i, y):
        """
        Implicit differentiation of the root: dt/dy1 = -1 / g', dt/dy2 = -(1 - e^-t) / g' with g' = (y2 + s) e^-t - s
        """
        y = np.asarray(y, dtype=float)
        s = self.closing_speed(i)
        t = np.asarray(self.capture_time(i, y))
        slope = (y[..., 1] + s) * np.exp(-t) - s
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = np.stack([-1.0 / slope, np.expm1(-t) / slope], axis=-1)
        return np.where(np.asarray(y[..., 0] <= 0.0)[..., None], 0.0, grad)

    def gap_for(self, i, capture_time, velocity):
        """
        The relative position y1 that pursuer i captures from in exactly capture_time at relative velocity y2
        """
        s = self.closing_speed(i)
        return s * capture_time + (velocity + s) * np.expm1(-capture_time)

    def crossing_state(self, capture_time, velocities, evader=(0.0, 0.0)):
        """
        A full state where every pursuer's relative game ends at the same capture_time, i.e. a point of the crossing
        set of the envelope; velocities are the relative velocities y2, one per pursuer
        """
        if len(velocities) != self.params.m:
            raise ValueError("Need {} relative velocities, got {}".format(self.params.m, len(velocities)))
        evader = np.asarray(evader, dtype=float)
        x = np.empty(self.state_dim)
        x[0:2] = evader
        for i, velocity in enumerate(velocities):
            y = np.array([self.gap_for(i, capture_time, velocity), velocity])
            if y[0] <= 0.0:
                raise ValueError("No pursuer {} state captures in {} at relative velocity {}".format(
                    i + 2, capture_time, velocity))
            x[2 * i + 2:2 * i + 4] = evader - y
        return x

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.min([self.capture_time(i, x @ self.matrices[i].T) for i in range(self.params.m)], axis=0)

    def field(self, i, spacing):
        return AnalyticField(lambda y: self.capture_time(i, y), 2, spacing, target_fn=lambda y: y[..., 0] <= 0.0,
                             gradient_fn=lambda y: self.capture_gradient(i, y), label=str(i + 2))

    def component_fields(self, spacing):
        return [ReducedField(self.field(i, spacing), self.matrices[i], self.state_dim, label=str(i + 2))
                for i in range(self.params.m)]

    def envelope_field(self, spacing, tol_eq=None):
        return EnvelopeField(self.component_fields(spacing), tol_eq=tol_eq,
                             labels=[str(i + 2) for i in range(self.params.m)])

    def as_dict(self, point, index=0):
        """
        point is the relative state (y1, y2) of pursuer index + 1
        """
        return {"family": "p2", "target": index + 2, "value": self.capture_time(index, point)}


def p2_nearest_pursuer(x):
    """
    Label of the pursuer closest behind the evader, by position
    """
    x = np.asarray(x, dtype=float)
    gaps = x[0] - x[2::2]
    gaps = np.where(gaps > 0.0, gaps, np.inf)
    return str(int(np.argmin(gaps)) + 2)


def p2_hamiltonian_split(params, x, p):
    """
    F^2 = F^21 + F^22 with F^21 = -sum_i (p^i_1 x^i_2 - p^i_2 d(x^i_2)) the drift part and
    F^22 = -alpha |p^1_2| + sum_i beta_i |p^{i+1}_2| - 1 the control part (carrying the running cost)
    :return: (F21, F22)
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    d = params.damping_fn()
    positions, velocities = x[..., 0::2], x[..., 1::2]
    p_pos, p_vel = p[..., 0::2], p[..., 1::2]
    f21 = -np.sum(p_pos * velocities - p_vel * d(velocities), axis=-1)
    f22 = -params.alpha * np.abs(p_vel[..., 0]) + np.sum(np.asarray(params.beta) * np.abs(p_vel[..., 1:]), axis=-1) - 1.0
    return f21, f22


########################################################################################################################
# p3


@dataclass
class P3Params:
    alpha: float = 0.5
    target_eps: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("p3 needs alpha in (0, 1), got {}".format(self.alpha))
        if self.target_eps < 0:
            raise ValueError("Target thickening must be non-negative")


class P3Oracle:
    """
    Closed forms for the evader between two pursuers (all vectorized over the leading axes of x):
        u2 = |x2 - x1| / (1 - alpha),  u3 = |x3 - x1| / (1 - alpha),  envelope = min(u2, u3)
        D  = opposite sides and (1-alpha)/(1+alpha) |x3-x1| < |x2-x1| < (1+alpha)/(1-alpha) |x3-x1|
        u  = (|x2 - x1| + |x3 - x1|) / 2 on D, the envelope elsewhere
    eps > 0 shrinks every distance by the target thickening.
    """
    def __init__(self, alpha, eps=0.0):
        if not 0.0 < alpha < 1.0:
            raise ValueError("p3 needs alpha in (0, 1), got {}".format(alpha))
        self.alpha = alpha
        self.eps = eps

    def _gaps(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] - x[..., 0], x[..., 2] - x[..., 0]

    def u2(self, x):
        d2, _ = self._gaps(x)
        return np.maximum(0.0, np.abs(d2) - self.eps) / (1.0 - self.alpha)

    def u3(self, x):
        _, d3 = self._gaps(x)
        return np.maximum(0.0, np.abs(d3) - self.eps) / (1.0 - self.alpha)

    def envelope(self, x):
        return np.minimum(self.u2(x), self.u3(x))

    def in_D(self, x):
        d2, d3 = self._gaps(x)
        ratio = (1.0 - self.alpha) / (1.0 + self.alpha)
        opposite = np.sign(d2) == -np.sign(d3)
        return opposite & (d2 != 0) & (ratio * np.abs(d3) < np.abs(d2)) & (np.abs(d2) < np.abs(d3) / ratio)

    def true_u(self, x):
        d2, d3 = self._gaps(x)
        sandwiched = np.maximum(0.0, 0.5 * (np.abs(d2) + np.abs(d3)) - self.eps)
        return np.where(self.in_D(x), sandwiched, self.envelope(x))

    def gradient_u2(self, x):
        d2, _ = self._gaps(x)
        g = np.sign(d2) / (1.0 - self.alpha)
        return np.stack([-g, g, np.zeros_like(g)], axis=-1)

    def gradient_u3(self, x):
        _, d3 = self._gaps(x)
        g = np.sign(d3) / (1.0 - self.alpha)
        return np.stack([-g, np.zeros_like(g), g], axis=-1)

    def values(self, x):
        x = np.asarray(x, dtype=float)
        return {"u2": float(self.u2(x)), "u3": float(self.u3(x)), "envelope": float(self.envelope(x)),
                "true_u": float(self.true_u(x)), "in_D": bool(self.in_D(x))}

    def as_dict(self, point, index=0):
        return dict(family="p3", alpha=self.alpha, **self.values(point))

    def _target(self, j):
        eps = self.eps
        return lambda x: np.abs(np.asarray(x)[..., j] - np.asarray(x)[..., 0]) <= eps

    def component_fields(self, spacing):
        """
        u2 and u3 as closed-form fields on R^3, with exact gradients
        """
        return [AnalyticField(self.u2, 3, spacing, target_fn=self._target(1), gradient_fn=self.gradient_u2, label="2"),
                AnalyticField(self.u3, 3, spacing, target_fn=self._target(2), gradient_fn=self.gradient_u3, label="3")]

    def envelope_field(self, spacing, tol_eq=None):
        return EnvelopeField(self.component_fields(spacing), tol_eq=tol_eq, labels=["2", "3"])

    def true_field(self, spacing):
        return AnalyticField(self.true_u, 3, spacing,
                             target_fn=lambda x: self._target(1)(x) | self._target(2)(x), label="u")


def p3_values(oracle, x):
    return oracle.values(x)


def p3_condition_E_residual(lam, alpha):
    """
    F^3 at lam grad u2 + (1 - lam) grad u3 taken at (0, z, -z): 2 alpha min(lam, 1 - lam) / (1 - alpha), which is
    2 lam alpha / (1 - alpha) for lam <= 1/2
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("Convex weight {} outside [0, 1]".format(lam))
    if not 0.0 < alpha < 1.0:
        raise ValueError("p3 needs alpha in (0, 1), got {}".format(alpha))
    return 2.0 * alpha * min(lam, 1.0 - lam) / (1.0 - alpha)


def make_p3(params, control_samples=ControlGrid.DEFAULT_SAMPLES):
    """
    Full game x1' = a, x2' = b1, x3' = b2 with |a| <= alpha, |b_k| <= 1 and the hyperplane targets x1 = x2 (label "2"),
    x1 = x3 (label "3") thickened to |x1 - xj| <= target_eps; reduced games on (x1, x2) and (x1, x3).
    """
    if not isinstance(params, P3Params):
        params = P3Params(alpha=params)
    evader_controls = ControlGrid.interval(-params.alpha, params.alpha, control_samples)
    pursuer_controls = ControlGrid.interval(-1.0, 1.0, control_samples)
    agents = [Agent("evader", "a", (0,), (0,), _simple_motion, evader_controls),
              Agent("pursuer2", "b", (1,), (0,), _simple_motion, pursuer_controls),
              Agent("pursuer3", "b", (2,), (1,), _simple_motion, pursuer_controls)]
    targets = [_distance_target(0, 1, params.target_eps, "2"), _distance_target(0, 2, params.target_eps, "3")]
    meta = {"family": "p3", "params": asdict(params)}
    full = agent_decoupled_game(agents, targets, name="p3", meta=meta)

    reduced = []
    for j in (1, 2):
        label = str(j + 1)
        pair = [Agent("evader", "a", (0,), (0,), _simple_motion, evader_controls),
                Agent("pursuer" + label, "b", (1,), (0,), _simple_motion, pursuer_controls)]
        spec = agent_decoupled_game(pair, [_distance_target(0, 1, params.target_eps, label)], name="p3." + label,
                                    meta=meta)
        reduced.append(ReducedGame(spec, (0, j), label))
    return GameFamily("p3", params, full, reduced, [], P3Oracle(params.alpha, eps=params.target_eps))


########################################################################################################################
# registry

FamilyEntry = namedtuple("FamilyEntry", ["name", "params", "builder", "description"])

FAMILIES = {}


def register_family(name, params_cls, builder, description=""):
    """
    Add a game family.  builder(params, control_samples) must return a GameFamily.
    """
    if name in FAMILIES:
        raise ValueError("Game family '{}' already registered".format(name))
    FAMILIES[name] = FamilyEntry(name, params_cls, builder, description)


register_family("p1", P1Params, make_p1, "one pursuer, m evaders, simple motion on a line")
register_family("p2", P2Params, make_p2, "m damped double-integrator pursuers, one evader")
register_family("p3", P3Params, make_p3, "evader between two pursuers on a line")


def get_family(name):
    try:
        return FAMILIES[name]
    except KeyError:
        raise UnsupportedFamilyError("Unknown game family '{}'; registered: {}".format(name, sorted(FAMILIES)))


def build_family(name, params=None, control_samples=ControlGrid.DEFAULT_SAMPLES, **options):
    """
    Build a registered family from a parameter dict (unknown keys rejected)
    """
    entry = get_family(name)
    record = params_from_dict(entry.params, dict(params or {}))
    return entry.builder(record, control_samples=control_samples, **options)
