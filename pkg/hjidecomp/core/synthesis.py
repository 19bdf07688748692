"""
Closed-loop play from value fields: feedback controls read off the discrete Isaacs operator, forward-Euler rollouts to
capture, and the evader dominance experiment for the damped double-integrator pursuit game.
"""

import logging
from collections import namedtuple
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from hjidecomp.core.model import UsageError
from hjidecomp.core.solver import operator_table
from hjidecomp.utils import write_csv


class Outcome(Enum):
    CAPTURED = 0
    TIMEOUT = 1


OpenLoopPolicy = namedtuple("OpenLoopPolicy", ["a_fn", "b_fn"])


def feedback_controls(target, spec, x, time_step=None):
    """
    The pair (a, b) attaining max_a min_b of the semi-Lagrangian right-hand side at x, read on the stored (Kruzkov)
    scale of a field or envelope.  Ties go to the lowest control-grid index.
    """
    x = np.asarray(x, dtype=float)
    if bool(spec.in_target(x)):
        raise UsageError("Feedback requested at {} inside the target (the game is over)".format(x.tolist()))
    time_step = float(np.max(target.spacing)) if time_step is None else time_step
    table = operator_table(target, spec, x[None, :], time_step)[:, :, 0]
    i_a = int(np.argmax(table.min(axis=1)))
    i_b = int(np.argmin(table[i_a]))
    return spec.control_set_a.points[i_a].copy(), spec.control_set_b.points[i_b].copy()


@dataclass
class Trajectory:
    times: list
    states: list
    controls_a: list = field(default_factory=list)
    controls_b: list = field(default_factory=list)
    outcome: Outcome = Outcome.TIMEOUT
    target_index: int = -1
    target_label: str = ""

    @property
    def capture_time(self):
        return self.times[-1] if self.outcome is Outcome.CAPTURED else None

    def outcome_line(self):
        if self.outcome is Outcome.CAPTURED:
            return "CAPTURED j={} tau={:.6g}".format(self.target_label, self.capture_time)
        return "TIMEOUT"

    def dump_csv(self, filename):
        """
        Columns t, x1..xn, a.., b.., event; controls on a row are the ones applied from that time on
        """
        n = len(self.states[0])
        m_a = len(self.controls_a[0]) if self.controls_a else 0
        m_b = len(self.controls_b[0]) if self.controls_b else 0
        header = (["t"] + ["x{}".format(k + 1) for k in range(n)] + ["a{}".format(k + 1) for k in range(m_a)] +
                  ["b{}".format(k + 1) for k in range(m_b)] + ["event"])
        rows = []
        for k, (t, x) in enumerate(zip(self.times, self.states)):
            if k < len(self.controls_a):
                controls = [*map(float, self.controls_a[k]), *map(float, self.controls_b[k])]
            else:
                controls = [""] * (m_a + m_b)
            event = ""
            if k == len(self.times) - 1:
                event = ("CAPTURED:{}".format(self.target_label) if self.outcome is Outcome.CAPTURED
                         else "TIMEOUT")
            rows.append([float(t), *map(float, x), *controls, event])
        return write_csv(filename, header, rows)


def simulate(spec, policy, x0, dt, t_max, time_step=None):
    """
    Forward-Euler rollout from x0.  policy is a field or envelope (feedback re-evaluated every step) or an
    OpenLoopPolicy of functions of time.  Stops at the first entry into the union of the targets (capture by the
    lowest-index target containing the state) or at t_max.
    """
    if dt <= 0:
        raise ValueError("Simulation step must be positive")
    x = np.asarray(x0, dtype=float).copy()
    trajectory = Trajectory(times=[0.0], states=[x.copy()])

    def finish(j):
        trajectory.outcome = Outcome.CAPTURED
        trajectory.target_index = j
        trajectory.target_label = spec.targets[j].label or str(j)
        return trajectory

    j = int(spec.target_index(x))
    if j >= 0:
        return finish(j)

    steps = int(np.floor(t_max / dt + 1e-9))
    for k in range(1, steps + 1):
        t = (k - 1) * dt
        if isinstance(policy, OpenLoopPolicy):
            a = np.atleast_1d(np.asarray(policy.a_fn(t), dtype=float))
            b = np.atleast_1d(np.asarray(policy.b_fn(t), dtype=float))
        else:
            a, b = feedback_controls(policy, spec, x, time_step)
        x = x + dt * spec.velocity(x, a, b)
        trajectory.controls_a.append(a)
        trajectory.controls_b.append(b)
        trajectory.times.append(k * dt)
        trajectory.states.append(x.copy())
        j = int(spec.target_index(x))
        if j >= 0:
            logging.log(logging.INFO, "captured by target {} at t={:.4g}".format(j, k * dt),
                        extra={"source": "synth"})
            return finish(j)

    logging.log(logging.INFO, "no capture before t={:g}".format(t_max), extra={"source": "synth"})
    return trajectory


def label_runs(labels):
    """
    Collapse consecutive repeats: ["2", "2", "3", "3"] -> ["2", "3"]
    """
    runs = []
    for label in labels:
        if not runs or runs[-1] != label:
            runs.append(label)
    return runs


def argmin_sequence(env, trajectory):
    """
    Labels of the envelope components attaining the minimum along a trajectory, before its final (capturing) state,
    with repeats collapsed
    """
    states = np.asarray(trajectory.states[:-1] if len(trajectory.states) > 1 else trajectory.states, dtype=float)
    return label_runs([env.labels[j] for j in env.argmin(states)])


def random_piecewise_constant(rng, t_max, max_pieces=8):
    """
    A random open-loop control t -> [-1, 1], constant between random switching times
    """
    pieces = int(rng.integers(1, max_pieces + 1))
    switches = np.sort(rng.uniform(0.0, t_max, pieces - 1))
    levels = rng.uniform(-1.0, 1.0, pieces)
    return lambda t: float(levels[np.searchsorted(switches, t, side="right")])


# min_gap over all of t_grid, later_gap over t > 0 only (the runs share their start position)
DominanceReport = namedtuple("DominanceReport", ["min_gap", "later_gap", "gaps", "passed", "tolerance"])


def _evader_positions(damping, alpha, z, control, t_grid, dt):
    """
    Semi-implicit Euler for y1' = y2, y2' = -d(y2) + alpha a(t): velocity first, then position
    """
    steps = np.rint(np.asarray(t_grid) / dt).astype(int)
    y1, y2 = float(z[0]), float(z[1])
    positions = np.empty(len(steps))
    k = 0
    for i, target_step in enumerate(steps):
        while k < target_step:
            y2 = y2 + dt * (-damping(y2) + alpha * control(k * dt))
            y1 = y1 + dt * y2
            k += 1
        positions[i] = y1
    return positions


def lemma1_dominance(params, z, z_prime, strategies, t_grid, dt=0.01, tolerance=1e-9):
    """
    Position dominance of the full-thrust evader: the run from z_prime under a = +1 must stay ahead of the run from z
    under every supplied strategy, at every time of t_grid.  Strategies are functions of time into [-1, 1], scaled by
    the evader bound alpha; both runs use the same integrator and step.
    :return: DominanceReport; passed iff the smallest gap is >= -tolerance
    """
    z = np.asarray(z, dtype=float)
    z_prime = np.asarray(z_prime, dtype=float)
    if z_prime[0] < z[0] or z_prime[1] < z[1]:
        raise UsageError("Dominance needs z' >= z componentwise, got z={} z'={}".format(z.tolist(),
                                                                                       z_prime.tolist()))
    if dt * params.k_d > 1.0:
        raise UsageError("Step {} too large for damping Lipschitz constant {}".format(dt, params.k_d))
    t_grid = np.asarray(t_grid, dtype=float)
    damping = params.damping_fn()
    lead = _evader_positions(damping, params.alpha, z_prime, lambda t: 1.0, t_grid, dt)
    differences = [lead - _evader_positions(damping, params.alpha, z, s, t_grid, dt) for s in strategies]
    gaps = [float(np.min(d)) for d in differences]
    min_gap = min(gaps) if gaps else 0.0
    later = t_grid > 0.0
    later_gap = min((float(np.min(d[later])) for d in differences if np.any(later)), default=np.inf)
    return DominanceReport(min_gap, later_gap, gaps, min_gap >= -tolerance, tolerance)
