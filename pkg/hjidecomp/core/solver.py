"""
Upper (or lower) value of a game on a grid, as the fixed point of a semi-Lagrangian discrete Isaacs operator.

Minimum-time games (no discount, l = 1) are iterated on the Kruzkov scale v = 1 - exp(-u):

    v'(x) = max_a min_b { (1 - e^-h) + e^-h I[v](x + h f(x, a, b)) }

and discounted games (discount lambda > 0, running cost l) directly on the natural scale:

    u'(x) = max_a min_b { (1 - e^-lambda h) / lambda * l(x, a, b) + e^-lambda h I[u](x + h f(x, a, b)) }

with I[.] the multilinear interpolation of the grid module.  Target nodes stay 0.  Feet of characteristics that leave
the box read the worst case (v = 1, never captured) on the Kruzkov scale.

References:
    [1] M. Falcone, R. Ferretti, "Semi-Lagrangian Approximation Schemes for Linear and Hamilton-Jacobi Equations"
    [2] M. Bardi, I. Capuzzo-Dolcetta, "Optimal Control and Viscosity Solutions of HJB Equations", ch. VIII
"""

import logging
import time
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from hjidecomp.core.grid import NodeMask, ValueField, kruzkov, kruzkov_inverse, stencil_fit, central_gradients
from hjidecomp.core.model import hamiltonian_upper
from hjidecomp.utils import LOG_SWEEP

__all__ = ["SweepMode", "Order", "SolveStatus", "SolverError", "SolverConfig", "kruzkov", "kruzkov_inverse",
           "initial_field", "sl_update", "solve", "pde_residual", "operator_table"]


class SweepMode(Enum):
    JACOBI = 0
    GAUSS_SEIDEL = 1


class Order(Enum):
    UPPER = 0   # max over a of min over b
    LOWER = 1   # min over b of max over a


class SolveStatus(Enum):
    CONVERGED = 0
    NOT_CONVERGED = 1


class SolverError(FloatingPointError):
    """
    A NaN appeared during an update; carries the offending node
    """
    def __init__(self, message, node=None, coords=None):
        super().__init__(message)
        self.node = node
        self.coords = coords


def _as_enum(enum, value):
    if isinstance(value, enum):
        return value
    return enum[str(value).upper()]


@dataclass
class SolverConfig:
    time_step: float = None         # None: the largest grid spacing
    tolerance: float = 1e-6
    max_iterations: int = 2000
    sweep_mode: SweepMode = SweepMode.GAUSS_SEIDEL
    order: Order = Order.UPPER
    threads: int = 1

    def __post_init__(self):
        self.sweep_mode = _as_enum(SweepMode, self.sweep_mode)
        self.order = _as_enum(Order, self.order)
        if self.tolerance <= 0:
            raise ValueError("Solver tolerance must be positive")
        if self.time_step is not None and self.time_step <= 0:
            raise ValueError("Solver time step must be positive")
        if self.max_iterations < 1:
            raise ValueError("Need at least one solver iteration")
        if self.threads < 1:
            raise ValueError("Need at least one worker thread")

    def step_for(self, grid):
        return grid.h_max if self.time_step is None else self.time_step

    def to_dict(self):
        return {"time_step": self.time_step, "tolerance": self.tolerance, "max_iterations": self.max_iterations,
                "sweep_mode": self.sweep_mode.name, "order": self.order.name, "threads": self.threads}


# (1 - e^-rh)-type weight of the running cost, e^-rh weight of the continuation value, and whether the Kruzkov scale
# is in use
StepWeights = namedtuple("StepWeights", ["cost", "continuation", "transformed"])


def step_weights(spec, time_step):
    if spec.discount == 0.0:
        if not spec.minimum_time:
            raise NotImplementedError("Undiscounted games are only supported with the minimum-time payoff l = 1")
        continuation = np.exp(-time_step)
        return StepWeights(1.0 - continuation, continuation, True)
    continuation = np.exp(-spec.discount * time_step)
    return StepWeights(-np.expm1(-spec.discount * time_step) / spec.discount, continuation, False)


def initial_field(spec, grid):
    """
    Masks from the game's targets; Kruzkov fields start at 1 off the target ("never captured"), discounted ones at 0
    """
    nodes = grid.nodes()
    inside = spec.in_target(nodes)
    mask = np.where(inside, NodeMask.TARGET, np.where(grid.face_mask(), NodeMask.BOUNDARY, NodeMask.INTERIOR))
    transformed = step_weights(spec, grid.h_max).transformed
    values = np.where(inside, 0.0, 1.0 if transformed else 0.0)
    return ValueField(grid, values, mask.astype(np.int8), transformed=transformed, target_fn=spec.in_target)


def _grid_lookup(grid, values, transformed):
    """
    Interpolating lookup into a value array; feet outside the box read OUTSIDE_VALUE on the Kruzkov scale
    """
    interpolator = RegularGridInterpolator(grid.axes, values, method="linear", bounds_error=False, fill_value=None)

    def lookup(points):
        clamped, outside = grid.clamp(points)
        result = interpolator(clamped)
        if transformed:
            result = np.where(outside, ValueField.OUTSIDE_VALUE, result)
        return result
    return lookup


def field_lookup(field):
    """
    Stored-scale lookup for any field; grid fields get the out-of-box convention of the solver
    """
    if isinstance(field, ValueField):
        return _grid_lookup(field.grid, field.values, field.transformed)
    return lambda points: field.evaluate(points, natural=False)


def _continuation(spec, lookup, points, a, b, time_step, weights):
    feet = points + time_step * spec.velocity(points, a, b)
    return weights.cost * spec.running_cost(points, a, b) + weights.continuation * lookup(feet)


def _apply_operator(spec, lookup, points, time_step, order, weights):
    """
    One application of the discrete Isaacs operator at a batch of points, reducing over the control grids on the fly
    """
    if order is Order.UPPER:
        outer, inner, outer_best, inner_best = spec.control_set_a, spec.control_set_b, np.maximum, np.minimum
    else:
        outer, inner, outer_best, inner_best = spec.control_set_b, spec.control_set_a, np.minimum, np.maximum
    best = None
    for c_out in outer:
        worst = None
        for c_in in inner:
            a, b = (c_out, c_in) if order is Order.UPPER else (c_in, c_out)
            q = _continuation(spec, lookup, points, a, b, time_step, weights)
            worst = q if worst is None else inner_best(worst, q)
        best = worst if best is None else outer_best(best, worst)
    return best


def operator_table(field, spec, points, time_step):
    """
    The full table Q[i_a, i_b, ...] of the operator's right-hand side at points (used for feedback synthesis)
    """
    points = np.asarray(points, dtype=float)
    weights = step_weights(spec, time_step)
    lookup = field_lookup(field)
    table = np.empty((len(spec.control_set_a), len(spec.control_set_b)) + points.shape[:-1])
    for i, a in enumerate(spec.control_set_a):
        for k, b in enumerate(spec.control_set_b):
            table[i, k] = _continuation(spec, lookup, points, a, b, time_step, weights)
    return table


def _check_nan(grid, new, flat_index):
    bad = np.flatnonzero(np.isnan(new))
    if len(bad):
        node = np.unravel_index(int(flat_index[bad[0]]), grid.shape)
        coords = grid.node(node)
        raise SolverError("NaN in update at node {} ({})".format(node, coords.tolist()), node=node, coords=coords)


def _sweep(field, spec, config, reverse=False):
    """
    One pass of the operator over every non-target node; returns the new values and the sup-norm change
    """
    grid = field.grid
    time_step = config.step_for(grid)
    weights = step_weights(spec, time_step)
    values = field.values.copy()
    update = field.mask != NodeMask.TARGET
    nodes = grid.nodes()
    flat = np.arange(grid.size).reshape(grid.shape)

    if config.sweep_mode is SweepMode.JACOBI:
        index = np.flatnonzero(update)
        points = nodes.reshape(-1, grid.dim)[index]
        lookup = _grid_lookup(grid, field.values, field.transformed)
        chunks = [c for c in np.array_split(np.arange(len(index)), config.threads) if len(c)]

        def work(chunk):
            return _apply_operator(spec, lookup, points[chunk], time_step, config.order, weights)

        if config.threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                parts = list(pool.map(work, chunks))
        else:
            parts = [work(c) for c in chunks]
        new = np.concatenate(parts) if parts else np.empty(0)
        _check_nan(grid, new, index)
        values.reshape(-1)[index] = new
    else:
        # slabs along the first axis, each reading the latest values
        n0 = grid.counts[0]
        slab_values = values.reshape(n0, -1)
        slab_update = update.reshape(n0, -1)
        slab_nodes = nodes.reshape(n0, -1, grid.dim)
        slab_flat = flat.reshape(n0, -1)
        for i in (range(n0 - 1, -1, -1) if reverse else range(n0)):
            live = slab_update[i]
            if not np.any(live):
                continue
            lookup = _grid_lookup(grid, values, field.transformed)
            new = _apply_operator(spec, lookup, slab_nodes[i][live], time_step, config.order, weights)
            _check_nan(grid, new, slab_flat[i][live])
            slab_values[i, live] = new

    change = float(np.max(np.abs(values - field.values))) if values.size else 0.0
    return values, change


def sl_update(field, spec, config):
    """
    One application of the semi-Lagrangian operator (a Jacobi pass, or a forward Gauss-Seidel pass)
    :return: a new ValueField; info["sup_change"] holds the sup-norm change
    """
    values, change = _sweep(field, spec, config)
    return field.with_values(values, status=field.status, info={"sup_change": change})


def solve(spec, grid, config=None, initial=None):
    """
    Iterate the semi-Lagrangian operator from initial_field (or the given initial field) until the sup-norm change
    drops below config.tolerance or config.max_iterations sweeps are done.  Gauss-Seidel passes alternate between
    increasing and decreasing slab order.
    :return: ValueField with status CONVERGED or NOT_CONVERGED; info holds iterations, history, time_step and config
    """
    config = SolverConfig() if config is None else config
    field = initial_field(spec, grid) if initial is None else initial
    history = []
    status = SolveStatus.NOT_CONVERGED
    logging.log(logging.INFO, "solving '{}' on {} ({} nodes), {} {} sweeps, h_t={:g}".format(
        spec.name, grid, grid.size, config.order.name, config.sweep_mode.name, config.step_for(grid)),
        extra={"source": "solver"})

    start = time.perf_counter()
    for iteration in range(1, config.max_iterations + 1):
        tick = time.perf_counter()
        values, change = _sweep(field, spec, config, reverse=(iteration % 2 == 0))
        field = field.with_values(values)
        wall_ms = 1000.0 * (time.perf_counter() - tick)
        history.append({"iteration": iteration, "sup_change": change, "wall_ms": wall_ms})
        logging.log(LOG_SWEEP, "sweep {:5d} change {:.3e} ({:.1f} ms)".format(iteration, change, wall_ms),
                    extra={"source": "solver"})
        if change < config.tolerance:
            status = SolveStatus.CONVERGED
            break

    info = {"iterations": len(history), "history": history, "time_step": config.step_for(grid),
            "config": config.to_dict(), "game": spec.name, "wall_s": time.perf_counter() - start}
    level = logging.INFO if status is SolveStatus.CONVERGED else logging.WARNING
    logging.log(level, "'{}' {} after {} sweeps (last change {:.3e})".format(
        spec.name, status.name, len(history), history[-1]["sup_change"]), extra={"source": "solver"})
    return field.with_values(field.values, status=status, info=info)


ResidualReport = namedtuple("ResidualReport", ["values", "sup", "mean", "p50", "p95", "count"])


def pde_residual(field, spec, smooth_only=True):
    """
    F(x, u(x), Du(x)) at the INTERIOR nodes of a grid field with finite values, Du from central differences.  With
    smooth_only, nodes failing the stencil smoothness test (kinks) are skipped.
    :return: ResidualReport; values holds F per node (nan where skipped), the statistics are over |F|
    """
    grid = field.grid
    u = field.node_values(natural=True)
    grads = central_gradients(field)
    keep = (field.mask == NodeMask.INTERIOR) & np.isfinite(u) & np.all(np.isfinite(grads), axis=-1)
    if smooth_only and np.any(keep):
        fit = stencil_fit(field, grid.nodes()[keep], grid.h_max)
        smooth = np.zeros(grid.shape, dtype=bool)
        smooth[keep] = fit.smooth
        keep &= smooth

    residual = np.full(grid.shape, np.nan)
    if np.any(keep):
        residual[keep] = hamiltonian_upper(spec, grid.nodes()[keep], u[keep], grads[keep])
    magnitude = np.abs(residual[keep])
    if len(magnitude) == 0:
        return ResidualReport(residual, np.nan, np.nan, np.nan, np.nan, 0)
    return ResidualReport(residual, float(magnitude.max()), float(magnitude.mean()),
                          float(np.percentile(magnitude, 50)), float(np.percentile(magnitude, 95)), len(magnitude))
