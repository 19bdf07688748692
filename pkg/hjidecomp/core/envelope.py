"""
Lower-envelope decomposition u_bar = min_j u_j of reduced value functions, its crossing set and active sets, and
numerical checks of the two hypotheses under which the envelope is again a viscosity solution:

    (C)  F(x, u_bar, sum_j l_j p_j) <= sum_j l_j F(x, u_j, p_j)
    (E)  F(x, u_bar, sum_j l_j p_j) <= 0

for every crossing point x, every convex combination l and all p_j in the limiting superdifferentials of the active
u_j.  (C) implies (E), and (E) is what the subsolution property needs; the supersolution property always holds.
"""

import itertools
import logging
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from hjidecomp.core.grid import ReducedField, estimate_limiting_superdiff, kruzkov, stencil_fit
from hjidecomp.core.model import hamiltonian_upper
from hjidecomp.utils import write_csv


class IncompatibleFieldsError(ValueError):
    pass


class Verdict(Enum):
    HOLDS = 0
    VIOLATED = 1
    INCONCLUSIVE = 2


class EnvelopeField:
    """
    The pointwise minimum of a family of fields that embed into a common state space.  Points within tol_eq of the
    minimum count as active; the default tol_eq is EQUALITY_FACTOR * SCHEME_CONSTANT * h, h the coarsest component
    spacing.
    """
    EQUALITY_FACTOR = 2.0
    SCHEME_CONSTANT = 2.0

    def __init__(self, components, tol_eq=None, labels=None):
        components = list(components)
        if not components:
            raise IncompatibleFieldsError("An envelope needs at least one component")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise IncompatibleFieldsError("Components embed into different dimensions {}".format(sorted(dims)))
        if len({c.transformed for c in components}) != 1:
            raise IncompatibleFieldsError("Components mix Kruzkov-scale and natural-scale values")
        self.components = components
        self.labels = list(labels) if labels is not None else [getattr(c, "label", "") or str(j + 1)
                                                               for j, c in enumerate(components)]
        h = max(float(np.max(c.spacing)) for c in components)
        self.tol_eq = self.EQUALITY_FACTOR * self.SCHEME_CONSTANT * h if tol_eq is None else tol_eq
        if self.tol_eq <= 0:
            raise ValueError("Envelope equality tolerance must be positive")
        self._active_maps = {}

    @property
    def dim(self):
        return self.components[0].dim

    @property
    def spacing(self):
        return np.max([np.broadcast_to(c.spacing, (self.dim,)) for c in self.components], axis=0)

    @property
    def transformed(self):
        return self.components[0].transformed

    def component_values(self, points, natural=True):
        return np.stack([c.evaluate(points, natural=natural) for c in self.components])

    def in_target(self, points):
        return np.any(np.stack([c.in_target(points) for c in self.components]), axis=0)

    def evaluate(self, points, natural=True):
        points = np.asarray(points, dtype=float)
        values = self.component_values(points, natural=natural).min(axis=0)
        return np.where(self.in_target(points), 0.0, values)

    def active_mask(self, points):
        """
        Boolean (m, ...) array of the components within tol_eq of the minimum (natural scale)
        """
        values = self.component_values(points, natural=True)
        least = values.min(axis=0)
        with np.errstate(invalid="ignore"):
            close = values - least <= self.tol_eq
        return np.where(np.isinf(least), np.isinf(values), close)

    def argmin(self, points):
        return np.argmin(self.component_values(points, natural=False), axis=0)

    def active_map(self, query):
        """
        Active masks over the nodes of a query grid, cached per grid layout
        """
        key = (tuple(map(tuple, query.bounds)), query.counts)
        if key not in self._active_maps:
            self._active_maps[key] = self.active_mask(query.node_list())
        return self._active_maps[key]


def envelope_value(env, x):
    """
    min_j u_j(x), and 0 inside any target
    """
    value = env.evaluate(np.asarray(x, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def active_set(env, x):
    """
    Indices of the components within tol_eq of the minimum at x
    """
    return tuple(int(j) for j in np.flatnonzero(env.active_mask(np.asarray(x, dtype=float))))


def sigma_set(env, query):
    """
    Query nodes outside the targets and outside the evasion region with at least two active components
    :return: array of shape (k, dim)
    """
    nodes = query.node_list()
    crossing = env.active_map(query).sum(axis=0) >= 2
    crossing &= ~env.in_target(nodes)
    crossing &= np.isfinite(env.evaluate(nodes))
    logging.log(logging.DEBUG, "{} crossing nodes of {}".format(int(crossing.sum()), len(nodes)),
                extra={"source": "envelope"})
    return nodes[crossing]


def simplex_lattice(k, subdivisions):
    """
    All convex weights on k components whose entries are multiples of 1/subdivisions
    """
    rows = []
    for bars in itertools.combinations(range(subdivisions + k - 1), k - 1):
        edges = (-1,) + bars + (subdivisions + k - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(k)])
    return np.array(rows, dtype=float) / subdivisions


def convex_weights(k, subdivisions, rng, max_lattice=4, draws=200):
    if k <= max_lattice:
        return simplex_lattice(k, subdivisions)
    return rng.dirichlet(np.ones(k), size=draws)


@dataclass
class ConditionReport:
    point: np.ndarray
    active: list
    vectors: list = field(default_factory=list)
    weights_tried: int = 0
    samples: int = 0
    residual_C: float = 0.0
    residual_E: float = 0.0
    threshold: float = 0.0
    verdict_C: Verdict = Verdict.HOLDS
    verdict_E: Verdict = Verdict.HOLDS
    verdict: Verdict = Verdict.HOLDS
    diagnostic: str = ""

    def to_dict(self):
        return {"point": self.point, "active": self.active, "residual_C": self.residual_C,
                "residual_E": self.residual_E, "verdict": self.verdict, "samples": self.samples,
                "verdict_C": self.verdict_C, "verdict_E": self.verdict_E, "threshold": self.threshold,
                "weights_tried": self.weights_tried, "vectors": self.vectors, "diagnostic": self.diagnostic}


def _component_superdiff(component, x, radius, samples, seed):
    """
    Candidate supergradients of one component at x, estimated in the component's own coordinates and embedded
    """
    if isinstance(component, ReducedField):
        sample = estimate_limiting_superdiff(component.source, component.project(x), radius, samples, seed)
        if len(sample.vectors) == 0:
            return np.empty((0, component.dim)), sample.diagnostic
        return component.embed_gradient(sample.vectors), sample.diagnostic
    sample = estimate_limiting_superdiff(component, x, radius, samples, seed)
    return sample.vectors, sample.diagnostic


def check_conditions(env, spec, x, weights_per_axis=10, gradients=None, radius=None, samples=64, seed=0,
                     tol_numeric=1e-6, max_lattice=4, draws=200):
    """
    Worst-case residuals of (C) and (E) at x over the candidate supergradients of the active components and a set of
    convex weights (simplex lattice with weights_per_axis subdivisions, or seeded Dirichlet draws above max_lattice
    active components).  A residual is VIOLATED above max(10 tol_numeric, 0.05 (1 + max_j |F(x, u_j, p_j)|)); the
    overall verdict is VIOLATED only when neither hypothesis holds.
    :param gradients: optional {component index: list of full-dimension vectors} replacing the estimates
    """
    x = np.asarray(x, dtype=float)
    active = list(active_set(env, x))
    report = ConditionReport(point=x, active=[env.labels[j] for j in active])

    if bool(env.in_target(x)):
        report.diagnostic = "point inside a target"
        return report
    if len(active) < 2:
        return report

    values = env.component_values(x)
    u_bar = float(values.min())
    if not np.isfinite(u_bar):
        report.verdict = report.verdict_C = report.verdict_E = Verdict.INCONCLUSIVE
        report.diagnostic = "point in the evasion region"
        return report

    candidates = []
    for j in active:
        if gradients is not None and j in gradients:
            vectors = np.atleast_2d(np.asarray(gradients[j], dtype=float))
        else:
            vectors, diagnostic = _component_superdiff(env.components[j], x, radius, samples, seed)
            if len(vectors) == 0:
                report.verdict = report.verdict_C = report.verdict_E = Verdict.INCONCLUSIVE
                report.diagnostic = "component {}: {}".format(env.labels[j], diagnostic)
                logging.log(logging.DEBUG, report.diagnostic, extra={"source": "envelope"})
                return report
        candidates.append(vectors)
    report.vectors = [c.tolist() for c in candidates]

    rng = np.random.default_rng(seed)
    weights = convex_weights(len(active), weights_per_axis, rng, max_lattice, draws)
    residual_c = -np.inf
    residual_e = -np.inf
    f_scale = 0.0
    combos = 0
    for chosen in itertools.product(*[range(len(c)) for c in candidates]):
        p = np.array([candidates[i][k] for i, k in enumerate(chosen)])
        f_j = np.array([hamiltonian_upper(spec, x, values[j], p[i]) for i, j in enumerate(active)])
        f_scale = max(f_scale, float(np.max(np.abs(f_j))))
        mixed = weights @ p
        f_mixed = hamiltonian_upper(spec, np.broadcast_to(x, mixed.shape), u_bar, mixed)
        residual_c = max(residual_c, float(np.max(f_mixed - weights @ f_j)))
        residual_e = max(residual_e, float(np.max(f_mixed)))
        combos += len(weights)

    threshold = max(10.0 * tol_numeric, 0.05 * (1.0 + f_scale))
    report.residual_C = residual_c
    report.residual_E = residual_e
    report.threshold = threshold
    report.weights_tried = len(weights)
    report.samples = combos
    report.verdict_C = Verdict.VIOLATED if residual_c > threshold else Verdict.HOLDS
    report.verdict_E = Verdict.VIOLATED if residual_e > threshold else Verdict.HOLDS
    both = report.verdict_C is Verdict.VIOLATED and report.verdict_E is Verdict.VIOLATED
    report.verdict = Verdict.VIOLATED if both else Verdict.HOLDS
    logging.log(logging.DEBUG, "conditions at {}: active {} C={:.4g} E={:.4g} -> {}".format(
        x.tolist(), report.active, residual_c, residual_e, report.verdict.name), extra={"source": "envelope"})
    return report


class NegatedField:
    """
    -u, for reading subdifferentials as negated superdifferentials
    """
    def __init__(self, source):
        self.source = source

    @property
    def dim(self):
        return self.source.dim

    @property
    def spacing(self):
        return self.source.spacing

    transformed = False

    def evaluate(self, points, natural=True):
        return -self.source.evaluate(points, natural=True)

    def in_target(self, points):
        return self.source.in_target(points)


ViscosityRow = namedtuple("ViscosityRow", ["point", "kind", "sub_residual", "super_residual", "sub_ok", "super_ok"])


@dataclass
class ViscosityReport:
    rows: list
    tolerance: float

    @property
    def sub_violations(self):
        return sum(1 for r in self.rows if not r.sub_ok)

    @property
    def super_violations(self):
        return sum(1 for r in self.rows if not r.super_ok)

    def max_residuals(self, kind=None):
        rows = [r for r in self.rows if kind is None or r.kind == kind]
        sub = max((r.sub_residual for r in rows if np.isfinite(r.sub_residual)), default=0.0)
        sup = max((r.super_residual for r in rows if np.isfinite(r.super_residual)), default=0.0)
        return sub, sup

    def summary(self):
        counts = {}
        for r in self.rows:
            counts[r.kind] = counts.get(r.kind, 0) + 1
        sub, sup = self.max_residuals()
        return {"points": len(self.rows), "kinds": counts, "sub_violations": self.sub_violations,
                "super_violations": self.super_violations, "max_sub_residual": sub, "max_super_residual": sup,
                "tolerance": self.tolerance}

    def dump_csv(self, filename):
        dim = len(self.rows[0].point) if self.rows else 0
        header = ["x{}".format(k + 1) for k in range(dim)] + ["kind", "sub_residual", "super_residual", "sub_ok",
                                                              "super_ok"]
        rows = ([*map(float, r.point), r.kind, float(r.sub_residual), float(r.super_residual), int(r.sub_ok),
                 int(r.super_ok)] for r in self.rows)
        return write_csv(filename, header, rows)


def _hull_samples(vectors, subdivisions, rng):
    """
    Points of the convex hull of a few vectors, on the simplex lattice of their weights
    """
    return convex_weights(len(vectors), subdivisions, rng) @ vectors


def _smooth_row(spec, x, u, gradient, tol):
    f = float(hamiltonian_upper(spec, x, u, gradient))
    return ViscosityRow(x, "SMOOTH", f, -f, f <= tol, -f <= tol)


def _kink_row(target, spec, x, u, curvature, tol, radius, samples, seed, subdivisions):
    """
    At a concave kink (negative mean second difference) D- is empty and D+ is the hull of the branch gradients: only the
    subsolution inequality is tested.  At a convex kink D+ is empty and D- is read from the negated field.
    """
    rng = np.random.default_rng(seed)
    concave = curvature < 0
    source = target if concave else NegatedField(target)
    sample = estimate_limiting_superdiff(source, x, radius, samples, seed)
    if len(sample.vectors) == 0:
        return ViscosityRow(x, "UNRESOLVED", np.nan, np.nan, True, True)
    hull = _hull_samples(sample.vectors, subdivisions, rng)
    if not concave:
        hull = -hull
    f = hamiltonian_upper(spec, np.broadcast_to(x, hull.shape), u, hull)
    if concave:
        sub = float(np.max(f))
        return ViscosityRow(x, "CONCAVE", sub, -np.inf, sub <= tol, True)
    sup = float(np.max(-f))
    return ViscosityRow(x, "CONVEX", -np.inf, sup, True, sup <= tol)


def verify_viscosity(target, spec, query, tol=0.1, radius=None, samples=32, seed=0, subdivisions=10, threads=1,
                     points=None):
    """
    Sub- and supersolution checks of a field or envelope at the nodes of a query grid (or at the given points).
    Smooth points need |F(x, u, Du)| <= tol.  At kinks the kink type comes from the sign of the mean second difference
    over the stencil, and the matching inequality is tested on sampled hull vectors: F <= tol on D+ (subsolution) and
    F >= -tol on D- (supersolution).  Points in the targets or in the evasion region are skipped.
    :return: ViscosityReport, one row per checked point
    """
    pts = query.node_list() if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    keep = ~target.in_target(pts)
    u = target.evaluate(pts)
    keep &= np.isfinite(u)
    pts, u = pts[keep], u[keep]
    if len(pts) == 0:
        return ViscosityReport([], tol)

    step = float(np.max(target.spacing))
    fit = stencil_fit(target, pts, step)
    offsets = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=target.dim))) * step
    stencil = pts[:, None, :] + offsets[None, :, :]
    curvature = np.mean(target.evaluate(stencil), axis=1) - u
    # the equation only holds off the targets; stencils reaching into one are not judged
    near_target = np.any(target.in_target(stencil), axis=1)

    def check(i):
        if near_target[i]:
            return ViscosityRow(pts[i], "NEAR_TARGET", np.nan, np.nan, True, True)
        if fit.smooth[i]:
            return _smooth_row(spec, pts[i], u[i], fit.gradient[i], tol)
        return _kink_row(target, spec, pts[i], u[i], curvature[i], tol, radius, samples, seed + i, subdivisions)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(check, range(len(pts))))
    else:
        rows = [check(i) for i in range(len(pts))]
    report = ViscosityReport(rows, tol)
    logging.log(logging.INFO, "viscosity check: {}".format(report.summary()), extra={"source": "envelope"})
    return report


FieldComparison = namedtuple("FieldComparison", ["linf", "l1", "linf_natural", "argmin_agreement", "count",
                                                 "worst_point"])


def _kruzkov_scale(target, points):
    if target.transformed:
        return target.evaluate(points, natural=False)
    return kruzkov(np.maximum(target.evaluate(points, natural=True), 0.0))


def compare_fields(a, b, query, keep_fn=None):
    """
    Error statistics between two fields or envelopes over the query nodes outside both targets (and inside keep_fn
    when given).  L-inf and L1 are taken on the Kruzkov scale so that evasion-region nodes compare as 1; the
    natural-scale L-inf is over nodes where both values are finite.  argmin agreement is reported when both are
    envelopes with the same number of components.
    """
    nodes = query.node_list()
    keep = ~(a.in_target(nodes) | b.in_target(nodes))
    if keep_fn is not None:
        keep &= np.asarray(keep_fn(nodes), dtype=bool)
    nodes = nodes[keep]
    if len(nodes) == 0:
        return FieldComparison(0.0, 0.0, 0.0, None, 0, None)

    gap = np.abs(_kruzkov_scale(a, nodes) - _kruzkov_scale(b, nodes))
    ua, ub = a.evaluate(nodes), b.evaluate(nodes)
    finite = np.isfinite(ua) & np.isfinite(ub)
    linf_natural = float(np.max(np.abs(ua - ub)[finite])) if np.any(finite) else 0.0

    agreement = None
    if isinstance(a, EnvelopeField) and isinstance(b, EnvelopeField) and len(a.components) == len(b.components):
        agreement = float(np.mean(a.argmin(nodes) == b.argmin(nodes)))
    worst = int(np.argmax(gap))
    return FieldComparison(float(gap.max()), float(gap.mean()), linf_natural, agreement, len(nodes), nodes[worst])
