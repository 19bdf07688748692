"""
Rectangular lattices and the fields that live on them.

A field is anything with the following interface, so that the solver, the condition checkers and the feedback synthesis
can work on numerical solutions and closed forms alike:

    dim                        full state dimension of the points it is evaluated at
    spacing                    per-axis step used for finite differences
    transformed                True when the stored scale is the Kruzkov scale v = 1 - exp(-u)
    evaluate(points, natural)  values at points (..., dim); natural=False gives the stored scale
    in_target(points)          target membership of points (..., dim)

ValueField (values on a Grid), AnalyticField (closed form) and ReducedField (a field on a coordinate subspace embedded
through a linear map) all provide it.

References:
    [1] Multilinear interpolation: scipy.interpolate.RegularGridInterpolator
    [2] Hierarchical clustering: scipy.cluster.hierarchy (centroid linkage)
"""

import csv
import itertools
import logging
from collections import namedtuple
from enum import IntEnum

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.interpolate import RegularGridInterpolator

from hjidecomp.core.model import DimensionError
from hjidecomp.utils import LOG_SAMPLE, write_csv


class NodeMask(IntEnum):
    INTERIOR = 0
    TARGET = 1
    BOUNDARY = 2


def kruzkov(u):
    """
    v = 1 - exp(-u); maps [0, inf] onto [0, 1]
    """
    v = -np.expm1(-np.asarray(u, dtype=float))
    return float(v) if np.ndim(v) == 0 else v


def kruzkov_inverse(v, threshold=0.0):
    """
    u = -log(1 - v), with v >= 1 - threshold reported as inf (the evasion region)
    """
    v = np.asarray(v, dtype=float)
    capture = v < 1.0 - threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(capture, -np.log1p(-np.where(capture, v, 0.0)), np.inf)
    return float(u) if np.ndim(u) == 0 else u


class Grid:
    """
    A rectangular lattice.  Node coordinates along each axis come from np.linspace(lower, upper, count) and are
    therefore reproducible bit-exactly from (bounds, counts); nodes are ordered lexicographically (first axis slowest).
    """
    def __init__(self, lower, upper, counts):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        self.counts = tuple(int(c) for c in np.atleast_1d(counts))
        if not (len(self.lower) == len(self.upper) == len(self.counts)):
            raise DimensionError("Grid bounds and counts disagree in dimension")
        if np.any(self.upper <= self.lower):
            raise ValueError("Inverted grid bounds {} : {}".format(self.lower.tolist(), self.upper.tolist()))
        if min(self.counts) < 2:
            raise ValueError("A grid needs at least two nodes per axis")
        self.axes = tuple(np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.counts))
        self._nodes = None

    @property
    def dim(self):
        return len(self.counts)

    @property
    def shape(self):
        return self.counts

    @property
    def size(self):
        return int(np.prod(self.counts))

    @property
    def spacing(self):
        return (self.upper - self.lower) / (np.array(self.counts) - 1)

    @property
    def h_max(self):
        return float(self.spacing.max())

    @property
    def bounds(self):
        return [(float(lo), float(hi)) for lo, hi in zip(self.lower, self.upper)]

    def nodes(self):
        """
        Node coordinates as an array of shape (*shape, dim)
        """
        if self._nodes is None:
            self._nodes = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)
            self._nodes.setflags(write=False)
        return self._nodes

    def node_list(self):
        return self.nodes().reshape(-1, self.dim)

    def node(self, index):
        """
        Coordinates of a node given by its multi-index (or flat index)
        """
        if np.ndim(index) == 0:
            index = np.unravel_index(int(index), self.shape)
        return np.array([self.axes[k][i] for k, i in enumerate(index)])

    def contains(self, points):
        points = np.asarray(points, dtype=float)
        return np.all((points >= self.lower) & (points <= self.upper), axis=-1)

    def clamp(self, points):
        """
        Clamp points into the box; returns the clamped points and the per-point out-of-domain flag
        """
        points = np.asarray(points, dtype=float)
        clamped = np.clip(points, self.lower, self.upper)
        return clamped, np.any(clamped != points, axis=-1)

    def face_mask(self):
        """
        Boolean array, True at nodes lying on a face of the box
        """
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            index = [slice(None)] * self.dim
            index[k] = 0
            mask[tuple(index)] = True
            index[k] = -1
            mask[tuple(index)] = True
        return mask

    def to_dict(self):
        return {"bounds": self.bounds, "resolution": list(self.counts)}

    def __repr__(self):
        return "Grid({}, {})".format(self.bounds, self.counts)


def build_grid(bounds, resolution, dim=None):
    """
    Build a Grid from per-axis (lo, hi) intervals and per-axis node counts.  A single interval or a single count is
    repeated over all axes; dim fixes the number of axes when both are given once.
    :param bounds: list of (lo, hi) pairs, or one (lo, hi) pair
    :param resolution: list of node counts, or one count
    :param dim: number of axes when it cannot be read from bounds/resolution
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    resolution = np.atleast_1d(np.asarray(resolution, dtype=int))
    n = dim if dim is not None else max(len(bounds), len(resolution))
    if len(bounds) == 1:
        bounds = np.repeat(bounds, n, axis=0)
    if len(resolution) == 1:
        resolution = np.repeat(resolution, n)
    if len(bounds) != n or len(resolution) != n:
        raise DimensionError("Got {} intervals and {} counts for a {}-dimensional grid".format(
            len(bounds), len(resolution), n))
    return Grid(bounds[:, 0], bounds[:, 1], resolution)


class ValueField:
    """
    Values of one viscosity-solution approximation on a Grid, with a per-node mask.  When transformed is set the stored
    values are on the Kruzkov scale and lie in [0, 1]; values at TARGET nodes are exactly 0 in either scale.
    """
    EVASION_THRESHOLD = 1e-6     # stored v > 1 - threshold is reported as u = inf
    OUTSIDE_VALUE = 1.0          # Kruzkov-scale value given to lookups that leave the box

    def __init__(self, grid, values, mask=None, transformed=True, target_fn=None, status=None, info=None):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            values = values.reshape(grid.shape)
        if mask is None:
            mask = np.where(grid.face_mask(), NodeMask.BOUNDARY, NodeMask.INTERIOR).astype(np.int8)
        mask = np.asarray(mask, dtype=np.int8).reshape(grid.shape)
        if np.any(values[mask == NodeMask.TARGET] != 0.0):
            raise ValueError("Non-zero value at a target node")
        self.grid = grid
        self.values = values
        self.mask = mask
        self.transformed = transformed
        self.target_fn = target_fn
        self.status = status
        self.info = dict(info or {})

    @property
    def dim(self):
        return self.grid.dim

    @property
    def spacing(self):
        return self.grid.spacing

    def interpolator(self):
        return RegularGridInterpolator(self.grid.axes, self.values, method="linear", bounds_error=False,
                                       fill_value=None)

    def interpolate(self, points):
        """
        Stored-scale multilinear interpolation.  Points outside the box are clamped to it.
        :return: (values, outside) where outside flags the clamped points
        """
        points = np.asarray(points, dtype=float)
        if points.shape[-1:] != (self.dim,):
            raise DimensionError("Points of shape {} for a {}-dimensional field".format(points.shape, self.dim))
        clamped, outside = self.grid.clamp(points)
        flat = clamped.reshape(-1, self.dim)
        values = self.interpolator()(flat).reshape(points.shape[:-1])
        return values, outside

    def evaluate(self, points, natural=True):
        """
        Interpolated values, with points outside the box reading OUTSIDE_VALUE on the Kruzkov scale as the solver's
        feet do
        """
        values, outside = self.interpolate(points)
        if self.transformed:
            values = np.where(outside, self.OUTSIDE_VALUE, values)
        if natural and self.transformed:
            return kruzkov_inverse(values, self.EVASION_THRESHOLD)
        return values

    def in_target(self, points):
        points = np.asarray(points, dtype=float)
        if self.target_fn is None:
            return np.zeros(points.shape[:-1], dtype=bool)
        return np.asarray(self.target_fn(points), dtype=bool)

    def node_values(self, natural=True):
        if natural and self.transformed:
            return kruzkov_inverse(self.values, self.EVASION_THRESHOLD)
        return self.values

    def with_values(self, values, status=None, info=None):
        """
        A new field sharing grid, mask and targets with this one
        """
        return ValueField(self.grid, values, self.mask, transformed=self.transformed, target_fn=self.target_fn,
                          status=status, info=info if info is not None else self.info)

    def dump_csv(self, filename):
        """
        Write the grid dump: header x1..xn,value,mask; lexicographic node order; natural-scale values
        """
        header = ["x{}".format(k + 1) for k in range(self.dim)] + ["value", "mask"]
        nodes = self.grid.node_list()
        values = np.ravel(self.node_values(natural=True))
        masks = np.ravel(self.mask)
        rows = ([*map(float, x), float(v), NodeMask(m).name] for x, v, m in zip(nodes, values, masks))
        return write_csv(filename, header, rows)


class AnalyticField:
    """
    A closed-form field.  fn maps points (..., dim) to natural-scale values (inf allowed); gradient_fn, when given,
    supplies exact gradients for the condition checkers.
    """
    def __init__(self, fn, dim, spacing, target_fn=None, gradient_fn=None, transformed=True, label=""):
        self.fn = fn
        self._dim = dim
        self._spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (dim,))
        self.target_fn = target_fn
        self.gradient_fn = gradient_fn
        self.transformed = transformed
        self.label = label

    @property
    def dim(self):
        return self._dim

    @property
    def spacing(self):
        return self._spacing

    def evaluate(self, points, natural=True):
        points = np.asarray(points, dtype=float)
        if points.shape[-1:] != (self.dim,):
            raise DimensionError("Points of shape {} for a {}-dimensional field".format(points.shape, self.dim))
        values = np.asarray(self.fn(points), dtype=float)
        if not natural and self.transformed:
            return kruzkov(values)
        return values

    def in_target(self, points):
        points = np.asarray(points, dtype=float)
        if self.target_fn is None:
            return np.zeros(points.shape[:-1], dtype=bool)
        return np.asarray(self.target_fn(points), dtype=bool)

    def gradient(self, points):
        if self.gradient_fn is None:
            raise NotImplementedError("Field '{}' has no closed-form gradient".format(self.label))
        return np.asarray(self.gradient_fn(np.asarray(points, dtype=float)), dtype=float)

    def sample_on(self, grid, target_fn=None):
        """
        Tabulate this field on a grid (Kruzkov scale when transformed)
        """
        nodes = grid.nodes()
        inside = self.in_target(nodes) if target_fn is None else np.asarray(target_fn(nodes), dtype=bool)
        values = np.where(inside, 0.0, self.evaluate(nodes, natural=False))
        mask = np.where(inside, NodeMask.TARGET, np.where(grid.face_mask(), NodeMask.BOUNDARY, NodeMask.INTERIOR))
        return ValueField(grid, values, mask, transformed=self.transformed,
                          target_fn=target_fn if target_fn is not None else self.target_fn)


class ReducedField:
    """
    A field on a k-dimensional coordinate subspace, embedded into the full n-dimensional state through a linear
    reduction map y = M x.  projection is either a list of k distinct coordinate indices (M is then a selection matrix)
    or the k x n matrix M itself.  Gradients embed as M^T p, i.e. with zeros on unused coordinates for index lists.
    """
    def __init__(self, source, projection, state_dim, label=""):
        projection = np.asarray(projection)
        if projection.ndim == 1:
            indices = [int(i) for i in projection]
            if len(set(indices)) != len(indices) or min(indices) < 0 or max(indices) >= state_dim:
                raise DimensionError("Projection indices {} are not distinct coordinates of R^{}".format(
                    indices, state_dim))
            matrix = np.zeros((len(indices), state_dim))
            matrix[np.arange(len(indices)), indices] = 1.0
            self.indices = tuple(indices)
        else:
            matrix = projection.astype(float)
            self.indices = None
        if matrix.shape != (source.dim, state_dim):
            raise DimensionError("Projection of shape {} cannot embed a {}-dimensional field into R^{}".format(
                matrix.shape, source.dim, state_dim))
        self.source = source
        self.matrix = matrix
        self.label = label
        self._dim = state_dim

    @property
    def dim(self):
        return self._dim

    @property
    def spacing(self):
        return np.full(self._dim, float(np.max(self.source.spacing)))

    @property
    def transformed(self):
        return self.source.transformed

    def project(self, points):
        points = np.asarray(points, dtype=float)
        if points.shape[-1:] != (self.dim,):
            raise DimensionError("Points of shape {} for a field embedded in R^{}".format(points.shape, self.dim))
        return points @ self.matrix.T

    def embed_gradient(self, p):
        return np.asarray(p, dtype=float) @ self.matrix

    def evaluate(self, points, natural=True):
        return self.source.evaluate(self.project(points), natural=natural)

    def in_target(self, points):
        return self.source.in_target(self.project(points))

    def gradient(self, points):
        return self.embed_gradient(self.source.gradient(self.project(points)))


def interpolate(field, x, return_flag=False):
    """
    The semi-Lagrangian I[v] operator: multilinear interpolation of a ValueField's stored values at x (a point or a
    batch of points).  Points outside the box are clamped and flagged.
    """
    values, outside = field.interpolate(x)
    if np.any(outside):
        logging.log(logging.DEBUG, "{} interpolation point(s) clamped to the box".format(int(np.sum(outside))),
                    extra={"source": "grid"})
    if np.ndim(values) == 0:
        values, outside = float(values), bool(outside)
    return (values, outside) if return_flag else values


def central_gradients(field):
    """
    Natural-scale gradients at every node of a ValueField: central differences inside, one-sided at the box faces.
    Nodes whose stencil touches the evasion region get nan.
    :return: array of shape (*grid.shape, dim)
    """
    values = field.node_values(natural=True)
    with np.errstate(invalid="ignore"):
        parts = np.gradient(values, *field.grid.spacing, edge_order=1)
    if field.dim == 1:
        parts = [parts]
    grads = np.stack(parts, axis=-1)
    grads[~np.all(np.isfinite(grads), axis=-1)] = np.nan
    return grads


def central_gradient(field, node, return_flag=False):
    """
    Natural-scale gradient at one node (multi-index or flat index) by central differences, one-sided at box faces.
    The gradient at a TARGET node is computed but flagged.
    """
    grid = field.grid
    if np.ndim(node) == 0:
        node = np.unravel_index(int(node), grid.shape)
    node = tuple(int(i) for i in node)
    values = field.node_values(natural=True)
    grad = np.empty(grid.dim)
    for k in range(grid.dim):
        hi = list(node)
        lo = list(node)
        if node[k] + 1 < grid.counts[k]:
            hi[k] += 1
        if node[k] > 0:
            lo[k] -= 1
        with np.errstate(invalid="ignore"):
            grad[k] = (values[tuple(hi)] - values[tuple(lo)]) / ((hi[k] - lo[k]) * grid.spacing[k])
    flagged = field.mask[node] == NodeMask.TARGET
    if flagged:
        logging.log(logging.DEBUG, "gradient requested at target node {}".format(node), extra={"source": "grid"})
    return (grad, flagged) if return_flag else grad


StencilFit = namedtuple("StencilFit", ["gradient", "residual", "lipschitz", "smooth"])

SuperdiffSample = namedtuple("SuperdiffSample",
                             ["point", "vectors", "radius", "step", "samples", "smooth_count", "diagnostic"])


class SmoothnessTest:
    """
    Least-squares affine fit over the 3^n stencil {x + step*e : e in {-1,0,1}^n}.  A point is smooth when the RMS fit
    residual is at most RESIDUAL_FACTOR * step * Lip, Lip being the largest |v(x+step*e) - v(x)| / |step*e| over the
    stencil.  Stencils with non-finite values are never smooth.
    """
    RESIDUAL_FACTOR = 0.1
    CHUNK = 4096   # points per batch of stencil evaluations

    def __init__(self, dim, step):
        self.dim = dim
        self.step = float(step)
        offsets = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=dim))) * self.step
        self.offsets = offsets
        self.centre = (3 ** dim) // 2
        self.design = np.hstack([np.ones((len(offsets), 1)), offsets])
        self.pinv = np.linalg.pinv(self.design)
        self.lengths = np.linalg.norm(offsets, axis=1)
        self.lengths[self.centre] = np.inf

    def fit(self, field, points):
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if len(points) > self.CHUNK:
            parts = [self._fit(field, points[i:i + self.CHUNK]) for i in range(0, len(points), self.CHUNK)]
            return StencilFit(*[np.concatenate(column) for column in zip(*parts)])
        return self._fit(field, points)

    def _fit(self, field, points):
        stencil = points[:, None, :] + self.offsets[None, :, :]
        values = field.evaluate(stencil, natural=True)
        finite = np.all(np.isfinite(values), axis=1)
        values = np.where(np.isfinite(values), values, 0.0)
        coef = values @ self.pinv.T
        residual = np.sqrt(np.mean((values - coef @ self.design.T) ** 2, axis=1))
        lipschitz = np.max(np.abs(values - values[:, [self.centre]]) / self.lengths, axis=1)
        smooth = finite & (residual <= self.RESIDUAL_FACTOR * self.step * lipschitz)
        return StencilFit(coef[:, 1:], residual, lipschitz, smooth)


def stencil_fit(field, points, step=None):
    step = float(np.max(field.spacing)) if step is None else step
    return SmoothnessTest(field.dim, step).fit(field, points)


def cluster_vectors(vectors):
    """
    Group vectors by centroid linkage, merging those within 0.15 * (1 + max |p|); returns one representative per
    cluster (the componentwise median of its members), sorted lexicographically.
    """
    vectors = np.asarray(vectors, dtype=float)
    if len(vectors) == 0:
        return np.empty((0, vectors.shape[-1] if vectors.ndim == 2 else 0))
    if len(vectors) == 1:
        return vectors.copy()
    tolerance = 0.15 * (1.0 + np.max(np.linalg.norm(vectors, axis=1)))
    labels = fcluster(linkage(vectors, method="centroid"), t=tolerance, criterion="distance")
    reps = np.array([np.median(vectors[labels == label], axis=0) for label in np.unique(labels)])
    return reps[np.lexsort(reps.T[::-1])]


def sample_ball(rng, centre, radius, samples):
    """
    Uniform samples in the Euclidean ball of the given radius about centre
    """
    centre = np.asarray(centre, dtype=float)
    directions = rng.standard_normal((samples, len(centre)))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    scale = radius * rng.random(samples) ** (1.0 / len(centre))
    return centre + directions * scale[:, None]


def estimate_limiting_superdiff(field, x, radius=None, samples=64, seed=0, step=None):
    """
    Candidate elements of the limiting superdifferential at x: gradients of the field at seeded random points within
    radius of x where the field passes the stencil smoothness test, clustered by centroid linkage.  For a minimum of
    finitely many smooth branches the clusters approximate the gradients of the branches active at x.
    :param field: any field (ValueField, AnalyticField, ReducedField, EnvelopeField)
    :param radius: sampling radius, at least 2 * max(h); default 4 * max(h)
    :param step: stencil step; default max(h)
    :return: SuperdiffSample; vectors is empty (with a diagnostic) when no smooth point was found
    """
    x = np.asarray(x, dtype=float)
    h = float(np.max(field.spacing))
    step = h if step is None else step
    radius = 4.0 * h if radius is None else radius
    if radius < 2.0 * h - 1e-15:
        raise ValueError("Sampling radius {} below twice the grid spacing {}".format(radius, h))

    rng = np.random.default_rng(seed)
    points = sample_ball(rng, x, radius, samples)
    fit = stencil_fit(field, points, step)
    for point, smooth, residual in zip(points, fit.smooth, fit.residual):
        logging.log(LOG_SAMPLE, "sample {} smooth={} residual={:.3g}".format(point.tolist(), smooth, residual),
                    extra={"source": "grid"})

    gradients = fit.gradient[fit.smooth]
    diagnostic = ""
    if len(gradients) == 0:
        diagnostic = "no smooth points among {} samples within {:g} of {}".format(samples, radius, x.tolist())
        logging.log(logging.DEBUG, diagnostic, extra={"source": "grid"})
    vectors = cluster_vectors(gradients) if len(gradients) else np.empty((0, len(x)))
    return SuperdiffSample(point=x, vectors=vectors, radius=radius, step=step, samples=samples,
                           smooth_count=int(np.sum(fit.smooth)), diagnostic=diagnostic)


def load_value_field(filename, grid, transformed=True, target_fn=None):
    """
    Read a grid dump written by ValueField.dump_csv back onto its grid
    """
    with open(filename, "r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if len(header) != grid.dim + 2:
            raise DimensionError("Dump {} has {} coordinates for a {}-dimensional grid".format(
                filename, len(header) - 2, grid.dim))
        rows = list(reader)
    if len(rows) != grid.size:
        raise DimensionError("Dump {} has {} rows for a grid of {} nodes".format(filename, len(rows), grid.size))
    values = np.array([float(r[grid.dim]) for r in rows])
    mask = np.array([NodeMask[r[grid.dim + 1]] for r in rows], dtype=np.int8)
    if transformed:
        values = kruzkov(values)
    return ValueField(grid, values.reshape(grid.shape), mask.reshape(grid.shape), transformed=transformed,
                      target_fn=target_fn)
