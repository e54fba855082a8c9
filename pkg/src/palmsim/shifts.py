"""Measure-preserving shifts.

Two families are implemented:

* line shifts: move the origin along a coordinate direction until a fixed
  amount ``r`` of density mass has been passed;
* the background shifts built from the run-interleaving code: inside every
  box of ``n Z^d - Y0`` the point is pushed through the code, the
  distribution function of the (normalized) mass, a rotation by ``r`` and
  back.

Tile measures are piecewise uniform on rectangles.  The distribution
function orders rectangles by the code of their centers and, inside a
rectangle, by the code of the local position, so it is continuous and the
rotation preserves the measure exactly up to the local bit precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import AtomicInput, InsufficientMass, ZeroMassBox
from .measure import reroot, torus_wrap
from .phi import bits_to_uint, decode_bits, encode_bits, uint_to_bits, points_to_ints

ORDER_BITS = 24
_EDGE_TOL = 1e-12
_SNAP = 1e-6  # in units of the local grid


def local_bits(dim):
    """Bits per axis for in-rectangle positions; keeps codes within 52 bits."""
    return max(1, 52 // (2 * dim))


@dataclass(frozen=True, eq=False)
class TileMeasure:
    """Piecewise-uniform probability measure on ``[0, n)^d``.

    ``edges[k]`` partitions ``[0, n]`` along axis ``k``; ``masses`` has one
    entry per rectangle of the product partition.
    """

    n: float
    edges: tuple
    masses: np.ndarray

    @property
    def dim(self):
        return len(self.edges)

    @classmethod
    def regular(cls, masses, n=1.0):
        masses = np.asarray(masses, dtype=float)
        edges = tuple(np.linspace(0.0, n, m + 1) for m in masses.shape)
        return cls(n, edges, masses / masses.sum())

    def subdivide(self, k):
        if k <= 0:
            return self
        parts = 2 ** k
        edges = tuple(
            np.concatenate([np.linspace(e[i], e[i + 1], parts + 1)[:-1] for i in range(len(e) - 1)] + [e[-1:]])
            for e in self.edges
        )
        masses = self.masses
        for axis in range(self.dim):
            masses = np.repeat(masses, parts, axis=axis) / parts
        return TileMeasure(self.n, edges, masses)


@dataclass(frozen=True, eq=False)
class StepCdf:
    """Distribution function of the coded measure.

    ``values`` are the codes of rectangle centers in increasing order and
    ``cumulative`` the mass up to and including each rectangle.
    """

    tile: TileMeasure
    order: np.ndarray
    values: np.ndarray
    cumulative: np.ndarray
    rank: np.ndarray
    lo: np.ndarray
    size: np.ndarray
    bits: int

    @property
    def ordered_masses(self):
        return self.tile.masses.ravel()[self.order]

    @property
    def before(self):
        return np.concatenate([[0.0], self.cumulative[:-1]])


def _rectangles(tile):
    lows = np.meshgrid(*[e[:-1] for e in tile.edges], indexing="ij")
    sizes = np.meshgrid(*[np.diff(e) for e in tile.edges], indexing="ij")
    lo = np.stack([g.ravel() for g in lows], axis=1)
    size = np.stack([g.ravel() for g in sizes], axis=1)
    return lo, size


def build_cdf(tile, subdivide=0):
    """Order the rectangles of ``tile`` by the code of their centers."""
    tile = tile.subdivide(subdivide)
    masses = tile.masses.ravel()
    total = masses.sum()
    if not total > 0:
        raise ZeroMassBox("tile measure has no mass")
    tile = replace(tile, masses=tile.masses / total)
    lo, size = _rectangles(tile)
    centers = lo + 0.5 * size
    codes = encode_bits(uint_to_bits(points_to_ints(centers, tile.n, ORDER_BITS), ORDER_BITS))
    order = np.lexsort(codes.T[::-1])
    ordered = tile.masses.ravel()[order]
    cumulative = np.cumsum(ordered)
    cumulative[-1] = 1.0
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    weights = 0.5 ** np.arange(1, min(codes.shape[1], 60) + 1)
    values = codes[order, : len(weights)] @ weights
    return StepCdf(tile, order, values, cumulative, rank, lo, size, local_bits(tile.dim))


def _locate(cdf, s):
    idx = [
        np.clip(np.searchsorted(e, s[:, k], side="right") - 1, 0, len(e) - 2)
        for k, e in enumerate(cdf.tile.edges)
    ]
    flat = np.ravel_multi_index(tuple(idx), cdf.tile.masses.shape)
    return flat


def cdf_value(cdf, s):
    """``F`` at the code of each point of ``s`` (shape ``(N, d)``)."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    flat = _locate(cdf, s)
    loc = np.clip((s - cdf.lo[flat]) / cdf.size[flat], 0.0, np.nextafter(1.0, 0.0))
    b = cdf.bits
    # outputs of cdf_inverse sit on the b-bit grid but come back through
    # lo + size * loc with rounding; snap them before truncating
    ints = np.clip(np.floor(loc * 2.0 ** b + _SNAP), 0, 2.0 ** b - 1).astype(np.uint64)
    w_code = bits_to_uint(encode_bits(uint_to_bits(ints, b)))
    w = w_code.astype(float) / 2.0 ** (2 * cdf.tile.dim * b)
    r = cdf.rank[flat]
    return cdf.before[r] + cdf.ordered_masses[r] * w


def cdf_inverse(cdf, u):
    """Generalized inverse of ``F`` mapped back to points of ``[0, n)^d``.

    Rectangles of zero mass are never returned.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    m = cdf.ordered_masses
    r = np.searchsorted(cdf.cumulative, u, side="right")
    r = np.minimum(r, len(m) - 1)
    while np.any(m[r] <= 0):  # only reachable at u ~ 1 through rounding
        r = np.where(m[r] <= 0, r - 1, r)
    before = cdf.before[r]
    w = np.clip((u - before) / m[r], 0.0, 1.0)
    b, d = cdf.bits, cdf.tile.dim
    width = 2 * d * b
    # w only carries about 52 - log2(1/m) reliable bits; rounding beyond that
    # would turn trailing 1000.. into 0111.. and the decode would jump
    m_r = np.maximum(m[r], np.finfo(float).tiny)
    usable = np.clip(48 - np.ceil(np.log2(1.0 / m_r)).astype(int), 1, width)
    scale = 2.0 ** usable
    q = np.minimum(np.rint(w * scale), scale - 1)
    code = (q.astype(np.uint64) << (width - usable).astype(np.uint64))
    loc_bits, _ = decode_bits(uint_to_bits(code, width), d, b)
    loc = bits_to_uint(loc_bits).astype(float) / 2.0 ** b
    flat = cdf.order[r]
    return cdf.lo[flat] + cdf.size[flat] * loc


def psi_shift(cdf, r, s):
    """Rotate ``s`` by ``r`` in the mass order of the tile measure."""
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    u = np.mod(cdf_value(cdf, s) + r, 1.0)
    u = np.where(u >= 1.0, 0.0, u)
    out = cdf_inverse(cdf, u)
    return out[0] if single else out


def tile_quadrature(tile, subdivide):
    """Centers and masses of the ``2^subdivide``-per-axis refinement of every rectangle."""
    fine = tile.subdivide(subdivide)
    lo, size = _rectangles(fine)
    return lo + 0.5 * size, fine.masses.ravel()


def code_discrepancy(cdf, points, weights):
    """Oscillation of ``x -> sum(weights[F < x]) - x`` over ``[0, 1]``.

    Any interval of code space (wrapping or not) receives the mass of the
    weighted points to within this amount.
    """
    u = cdf_value(cdf, points)
    order = np.argsort(u, kind="stable")
    u, w = u[order], weights[order]
    after = np.cumsum(w)
    g = np.concatenate([[0.0], after - w - u, after - u])
    return float(g.max() - g.min())


def psi_pushforward_tv(cdf, r, subdivide):
    """Total variation on the rectangles between the pushforward of the tile measure under ``psi_r`` and itself.

    The pushforward is computed by quadrature at ``subdivide`` levels per
    rectangle.  Returns ``(tv, tol)`` where ``tol`` bounds the quadrature
    error of an exactly preserving map: every rectangle is one interval of
    code space, so its pushed mass is off by at most the code discrepancy,
    and ``tol`` is half of that summed over rectangles with mass.
    """
    tile = cdf.tile
    pts, wts = tile_quadrature(tile, subdivide)
    keep = wts > 0
    pts, wts = pts[keep], wts[keep]
    images = np.atleast_2d(psi_shift(cdf, r, pts))
    rect = _locate(cdf, images)
    pushed = np.bincount(rect, weights=wts, minlength=tile.masses.size)
    tv = 0.5 * float(np.abs(pushed - tile.masses.ravel()).sum())
    tol = 0.5 * np.count_nonzero(tile.masses) * code_discrepancy(cdf, pts, wts)
    return tv, tol


# -- background and the box-wise shift --------------------------------------

@dataclass(frozen=True)
class Background:
    """Boxes of ``n Z^d - Y0``; ``Y_s`` is the vector from the lowest corner of the box holding ``s`` to ``s``."""

    n: float
    Y0: np.ndarray

    @classmethod
    def draw(cls, n, dim, rng):
        return cls(float(n), rng.random(dim) * n)

    def at(self, s):
        return np.mod(np.asarray(s, dtype=float) + self.Y0, self.n)

    def shifted(self, t):
        return Background(self.n, self.at(t))


def _axis_partition(corner, n, grid, n_cells):
    """Split ``[corner, corner + n)`` at grid lines; return relative edges and cell indices."""
    first = int(np.floor(corner * grid)) + 1
    last = int(np.ceil((corner + n) * grid)) - 1
    lines = np.arange(first, last + 1) / grid - corner
    edges = np.concatenate([[0.0], lines[(lines > _EDGE_TOL) & (lines < n - _EDGE_TOL)], [n]])
    mids = corner + 0.5 * (edges[:-1] + edges[1:])
    cells = np.floor(mids * grid).astype(int) % n_cells
    return edges, cells


def tile_measure(measure, corner, n):
    """Restriction of a diffuse measure to ``corner + [0, n)^d`` in tile coordinates."""
    if measure.n_atoms:
        raise AtomicInput("tile measures need a diffuse measure")
    if measure.density is None:
        raise ZeroMassBox("measure has neither atoms nor density")
    n_cells = measure.window * measure.grid
    parts = [_axis_partition(c, n, measure.grid, n_cells) for c in np.asarray(corner, float)]
    edges = tuple(p[0] for p in parts)
    values = measure.density[np.ix_(*[p[1] for p in parts])]
    vol = values
    for k, e in enumerate(edges):
        shape = [1] * len(edges)
        shape[k] = len(e) - 1
        vol = vol * np.diff(e).reshape(shape)
    total = vol.sum()
    if not total > 0:
        raise ZeroMassBox("tile carries no mass")
    return TileMeasure(float(n), edges, vol / total)


def pi_r(background, measure, r, eps=None, subdivide=0):
    """Box-wise preserving shift evaluated at the origin.

    ``eps`` is the position of the origin inside grid cell 0 (default 0).
    Returns ``psi(Y0) - Y0`` for the tile containing the origin.
    """
    d = measure.dim
    eps = np.zeros(d) if eps is None else np.asarray(eps, float)
    corner = eps - background.Y0
    cdf = build_cdf(tile_measure(measure, corner, background.n), subdivide)
    return psi_shift(cdf, r, background.Y0) - background.Y0


def example1_shift_sample(sample, background, r, eps=None):
    """Shift ``(Y, X, xi)`` jointly by the box-wise shift; returns ``(sample, background, t)``."""
    d = sample.dim
    eps = np.zeros(d) if eps is None else np.asarray(eps, float)
    t = pi_r(background, sample.measure, r, eps)
    return reroot(sample, t, eps), background.shifted(t), t


class Example1Allocation:
    """Allocation ``s -> s + pi_r(theta_s (Y, xi))`` on the whole torus."""

    def __init__(self, measure, background, r, subdivide=0):
        if measure.window % background.n:
            raise ValueError("window must be a multiple of the box side")
        self.measure = measure
        self.background = background
        self.r = r
        self.subdivide = subdivide
        self._cdfs = {}

    def cdf_for(self, corner):
        key = tuple(np.round(corner, 12))
        if key not in self._cdfs:
            self._cdfs[key] = build_cdf(tile_measure(self.measure, corner, self.background.n), self.subdivide)
        return self._cdfs[key]

    def corners(self, points):
        return np.asarray(points, float) - self.background.at(points)

    def __call__(self, points):
        points = np.atleast_2d(np.asarray(points, float))
        local = self.background.at(points)
        corners = points - local
        out = np.empty_like(points)
        keys = np.round(np.mod(corners, self.measure.window), 9)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        for i, corner in enumerate(uniq):
            sel = inverse.ravel() == i
            moved = psi_shift(self.cdf_for(corner), self.r, local[sel])
            out[sel] = corner + np.atleast_2d(moved)
        return torus_wrap(out, self.measure.window)

    def tolerance(self, boxes, subdivide=0):
        """Per-box bound on |pushforward - measure| for :func:`check_preserving`.

        A quadrature cell is misplaced only when its rotated mass interval
        covers a point where consecutive rectangles (in code order) change
        membership of the box.  Each such point is covered at most once, so
        a tile adds ``(transitions + 1) * max cell mass`` (the extra one is
        the wrap from the last rectangle to the first).  Boxes are assumed
        to follow grid lines.
        """
        W, n = self.measure.window, self.background.n
        steps = int(round(W / n))
        _, wts = quadrature(self.measure, subdivide)
        m_max = wts.max() if len(wts) else 0.0
        counts = np.zeros(len(boxes))
        for offs in np.ndindex(*([steps] * self.measure.dim)):
            corner = np.mod(n * np.array(offs) - self.background.Y0, W)
            try:
                cdf = self.cdf_for(corner)
            except ZeroMassBox:
                continue
            keep = cdf.ordered_masses > 0
            centers = np.mod(corner + cdf.lo + 0.5 * cdf.size, W)[cdf.order][keep]
            for b, (lo, hi) in enumerate(boxes):
                member = _in_box(centers, lo, hi, W)
                counts[b] += np.count_nonzero(member[1:] != member[:-1]) + 1
        return counts * m_max


def _in_box(points, lo, hi, window):
    rel = np.mod(points - np.asarray(lo, float), window)
    return np.all(rel < (np.asarray(hi, float) - np.asarray(lo, float)), axis=1)


# -- line shifts --------------------------------------------------------------

def line_shift(measure, r, axis=0, sign=1, start=None, max_laps=1):
    """Distance ``s`` along ``sign * e_axis`` from ``start`` carrying density mass ``r``.

    The ray runs through the grid row containing ``start`` and may wrap
    around the torus at most ``max_laps`` times.
    """
    if measure.density is None:
        raise ValueError("line_shift needs a density grid")
    if r <= 0:
        return 0.0
    d, g = measure.dim, measure.grid
    n_cells = measure.window * g
    start = np.zeros(d) if start is None else np.asarray(start, float)
    cell_idx = np.floor(start * g).astype(int) % n_cells
    index = list(cell_idx)
    index[axis] = slice(None)
    row = np.asarray(measure.density[tuple(index)], dtype=float)
    x0 = float(start[axis])
    c0 = int(cell_idx[axis])
    if sign > 0:
        first = (c0 + 1) / g - x0
        seq = np.arange(c0, c0 + n_cells * max_laps + 1)
    else:
        first = x0 - c0 / g
        seq = np.arange(c0, c0 - n_cells * max_laps - 1, -1)
    lengths = np.full(len(seq), 1.0 / g)
    lengths[0] = first
    values = row[np.mod(seq, n_cells)]
    masses = values * lengths
    cum = np.cumsum(masses)
    j = int(np.searchsorted(cum, r, side="left"))
    if j >= len(cum) or cum[j] < r:
        raise InsufficientMass(f"ray carries {cum[-1]:.6g} < r = {r}")
    travelled = lengths[:j].sum()
    before = cum[j - 1] if j else 0.0
    return float(travelled + (r - before) / values[j])


def line_shift_sample(sample, r, axis=0, sign=1, eps=None, max_laps=1):
    """Shift the sample by the line shift evaluated at its origin."""
    d = sample.dim
    eps = np.zeros(d) if eps is None else np.asarray(eps, float)
    s = line_shift(sample.measure, r, axis, sign, eps, max_laps)
    t = np.zeros(d)
    t[axis] = sign * s
    return reroot(sample, t, eps), s


def line_allocation(measure, r, axis=0, sign=1, max_laps=1):
    """Allocation ``x -> x + s_r(theta_x Z) u`` for an array of points."""

    def tau(points):
        points = np.atleast_2d(np.asarray(points, float))
        out = points.copy()
        for i, p in enumerate(points):
            out[i, axis] += sign * line_shift(measure, r, axis, sign, p, max_laps)
        return torus_wrap(out, measure.window)

    return tau


# -- preservation check -------------------------------------------------------

@dataclass
class PreservationReport:
    boxes: list
    pushed: np.ndarray
    target: np.ndarray
    tol: np.ndarray

    @property
    def differences(self):
        return np.abs(self.pushed - self.target)

    @property
    def passed(self):
        return bool(np.all(self.differences <= self.tol))


def quadrature(measure, subdivide=0):
    """Atoms plus density cell centers (optionally subdivided) with their masses."""
    pts = [measure.atoms]
    wts = [measure.masses]
    if measure.density is not None:
        parts = 2 ** subdivide
        h = 1.0 / (measure.grid * parts)
        fine = np.argwhere(np.ones(tuple(s * parts for s in measure.grid_shape), dtype=bool))
        centers = (fine + 0.5) * h
        coarse = fine // parts
        vals = measure.density[tuple(coarse.T)] * h ** measure.dim
        keep = vals > 0
        pts.append(centers[keep])
        wts.append(vals[keep])
    return np.vstack(pts), np.concatenate(wts)


def check_preserving(allocation, measure, boxes, tol, subdivide=0):
    """Compare ``measure(allocation in B)`` with ``measure(B)`` for each box."""
    from .measure import mass

    pts, wts = quadrature(measure, subdivide)
    images = allocation(pts)
    pushed = np.array([wts[_in_box(images, lo, hi, measure.window)].sum() for lo, hi in boxes])
    target = np.array([mass(measure, lo, hi) for lo, hi in boxes])
    return PreservationReport(list(boxes), pushed, target, tol)
