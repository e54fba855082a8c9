"""Random-measure realizations on a periodic window.

A :class:`MeasureWindow` is an atomic part (locations and masses) plus an
optional piecewise-constant density on a grid of ``grid`` cells per unit
length.  Everything lives on the torus ``[0, W)^d``.

Grid cell ``j`` along an axis covers ``[j/G, (j+1)/G)``.  A shift by ``t``
moves atoms exactly and rolls grids by ``floor(t * G)`` cells, so the cell
holding the point ``t`` becomes cell 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ZeroMassBox

NUDGE = 2.0 ** -40


def torus_wrap(x, window):
    """Reduce coordinates into ``[0, window)``, mapping rounding spill-over to 0."""
    y = np.mod(np.asarray(x, dtype=float), window)
    return np.where(y >= window, 0.0, y)


def nudge_off_boundaries(points, grid):
    """Move points lying exactly on a grid line by ``2**-40``."""
    pts = np.array(points, dtype=float, copy=True)
    on_line = np.mod(pts * grid, 1.0) == 0.0
    pts[on_line] += NUDGE
    return pts


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MeasureWindow:
    """Atoms plus optional gridded density on the torus ``[0, window)^dim``."""

    dim: int
    window: int
    atoms: np.ndarray = None
    masses: np.ndarray = None
    density: Optional[np.ndarray] = None
    grid: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.grid < 1:
            raise ValueError("dim, window and grid must be positive integers")
        atoms = np.zeros((0, self.dim)) if self.atoms is None else np.asarray(self.atoms, float)
        atoms = atoms.reshape(-1, self.dim)
        masses = np.ones(len(atoms)) if self.masses is None else np.asarray(self.masses, float)
        if masses.shape != (len(atoms),):
            raise ValueError("one mass per atom is required")
        if np.any(atoms < 0) or np.any(atoms >= self.window):
            raise ValueError("atom locations must lie in [0, window)")
        if np.any(~np.isfinite(masses)) or np.any(masses <= 0):
            raise ValueError("atom masses must be finite and strictly positive")
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "masses", _frozen(masses))
        if self.density is not None:
            dens = np.asarray(self.density, float)
            if dens.shape != self.grid_shape:
                raise ValueError(f"density grid must have shape {self.grid_shape}")
            if np.any(~np.isfinite(dens)) or np.any(dens < 0):
                raise ValueError("density values must be finite and nonnegative")
            object.__setattr__(self, "density", _frozen(dens))

    @property
    def grid_shape(self):
        return (self.window * self.grid,) * self.dim

    @property
    def cell_volume(self):
        return float(self.grid) ** (-self.dim)

    @property
    def n_atoms(self):
        return len(self.masses)

    def total_mass(self):
        total = float(self.masses.sum())
        if self.density is not None:
            total += float(self.density.sum()) * self.cell_volume
        return total

    def is_diffuse(self):
        return self.n_atoms == 0

    def strictly_positive(self):
        return self.density is not None and bool(np.all(self.density > 0))


@dataclass(frozen=True, eq=False)
class MarkField:
    """Grid of real marks (same resolution as the measure) and optional marked points.

    ``inert_axes`` counts trailing coordinates along which shifts leave the
    field untouched; it is nonzero after :func:`product_extend`.
    """

    dim: int
    window: int
    grid: int = 1
    values: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None
    point_marks: Optional[np.ndarray] = None
    inert_axes: int = 0

    def __post_init__(self):
        if self.values is not None:
            vals = np.asarray(self.values, float)
            if vals.shape != (self.window * self.grid,) * self.dim:
                raise ValueError("mark grid shape inconsistent with (dim, window, grid)")
            object.__setattr__(self, "values", _frozen(vals))
        if self.points is not None:
            pts = np.asarray(self.points, float).reshape(-1, self.dim)
            marks = np.zeros(len(pts)) if self.point_marks is None else np.asarray(self.point_marks, float)
            object.__setattr__(self, "points", _frozen(pts))
            object.__setattr__(self, "point_marks", _frozen(marks))


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """A (marks, measure) pair carrying an importance weight."""

    marks: MarkField
    measure: MeasureWindow
    weight: float = 1.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        w = float(self.weight)
        if not np.isfinite(w) or w < 0:
            raise ValueError("weight must be finite and nonnegative")
        object.__setattr__(self, "weight", w)

    @property
    def dim(self):
        return self.measure.dim

    @property
    def window(self):
        return self.measure.window

    def with_weight(self, weight, **info):
        return replace(self, weight=weight, info={**self.info, **info})


# -- shifting ---------------------------------------------------------------

def _roll_cells(t, grid, eps=None):
    t = np.asarray(t, float)
    if eps is not None:
        t = t + np.asarray(eps, float)
    return np.floor(t * grid).astype(int)


def _roll(values, cells):
    if values is None:
        return None
    return np.roll(values, tuple(-int(c) for c in cells), axis=tuple(range(len(cells))))


def shift_measure(measure, t, eps=None):
    """Return the measure seen from ``t``: atom ``a`` moves to ``a - t``."""
    t = np.asarray(t, float).reshape(measure.dim)
    atoms = torus_wrap(measure.atoms - t, measure.window) if measure.n_atoms else measure.atoms
    density = _roll(measure.density, _roll_cells(t, measure.grid, eps))
    return MeasureWindow(measure.dim, measure.window, atoms, measure.masses, density, measure.grid)


def shift_marks(marks, t, eps=None):
    t = np.asarray(t, float).reshape(marks.dim)
    if marks.inert_axes:
        t = t.copy()
        t[marks.dim - marks.inert_axes:] = 0.0
        if eps is not None:
            eps = np.array(eps, float)
            eps[marks.dim - marks.inert_axes:] = 0.0
    values = marks.values
    if values is not None:
        values = _roll(values, _roll_cells(t, marks.grid, eps))
    points = None if marks.points is None else torus_wrap(marks.points - t, marks.window)
    return replace(marks, values=values, points=points)


def shift(sample, t):
    """Shift a weighted sample so that location ``t`` becomes the origin."""
    return replace(sample, marks=shift_marks(sample.marks, t), measure=shift_measure(sample.measure, t))


def reroot(sample, v, eps):
    """Shift by ``v`` when the true origin sits at ``eps`` in ``[0, 1/G)^d``.

    Atoms move exactly by ``v``; grids roll by ``floor((eps + v) * G)`` cells.
    With ``eps = 0`` this is :func:`shift`.
    """
    return replace(
        sample,
        marks=shift_marks(sample.marks, v, eps),
        measure=shift_measure(sample.measure, v, eps),
    )


# -- masses and conditional draws ------------------------------------------

def _pieces(lo, hi, window):
    """Split the torus interval ``[lo, hi)`` into at most two chart intervals."""
    length = hi - lo
    if length >= window:
        return [(0.0, float(window))]
    a = float(np.mod(lo, window))
    if a >= window:
        a = 0.0
    b = a + length
    if b <= window:
        return [(a, b)]
    return [(a, float(window)), (0.0, b - window)]


def axis_overlap(n_cells, cell, lo, hi, window):
    """Length of overlap of each grid cell with the torus interval ``[lo, hi)``."""
    edges = np.arange(n_cells + 1) * cell
    out = np.zeros(n_cells)
    for a, b in _pieces(lo, hi, window):
        out += np.clip(np.minimum(b, edges[1:]) - np.maximum(a, edges[:-1]), 0.0, None)
    return out


def _atoms_in_box(measure, lo, hi):
    if measure.n_atoms == 0:
        return np.zeros(0, dtype=bool)
    rel = np.mod(measure.atoms - lo, measure.window)
    return np.all(rel < (hi - lo), axis=1)


def _cell_weights(measure, lo, hi):
    """Mass of every density cell inside the box, as a grid."""
    n = measure.window * measure.grid
    cell = 1.0 / measure.grid
    overlaps = [axis_overlap(n, cell, lo[k], hi[k], measure.window) for k in range(measure.dim)]
    weights = measure.density
    for k, ov in enumerate(overlaps):
        shape = [1] * measure.dim
        shape[k] = n
        weights = weights * ov.reshape(shape)
    return weights


def _as_box(measure, lo, hi):
    lo = np.array(lo, dtype=float).reshape(-1)
    hi = np.array(hi, dtype=float).reshape(-1)
    if len(lo) == 1:
        lo = np.repeat(lo, measure.dim)
    if len(hi) == 1:
        hi = np.repeat(hi, measure.dim)
    if np.any(hi < lo) or np.any(hi - lo > measure.window):
        raise ValueError("box must satisfy lo <= hi <= lo + window")
    return lo, hi


def _axis_cells(n_cells, grid, lo, hi, window):
    """Indices and overlap lengths of the grid cells meeting the torus interval ``[lo, hi)``."""
    idx, lengths = [], []
    for a, b in _pieces(lo, hi, window):
        j = np.arange(int(np.floor(a * grid)), min(int(np.ceil(b * grid)), n_cells))
        ov = np.minimum(b, (j + 1) / grid) - np.maximum(a, j / grid)
        keep = ov > 0
        idx.append(j[keep])
        lengths.append(ov[keep])
    return np.concatenate(idx), np.concatenate(lengths)


def _density_mass(measure, lo, hi):
    """Density part of the mass of ``[lo, hi)``, contracting only overlapping cells."""
    n = measure.window * measure.grid
    cells = [_axis_cells(n, measure.grid, lo[k], hi[k], measure.window) for k in range(measure.dim)]
    if any(len(c[0]) == 0 for c in cells):
        return 0.0
    vals = measure.density[np.ix_(*[c[0] for c in cells])]
    for _, lengths in cells:
        vals = lengths @ vals.reshape(len(lengths), -1)
    return float(vals[0]) if np.ndim(vals) else float(vals)


def mass(measure, lo, hi):
    """Mass of the half-open box ``[lo, hi)`` (torus-normalized)."""
    lo, hi = _as_box(measure, lo, hi)
    total = float(measure.masses[_atoms_in_box(measure, lo, hi)].sum())
    if measure.density is not None:
        total += _density_mass(measure, lo, hi)
    return total


def _uniform_in_cell_overlap(j, cell, lo, hi, window, rng):
    pieces = []
    for a, b in _pieces(lo, hi, window):
        left, right = max(a, j * cell), min(b, (j + 1) * cell)
        if right > left:
            pieces.append((left, right))
    lengths = np.array([r - l for l, r in pieces])
    l, r = pieces[rng.choice(len(pieces), p=lengths / lengths.sum())] if len(pieces) > 1 else pieces[0]
    return l + (r - l) * rng.random()


def sample_conditional(measure, lo, hi, rng):
    """Draw a point from the measure restricted to the box, normalized.

    The point is returned in box coordinates, i.e. inside ``[lo, hi)``.
    """
    lo, hi = _as_box(measure, lo, hi)
    inside = _atoms_in_box(measure, lo, hi)
    atom_mass = measure.masses[inside]
    cells = None if measure.density is None else _cell_weights(measure, lo, hi)
    total = float(atom_mass.sum()) + (0.0 if cells is None else float(cells.sum()))
    if total <= 0:
        raise ZeroMassBox(f"box [{lo}, {hi}) carries no mass")
    u = rng.random() * total
    if u < atom_mass.sum() or cells is None:
        cum = np.cumsum(atom_mass)
        idx = min(int(np.searchsorted(cum, u, side="right")), len(cum) - 1)
        a = measure.atoms[inside][idx]
        # subtract whole windows so that re-rooting at the result puts the atom exactly at 0
        k = np.floor((a - lo) / measure.window)
        return a - k * measure.window
    flat = cells.ravel()
    cum = np.cumsum(flat)
    pick = min(int(np.searchsorted(cum, u - atom_mass.sum(), side="right")), len(flat) - 1)
    while flat[pick] <= 0:  # rounding at the upper end of the cumulative sum
        pick -= 1
    index = np.unravel_index(pick, cells.shape)
    cell = 1.0 / measure.grid
    point = np.array([
        _uniform_in_cell_overlap(index[k], cell, lo[k], hi[k], measure.window, rng)
        for k in range(measure.dim)
    ])
    return lo + np.mod(point - lo, measure.window)


def advance_eps(eps, v, grid):
    """In-cell offset of the origin after moving it by ``v`` from offset ``eps``."""
    x = np.asarray(eps, float) + np.asarray(v, float)
    out = x - np.floor(x * grid) / grid
    return np.clip(out, 0.0, np.nextafter(1.0 / grid, 0.0))


def _parts(measure):
    atoms = replace(measure, density=None)
    cells = None if measure.density is None else replace(measure, atoms=None, masses=None)
    return atoms, cells


def mass_eps(measure, lo, hi, eps):
    """Mass of ``[lo, hi)`` measured from an origin sitting at ``eps`` inside grid cell 0."""
    lo, hi = _as_box(measure, lo, hi)
    total = float(measure.masses[_atoms_in_box(measure, lo, hi)].sum())
    if measure.density is not None:
        e = np.asarray(eps, float)
        total += _density_mass(measure, lo + e, hi + e)
    return total


def sample_conditional_eps(measure, lo, hi, eps, rng):
    """:func:`sample_conditional` relative to an origin at ``eps``; returns a point of ``[lo, hi)``."""
    lo, hi = _as_box(measure, lo, hi)
    e = np.asarray(eps, float)
    atoms, cells = _parts(measure)
    m_atoms = mass(atoms, lo, hi) if measure.n_atoms else 0.0
    m_cells = 0.0 if cells is None else mass(cells, lo + e, hi + e)
    if m_atoms + m_cells <= 0:
        raise ZeroMassBox(f"box [{lo}, {hi}) carries no mass")
    if rng.random() * (m_atoms + m_cells) < m_atoms:
        return sample_conditional(atoms, lo, hi, rng)
    p = sample_conditional(cells, lo + e, hi + e, rng) - e
    return np.clip(p, lo, np.nextafter(hi, lo))


def origin_in_support(measure, tol=1e-9):
    return mass(measure, -tol * np.ones(measure.dim), tol * np.ones(measure.dim)) > 0


def density_at_origin(measure):
    if measure.density is None:
        return 0.0
    return float(measure.density[(0,) * measure.dim])


# -- product extension ------------------------------------------------------

def product_extend(sample, eps=None):
    """Extend ``(X, xi)`` to ``(X, xi x Lebesgue)`` one dimension up.

    Atoms become columns of constant density on their grid cell, so an atom
    of mass ``m`` puts mass ``m`` on every unit length of the new axis.  The
    cell of an atom is taken relative to an origin sitting at ``eps`` inside
    cell 0.  The new coordinate acts trivially on the marks.
    """
    m = sample.measure
    d, g, n = m.dim, m.grid, m.window * m.grid
    e = np.zeros(d) if eps is None else np.asarray(eps, float)
    base = np.zeros((n,) * d) if m.density is None else np.array(m.density)
    if m.n_atoms:
        idx = np.floor((m.atoms + e) * g).astype(int) % n
        np.add.at(base, tuple(idx.T), m.masses * g ** d)
    density = np.repeat(base[..., None], n, axis=d)
    measure = MeasureWindow(d + 1, m.window, None, None, density, g)

    mk = sample.marks
    values = None if mk.values is None else np.repeat(np.asarray(mk.values)[..., None], n, axis=d)
    points = None
    if mk.points is not None:
        points = np.hstack([mk.points, np.zeros((len(mk.points), 1))])
    marks = MarkField(d + 1, mk.window, mk.grid, values, points, mk.point_marks, mk.inert_axes + 1)
    return WeightedSample(marks, measure, sample.weight, {**sample.info, "extended": True})
