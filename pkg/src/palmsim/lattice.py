"""Lattice point process, Voronoi cells of the integer torus and the cell at the origin."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMeasure


@dataclass(frozen=True, eq=False)
class CellDecomposition:
    """Voronoi partition of ``{0..W-1}^d`` induced by the lattice points.

    ``owner`` has shape ``(W,)*d + (d,)`` and holds the owning lattice point
    of every site.  ``cell_D`` and ``cell_D_star`` are ``(k, d)`` integer
    arrays of sites; ``shift_S`` is the vector from the owner of 0 to 0.
    """

    window: int
    lattice_points: np.ndarray
    owner: np.ndarray
    cell_D: np.ndarray
    shift_S: np.ndarray
    cell_D_star: np.ndarray

    @property
    def size(self):
        return len(self.cell_D)


def unit_box_masses(measure):
    """Mass of every unit box ``i + [0,1)^d`` as a ``(W,)*d`` array."""
    W, d = measure.window, measure.dim
    out = np.zeros((W,) * d)
    if measure.n_atoms:
        idx = np.floor(measure.atoms).astype(int) % W
        np.add.at(out, tuple(idx.T), measure.masses)
    if measure.density is not None:
        g = measure.grid
        blocks = measure.density.reshape(sum(((W, g) for _ in range(d)), ()))
        out = out + blocks.sum(axis=tuple(range(1, 2 * d, 2))) * measure.cell_volume
    return out


def build_lattice_points(measure):
    """Sites whose unit box carries positive mass, in lexicographic order."""
    sites = np.argwhere(unit_box_masses(measure) > 0)
    if len(sites) == 0:
        raise EmptyMeasure("no unit box of the window carries mass")
    return sites


def all_sites(window, dim):
    grids = np.meshgrid(*([np.arange(window)] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def torus_displacement(frm, to, window):
    """Componentwise displacement ``to - frm`` reduced into ``[-W/2, W/2)``."""
    diff = np.asarray(to) - np.asarray(frm)
    return (diff + window // 2) % window - window // 2


def voronoi_assign(points, window, dim, tie_break="chart"):
    """Owner of every lattice site under torus Euclidean distance.

    Distance ties go to the lexicographically lowest candidate.  With
    ``tie_break="chart"`` candidates are compared by their coordinates in
    ``{0..W-1}^d``; with ``"displacement"`` they are compared by the
    displacement from the site, which keeps the partition shift-covariant
    on the torus.
    """
    points = np.asarray(points, dtype=int).reshape(-1, dim)
    if len(points) == 0:
        raise EmptyMeasure("voronoi_assign needs at least one point")
    sites = all_sites(window, dim)
    disp = torus_displacement(sites[:, None, :], points[None, :, :], window)
    dist2 = np.sum(disp.astype(np.int64) ** 2, axis=2)
    nearest = dist2 == dist2.min(axis=1, keepdims=True)
    if tie_break == "chart":
        order = np.lexsort(points.T[::-1])
        rank = np.empty(len(points), dtype=np.int64)
        rank[order] = np.arange(len(points))
        key = np.where(nearest, rank[None, :], np.iinfo(np.int64).max)
    elif tie_break == "displacement":
        # encode the displacement vector as a single sortable integer
        base = np.int64(window)
        key = np.zeros(dist2.shape, dtype=np.int64)
        for k in range(dim):
            key = key * base + (disp[:, :, k] + window // 2)
        key = np.where(nearest, key, np.iinfo(np.int64).max)
    else:
        raise ValueError(f"unknown tie_break {tie_break!r}")
    owner = points[np.argmin(key, axis=1)]
    return owner.reshape((window,) * dim + (dim,))


def cell_of(owner, point):
    """Sites owned by ``point``."""
    dim = owner.shape[-1]
    flat = owner.reshape(-1, dim)
    mask = np.all(flat == np.asarray(point), axis=1)
    return all_sites(owner.shape[0], dim)[mask]


def cell_at_origin(owner):
    """Return ``(D, S, D_star)`` for the cell containing the origin."""
    window, dim = owner.shape[0], owner.shape[-1]
    root = owner[(0,) * dim]
    D = cell_of(owner, root)
    S = torus_displacement(root, np.zeros(dim, dtype=int), window)
    D_star = (D + S) % window
    return D, S, D_star


def decompose(measure, tie_break="chart"):
    points = build_lattice_points(measure)
    owner = voronoi_assign(points, measure.window, measure.dim, tie_break)
    D, S, D_star = cell_at_origin(owner)
    return CellDecomposition(measure.window, points, owner, D, S, D_star)
