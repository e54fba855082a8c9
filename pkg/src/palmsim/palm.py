"""Stationary <-> Palm constructions by change of origin and change of measure.

Changes of measure multiply importance weights; nothing is rejected or
resampled.  The Voronoi tie-break used here defaults to the shift-covariant
``"displacement"`` rule, which agrees with the lexicographic rule on the
infinite lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    AtomicInput,
    DegenerateWeight,
    EmptyEnsemble,
    EmptyMeasure,
    NonpositiveDensity,
    OriginNotInSupport,
    ZeroMassBox,
)
from .lattice import CellDecomposition, decompose, torus_displacement
from .measure import (
    WeightedSample,
    axis_overlap,
    density_at_origin,
    mass,
    origin_in_support,
    sample_conditional,
    shift,
)


@dataclass(frozen=True, eq=False)
class PalmRecord:
    sample: WeightedSample
    T: np.ndarray
    S: np.ndarray
    decomposition: CellDecomposition


def _unit_box(d):
    return np.zeros(d), np.ones(d)


def palm_forward(sample, rng, tie_break="displacement"):
    """Stationary -> mass-stationary.

    Moves the origin to the lattice point owning site 0, draws ``T`` from the
    mass in that point's unit box and re-roots at ``T``.  The weight is
    multiplied by (box mass) / |D|.
    """
    dec = decompose(sample.measure, tie_break)
    moved = shift(sample, -dec.shift_S)
    lo, hi = _unit_box(sample.dim)
    box_mass = mass(moved.measure, lo, hi)
    T = sample_conditional(moved.measure, lo, hi, rng)
    out = shift(moved, T)
    out = out.with_weight(sample.weight * box_mass / dec.size, T=T, S=dec.shift_S, D_size=dec.size)
    return PalmRecord(out, T, dec.shift_S, dec)


def palm_inverse(sample, rng, tie_break="displacement"):
    """Mass-stationary -> stationary (reverses :func:`palm_forward`).

    Draws ``T`` uniform on ``(0,1)^d``, builds the lattice from the measure
    seen from ``-T`` (which has a point at 0), draws ``S`` uniform on the
    cell of 0 and re-roots at ``S``.  The weight is multiplied by
    |D°| / (mass of the unit box).
    """
    d = sample.dim
    if not origin_in_support(sample.measure):
        raise OriginNotInSupport("palm_inverse needs 0 in the support of the measure")
    T = rng.random(d)
    while np.any(T == 0.0):
        T = rng.random(d)
    moved = shift(sample, -T)
    lo, hi = _unit_box(d)
    box_mass = mass(moved.measure, lo, hi)
    if box_mass <= 0:
        raise ZeroMassBox("the unit box seen from -T carries no mass")
    dec = decompose(moved.measure, tie_break)
    D_star = dec.cell_D
    site = D_star[rng.integers(len(D_star))]
    S = torus_displacement(np.zeros(d, dtype=int), site, sample.window)
    out = shift(moved, S)
    out = out.with_weight(sample.weight * len(D_star) / box_mass, T=T, S=S, D_size=len(D_star))
    return out


def density_palm(sample, strict=False):
    """Reweight by the density at the origin; no change of origin.

    A zero density at the origin yields weight 0; with ``strict`` it raises
    :class:`DegenerateWeight` instead.
    """
    m = sample.measure
    if m.density is None:
        raise ValueError("density_palm needs a density grid")
    if m.n_atoms:
        raise AtomicInput("density_palm needs a measure without atoms")
    z0 = density_at_origin(m)
    if z0 == 0 and strict:
        raise DegenerateWeight("density vanishes at the origin")
    return sample.with_weight(sample.weight * z0, degenerate=(z0 == 0))


def density_inverse(sample):
    m = sample.measure
    if m.density is None:
        raise ValueError("density_inverse needs a density grid")
    z0 = density_at_origin(m)
    if not z0 > 0:
        raise NonpositiveDensity(f"density at the origin is {z0}")
    return sample.with_weight(sample.weight / z0)


def palm_expectation(f, ensemble, lo, hi):
    """Weighted Monte Carlo estimate of E[ int_B f(theta_t sample) xi(dt) ] / |B|.

    Atoms in ``B`` contribute ``mass * f(shift(sample, atom))`` and density
    cells contribute ``value * overlap * f(shift(sample, cell_center))``.
    """
    if len(ensemble) == 0:
        raise EmptyEnsemble("palm_expectation needs at least one sample")
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    volume = float(np.prod(hi - lo))
    if volume <= 0:
        raise ValueError("box must have positive volume")
    total, wsum = 0.0, 0.0
    for s in ensemble:
        wsum += s.weight
        if s.weight == 0:
            continue
        total += s.weight * _integrate_over_box(f, s, lo, hi)
    return total / wsum / volume


def _integrate_over_box(f, sample, lo, hi):
    m = sample.measure
    acc = 0.0
    if m.n_atoms:
        rel = np.mod(m.atoms - lo, m.window)
        inside = np.all(rel < (hi - lo), axis=1)
        for a, w in zip(m.atoms[inside], m.masses[inside]):
            acc += w * f(shift(sample, a))
    if m.density is not None:
        n, cell = m.window * m.grid, 1.0 / m.grid
        overlaps = [axis_overlap(n, cell, lo[k], hi[k], m.window) for k in range(m.dim)]
        for index in np.argwhere(np.ones(m.grid_shape, dtype=bool)):
            vol = np.prod([overlaps[k][index[k]] for k in range(m.dim)])
            value = m.density[tuple(index)]
            if vol > 0 and value > 0:
                center = (index + 0.5) * cell
                acc += value * vol * f(shift(sample, center))
    return acc


def safe_forward(sample, rng, tie_break="displacement"):
    """:func:`palm_forward` that maps an empty measure to a zero-weight sample."""
    try:
        return palm_forward(sample, rng, tie_break).sample
    except EmptyMeasure:
        return replace(sample, weight=0.0, info={**sample.info, "empty": True})
