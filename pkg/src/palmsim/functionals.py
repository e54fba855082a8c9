"""Bounded scalar functionals of ``(marks, measure, auxiliary point)``.

Functionals are evaluated relative to the true origin, which sits at the
offset ``eps`` inside grid cell 0 (atoms are already relative to it).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from .measure import axis_overlap, mass_eps


@dataclass
class Context:
    sample: object
    eps: np.ndarray
    aux: Optional[np.ndarray] = None
    background: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Functional:
    name: str
    fn: Callable[[Context], float]


# functionals are module-level functions bound with partial so that they pickle for worker processes

def _box_mass(lo, hi, ctx):
    d = ctx.sample.dim
    w = ctx.sample.window
    return mass_eps(ctx.sample.measure, np.full(d, lo, float), np.full(d, min(hi, lo + w), float), ctx.eps)


def box_mass(lo, hi):
    return partial(_box_mass, lo, hi)


def _shell_mass(inner, outer, ctx):
    return _box_mass(-outer, outer, ctx) - _box_mass(-inner, inner, ctx)


def shell_mass(inner, outer):
    """Mass of ``[-outer, outer)^d`` minus that of ``[-inner, inner)^d``."""
    return partial(_shell_mass, inner, outer)


def nearest_atom(ctx):
    """Torus distance from the origin to the nearest atom other than one at the origin, capped."""
    m = ctx.sample.measure
    cap = m.window * np.sqrt(m.dim) / 2
    if not m.n_atoms:
        return cap
    diff = np.mod(m.atoms + m.window / 2, m.window) - m.window / 2
    dist = np.sqrt(np.sum(diff ** 2, axis=1))
    dist = dist[dist > 1e-9]
    return float(min(dist.min(), cap)) if len(dist) else cap


def density_origin(ctx):
    m = ctx.sample.measure
    return 0.0 if m.density is None else float(m.density[(0,) * m.dim])


def mark_mean(ctx):
    """Average of the mark grid over the unit box at the origin."""
    mk = ctx.sample.marks
    if mk.values is None:
        return 0.0
    n = mk.window * mk.grid
    vals = np.asarray(mk.values)
    for k in range(mk.dim):
        ov = axis_overlap(n, 1.0 / mk.grid, ctx.eps[k], ctx.eps[k] + 1.0, mk.window)
        keep = np.nonzero(ov)[0]
        vals = np.tensordot(ov[keep], np.take(vals, keep, axis=0), axes=(0, 0))
    return float(vals)


def _coordinate(attr, k, ctx):
    v = getattr(ctx, attr)
    return 0.0 if v is None else float(v[k])


def coordinate(attr, k):
    return partial(_coordinate, attr, k)


@dataclass
class FunctionalSet:
    functionals: list = field(default_factory=list)

    def __post_init__(self):
        if not self.functionals:
            raise ValueError("a functional set needs at least one functional")

    @property
    def names(self):
        return [f.name for f in self.functionals]

    def __len__(self):
        return len(self.functionals)

    def evaluate(self, sample, eps, aux=None, background=None):
        ctx = Context(sample, np.asarray(eps, float), aux, background)
        return np.array([f.fn(ctx) for f in self.functionals], dtype=float)

    def evaluate_many(self, rows):
        return np.vstack([self.evaluate(*row) for row in rows])


def default_functionals(dim, window=8, aux=False, background=False, boxes=(1, 2, 4)):
    """Box masses ``[0,a)^d``, ``[-1,0)^d``, ``[-1/2,1/2)^d``, the shell between ``[-1/2,1/2)^d`` and
    ``[-3/2,3/2)^d``, nearest atom, density at 0 and mark mean.

    ``aux`` and ``background`` append the coordinates of the auxiliary point
    and of the background vector.
    """
    fs = [Functional(f"mass_box_{a}", box_mass(0.0, float(a))) for a in boxes if a <= window]
    fs += [
        Functional("mass_back_1", box_mass(-1.0, 0.0)),
        Functional("mass_center_1", box_mass(-0.5, 0.5)),
        Functional("mass_shell_1", shell_mass(0.5, 1.5)),
        Functional("nearest_atom", nearest_atom),
        Functional("density_origin", density_origin),
        Functional("mark_mean", mark_mean),
    ]
    if aux:
        fs += [Functional(f"aux_{k}", coordinate("aux", k)) for k in range(dim)]
    if background:
        fs += [Functional(f"background_{k}", coordinate("background", k)) for k in range(dim)]
    return FunctionalSet(fs)
