"""Seeded generators of stationary and Palm ensembles and of negative controls.

Every generator is a function ``gen_*(spec, rng) -> WeightedSample``; an
ensemble is built by :func:`generate_ensemble` with one derived stream per
sample, so results depend only on ``(spec, seed)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .ensemble import map_with_rng
from .errors import ConfigError
from .measure import MarkField, MeasureWindow, WeightedSample, nudge_off_boundaries, torus_wrap

KINDS = ("poisson", "palm_poisson", "mixed_poisson", "shot_noise_density", "binomial", "negative_control")

KERNEL_RADIUS = 1.0


def bump_kernel(r2):
    """Quadratic bump ``(1 - |x|^2)_+`` of radius 1, as a function of ``|x|^2``."""
    return np.clip(1.0 - np.asarray(r2, float), 0.0, None)


def kernel_integral(dim):
    """Integral of :func:`bump_kernel` over ``R^dim`` (radius-1 ball)."""
    from math import gamma, pi

    ball = pi ** (dim / 2) / gamma(dim / 2 + 1)
    return ball * 2.0 / (dim + 2)


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of a generator.

    ``base_level`` is the constant ``c`` of the shot-noise field, ``shape``
    the Gamma shape of the mixed Poisson intensity, ``count`` the number of
    binomial points, ``control`` the negative-control variant (``"a"``:
    extra atom at ``offset``; ``"b"``: linear intensity ramp).
    """

    kind: str = "poisson"
    intensity: float = 1.0
    dim: int = 1
    window: int = 8
    grid: int = 1
    seed: int = 0
    base_level: float = 1.0
    shape: float = 2.0
    count: int = 8
    control: str = "a"
    offset: tuple = field(default=None)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}", field="kind")
        for name in ("dim", "window", "grid"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}", field=name)
        if not self.intensity > 0:
            raise ConfigError(f"intensity must be > 0, got {self.intensity!r}", field="intensity")
        if self.kind == "shot_noise_density" and not self.base_level > 0:
            raise ConfigError("base_level must be > 0", field="base_level")
        if self.kind == "mixed_poisson" and not self.shape > 0:
            raise ConfigError("shape must be > 0", field="shape")
        if self.kind == "binomial" and (int(self.count) != self.count or self.count < 1):
            raise ConfigError("count must be a positive integer", field="count")
        if self.kind == "negative_control":
            if self.control not in ("a", "b"):
                raise ConfigError("control must be 'a' or 'b'", field="control")
            v = self.offset_vector()
            if not np.any(v != 0):
                raise ConfigError("offset must be nonzero", field="offset")

    def offset_vector(self):
        if self.offset is None:
            v = np.zeros(self.dim)
            v[0] = 1.0
            return v
        v = np.asarray(self.offset, float).ravel()
        if v.shape != (self.dim,):
            raise ConfigError(f"offset needs {self.dim} coordinates", field="offset")
        return v

    @property
    def volume(self):
        return float(self.window) ** self.dim


def _noise_marks(spec, rng):
    shape = (spec.window * spec.grid,) * spec.dim
    return MarkField(spec.dim, spec.window, spec.grid, values=rng.standard_normal(shape))


def _uniform_points(spec, k, rng):
    pts = rng.random((k, spec.dim)) * spec.window
    return torus_wrap(nudge_off_boundaries(pts, spec.grid), spec.window)


def _atomic_sample(spec, atoms, rng, **info):
    measure = MeasureWindow(spec.dim, spec.window, atoms, np.ones(len(atoms)), None, spec.grid)
    return WeightedSample(_noise_marks(spec, rng), measure, 1.0, dict(info))


def _with_origin(points, dim):
    return np.vstack([np.zeros((1, dim)), points])


def gen_poisson(spec, rng, intensity=None):
    """Stationary Poisson process conditioned on at least one atom.

    The conditioning probability is stored as ``info["p_nonempty"]``.
    """
    lam = spec.intensity if intensity is None else intensity
    mean = lam * spec.volume
    k = 0
    while k == 0:
        k = int(rng.poisson(mean))
    return _atomic_sample(spec, _uniform_points(spec, k, rng), rng, p_nonempty=float(-np.expm1(-mean)))


def gen_palm_poisson(spec, rng):
    """Poisson process plus a unit atom at the origin."""
    k = int(rng.poisson(spec.intensity * spec.volume))
    atoms = _with_origin(_uniform_points(spec, k, rng), spec.dim)
    return _atomic_sample(spec, atoms, rng)


def gen_mixed_poisson(spec, rng):
    """Poisson process with a Gamma(shape, intensity/shape) random intensity, conditioned nonempty."""
    k = 0
    while k == 0:
        lam = rng.gamma(spec.shape, spec.intensity / spec.shape)
        k = int(rng.poisson(lam * spec.volume))
    return _atomic_sample(spec, _uniform_points(spec, k, rng), rng, intensity=float(lam))


def gen_binomial(spec, rng):
    """``count`` iid uniform atoms."""
    return _atomic_sample(spec, _uniform_points(spec, int(spec.count), rng), rng)


def shot_noise_field(spec, centers):
    """``c + sum_i k(s - x_i)`` at the grid cell centers."""
    n = spec.window * spec.grid
    axes = [(np.arange(n) + 0.5) / spec.grid] * spec.dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    z = np.full(len(mesh), float(spec.base_level))
    if len(centers):
        diff = mesh[:, None, :] - centers[None, :, :]
        diff = np.mod(diff + spec.window / 2, spec.window) - spec.window / 2
        z += bump_kernel(np.sum(diff ** 2, axis=2)).sum(axis=1)
    return z.reshape((n,) * spec.dim)


def gen_shot_noise_density(spec, rng):
    """Strictly positive shot-noise density over Poisson centers; the marks are the field itself."""
    k = int(rng.poisson(spec.intensity * spec.volume))
    centers = rng.random((k, spec.dim)) * spec.window
    z = shot_noise_field(spec, centers)
    measure = MeasureWindow(spec.dim, spec.window, None, None, z, spec.grid)
    marks = MarkField(spec.dim, spec.window, spec.grid, values=z)
    return WeightedSample(marks, measure, 1.0, {"n_centers": k})


def ramp_points(spec, rng):
    """Poisson points with intensity ``2 * intensity * x_1 / W`` (mean total ``intensity * W^d``)."""
    k = int(rng.poisson(spec.intensity * spec.volume))
    pts = rng.random((k, spec.dim)) * spec.window
    pts[:, 0] = spec.window * np.sqrt(rng.random(k))
    return torus_wrap(nudge_off_boundaries(pts, spec.grid), spec.window)


def gen_negative_control(spec, rng):
    """Origin in the support but not mass-stationary.

    ``control="a"``: Palm-Poisson plus a fixed atom at ``offset``;
    ``control="b"``: ramped Poisson intensity plus an atom at the origin.
    """
    if spec.control == "a":
        k = int(rng.poisson(spec.intensity * spec.volume))
        extra = torus_wrap(spec.offset_vector()[None, :], spec.window)
        atoms = np.vstack([np.zeros((1, spec.dim)), extra, _uniform_points(spec, k, rng)])
    else:
        atoms = _with_origin(ramp_points(spec, rng), spec.dim)
    return _atomic_sample(spec, atoms, rng, control=spec.control)


GENERATORS = {
    "poisson": gen_poisson,
    "palm_poisson": gen_palm_poisson,
    "mixed_poisson": gen_mixed_poisson,
    "shot_noise_density": gen_shot_noise_density,
    "binomial": gen_binomial,
    "negative_control": gen_negative_control,
}


def _generate_one(spec, _, rng):
    return GENERATORS[spec.kind](spec, rng)


def generate_ensemble(spec, n_samples, seed=None, threads=1):
    """``n_samples`` independent samples; sample ``i`` uses the ``i``-th child stream of the seed."""
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1", field="n_samples")
    seed = spec.seed if seed is None else seed

    return map_with_rng(partial(_generate_one, spec), [None] * int(n_samples), seed, threads)


def box_counts(sample, side=1):
    """Atom counts of the boxes ``side * (i + [0,1)^d)`` tiling the window."""
    m = sample.measure
    per_axis = int(m.window // side)
    idx = np.floor(m.atoms / side).astype(int) % per_axis
    out = np.zeros((per_axis,) * m.dim, dtype=int)
    np.add.at(out, tuple(idx.T), 1)
    return out


__all__ = [
    "GeneratorSpec",
    "KINDS",
    "bump_kernel",
    "kernel_integral",
    "gen_poisson",
    "gen_palm_poisson",
    "gen_mixed_poisson",
    "gen_binomial",
    "gen_shot_noise_density",
    "gen_negative_control",
    "generate_ensemble",
    "shot_noise_field",
    "box_counts",
]
