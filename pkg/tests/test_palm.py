"""Forward and inverse Palm constructions, density reweightings and the expectation oracle."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from palmsim.errors import DegenerateWeight, EmptyEnsemble, NonpositiveDensity, OriginNotInSupport
from palmsim.generators import GeneratorSpec, generate_ensemble, kernel_integral
from palmsim.measure import mass
from palmsim.palm import (
    density_inverse,
    density_palm,
    palm_expectation,
    palm_forward,
    palm_inverse,
    safe_forward,
)
from palmsim.stattests import weighted_bin_chi2

from conftest import make_sample


@pytest.mark.parametrize("tie_break", ["chart", "displacement"])
def test_forward_single_cell_example(tie_break, rng):
    # lattice points {0, 3} as in the Voronoi example, so |D| = 4
    s = make_sample([[0.5], [3.5]])
    rec = palm_forward(s, rng, tie_break)
    assert rec.S.tolist() == [0]
    assert rec.T[0] == 0.5
    assert 0.0 in rec.sample.measure.atoms[:, 0]
    assert rec.decomposition.size == 4
    assert rec.sample.weight == pytest.approx(0.25)


def test_forward_weight_scales_with_mass(rng):
    s = make_sample([[0.5], [3.5]], masses=[2.0, 1.0])
    assert palm_forward(s, rng).sample.weight == pytest.approx(0.5)


def test_forward_output_has_origin_in_support(rng):
    s = generate_ensemble(GeneratorSpec("poisson", dim=2, window=6), 1, seed=2)[0]
    out = palm_forward(s, rng).sample
    assert mass(out.measure, [-1e-9, -1e-9], [1e-9, 1e-9]) > 0


def test_forward_mean_weight_is_intensity():
    ens = generate_ensemble(GeneratorSpec("poisson", dim=1), 4000, seed=11)
    rng = np.random.default_rng(0)
    w = np.array([palm_forward(s, rng).sample.weight for s in ens])
    assert abs(w.mean() - 1.0) <= 3 * w.std(ddof=1) / np.sqrt(len(w))


def test_forward_origin_is_uniform_in_unit_box():
    """Under the reweighted law the forward draw T is uniform on the unit box."""
    ens = generate_ensemble(GeneratorSpec("poisson", dim=2, window=6), 3000, seed=5)
    rng = np.random.default_rng(1)
    recs = [palm_forward(s, rng) for s in ens]
    T = np.array([r.T for r in recs])
    w = np.array([r.sample.weight for r in recs])
    bins = (np.floor(T * 2).astype(int) * [2, 1]).sum(axis=1)
    _, _, p = weighted_bin_chi2(np.full((len(T), 4), 0.25), bins, w)
    assert p > 0.001


def test_inverse_single_atom_weight(rng):
    s = make_sample([[0.0]])
    out = palm_inverse(s, rng)
    assert out.weight == pytest.approx(8.0)
    assert 0 < out.info["T"][0] < 1


def test_inverse_requires_origin_in_support(rng):
    with pytest.raises(OriginNotInSupport):
        palm_inverse(make_sample([[0.5]]), rng)


def test_empty_measure_gets_zero_weight(rng):
    out = safe_forward(make_sample(), rng)
    assert out.weight == 0.0


# -- density case -------------------------------------------------------------

def test_density_palm_constant_field():
    s = make_sample(density=np.full(8, 2.5), weight=0.4)
    assert density_palm(s).weight == pytest.approx(1.0)


def test_density_palm_zero_at_origin():
    dens = np.ones(8)
    dens[0] = 0.0
    s = make_sample(density=dens)
    out = density_palm(s)
    assert out.weight == 0.0 and out.info["degenerate"]
    with pytest.raises(DegenerateWeight):
        density_palm(s, strict=True)


def test_density_palm_mean_weight_is_mean_density():
    spec = GeneratorSpec("shot_noise_density", dim=1, grid=4, base_level=1.0)
    ens = [density_palm(s) for s in generate_ensemble(spec, 4000, seed=3)]
    w = np.array([s.weight for s in ens])
    expect = 1.0 + kernel_integral(1)
    assert abs(w.mean() - expect) <= 3 * w.std(ddof=1) / np.sqrt(len(w))


def test_density_inverse_halves_weight():
    assert density_inverse(make_sample(density=np.full(8, 2.0))).weight == 0.5


def test_density_inverse_rejects_zero():
    with pytest.raises(NonpositiveDensity):
        density_inverse(make_sample(density=np.zeros(8)))


@settings(max_examples=50, deadline=None)
@given(z=st.floats(1e-6, 1e6), w=st.floats(1e-6, 1e6))
def test_density_round_trip_is_exact(z, w):
    dens = np.full(8, z)
    s = make_sample(density=dens, weight=w)
    back = density_inverse(density_palm(s))
    # the product and quotient are correctly rounded, so the identity holds to one ulp
    assert back.weight == pytest.approx(w, rel=2.3e-16)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_transforms_keep_weights_positive_and_finite(seed):
    rng = np.random.default_rng(seed)
    k = rng.integers(1, 6)
    s = make_sample(rng.random((k, 2)) * 4, rng.random(k) + 0.1, dim=2, window=4)
    fwd = palm_forward(s, rng).sample
    back = palm_inverse(fwd, rng)
    for x in (fwd, back):
        assert np.isfinite(x.weight) and x.weight > 0


# -- expectation oracle ---------------------------------------------------------

def test_palm_expectation_of_one_is_intensity():
    ens = generate_ensemble(GeneratorSpec("poisson", dim=1), 3000, seed=9)
    est = palm_expectation(lambda s: 1.0, ens, [0.0], [1.0])
    counts = np.array([np.count_nonzero(s.measure.atoms[:, 0] < 1.0) for s in ens])
    assert abs(est - 1.0) <= 3 * counts.std(ddof=1) / np.sqrt(len(ens))


def test_palm_expectation_sees_atom_at_origin():
    ens = generate_ensemble(GeneratorSpec("poisson", dim=1), 500, seed=4)
    tiny = lambda s: float(mass(s.measure, [-1e-6], [1e-6]) > 0)
    ratio = palm_expectation(tiny, ens, [0.0], [1.0]) / palm_expectation(lambda s: 1.0, ens, [0.0], [1.0])
    assert ratio == pytest.approx(1.0)


def test_palm_expectation_of_null_measures_is_zero():
    ens = [make_sample() for _ in range(5)]
    assert palm_expectation(lambda s: 1.0, ens, [0.0], [1.0]) == 0.0


def test_palm_expectation_empty_ensemble():
    with pytest.raises(EmptyEnsemble):
        palm_expectation(lambda s: 1.0, [], [0.0], [1.0])


def test_palm_expectation_density_cells():
    s = make_sample(density=np.full(16, 3.0), grid=2)
    assert palm_expectation(lambda x: 1.0, [s], [0.0], [1.0]) == pytest.approx(3.0)
