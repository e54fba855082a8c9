import numpy as np
import pytest
from scipy import stats

from palmsim.errors import ConfigError
from palmsim.generators import (
    GeneratorSpec,
    box_counts,
    gen_shot_noise_density,
    generate_ensemble,
    kernel_integral,
    shot_noise_field,
)
from palmsim.measure import mass


def _counts(ens):
    return np.array([s.measure.n_atoms for s in ens])


def test_poisson_mean_count():
    ens = generate_ensemble(GeneratorSpec("poisson", dim=1, window=8), 10_000, seed=1)
    k = _counts(ens)
    # conditioning on a nonempty draw shifts the mean by 8 * P(N=0) / P(N>0), negligible here
    assert abs(k.mean() - 8) <= 3 * np.sqrt(8 / len(k))
    assert k.min() >= 1
    assert all(0 < s.info["p_nonempty"] < 1 for s in ens[:5])


def test_poisson_conditioning_recorded_at_low_intensity():
    ens = generate_ensemble(GeneratorSpec("poisson", intensity=0.01, dim=1, window=8), 50, seed=2)
    assert _counts(ens).min() >= 1
    assert ens[0].info["p_nonempty"] == pytest.approx(-np.expm1(-0.08))


def test_poisson_disjoint_box_counts_uncorrelated():
    ens = generate_ensemble(GeneratorSpec("poisson", dim=1, window=8), 5000, seed=3)
    c = np.array([box_counts(s) for s in ens])
    r = np.corrcoef(c[:, 0], c[:, 3])[0, 1]
    assert abs(r) <= 3 / np.sqrt(len(c))


def test_poisson_atoms_in_window_unit_mass_with_marks():
    for d in (1, 2):
        s = generate_ensemble(GeneratorSpec("poisson", dim=d, window=4, grid=2), 1, seed=4)[0]
        assert np.all((s.measure.atoms >= 0) & (s.measure.atoms < 4))
        assert np.all(s.measure.masses == 1)
        assert s.marks.values.shape == (8,) * d
        assert s.weight == 1


def test_palm_poisson_origin_in_support_and_mean():
    ens = generate_ensemble(GeneratorSpec("palm_poisson", dim=1, window=8), 10_000, seed=5)
    assert all(np.any(np.all(s.measure.atoms == 0, axis=1)) for s in ens)
    k = _counts(ens)
    assert abs(k.mean() - 9) <= 3 * np.sqrt(8 / len(k))


def test_palm_poisson_gaps_exponential():
    ens = generate_ensemble(GeneratorSpec("palm_poisson", dim=1, window=8), 4000, seed=6)
    gaps = []
    for s in ens:
        x = np.sort(s.measure.atoms[:, 0])
        if len(x) > 1:
            # gap right of the origin atom
            gaps.append(x[1] - x[0])
    gaps = np.array(gaps)
    # on the torus the gap right of 0 is Exp(1) truncated at W = 8, where P(>8) ~ 3e-4
    res = stats.kstest(gaps, stats.expon.cdf)
    assert res.statistic < 1.63 / np.sqrt(len(gaps))


def test_shot_noise_zero_centers_constant():
    spec = GeneratorSpec("shot_noise_density", dim=2, window=4, grid=2, base_level=1.5)
    assert np.all(shot_noise_field(spec, np.zeros((0, 2))) == 1.5)
    s = gen_shot_noise_density(GeneratorSpec("shot_noise_density", intensity=1e-9, window=4), np.random.default_rng(0))
    assert np.all(s.measure.density == 1.0)


def test_shot_noise_campbell_mean():
    for d in (1, 2):
        spec = GeneratorSpec("shot_noise_density", dim=d, window=4, grid=4)
        ens = generate_ensemble(spec, 3000, seed=7 + d)
        # the field is stationary, so each sample's window average estimates E[Z_0]
        z = np.array([s.measure.density.mean() for s in ens])
        expected = 1.0 + kernel_integral(d)
        assert abs(z.mean() - expected) <= 3 * z.std(ddof=1) / np.sqrt(len(z))


def test_kernel_integral_numeric():
    from scipy import integrate

    assert kernel_integral(1) == pytest.approx(integrate.quad(lambda x: max(0.0, 1 - x * x), -1, 1)[0])
    radial = integrate.quad(lambda r: 2 * np.pi * r * (1 - r * r), 0, 1)[0]
    assert kernel_integral(2) == pytest.approx(radial)


def test_shot_noise_bounded_below_and_marks_equal_density():
    ens = generate_ensemble(GeneratorSpec("shot_noise_density", dim=1, window=8, grid=4, base_level=0.5), 200, seed=9)
    for s in ens:
        assert s.measure.density.min() >= 0.5
        assert np.array_equal(s.marks.values, s.measure.density)


def test_control_a_origin_and_fixed_atom():
    spec = GeneratorSpec("negative_control", dim=2, window=4, control="a", offset=(1.0, 0.0))
    for s in generate_ensemble(spec, 100, seed=10):
        a = s.measure.atoms
        assert np.any(np.all(a == 0, axis=1))
        assert np.any(np.all(a == [1.0, 0.0], axis=1))


def test_control_b_ramp_half_difference():
    spec = GeneratorSpec("negative_control", dim=1, window=8, control="b")
    ens = generate_ensemble(spec, 10_000, seed=11)
    diff = []
    for s in ens:
        x = s.measure.atoms[1:, 0]  # drop the origin atom
        diff.append(np.sum(x >= 4) - np.sum(x < 4))
    diff = np.array(diff)
    # intensity 2x/8 integrates to 1 on [0,4) and 3 on [4,8), so the difference has mean 4, variance 8
    assert abs(diff.mean() - 4) <= 3 * np.sqrt(8 / len(diff))


def test_control_b_has_origin():
    spec = GeneratorSpec("negative_control", dim=2, window=4, control="b")
    assert all(np.all(s.measure.atoms[0] == 0) for s in generate_ensemble(spec, 20, seed=12))


@pytest.mark.parametrize("kind", ["poisson", "palm_poisson", "mixed_poisson", "shot_noise_density", "binomial",
                                  "negative_control"])
def test_deterministic_in_seed_and_threads(kind):
    spec = GeneratorSpec(kind, dim=2, window=4, grid=2)
    a = generate_ensemble(spec, 6, seed=13)
    b = generate_ensemble(spec, 6, seed=13, threads=2)
    c = generate_ensemble(spec, 6, seed=14)
    for x, y in zip(a, b):
        assert np.array_equal(x.measure.atoms, y.measure.atoms)
        assert np.array_equal(x.marks.values, y.marks.values)
        if x.measure.density is not None:
            assert np.array_equal(x.measure.density, y.measure.density)
    assert any(not np.array_equal(x.marks.values, y.marks.values) for x, y in zip(a, c))


@pytest.mark.parametrize("kwargs, field", [
    ({"intensity": -1.0}, "intensity"),
    ({"intensity": 0.0}, "intensity"),
    ({"window": 0}, "window"),
    ({"kind": "bogus"}, "kind"),
    ({"kind": "shot_noise_density", "base_level": 0.0}, "base_level"),
    ({"kind": "negative_control", "offset": (0.0,)}, "offset"),
    ({"kind": "negative_control", "control": "c"}, "control"),
])
def test_invalid_spec_rejected(kwargs, field):
    with pytest.raises(ConfigError) as exc:
        GeneratorSpec(**kwargs)
    assert exc.value.field == field


def test_empty_ensemble_rejected():
    with pytest.raises(ConfigError):
        generate_ensemble(GeneratorSpec(), 0)


def test_poisson_box_count_law_shift_invariant():
    ens = generate_ensemble(GeneratorSpec("poisson", dim=1, window=8), 4000, seed=15)
    table = []
    for t in (0.0, 0.25, 1.5, 3.75, 6.0):
        counts = np.array([mass(s.measure, [t], [t + 1.0]) for s in ens]).astype(int)
        table.append(np.bincount(np.minimum(counts, 4), minlength=5))
    p = stats.chi2_contingency(np.array(table))[1]
    assert p > 0.05
