"""Weighted two-sample tests and the reports built on them.

The basic statistic is the energy distance between two weighted empirical
laws.  In one dimension it equals ``2 * int (F_A - F_B)^2 dx`` and is
computed from a single pooled sort.  In several dimensions it is either
computed exactly from pairwise distances (small samples) or averaged over
one-dimensional projections (sliced energy distance).  Null distributions
come from random relabelings with the weights travelling with the points.

Two sides of a comparison are always built from disjoint halves of an
ensemble so that they are independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .ensemble import child_seed, map_with_rng
from .errors import DegenerateSample, EmptyEnsemble, OriginNotInSupport, ZeroMassBox
from .functionals import default_functionals
from .measure import (
    advance_eps,
    mass,
    mass_eps,
    product_extend,
    reroot,
    sample_conditional_eps,
    shift,
)

EXACT_MAX = 600
PERM_BLOCK_CELLS = 4_000_000


# -- two-sample machinery -----------------------------------------------------

@dataclass
class TwoSampleResult:
    statistic: float
    p_value: float
    threshold: float
    n_a: int
    n_b: int
    method: str


def _check_side(x, w, name):
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) == 0:
        raise DegenerateSample(f"sample {name} is empty")
    w = np.ones(len(x)) if w is None else np.asarray(w, float)
    if w.shape != (len(x),) or np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError(f"weights of sample {name} must be finite, nonnegative, one per point")
    if not w.sum() > 0:
        raise DegenerateSample(f"sample {name} has total weight 0")
    return x, w


def _standardize(pooled, w):
    mean = np.average(pooled, axis=0, weights=w)
    sd = np.sqrt(np.average((pooled - mean) ** 2, axis=0, weights=w))
    sd = np.where(sd > 0, sd, 1.0)
    return (pooled - mean) / sd


def _label_blocks(labels, n_perm, rng):
    """Yield blocks of relabelings (rows), the observed labeling excluded."""
    block = max(1, PERM_BLOCK_CELLS // len(labels))
    done = 0
    while done < n_perm:
        k = min(block, n_perm - done)
        yield rng.permuted(np.tile(labels, (k, 1)), axis=1)
        done += k


class _Sorted1D:
    """Pooled 1-D sample in sorted order; evaluates the energy distance for label rows."""

    def __init__(self, x, w, order=None):
        self.order = np.argsort(x, kind="stable") if order is None else order
        xs = x[self.order]
        self.gaps = np.diff(xs).astype(np.float32)
        # single precision halves memory traffic; ranking against the null is unaffected
        self.ws = (w[self.order] / w.sum()).astype(np.float32)
        self.cw = np.cumsum(self.ws)[:-1]
        self.total = float(self.ws.sum())

    def __call__(self, rows, presorted=False):
        lab = rows if presorted else rows[:, self.order]
        ca = np.cumsum(lab * self.ws, axis=1, dtype=np.float32)
        sa = ca[:, -1:].copy()
        sb = self.total - sa
        # F_A - F_B = C_A (1/S_A + 1/S_B) - C_w / S_B
        diff = ca[:, :-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            diff *= 1.0 / sa + 1.0 / sb
            diff -= self.cw / sb
        np.square(diff, out=diff)
        out = 2.0 * (diff @ self.gaps).astype(float)
        # a relabeling leaving one side without weight counts against the observed value
        return np.where(np.isfinite(out), out, np.inf)


def _energy_1d(x, w, label_rows):
    """Weighted 1-D energy distance for each row of labels (True = side A)."""
    return _Sorted1D(x, w)(label_rows)


def _energy_pairwise(dist, w, label_rows):
    wa = np.where(label_rows, w, 0.0)
    wb = w - wa
    c = wa / wa.sum(axis=1, keepdims=True) - wb / wb.sum(axis=1, keepdims=True)
    return -np.sum((c @ dist) * c, axis=1)


def energy_distance(a, b, wa=None, wb=None):
    """Exact weighted energy distance from pairwise Euclidean distances."""
    a, wa = _check_side(a, wa, "A")
    b, wb = _check_side(b, wb, "B")
    pooled = np.vstack([a, b])
    w = np.concatenate([wa, wb])
    labels = np.arange(len(pooled)) < len(a)
    dist = np.sqrt(np.sum((pooled[:, None, :] - pooled[None, :, :]) ** 2, axis=2))
    return float(_energy_pairwise(dist, w, labels[None, :])[0])


def _directions(p, k, rng):
    axes = np.eye(p)
    if k <= p:
        return axes
    extra = rng.standard_normal((k - p, p))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    return np.vstack([axes, extra])


def weighted_two_sample(a, b, wa=None, wb=None, n_perm=999, rng=None, method="auto",
                        n_directions=16, level=0.05):
    """Weighted energy-distance permutation test of equal laws.

    ``a`` and ``b`` are ``(n, p)`` or ``(n,)`` arrays, ``wa`` and ``wb``
    nonnegative weights.  Columns are standardized on the pooled weighted
    sample first.  ``method`` is ``"exact"`` (pairwise), ``"sliced"`` or
    ``"auto"`` (1-D exact route for one column, pairwise up to
    ``EXACT_MAX`` points, sliced beyond).
    """
    rng = np.random.default_rng(rng)
    a, wa = _check_side(a, wa, "A")
    b, wb = _check_side(b, wb, "B")
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples must have the same number of columns")
    pooled = np.vstack([a, b])
    w = np.concatenate([wa, wb])
    z = _standardize(pooled, w)
    labels = np.arange(len(z)) < len(a)
    p = z.shape[1]
    if method == "auto":
        method = "1d" if p == 1 else ("exact" if len(z) <= EXACT_MAX else "sliced")

    if method == "1d":
        # relabelings are exchangeable, so they can be drawn directly in sorted order
        sorter = _Sorted1D(z[:, 0], w)
        labels = labels[sorter.order]
        stat_fn = lambda rows: sorter(rows, presorted=True)
    elif method == "exact":
        dist = np.sqrt(np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=2))
        stat_fn = lambda rows: _energy_pairwise(dist, w, rows)
    elif method == "sliced":
        dirs = _directions(p, max(n_directions, p), rng)
        proj = z @ dirs.T
        sorters = [_Sorted1D(proj[:, j], w) for j in range(len(dirs))]
        stat_fn = lambda rows: np.mean([f(rows) for f in sorters], axis=0)
    else:
        raise ValueError(f"unknown method {method!r}")

    observed = float(stat_fn(labels[None, :])[0])
    null = np.concatenate([stat_fn(rows) for rows in _label_blocks(labels, n_perm, rng)]) if n_perm else np.zeros(0)
    tol = 1e-6 * max(1e-12, abs(observed))
    p_value = (1 + np.count_nonzero(null >= observed - tol)) / (1 + len(null))
    threshold = float(np.quantile(null, 1 - level)) if len(null) else np.inf
    return TwoSampleResult(max(observed, 0.0), float(p_value), threshold, len(a), len(b), method)


# -- reports ------------------------------------------------------------------

@dataclass
class TestEntry:
    __test__ = False

    name: str
    statistic: float
    threshold: float
    p_value: float
    n: int
    seed: int


@dataclass
class TestReport:
    """Collection of tests combined by Bonferroni at ``level``."""

    __test__ = False

    title: str
    level: float
    entries: list = field(default_factory=list)
    n_samples: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)
    extra_checks: dict = field(default_factory=dict)

    @property
    def adjusted_level(self):
        return self.level / max(1, len(self.entries))

    @property
    def min_p(self):
        return min((e.p_value for e in self.entries), default=1.0)

    @property
    def passed(self):
        return self.min_p > self.adjusted_level and all(self.extra_checks.values())

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    @property
    def conclusion(self):
        if self.title.startswith("mass-stationarity"):
            return "consistent with mass-stationarity" if self.passed else "mass-stationarity rejected"
        return "not rejected" if self.passed else "rejected"

    @property
    def statistic(self):
        worst = min(self.entries, key=lambda e: e.p_value) if self.entries else None
        return worst.statistic if worst else 0.0

    def summary(self):
        """Flat record with the fixed machine-readable field names."""
        worst = min(self.entries, key=lambda e: e.p_value) if self.entries else None
        return {
            "statistic": self.statistic,
            "p_value": self.min_p,
            "threshold": self.adjusted_level,
            "verdict": self.verdict,
            "n": self.n_samples,
            "seed": self.seed,
            "worst_test": worst.name if worst else "",
            "conclusion": self.conclusion,
        }


def _add_tests(report, prefix, left, right, wl, wr, seed, n_perm, names, joint=True):
    """Per-column 1-D tests plus one joint test; constant columns are skipped."""
    pooled = np.vstack([left, right])
    for j, name in enumerate(names):
        if np.ptp(pooled[:, j]) == 0:
            continue
        s = child_seed(seed, len(report.entries))
        res = weighted_two_sample(left[:, j], right[:, j], wl, wr, n_perm, s, level=report.level)
        report.entries.append(TestEntry(f"{prefix}{name}", res.statistic, res.threshold, res.p_value,
                                        res.n_a + res.n_b, s))
    live = np.ptp(pooled, axis=0) > 0
    if joint and live.sum() > 1:
        s = child_seed(seed, len(report.entries))
        res = weighted_two_sample(left[:, live], right[:, live], wl, wr, n_perm, s, level=report.level)
        report.entries.append(TestEntry(f"{prefix}joint", res.statistic, res.threshold, res.p_value,
                                        res.n_a + res.n_b, s))


def _halves(ensemble):
    if len(ensemble) < 2:
        raise DegenerateSample("at least two samples are needed for a two-sample comparison")
    h = len(ensemble) // 2
    return list(ensemble[:h]), list(ensemble[h:])


def _weights(samples):
    return np.array([s.weight for s in samples], dtype=float)


def _draw_eps(sample, rng):
    return rng.random(sample.dim) / sample.measure.grid


# -- re-rooting pairs ---------------------------------------------------------

def eq1_pair_sample(sample, n, rng, functionals=None, eps=None, max_retries=20):
    """Evaluate the functionals on both sides of the re-rooting identity for ``C = [0,n)^d``.

    Returns ``(left, right, weight, U, V)``: ``left`` is evaluated on the
    sample re-rooted at ``V`` with auxiliary point ``V + U``, ``right`` on
    the sample itself with auxiliary point ``U``.
    """
    d = sample.dim
    fset = functionals or default_functionals(d, sample.window, aux=True)
    eps = _draw_eps(sample, rng) if eps is None else np.asarray(eps, float)
    if mass_eps(sample.measure, -1e-9 * np.ones(d), 1e-9 * np.ones(d), eps) <= 0:
        raise OriginNotInSupport("the origin is not in the support of the measure")
    for _ in range(max_retries):
        U = rng.random(d) * n
        lo, hi = -U, n - U
        if mass_eps(sample.measure, lo, hi, eps) > 0:
            break
    else:
        raise ZeroMassBox(f"no mass in C - U after {max_retries} draws of U")
    V = sample_conditional_eps(sample.measure, lo, hi, eps, rng)
    moved = reroot(sample, V, eps)
    left = fset.evaluate(moved, advance_eps(eps, V, sample.measure.grid), aux=V + U)
    right = fset.evaluate(sample, eps, aux=U)
    return left, right, sample.weight, U, V


def _pair_job(n, fset, sample, rng):
    return eq1_pair_sample(sample, n, rng, fset)


def collect_pairs(ensemble, n, functionals, seed, threads=1):
    from functools import partial

    out = map_with_rng(partial(_pair_job, n, functionals), list(ensemble), seed, threads)
    left = np.vstack([o[0] for o in out])
    right = np.vstack([o[1] for o in out])
    w = np.array([o[2] for o in out])
    U = np.vstack([o[3] for o in out])
    V = np.vstack([o[4] for o in out])
    return left, right, w, U, V


def mass_stationarity_report(ensemble, n_list=(1, 2, 4), functionals=None, level=0.05, seed=0,
                             n_perm=1999, threads=1, extend=False):
    """Test the re-rooting identity for ``C = [0,n)^d``, ``n`` in ``n_list``.

    For every ``n``: the left tuples of the first half are compared with the
    right tuples of the second half, functional by functional and jointly,
    and the exchange symmetry ``(f(left), V+U, U)`` vs ``(f(right), U, V+U)``
    is tested jointly.  ``extend`` applies :func:`product_extend` first.
    """
    if len(ensemble) == 0:
        raise EmptyEnsemble("mass_stationarity_report needs samples")
    ensemble = list(ensemble)
    if extend:
        ensemble = extend_ensemble(ensemble, child_seed(seed, 7))
    d = ensemble[0].dim
    fset = functionals or default_functionals(d, ensemble[0].window, aux=True)
    report = TestReport("mass-stationarity", level, n_samples=len(ensemble), seed=seed)
    half_a, half_b = _halves(ensemble)
    h = len(half_a)
    for i, n in enumerate(n_list):
        left, right, w, U, V = collect_pairs(ensemble, n, fset, child_seed(seed, 1, i), threads)
        la, ra = left[:h], right[h:]
        wa, wb = w[:h], w[h:]
        if not (wa.sum() > 0 and wb.sum() > 0):
            raise DegenerateSample("a half of the ensemble has total weight 0")
        _add_tests(report, f"n={n}:", la, ra, wa, wb, child_seed(seed, 2, i), n_perm, fset.names)
        lem_a = np.hstack([la, U[:h]])
        lem_b = np.hstack([ra, (U + V)[h:]])
        s = child_seed(seed, 3, i)
        live = np.ptp(np.vstack([lem_a, lem_b]), axis=0) > 0
        res = weighted_two_sample(lem_a[:, live], lem_b[:, live], wa, wb, n_perm, s, level=level)
        report.entries.append(TestEntry(f"n={n}:exchange", res.statistic, res.threshold, res.p_value,
                                        res.n_a + res.n_b, s))
    return report


def _extend_job(sample, rng):
    return product_extend(sample, _draw_eps(sample, rng))


def extend_ensemble(ensemble, seed, threads=1):
    """:func:`product_extend` each sample with its own random in-cell origin offset."""
    return map_with_rng(_extend_job, list(ensemble), seed, threads)


# -- shift invariance -----------------------------------------------------------

def _shift_job(kind, r, n_box, axis, fset, sample, rng):
    from .shifts import Background, example1_shift_sample, line_shift_sample

    eps = _draw_eps(sample, rng)
    bg = Background.draw(n_box, sample.dim, rng) if kind == "example1" else None
    base = fset.evaluate(sample, eps, background=None if bg is None else bg.Y0)
    if kind == "line":
        moved, s = line_shift_sample(sample, r, axis=axis, eps=eps)
        v = np.zeros(sample.dim)
        v[axis] = s
        shifted = fset.evaluate(moved, advance_eps(eps, v, sample.measure.grid))
    else:
        moved, new_bg, t = example1_shift_sample(sample, bg, r, eps)
        shifted = fset.evaluate(moved, advance_eps(eps, t, sample.measure.grid), background=new_bg.Y0)
    return base, shifted


def shift_invariance_report(ensemble, shift_kind="line", r_grid=(0.5, 1.0, 2.0), level=0.05, seed=0,
                            functionals=None, n_perm=999, n_box=1, axis=0, extend=False,
                            split="halves", threads=1):
    """Compare shifted and unshifted functional laws for each ``r``.

    ``shift_kind`` is ``"line"`` (mass-carrying line shift along ``axis``)
    or ``"example1"`` (box-wise code shift against a fresh uniform
    background of box side ``n_box``; background coordinates join the
    functionals).  With ``split="halves"`` the first half is shifted and the
    second half left alone; with ``split="none"`` both come from every
    sample, so a trivial shift gives statistic 0.
    """
    from functools import partial

    if len(ensemble) == 0:
        raise EmptyEnsemble("shift_invariance_report needs samples")
    if shift_kind not in ("line", "example1"):
        raise ValueError("shift_kind must be 'line' or 'example1'")
    ensemble = list(ensemble)
    if extend:
        ensemble = extend_ensemble(ensemble, child_seed(seed, 7), threads)
    d = ensemble[0].dim
    fset = functionals or default_functionals(d, ensemble[0].window, background=shift_kind == "example1")
    report = TestReport(f"shift-invariance ({shift_kind})", level, n_samples=len(ensemble), seed=seed)
    w = _weights(ensemble)
    for i, r in enumerate(r_grid):
        job = partial(_shift_job, shift_kind, r, n_box, axis, fset)
        out = map_with_rng(job, ensemble, child_seed(seed, 4, i), threads)
        base = np.vstack([o[0] for o in out])
        moved = np.vstack([o[1] for o in out])
        if split == "halves":
            h = len(ensemble) // 2
            if h == 0:
                raise DegenerateSample("at least two samples are needed")
            left, right, wl, wr = moved[:h], base[h:], w[:h], w[h:]
        else:
            left, right, wl, wr = moved, base, w, w
        _add_tests(report, f"r={r}:", left, right, wl, wr, child_seed(seed, 5, i), n_perm, fset.names)
    return report


# -- comparisons of ensembles ---------------------------------------------------

def _eval_job(fset, sample, rng):
    return fset.evaluate(sample, _draw_eps(sample, rng))


def functional_table(ensemble, functionals, seed, threads=1):
    from functools import partial

    rows = map_with_rng(partial(_eval_job, functionals), list(ensemble), seed, threads)
    return np.vstack(rows)


def compare_ensembles(ens_a, ens_b, functionals=None, level=0.05, seed=0, n_perm=999,
                      title="two-ensemble comparison", threads=1):
    """Per-functional and joint weighted tests of equal functional laws."""
    if not ens_a or not ens_b:
        raise DegenerateSample("both ensembles must be nonempty")
    d = ens_a[0].dim
    fset = functionals or default_functionals(d, ens_a[0].window)
    fa = functional_table(ens_a, fset, child_seed(seed, 1), threads)
    fb = functional_table(ens_b, fset, child_seed(seed, 2), threads)
    report = TestReport(title, level, n_samples=len(ens_a) + len(ens_b), seed=seed)
    _add_tests(report, "", fa, fb, _weights(ens_a), _weights(ens_b), child_seed(seed, 3), n_perm, fset.names)
    return report


def _roundtrip_job(tie_break, sample, rng):
    from .palm import palm_forward, palm_inverse

    fwd = palm_forward(sample, rng, tie_break).sample
    back = palm_inverse(fwd, rng, tie_break)
    return back


def quadrant_probabilities(sample, T, S, bins=2):
    """Bin probabilities of the mass in ``[0,1)^d`` seen from ``-S`` and the bin of ``T``."""
    d = sample.dim
    moved = shift(sample, -np.asarray(S, float)).measure
    edges = np.arange(bins) / bins
    probs = []
    for cell in np.ndindex(*([bins] * d)):
        lo = edges[list(cell)]
        probs.append(mass(moved, lo, lo + 1.0 / bins))
    probs = np.array(probs)
    total = probs.sum()
    if total <= 0:
        raise ZeroMassBox("unit box of the lattice point carries no mass")
    idx = np.minimum((np.asarray(T) * bins).astype(int), bins - 1)
    return probs / total, int(np.ravel_multi_index(tuple(idx), (bins,) * d))


def weighted_bin_chi2(probs, observed, weights):
    """Wald statistic for ``sum_i w_i (e_{bin_i} - p_i) = 0``; returns ``(statistic, df, p_value)``."""
    probs = np.asarray(probs, float)
    k = probs.shape[1]
    onehot = np.eye(k)[np.asarray(observed)]
    z = (onehot - probs)[:, :-1] * np.asarray(weights, float)[:, None]
    total = z.sum(axis=0)
    cov = z.T @ z
    stat = float(total @ np.linalg.pinv(cov) @ total)
    df = int(np.linalg.matrix_rank(cov))
    return stat, df, float(sps.chi2.sf(stat, df)) if df else 1.0


def roundtrip_report(ensemble, level=0.05, seed=0, functionals=None, n_perm=999, tie_break="displacement",
                     bins=2, threads=1):
    """Forward then inverse on the first half, compared with the untouched second half.

    Also checks that the mean output weight is 1 within three standard
    errors and that ``T`` follows the unit-box mass of its lattice point
    (weighted chi-square over ``bins^d`` sub-boxes).
    """
    from functools import partial

    if len(ensemble) == 0:
        raise EmptyEnsemble("roundtrip_report needs samples")
    half_a, half_b = _halves(list(ensemble))
    back = map_with_rng(partial(_roundtrip_job, tie_break), half_a, child_seed(seed, 6), threads)
    report = compare_ensembles(back, half_b, functionals, level, seed, n_perm, "round trip", threads)
    report.n_samples = len(ensemble)
    w = _weights(back)
    se = w.std(ddof=1) / np.sqrt(len(w)) if len(w) > 1 else np.inf
    report.extra.update(mean_weight=float(w.mean()), weight_se=float(se))
    report.extra_checks["mean_weight_within_3se"] = bool(abs(w.mean() - 1.0) <= 3 * se)
    pb = [quadrant_probabilities(s, s.info["T"], s.info["S"], bins) for s in back]
    probs = np.vstack([p for p, _ in pb])
    obs = np.array([o for _, o in pb])
    stat, df, p = weighted_bin_chi2(probs, obs, w)
    report.entries.append(TestEntry("T_given_sample", stat, float(sps.chi2.isf(level, df)) if df else np.inf, p,
                                    len(back), child_seed(seed, 6)))
    return report
