import csv
import json

import numpy as np

from palmsim.functionals import default_functionals
from palmsim.generators import GeneratorSpec, generate_ensemble
from palmsim.io import CSV_BASE_COLUMNS, read_ensemble, write_ensemble, write_report, write_summary_csv
from palmsim.measure import product_extend
from palmsim.palm import palm_forward
from palmsim.stattests import TestEntry, TestReport


def _same(a, b):
    assert a.dim == b.dim and a.window == b.window and a.weight == b.weight
    assert np.array_equal(a.measure.atoms, b.measure.atoms)
    assert np.array_equal(a.measure.masses, b.measure.masses)
    for x, y in ((a.measure.density, b.measure.density), (a.marks.values, b.marks.values)):
        assert (x is None and y is None) or np.array_equal(x, y)


def test_ensemble_round_trip_atomic_and_density(tmp_path):
    for kind in ("poisson", "shot_noise_density"):
        ens = generate_ensemble(GeneratorSpec(kind, dim=2, window=4, grid=2), 5, seed=1)
        write_ensemble(tmp_path / f"{kind}.txt", ens)
        back = read_ensemble(tmp_path / f"{kind}.txt")
        assert len(back) == 5
        for a, b in zip(ens, back):
            _same(a, b)


def test_round_trip_keeps_weights_info_and_points(tmp_path):
    rng = np.random.default_rng(2)
    ens = generate_ensemble(GeneratorSpec("poisson", dim=1, window=8), 4, seed=3)
    fwd = [palm_forward(s, rng).sample for s in ens]
    ext = [product_extend(s, np.zeros(1)) for s in fwd]
    write_ensemble(tmp_path / "e.txt", ext)
    back = read_ensemble(tmp_path / "e.txt")
    for a, b in zip(ext, back):
        _same(a, b)
        assert a.info.keys() == b.info.keys()
        assert b.marks.inert_axes == a.marks.inert_axes


def test_summary_csv_columns_and_values(tmp_path):
    ens = generate_ensemble(GeneratorSpec("binomial", count=3, dim=1, window=8), 6, seed=4)
    fset = default_functionals(1, 8)
    write_summary_csv(tmp_path / "s.csv", ens, fset, seed=0)
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert list(rows[0].keys()) == CSV_BASE_COLUMNS + fset.names
    assert len(rows) == 6
    assert all(int(r["n_atoms"]) == 3 and float(r["total_mass"]) == 3.0 for r in rows)
    assert [int(r["index"]) for r in rows] == list(range(6))


def test_report_files(tmp_path):
    rep = TestReport("demo", 0.05, [TestEntry("a", 0.1, 0.2, 0.5, 10, 1), TestEntry("b", 0.3, 0.2, 0.01, 10, 2)],
                     n_samples=10, seed=7)
    rec = write_report(tmp_path / "r", rep)
    assert rec["verdict"] == "fail" and rec["worst_test"] == "b"
    text = (tmp_path / "r.txt").read_text()
    assert "verdict = fail" in text and "test.a = statistic" in text
    assert json.loads((tmp_path / "r.json").read_text())["threshold"] == 0.025
