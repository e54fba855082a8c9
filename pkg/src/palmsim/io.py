"""Reading and writing ensembles, summary tables, reports and run manifests.

Ensembles are stored as a line-oriented text file (one ``sample`` header
line per sample followed by its ``atom`` and ``point`` lines) plus a
sidecar ``.npz`` holding density and mark grids.
"""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np

from .ensemble import child_seed
from .measure import MarkField, MeasureWindow, WeightedSample

FORMAT = "palmsim-ensemble 1"
CSV_BASE_COLUMNS = ["index", "weight", "n_atoms", "total_mass"]


def _fmt(x):
    return repr(float(x))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_ensemble(path, ensemble):
    """Write ``path`` (text) and ``path + '.npz'`` (grids)."""
    path = Path(path)
    grids = {}
    lines = [FORMAT]
    for i, s in enumerate(ensemble):
        m, mk = s.measure, s.marks
        header = {
            "dim": m.dim,
            "window": m.window,
            "grid": m.grid,
            "weight": s.weight,
            "n_atoms": m.n_atoms,
            "n_points": 0 if mk.points is None else len(mk.points),
            "inert_axes": mk.inert_axes,
            "info": _jsonable(s.info),
        }
        lines.append(f"sample {i} " + json.dumps(header, sort_keys=True))
        for a, w in zip(m.atoms, m.masses):
            lines.append("atom " + " ".join(_fmt(x) for x in a) + " " + _fmt(w))
        if mk.points is not None:
            for p, v in zip(mk.points, mk.point_marks):
                lines.append("point " + " ".join(_fmt(x) for x in p) + " " + _fmt(v))
        if m.density is not None:
            grids[f"density_{i}"] = np.asarray(m.density)
        if mk.values is not None:
            grids[f"marks_{i}"] = np.asarray(mk.values)
    path.write_text("\n".join(lines) + "\n")
    with open(str(path) + ".npz", "wb") as fh:
        np.savez_compressed(fh, **grids)


def read_ensemble(path):
    path = Path(path)
    text = path.read_text().splitlines()
    if not text or text[0].strip() != FORMAT:
        raise ValueError(f"{path} is not a palmsim ensemble file")
    npz = Path(str(path) + ".npz")
    grids = dict(np.load(npz)) if npz.exists() else {}
    samples = []
    current = None

    def finish():
        if current is None:
            return
        i, h, atoms, pts = current
        d = h["dim"]
        atoms = np.array(atoms, float).reshape(-1, d + 1)
        pts = np.array(pts, float).reshape(-1, d + 1)
        measure = MeasureWindow(d, h["window"], atoms[:, :d], atoms[:, d], grids.get(f"density_{i}"), h["grid"])
        marks = MarkField(
            d, h["window"], h["grid"], grids.get(f"marks_{i}"),
            pts[:, :d] if h["n_points"] else None, pts[:, d] if h["n_points"] else None, h["inert_axes"],
        )
        samples.append(WeightedSample(marks, measure, h["weight"], h["info"]))

    for line in text[1:]:
        if not line.strip():
            continue
        kind, _, rest = line.partition(" ")
        if kind == "sample":
            finish()
            idx, _, header = rest.partition(" ")
            current = (int(idx), json.loads(header), [], [])
        elif kind == "atom":
            current[2].append([float(x) for x in rest.split()])
        elif kind == "point":
            current[3].append([float(x) for x in rest.split()])
        else:
            raise ValueError(f"unexpected line in {path}: {line[:40]!r}")
    finish()
    return samples


def write_summary_csv(path, ensemble, functionals, seed):
    """One row per sample: index, weight, atom count, total mass, functional values.

    The in-cell origin offset used for sample ``i`` is derived from
    ``(seed, i)``, so the file is reproducible.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_BASE_COLUMNS + functionals.names)
        for i, s in enumerate(ensemble):
            rng = np.random.default_rng(child_seed(seed, i))
            eps = rng.random(s.dim) / s.measure.grid
            values = functionals.evaluate(s, eps)
            row = [i, _fmt(s.weight), s.measure.n_atoms, _fmt(s.measure.total_mass())]
            writer.writerow(row + [_fmt(v) for v in values])


def report_record(report):
    rec = report.summary()
    rec.update(
        title=report.title,
        level=report.level,
        n_tests=len(report.entries),
        tests=[
            {"name": e.name, "statistic": e.statistic, "p_value": e.p_value, "threshold": e.threshold,
             "n": e.n, "seed": e.seed}
            for e in report.entries
        ],
        extra=report.extra,
        extra_checks=report.extra_checks,
    )
    return _jsonable(rec)


def write_report(stem, report):
    """Write ``stem.txt`` (key = value lines) and ``stem.json``."""
    rec = report_record(report)
    lines = [f"{k} = {rec[k]}" for k in ("title", "verdict", "conclusion", "statistic", "p_value",
                                          "threshold", "n", "seed", "level", "n_tests", "worst_test")]
    for k, v in rec["extra"].items():
        lines.append(f"extra.{k} = {v}")
    for k, v in rec["extra_checks"].items():
        lines.append(f"check.{k} = {v}")
    for t in rec["tests"]:
        lines.append(f"test.{t['name']} = statistic {t['statistic']:.6g} p_value {t['p_value']:.6g} "
                     f"threshold {t['threshold']:.6g}")
    Path(str(stem) + ".txt").write_text("\n".join(lines) + "\n")
    Path(str(stem) + ".json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    return rec


def versions():
    import scipy

    from . import __version__

    return {"palmsim": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(path, config, command, outputs):
    manifest = {"command": command, "config": _jsonable(config), "outputs": outputs, "versions": versions()}
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
