"""Command-line experiment runner.

Every subcommand reads an optional INI config (sections ``[generator]``,
``[run]`` and ``[test]``); command-line flags override file values.  Exit
status is 0 when all selected tests pass, 1 when a test rejects and 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .ensemble import child_seed, map_with_rng
from .errors import ConfigError, PalmSimError
from .functionals import default_functionals
from .generators import GeneratorSpec, generate_ensemble
from .io import read_ensemble, write_ensemble, write_manifest, write_report, write_summary_csv

TRANSFORMS = ("palm_forward", "palm_inverse", "density_palm", "density_inverse", "product_extend")

# key -> (section, type); flags use the same names with dashes
FIELDS = {
    "kind": ("generator", str),
    "intensity": ("generator", float),
    "dim": ("generator", int),
    "window": ("generator", int),
    "grid": ("generator", int),
    "base_level": ("generator", float),
    "shape": ("generator", float),
    "count": ("generator", int),
    "control": ("generator", str),
    "offset": ("generator", "floats"),
    "seed": ("run", int),
    "n_samples": ("run", int),
    "threads": ("run", int),
    "out": ("run", str),
    "transforms": ("run", "names"),
    "input": ("run", str),
    "level": ("test", float),
    "n_perm": ("test", int),
    "n_list": ("test", "floats"),
    "r_grid": ("test", "floats"),
    "mode": ("test", str),
    "extend": ("test", "bool"),
    "n_box": ("test", float),
    "axis": ("test", int),
}

DEFAULT_KIND = {
    "generate": "poisson",
    "palm": "poisson",
    "invert": "palm_poisson",
    "test-mass-stat": "palm_poisson",
    "roundtrip": "poisson",
}


@dataclass
class ExperimentConfig:
    spec: GeneratorSpec
    transforms: tuple = ()
    n_samples: int = 1000
    seed: int = 0
    threads: int = 1
    out: str = "palmsim-out"
    input: str = ""
    level: float = 0.05
    n_perm: int = 1999
    n_list: tuple = (1, 2, 4)
    r_grid: tuple = (0.5, 1.0, 2.0)
    mode: str = "line"
    extend: bool = False
    n_box: float = 2.0
    axis: int = 0
    lines: dict = field(default_factory=dict, repr=False)

    def echo(self):
        d = asdict(self)
        d.pop("lines")
        d["spec"] = asdict(self.spec)
        return d


def _convert(key, raw, kind, line=None):
    try:
        if kind == "floats":
            return tuple(float(x) for x in str(raw).replace(",", " ").split())
        if kind == "names":
            return tuple(x.strip() for x in str(raw).replace(",", " ").split() if x.strip())
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read {key} = {raw!r}", field=key, line=line) from None


def _key_lines(text):
    """Line number of every ``key = value`` entry, per section."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif s and not s.startswith(("#", ";")) and ("=" in s or ":" in s):
            key = s.replace(":", "=", 1).split("=", 1)[0].strip().lower()
            lines[key] = no
    return lines


def read_config_file(path):
    """Return ``({key: value}, {key: line})`` from an INI file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} not found", field="config")
    text = p.read_text()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}", field="config", line=getattr(exc, "lineno", None)) from None
    lines = _key_lines(text)
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in FIELDS:
                raise ConfigError(f"unknown key {key!r} in [{section}]", field=key, line=lines.get(key))
            if FIELDS[key][0] != section:
                raise ConfigError(f"{key} belongs in [{FIELDS[key][0]}], not [{section}]", field=key,
                                  line=lines.get(key))
            values[key] = _convert(key, raw, FIELDS[key][1], lines.get(key))
    return values, lines


def build_config(args, command):
    values, lines = ({}, {}) if not args.config else read_config_file(args.config)
    for key, (_, kind) in FIELDS.items():
        raw = getattr(args, key, None)
        if raw is not None:
            values[key] = _convert(key, raw, kind)
            lines.pop(key, None)
    gen_keys = [k for k, (sec, _) in FIELDS.items() if sec == "generator"]
    gen = {k: values[k] for k in gen_keys if k in values}
    if "kind" not in gen:
        mode = values.get("mode", "line")
        gen["kind"] = DEFAULT_KIND.get(command, "shot_noise_density" if mode == "line" else "palm_poisson")
    if "seed" in values:
        gen["seed"] = values["seed"]
    try:
        spec = GeneratorSpec(**gen)
    except ConfigError as exc:
        raise ConfigError(str(exc).split("] ", 1)[-1], field=exc.field, line=lines.get(exc.field)) from None
    rest = {k: values[k] for k in values if FIELDS[k][0] != "generator"}
    cfg = ExperimentConfig(spec=spec, lines=lines, **rest)
    validate_config(cfg)
    return cfg


def _line(cfg, key):
    return cfg.lines.get(key)


def validate_config(cfg):
    if cfg.n_samples < 2:
        raise ConfigError("n_samples must be at least 2", field="n_samples", line=_line(cfg, "n_samples"))
    if not 0 < cfg.level < 1:
        raise ConfigError("level must lie in (0, 1)", field="level", line=_line(cfg, "level"))
    if cfg.n_perm < 1:
        raise ConfigError("n_perm must be positive", field="n_perm", line=_line(cfg, "n_perm"))
    if cfg.threads < 1:
        raise ConfigError("threads must be positive", field="threads", line=_line(cfg, "threads"))
    if cfg.mode not in ("line", "example1"):
        raise ConfigError("mode must be 'line' or 'example1'", field="mode", line=_line(cfg, "mode"))
    if any(n <= 0 for n in cfg.n_list):
        raise ConfigError("n_list entries must be positive", field="n_list", line=_line(cfg, "n_list"))
    if not cfg.n_box > 0 or cfg.spec.window % cfg.n_box:
        raise ConfigError("n_box must be positive and divide the window", field="n_box", line=_line(cfg, "n_box"))
    if not 0 <= cfg.axis < cfg.spec.dim:
        raise ConfigError("axis out of range", field="axis", line=_line(cfg, "axis"))
    state = "density" if cfg.spec.kind == "shot_noise_density" else "atomic"
    for name in cfg.transforms:
        if name not in TRANSFORMS:
            raise ConfigError(f"unknown transform {name!r}", field="transforms", line=_line(cfg, "transforms"))
        if name.startswith("density_") and state != "density":
            raise ConfigError(f"{name} needs a density measure", field="transforms", line=_line(cfg, "transforms"))
        if name == "product_extend":
            state = "density"


# -- pipeline -------------------------------------------------------------------

def _forward(tie_break, sample, rng):
    from .palm import safe_forward

    return safe_forward(sample, rng, tie_break)


def _inverse(sample, rng):
    from .palm import palm_inverse

    return palm_inverse(sample, rng)


def _extend(sample, rng):
    from .measure import product_extend

    return product_extend(sample, rng.random(sample.dim) / sample.measure.grid)


def apply_transforms(ensemble, names, seed, threads=1):
    from .palm import density_inverse, density_palm

    for i, name in enumerate(names):
        s = child_seed(seed, 90, i)
        if name == "palm_forward":
            ensemble = map_with_rng(partial(_forward, "displacement"), ensemble, s, threads)
        elif name == "palm_inverse":
            ensemble = map_with_rng(_inverse, ensemble, s, threads)
        elif name == "density_palm":
            ensemble = [density_palm(x) for x in ensemble]
        elif name == "density_inverse":
            ensemble = [density_inverse(x) for x in ensemble]
        elif name == "product_extend":
            ensemble = map_with_rng(_extend, ensemble, s, threads)
    return ensemble


def sparsity_warning(ensemble):
    """Message when the window is under 8 typical atom spacings (lattice cells then feel the torus)."""
    counts = [s.measure.n_atoms for s in ensemble if s.measure.n_atoms]
    if not counts:
        return None
    d, w = ensemble[0].dim, ensemble[0].window
    spacing = (w ** d / np.mean(counts)) ** (1.0 / d)
    if w < 8 * spacing:
        return (f"window {w} is under 8 typical atom spacings ({spacing:.3g}); "
                "Voronoi cells on the torus may differ from the plane")
    return None


def load_ensemble(cfg):
    if cfg.input:
        if not Path(cfg.input).exists():
            raise ConfigError(f"input ensemble {cfg.input} not found", field="input", line=_line(cfg, "input"))
        ens = read_ensemble(cfg.input)
    else:
        ens = generate_ensemble(cfg.spec, cfg.n_samples, cfg.seed, cfg.threads)
    msg = sparsity_warning(ens)
    if msg:
        print(f"palmsim: warning: {msg}", file=sys.stderr)
    return ens


def _write_outputs(cfg, command, ensemble, report=None, write_samples=True):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    if ensemble is not None:
        d = ensemble[0].dim
        fset = default_functionals(d, ensemble[0].window)
        write_summary_csv(out / "summary.csv", ensemble, fset, cfg.seed)
        outputs["summary"] = "summary.csv"
        if write_samples:
            write_ensemble(out / "ensemble.txt", ensemble)
            outputs["ensemble"] = "ensemble.txt"
    if report is not None:
        write_report(out / "report", report)
        outputs["report"] = ["report.txt", "report.json"]
    write_manifest(out / "manifest.json", cfg.echo(), command, outputs)
    return out


def _default_chain(cfg, default):
    return cfg.transforms if cfg.transforms else default


def cmd_generate(cfg):
    ens = apply_transforms(load_ensemble(cfg), cfg.transforms, cfg.seed, cfg.threads)
    out = _write_outputs(cfg, "generate", ens)
    print(f"wrote {len(ens)} samples to {out}")
    return 0


def cmd_palm(cfg):
    ens = load_ensemble(cfg)
    chain = _default_chain(cfg, ("density_palm",) if ens[0].measure.density is not None and not ens[0].measure.n_atoms
                           else ("palm_forward",))
    ens = apply_transforms(ens, chain, cfg.seed, cfg.threads)
    out = _write_outputs(cfg, "palm", ens)
    print(f"wrote {len(ens)} Palm samples to {out}")
    return 0


def cmd_invert(cfg):
    ens = load_ensemble(cfg)
    chain = _default_chain(cfg, ("density_inverse",) if ens[0].measure.density is not None and not ens[0].measure.n_atoms
                           else ("palm_inverse",))
    ens = apply_transforms(ens, chain, cfg.seed, cfg.threads)
    out = _write_outputs(cfg, "invert", ens)
    print(f"wrote {len(ens)} stationary samples to {out}")
    return 0


def _palm_ensemble(cfg):
    ens = load_ensemble(cfg)
    default = ("density_palm",) if cfg.spec.kind == "shot_noise_density" and not cfg.input else ()
    return apply_transforms(ens, _default_chain(cfg, default), cfg.seed, cfg.threads)


def _finish(cfg, command, ens, report):
    _write_outputs(cfg, command, ens, report, write_samples=False)
    s = report.summary()
    print(f"{report.title}: {s['conclusion']} (verdict {s['verdict']}, min p {s['p_value']:.4g}, "
          f"threshold {s['threshold']:.4g}, n {s['n']})")
    return 0 if report.passed else 1


def cmd_test_mass_stat(cfg):
    from .stattests import mass_stationarity_report

    ens = _palm_ensemble(cfg)
    n_list = tuple(int(n) if float(n).is_integer() else n for n in cfg.n_list)
    report = mass_stationarity_report(ens, n_list, None, cfg.level, child_seed(cfg.seed, 50), max(cfg.n_perm, 1),
                                      cfg.threads, cfg.extend)
    return _finish(cfg, "test-mass-stat", ens, report)


def cmd_shift_invariance(cfg):
    from .stattests import shift_invariance_report

    ens = _palm_ensemble(cfg)
    report = shift_invariance_report(ens, cfg.mode, cfg.r_grid, cfg.level, child_seed(cfg.seed, 51), None,
                                     cfg.n_perm, cfg.n_box, cfg.axis, cfg.extend, threads=cfg.threads)
    return _finish(cfg, "shift-invariance", ens, report)


def cmd_roundtrip(cfg):
    from .stattests import roundtrip_report

    ens = apply_transforms(load_ensemble(cfg), cfg.transforms, cfg.seed, cfg.threads)
    report = roundtrip_report(ens, cfg.level, child_seed(cfg.seed, 52), None, cfg.n_perm, threads=cfg.threads)
    return _finish(cfg, "roundtrip", ens, report)


# -- selftest -------------------------------------------------------------------

def selftest_checks():
    """Deterministic micro-oracles; returns ``[(name, ok, detail)]``."""
    from .lattice import cell_of, voronoi_assign
    from .measure import MeasureWindow
    from .phi import phi_decode, phi_encode, points_to_ints, uint_to_bits, encode_bits, decode_bits, bits_to_uint
    from .shifts import TileMeasure, build_cdf, line_shift, psi_shift

    checks = []

    def check(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    owner = voronoi_assign(np.array([[0], [3]]), 8, 1)
    cell = sorted(int(x) for x in cell_of(owner, [0]).ravel())
    check("voronoi cell(0) for N={0,3}, W=8", cell == [0, 1, 6, 7], str(cell))
    owner = voronoi_assign(np.array([[0], [2]]), 4, 1)
    cell = sorted(int(x) for x in cell_of(owner, [0]).ravel())
    check("tie-break cell(0) for N={0,2}, W=4", cell == [0, 1, 3], str(cell))

    a, b = phi_encode([0.5, 0.5], bits=8), phi_encode([0.25, 0.0], bits=8)
    check("phi(0.5, 0.5) = 0.625", a == 0.625, repr(a))
    check("phi(0.25, 0) = 0.125", b == 0.125, repr(b))
    back = phi_decode(np.array([0.625, 0.125]), 2, bits=8)
    check("phi decode of both", np.array_equal(back, [[0.5, 0.5], [0.25, 0.0]]), str(back.tolist()))

    for d, bits in ((1, 8), (2, 8), (3, 5)):
        ints = np.stack(np.meshgrid(*([np.arange(2 ** bits, dtype=np.uint64)] * d), indexing="ij"), -1).reshape(-1, d)
        coord = uint_to_bits(ints, bits)
        dec, flags = decode_bits(encode_bits(coord), d, bits)
        ok = np.array_equal(bits_to_uint(dec), ints) and not flags.any()
        check(f"phi round trip, exhaustive d={d}, B={bits}", ok)
    s = np.arange(256) / 256.0
    check("phi is the identity for d=1", np.array_equal(phi_encode(s[:, None], bits=8), s))

    m = MeasureWindow(1, 8, None, None, np.full(32, 2.0), 4)
    v = line_shift(m, 3.0)
    check("s_r = 1.5 for Z = 2, r = 3", v == 1.5, repr(v))
    z = np.full(32, 3.0)
    z[:4] = 1.0
    v = line_shift(MeasureWindow(1, 8, None, None, z, 4), 2.0)
    check("s_r = 4/3 for the piecewise density", abs(v - 4 / 3) <= 1e-12, repr(v))

    cdf = build_cdf(TileMeasure.regular(np.ones(64)))
    s = np.arange(1024) / 1024.0
    moved = psi_shift(cdf, 0.25, s[:, None])[:, 0]
    check("psi_r(s) = s + r mod 1 for uniform mass", np.array_equal(moved, np.mod(s + 0.25, 1.0)))
    return checks


def cmd_selftest(cfg=None):
    start = time.perf_counter()
    checks = selftest_checks()
    for name, ok, detail in checks:
        print(f"{'ok  ' if ok else 'FAIL'} {name}" + (f"  [{detail}]" if detail and not ok else ""))
    elapsed = time.perf_counter() - start
    n_bad = sum(not ok for _, ok, _ in checks)
    print(f"{len(checks) - n_bad}/{len(checks)} checks passed in {elapsed:.2f} s")
    return 0 if n_bad == 0 else 1


COMMANDS = {
    "generate": cmd_generate,
    "palm": cmd_palm,
    "invert": cmd_invert,
    "test-mass-stat": cmd_test_mass_stat,
    "shift-invariance": cmd_shift_invariance,
    "roundtrip": cmd_roundtrip,
    "selftest": cmd_selftest,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run")
    g.add_argument("--config", help="INI file with [generator], [run] and [test] sections")
    g.add_argument("--seed", type=int)
    g.add_argument("--n-samples", dest="n_samples", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--window", type=int)
    g.add_argument("--grid", type=int)
    g.add_argument("--level", type=float)
    g.add_argument("--threads", type=int)
    g.add_argument("--out")
    g.add_argument("--input", help="read the ensemble from a file written by 'generate'")
    g.add_argument("--transforms", help="comma-separated chain, e.g. palm_forward,product_extend")
    gen = common.add_argument_group("generator")
    gen.add_argument("--kind")
    gen.add_argument("--intensity", type=float)
    gen.add_argument("--base-level", dest="base_level", type=float)
    gen.add_argument("--shape", type=float)
    gen.add_argument("--count", type=int)
    gen.add_argument("--control", choices=("a", "b"))
    gen.add_argument("--offset", help="comma-separated offset of the extra atom (control a)")
    t = common.add_argument_group("tests")
    t.add_argument("--n-perm", dest="n_perm", type=int)
    t.add_argument("--n-list", dest="n_list", help="comma-separated box sides")
    t.add_argument("--r-grid", dest="r_grid", help="comma-separated shift levels")
    t.add_argument("--mode", choices=("line", "example1"))
    t.add_argument("--extend", action="store_const", const=True, default=None,
                   help="apply the product extension before testing")
    t.add_argument("--n-box", dest="n_box", type=float)
    t.add_argument("--axis", type=int)

    parser = argparse.ArgumentParser(prog="palmsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "generate an ensemble and write it with its summary table",
        "palm": "apply the Palm transform (forward or density)",
        "invert": "apply the inverse Palm transform",
        "test-mass-stat": "test mass-stationarity of a Palm ensemble",
        "shift-invariance": "test invariance under preserving shifts",
        "roundtrip": "forward then inverse, compared with the original",
        "selftest": "run the deterministic micro-oracles",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest()
    try:
        cfg = build_config(args, args.command)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"palmsim: configuration error: {exc}", file=sys.stderr)
        return 2
    except PalmSimError as exc:
        print(f"palmsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
