"""Command-line front end: configuration, pipelines and reports.

Exit codes
----------
0  success (certified for ``certify``)
1  runtime error
2  refused (totally geodesic surface, C a >= 1, unsupported surface)
3  not_found (certificate search exhausted)
4  configuration error
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import AdmissibilityError, ConfigError, MissingResultError, QuantumLayerError

EXIT_OK, EXIT_ERROR, EXIT_REFUSED, EXIT_NOT_FOUND, EXIT_CONFIG = 0, 1, 2, 3, 4
COMMANDS = ("describe", "certify", "solve", "sweep", "probe-ess", "report")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

# section -> key -> parser
_FLOAT, _INT = float, int


def _floats(text):
    return [float(x) for x in text.replace(";", ",").replace("/", ",").split(",") if x.strip()]


SCHEMA = {
    "grid": {"h": _FLOAT, "n_t": _INT, "radii": _floats, "uniform_until": _FLOAT,
             "growth": _FLOAT, "max_spacing": _FLOAT, "order": _INT, "quad_n_t": _INT},
    "budget": {"max_candidates": _INT, "radii": _floats},
    "probe": {"compact_radius": _FLOAT, "target_mass": _FLOAT, "energy": _floats},
    "sweep": {"a_values": _floats},
}
TOP = {"command": str, "a": _FLOAT, "out": str, "threads": _INT}


@dataclass
class RunConfig:
    family: str = "hyperboloid"
    surface_params: dict = field(default_factory=dict)
    a: float = 0.5
    command: str = "describe"
    out: str = "qlayer-out"
    grid: dict = field(default_factory=dict)
    budget: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    threads: int | None = None

    def validate(self):
        from .surfaces import FAMILIES
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown surface family {self.family!r}", field="surface.family")
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ConfigError("layer half-width must be positive", field="a")
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}", field="command")

    def echo(self) -> dict:
        return {"surface": {"family": self.family, **self.surface_params}, "a": self.a,
                "command": self.command, "grid": dict(self.grid), "budget": dict(self.budget),
                "probe": dict(self.probe), "sweep": dict(self.sweep)}


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    """Parse the flat ``key = value`` format (``#`` comments, section prefixes)."""
    cfg = cfg or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        try:
            _assign(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(str(exc.args[0]) if exc.args else "invalid value",
                              line=lineno, field=key) from None
        except ValueError as exc:
            raise ConfigError(f"cannot parse {value!r}: {exc}", line=lineno, field=key) from None
    return cfg


def _assign(cfg: RunConfig, key: str, value: str):
    if "." not in key:
        if key not in TOP:
            raise ConfigError(f"unknown key {key!r}")
        setattr(cfg, key, TOP[key](value))
        return
    section, name = key.split(".", 1)
    if section == "surface":
        if name == "family":
            cfg.family = value
        else:
            cfg.surface_params[name] = float(value)
        return
    if section not in SCHEMA:
        raise ConfigError(f"unknown section {section!r}")
    if name not in SCHEMA[section]:
        raise ConfigError(f"unknown key {name!r} in section {section!r}")
    getattr(cfg, section)[name] = SCHEMA[section][name](value)


def parse_surface_spec(text: str):
    """'hyperboloid:slope=1,width=1' -> ('hyperboloid', {'slope': 1.0, 'width': 1.0})."""
    family, _, rest = text.partition(":")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"surface parameter {item!r} is not key=value", field="--surface")
        try:
            params[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"surface parameter {k!r} is not a number", field="--surface") from None
    return family.strip(), params


def _parse_kv_flag(text: str, section: str):
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        k, sep, v = item.partition("=")
        if not sep or k.strip() not in SCHEMA[section]:
            raise ConfigError(f"bad --{section} entry {item!r}", field=f"--{section}")
        try:
            out[k.strip()] = SCHEMA[section][k.strip()](v)
        except ValueError:
            raise ConfigError(f"cannot parse {v!r}", field=f"--{section}.{k.strip()}") from None
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    kappa_sq: float
    version: str = __version__
    admissibility: dict | None = None
    certificate: dict | None = None
    spectrum: dict | None = None
    sweep: list | None = None
    probe: list | None = None
    notes: list = field(default_factory=list)
    error: str | None = None
    timings: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK
    # in-memory results for plot data
    _study: object = None

    def to_dict(self) -> dict:
        d = {"config": self.config, "kappa_sq": self.kappa_sq, "version": self.version,
             "admissibility": self.admissibility, "certificate": self.certificate,
             "spectrum": self.spectrum, "sweep": self.sweep, "probe": self.probe,
             "notes": list(self.notes), "error": self.error, "exit_code": self.exit_code}
        return _jsonable(d)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        try:
            return _jsonable(x.item())
        except (ValueError, AttributeError):
            return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def write_report(report: RunReport, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    (out_dir / "timings.json").write_text(json.dumps(report.timings, sort_keys=True, indent=2) + "\n")


PLOT_KINDS = ("eigenfunction-slice", "lambda-vs-R", "margin-vs-a")


def emit_plot_data(report: RunReport, kind: str, out_dir) -> Path:
    """Write plain-text columns for plotting; returns the file path.

    Raises
    ------
    MissingResultError
        If the report lacks the results this kind needs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "lambda-vs-R":
        if not report.spectrum:
            raise MissingResultError("lambda-vs-R needs spectrum results")
        path = out_dir / "lambda_vs_R.txt"
        rows = zip(report.spectrum["radii"], report.spectrum["lambdas"])
        _write_columns(path, "R lambda_min", rows)
    elif kind == "eigenfunction-slice":
        study = report._study
        if study is None or not study.results:
            raise MissingResultError("eigenfunction-slice needs an eigenvector")
        res = study.results[-1]
        path = out_dir / "eigenfunction_slice.txt"
        _write_columns(path, "rho t value",
                       zip(res.coords["rho"], res.coords["t"], res.eigenvector))
    elif kind == "margin-vs-a":
        if not report.sweep:
            raise MissingResultError("margin-vs-a needs sweep results")
        path = out_dir / "margin_vs_a.txt"
        _write_columns(path, "a Ca Q_value kappa_sq",
                       ((r["a"], r["Ca"], r["Q_value"], r["kappa_sq"]) for r in report.sweep))
    else:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    return path


def _write_columns(path, header, rows):
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for row in rows:
            fh.write(" ".join("nan" if v is None else repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def _surface(cfg: RunConfig):
    from .surfaces import make_surface
    try:
        return make_surface(cfg.family, **cfg.surface_params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {cfg.family!r}: {exc}", field="surface") from None


def _budget(cfg: RunConfig):
    from .certify import SearchBudget
    b = SearchBudget()
    if "max_candidates" in cfg.budget:
        b.max_candidates = cfg.budget["max_candidates"]
    if "radii" in cfg.budget:
        b.radii = tuple(cfg.budget["radii"])
    if "order" in cfg.grid:
        b.order = cfg.grid["order"]
    if "quad_n_t" in cfg.grid:
        b.n_t = cfg.grid["quad_n_t"]
    return b


def _study(surface, layer, cfg: RunConfig):
    from .spectral import truncation_study
    g = cfg.grid
    scale = surface.scale
    radii = g.get("radii", [100 * scale, 200 * scale, 400 * scale])
    mesh_kw = {k: g[k] for k in ("uniform_until", "growth", "max_spacing") if k in g}
    return truncation_study(surface, layer, radii, h=g.get("h", 0.1 * scale),
                            n_t=g.get("n_t", 16), mesh_kw=mesh_kw)


def _admissibility(surface, layer, report):
    from .surfaces import admissibility
    try:
        rep = admissibility(surface, layer.a)
    except AdmissibilityError as exc:
        report.admissibility = getattr(exc, "report", None) and exc.report.to_dict()
        report.error = str(exc)
        report.exit_code = EXIT_REFUSED
        return None
    report.admissibility = rep.to_dict()
    if rep.totally_geodesic:
        report.notes.append("totally geodesic surface: certifier refuses, spectrum starts at kappa^2")
    if surface.symmetry != "radial" or not rep.asymptotically_flat:
        report.notes.append("truncation results are an upper bound only")
    return rep


def run(cfg: RunConfig) -> RunReport:
    """Execute the configured pipeline and return its report."""
    from .layer import LayerConfig
    cfg.validate()
    layer = LayerConfig(cfg.a)
    report = RunReport(config=cfg.echo(), kappa_sq=layer.kappa_sq)
    surface = _surface(cfg)
    clock = time.perf_counter
    t0 = clock()
    try:
        if cfg.command == "sweep":
            _run_sweep(surface, cfg, report)
        else:
            rep = _admissibility(surface, layer, report)
            report.timings["admissibility"] = clock() - t0
            if rep is None:
                return report
            if cfg.command in ("certify", "report"):
                _run_certify(surface, layer, rep, cfg, report)
            if cfg.command in ("solve", "report") or (
                    cfg.command == "certify" and report.certificate
                    and report.certificate["verdict"] == "certified"):
                t1 = clock()
                study = _study(surface, layer, cfg)
                report._study = study
                report.spectrum = study.to_dict()
                report.timings["solver"] = clock() - t1
            if cfg.command == "probe-ess":
                _run_probe(surface, layer, cfg, report)
    except QuantumLayerError as exc:
        report.error = f"{type(exc).__name__}: {exc}"
        report.exit_code = EXIT_ERROR
    report.timings["total"] = clock() - t0
    return report


def _run_certify(surface, layer, rep, cfg, report):
    from .certify import certify_general_curve, certify_nonneg_curvature
    t = time.perf_counter()
    if rep.K_sign == "nonnegative":
        cert = certify_nonneg_curvature(surface, layer, _budget(cfg))
    else:
        cert = certify_general_curve(surface, layer, search_budget=_budget(cfg))
    report.timings["certify"] = time.perf_counter() - t
    report.certificate = cert.to_dict()
    report.exit_code = {"certified": EXIT_OK, "refused": EXIT_REFUSED,
                        "not_found": EXIT_NOT_FOUND}[cert.verdict]


def _run_sweep(surface, cfg, report):
    from .certify import certify_nonneg_curvature
    from .layer import LayerConfig
    from .surfaces import admissibility
    C = admissibility(surface, 1e-9).sup_normB
    values = cfg.sweep.get("a_values")
    if values is None:
        if C == 0:
            raise ConfigError("sweep needs sweep.a_values for a flat surface", field="sweep.a_values")
        values = [x / C for x in (0.2, 0.3, 0.4, 0.5, 0.6, 0.69)]
    rows = []
    for a in values:
        lc = LayerConfig(a)
        cert = certify_nonneg_curvature(surface, lc, _budget(cfg))
        rows.append(dict(a=a, Ca=C * a, verdict=cert.verdict, Q_value=cert.Q_value,
                         error_budget=cert.error_budget, kappa_sq=lc.kappa_sq))
    report.sweep = rows


def _run_probe(surface, layer, cfg, report):
    from .certify import ess_spectrum_probe, minimum_probe_mass
    p = cfg.probe
    r0 = p.get("compact_radius", 100 * surface.scale)
    budgets = p.get("energy", [1.0, 2.0, 3.0, 4.0])
    # one mass for the whole sweep so that the gap tracks the budget alone
    mass = p.get("target_mass") or 10 * minimum_probe_mass(surface, r0, min(budgets))
    out = []
    for e in budgets:
        pr = ess_spectrum_probe(surface, layer, r0, mass, e)
        out.append(dict(energy_budget=e, **pr.to_dict()))
    report.probe = out


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlayer", description=__doc__.splitlines()[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="\n".join(__doc__.splitlines()[2:]))
    p.add_argument("config", nargs="?", help="key = value configuration file")
    p.add_argument("--surface", help="family[:key=value,...], e.g. hyperboloid:slope=1,width=1")
    p.add_argument("--a", type=float, help="layer half-width")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", help="grid overrides, e.g. h=0.1,n_t=16,radii=100/200/400")
    p.add_argument("--budget", type=int, help="maximum number of certificate candidates")
    p.add_argument("--threads", type=int, help="BLAS threads (overridden by QLAYER_THREADS)")
    p.add_argument("--version", action="version", version=f"qlayer {__version__}")
    return p


def config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        parse_config_text(text, cfg)
    if args.surface:
        cfg.family, cfg.surface_params = parse_surface_spec(args.surface)
    if args.a is not None:
        cfg.a = args.a
    if args.command:
        cfg.command = args.command
    if args.out:
        cfg.out = args.out
    if args.grid:
        cfg.grid.update(_parse_kv_flag(args.grid, "grid"))
    if args.budget is not None:
        cfg.budget["max_candidates"] = args.budget
    if args.threads is not None:
        cfg.threads = args.threads
    env = os.environ.get("QLAYER_THREADS")
    if env:
        try:
            cfg.threads = int(env)
        except ValueError:
            raise ConfigError(f"QLAYER_THREADS={env!r} is not an integer") from None
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"qlayer: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.threads:
        for var in THREAD_VARS:
            os.environ[var] = str(cfg.threads)
    try:
        report = run(cfg)
    except ConfigError as exc:
        print(f"qlayer: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        write_report(report, out)
        if report.spectrum:
            emit_plot_data(report, "lambda-vs-R", out)
            emit_plot_data(report, "eigenfunction-slice", out)
        if report.sweep:
            emit_plot_data(report, "margin-vs-a", out)
    except OSError as exc:
        print(f"qlayer: cannot write output: {exc}", file=sys.stderr)
        return EXIT_ERROR
    summary = report.certificate["verdict"] if report.certificate else "done"
    if report.error:
        summary = report.error
    print(f"qlayer {cfg.command}: {summary} (report in {out / 'report.json'})")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
