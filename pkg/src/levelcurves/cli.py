"""Command-line workbench front end.

Studies are described by a line-oriented ``key = value`` config with one
``[multipole]`` block per spectrum entry, dispatched to the library
modules, and written out as CSV tables plus a replayable manifest.  Every
study is a pure function of (config, seed): reruns are byte-identical,
including with multiple workers, because replicate reduction is fixed in
replicate order.

Subcommands: mean-length, variance-scaling, berry-profile, limit-law,
chaos-audit, replay.  Exit status: 0 when every invoked check passes,
2 when a check fails, 1 on error.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
import time
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__, mcstats
from .chaos import (
    chaos_projections_quadrature,
    first_chaos_projection,
    second_chaos_sample_spectrum,
)
from .geometry import isoline_lengths, kac_rice_mean
from .limits import berry_profile, fit_variance_scaling, limit_law_report
from .spectrum import classify_regime, spectrum_from_text, spectrum_to_text
from .synthesis import HarmonicBasis, TimeGrid, build_icosphere, \
    sample_time_processes

__all__ = ["RunConfig", "StudyResult", "parse_config", "render_config",
           "run_study", "emit_plot_data", "main"]

STUDIES = ("mean-length", "variance-scaling", "berry-profile", "limit-law",
           "chaos-audit")


# ----------------------------------------------------------------------
# Config
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Validated study description; every numeric field is checked against
    the library preconditions before any compute starts."""

    study: str
    spectrum: object
    seed: int = 1
    replicates: int = 200
    dt: float = 0.25
    mesh_level: int = 4
    workers: int = 1
    horizon: float | None = None
    t_ladder: tuple | None = None
    level: float | None = None
    u_grid: tuple | None = None
    functional: str = "chaos2"
    q_max: int = 4
    ks_alpha: float = 0.01
    reference_size: int = 4000
    rosenblatt_n_inner: int = 2**14
    dump_lengths: bool = False


_SCALAR_KEYS = {
    "study": str,
    "seed": int,
    "replicates": int,
    "dt": float,
    "mesh_level": int,
    "workers": int,
    "horizon": float,
    "level": float,
    "functional": str,
    "q_max": int,
    "ks_alpha": float,
    "reference_size": int,
    "rosenblatt_n_inner": int,
    "dump_lengths": bool,
    "normalize": bool,
}
_LIST_KEYS = {"t_ladder", "u_grid"}


def _parse_bool(value, key, lineno):
    v = value.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ValueError(f"line {lineno}: key {key!r} expects true/false, got {value!r}")


def parse_config(text):
    """Parse and validate a study config; errors name key and line."""
    top = {}
    spectrum_lines = []
    in_multipole = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "[multipole]":
            in_multipole = True
            spectrum_lines.append((lineno, raw))
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = line.partition("=")[0].strip().lower()
        if in_multipole and key in ("ell", "c0", "beta", "alpha"):
            spectrum_lines.append((lineno, raw))
            continue
        in_multipole = False
        value = line.partition("=")[2].strip()
        if key in _SCALAR_KEYS:
            typ = _SCALAR_KEYS[key]
            try:
                if typ is bool:
                    top[key] = _parse_bool(value, key, lineno)
                else:
                    top[key] = typ(value)
            except ValueError as exc:
                if typ is bool:
                    raise
                raise ValueError(
                    f"line {lineno}: key {key!r} expects {typ.__name__}, "
                    f"got {value!r}"
                ) from None
        elif key in _LIST_KEYS:
            try:
                top[key] = tuple(float(v) for v in value.split(",") if v.strip())
            except ValueError:
                raise ValueError(
                    f"line {lineno}: key {key!r} expects a comma list of "
                    f"numbers, got {value!r}"
                ) from None
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")

    if "study" not in top:
        raise ValueError("config is missing the 'study' key")
    if top["study"] not in STUDIES:
        raise ValueError(
            f"unknown study {top['study']!r}; expected one of {STUDIES}"
        )
    if not spectrum_lines:
        raise ValueError("config has no [multipole] blocks")
    spec_text = "\n".join(raw for _, raw in spectrum_lines)
    normalize = top.pop("normalize", True)
    first_line = spectrum_lines[0][0]
    try:
        spectrum = spectrum_from_text(spec_text, normalize=normalize)
    except ValueError as exc:
        raise ValueError(
            f"spectrum (starting line {first_line}): {exc}"
        ) from None

    cfg = RunConfig(spectrum=spectrum, **top)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    if cfg.replicates < 2:
        raise ValueError("key 'replicates' must be >= 2")
    if cfg.dt <= 0:
        raise ValueError("key 'dt' must be positive")
    if not 0 <= cfg.mesh_level <= 8:
        raise ValueError("key 'mesh_level' must lie in [0, 8]")
    if cfg.workers < 1:
        raise ValueError("key 'workers' must be >= 1")
    if not 0 < cfg.ks_alpha < 1:
        raise ValueError("key 'ks_alpha' must lie in (0, 1)")
    if cfg.functional not in ("chaos2", "chaos1", "length"):
        raise ValueError("key 'functional' must be chaos2, chaos1 or length")
    if not 1 <= cfg.q_max <= 12:
        raise ValueError("key 'q_max' must lie in [1, 12]")
    need_horizon = cfg.study in ("berry-profile", "limit-law", "chaos-audit")
    if need_horizon and cfg.horizon is None:
        raise ValueError(f"study {cfg.study!r} requires key 'horizon'")
    if cfg.horizon is not None and cfg.horizon <= 0:
        raise ValueError("key 'horizon' must be positive")
    if cfg.study == "variance-scaling":
        if cfg.t_ladder is None or len(cfg.t_ladder) < 4:
            raise ValueError(
                "study 'variance-scaling' requires key 't_ladder' with at "
                "least 4 horizons"
            )
    if cfg.study == "berry-profile" and cfg.u_grid is None:
        raise ValueError("study 'berry-profile' requires key 'u_grid'")
    if cfg.study in ("limit-law", "chaos-audit") and cfg.level is None:
        raise ValueError(f"study {cfg.study!r} requires key 'level'")
    if cfg.study == "mean-length" and cfg.level is None and cfg.u_grid is None:
        raise ValueError("study 'mean-length' requires 'level' or 'u_grid'")


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def render_config(cfg):
    """Canonical text form; parse(render(cfg)) == cfg."""
    lines = [f"study = {cfg.study}"]
    for name in ("seed", "replicates", "dt", "mesh_level", "workers",
                 "horizon", "level", "functional", "q_max", "ks_alpha",
                 "reference_size", "rosenblatt_n_inner", "dump_lengths"):
        val = getattr(cfg, name)
        if val is None:
            continue
        lines.append(f"{name} = {_fmt(val)}")
    for name in ("t_ladder", "u_grid"):
        val = getattr(cfg, name)
        if val is None:
            continue
        lines.append(f"{name} = {', '.join(_fmt(v) for v in val)}")
    lines.append("normalize = false")  # rendered spectra are normalized
    lines.append(spectrum_to_text(cfg.spectrum).rstrip("\n"))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# Study results
# ----------------------------------------------------------------------

@dataclass
class StudyResult:
    """Tables (name -> CSV text), summary checks (name -> bool), and the
    replay manifest."""

    study: str
    config: RunConfig
    tables: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    manifest: str = ""
    wall_time_s: float = 0.0

    @property
    def passed(self):
        return all(self.checks.values())


def _csv(header_cols, rows, config_hash):
    out = [f"# levelcurves {__version__} config sha256:{config_hash}"]
    out.append(",".join(header_cols))
    for row in rows:
        out.append(",".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def _config_hash(cfg):
    return hashlib.sha256(render_config(cfg).encode()).hexdigest()


# ---- study implementations -------------------------------------------

def _mean_length_replicate(spectrum, basis, levels, seed):
    grid = TimeGrid(dt=1.0, n_steps=2)
    ens = sample_time_processes(spectrum, grid, np.random.Generator(
        np.random.PCG64(seed)))
    vals = basis.y @ ens.coeffs[:, 0]
    return [isoline_lengths(vals, basis.mesh, u)[0][0] for u in levels]


def _study_mean_length(cfg, config_hash):
    levels = cfg.u_grid if cfg.u_grid is not None else (cfg.level,)
    basis = HarmonicBasis(build_icosphere(cfg.mesh_level),
                          cfg.spectrum.ells)
    kernel = partial(_mean_length_replicate, cfg.spectrum, basis, levels)
    rows = np.array(mcstats.replicate_map(kernel, cfg.seed, cfg.replicates,
                                          workers=cfg.workers))
    tables = {}
    out_rows = []
    checks = {}
    for j, u in enumerate(levels):
        samples = rows[:, j]
        mean = samples.mean()
        se = samples.std(ddof=1) / math.sqrt(len(samples))
        predicted = kac_rice_mean(cfg.spectrum, u)
        z = (mean - predicted) / se
        out_rows.append((u, len(samples), mean, se, predicted, z))
        checks[f"kac_rice_z_u={_fmt(float(u))}"] = bool(abs(z) <= 4.0)
    tables["mean_length.csv"] = _csv(
        ("u", "replicates", "empirical_mean", "se", "kac_rice", "z_score"),
        out_rows, config_hash)
    if cfg.dump_lengths:
        dump = [(r, 0, 0.0, rows[r, j])
                for r in range(rows.shape[0]) for j in range(len(levels))]
        tables["lengths.csv"] = _csv(("replicate", "k", "t", "length"),
                                     dump, config_hash)
    return tables, checks


def _expected_exponent(cfg):
    report = classify_regime(cfg.spectrum)
    if cfg.functional == "chaos1":
        e0 = cfg.spectrum.entry(0)
        if e0 is None:
            return None
        return 2.0 - e0.beta if e0.beta < 1.0 else 1.0
    return report.expected_var_exponent


def _study_variance_scaling(cfg, config_hash):
    fit = fit_variance_scaling(
        cfg.spectrum, cfg.level if cfg.level is not None else 0.0,
        cfg.t_ladder, cfg.replicates, cfg.seed, functional=cfg.functional,
        mesh_level=cfg.mesh_level, dt=cfg.dt, workers=cfg.workers)
    rows = [
        (t, v, s, math.log10(t), math.log10(v))
        for t, v, s in zip(fit.horizons, fit.variances, fit.variance_ses)
    ]
    tables = {
        "scaling.csv": _csv(
            ("horizon", "variance", "se", "log10_horizon", "log10_variance"),
            rows, config_hash)
    }
    checks = {}
    expected = _expected_exponent(cfg)
    if expected is not None:
        checks["exponent_within_0.1"] = bool(
            abs(fit.fitted_exponent - expected) <= 0.1)
    summary_rows = [(fit.fitted_exponent, fit.exponent_se,
                     expected if expected is not None else float("nan"))]
    tables["scaling_fit.csv"] = _csv(
        ("fitted_exponent", "exponent_se", "expected_exponent"),
        summary_rows, config_hash)
    return tables, checks, fit


def _study_berry_profile(cfg, config_hash):
    prof = berry_profile(cfg.spectrum, cfg.u_grid, cfg.horizon,
                         cfg.replicates, cfg.seed, dt=cfg.dt,
                         workers=cfg.workers)
    rows = [
        (u, v, s, p if p is not None else float("nan"))
        for u, v, s, p in zip(prof.levels, prof.variances,
                              prof.variance_ses, prof.predicted_constants)
    ]
    tables = {
        "berry_profile.csv": _csv(
            ("u", "variance", "se", "long_constant"), rows, config_hash)
    }
    checks = {}
    if prof.predicted_cancellation is not None:
        step = max(
            abs(b - a) for a, b in zip(prof.levels[:-1], prof.levels[1:])
        ) if len(prof.levels) > 1 else 0.0
        checks["min_within_one_step_of_cancellation"] = bool(
            abs(prof.min_level - prof.predicted_cancellation) <= step + 1e-12)
    return tables, checks, prof


def _study_limit_law(cfg, config_hash):
    report = limit_law_report(
        cfg.spectrum, cfg.level, cfg.horizon, cfg.replicates, cfg.seed,
        mesh_level=cfg.mesh_level, dt=cfg.dt, alpha=cfg.ks_alpha,
        reference_size=cfg.reference_size, n_inner=cfg.rosenblatt_n_inner,
        workers=cfg.workers)
    xs = np.sort(report.standardized)
    ecdf = (np.arange(xs.size) + 1) / xs.size
    if report.reference is None:
        rows = [(x, e) for x, e in zip(xs, ecdf)]
        cols = ("standardized", "ecdf")
    else:
        ref = np.sort(report.reference)
        ref_at = np.searchsorted(ref, xs, side="right") / ref.size
        rows = [(x, e, r) for x, e, r in zip(xs, ecdf, ref_at)]
        cols = ("standardized", "ecdf", "reference_cdf")
    tables = {"limit_cdf.csv": _csv(cols, rows, config_hash)}
    summary = [(report.regime, report.ks_statistic, report.ks_pvalue,
                report.passed,
                report.gaussian_ks_pvalue
                if report.gaussian_ks_pvalue is not None else float("nan"))]
    tables["limit_summary.csv"] = _csv(
        ("regime", "ks_statistic", "ks_pvalue", "passed", "gaussian_pvalue"),
        summary, config_hash)
    checks = {"ks_limit_law": bool(report.passed)}
    if report.gaussian_rejected is not None:
        checks["gaussian_power_check"] = bool(report.gaussian_rejected)
    return tables, checks, report


def _chaos_audit_replicate(spectrum, basis, u, grid, orders, seed):
    ens = sample_time_processes(spectrum, grid, np.random.Generator(
        np.random.PCG64(seed)))
    quad = chaos_projections_quadrature(ens, basis, u, orders)
    out = [("quadrature", q, quad[q]) for q in orders]
    out.append(("spectral", 1, first_chaos_projection(ens, u)))
    out.append(("spectral", 2, second_chaos_sample_spectrum(ens, u)))
    return out


def _study_chaos_audit(cfg, config_hash):
    orders = list(range(1, cfg.q_max + 1))
    basis = HarmonicBasis(build_icosphere(cfg.mesh_level), cfg.spectrum.ells)
    grid = TimeGrid.for_horizon(cfg.horizon, cfg.dt)
    kernel = partial(_chaos_audit_replicate, cfg.spectrum, basis, cfg.level,
                     grid, orders)
    rows = mcstats.replicate_map(kernel, cfg.seed, cfg.replicates,
                                 workers=cfg.workers)
    flat = [(rep, method, q, val)
            for rep, items in enumerate(rows)
            for method, q, val in items]
    tables = {
        "projections.csv": _csv(("replicate", "method", "q", "value"),
                                flat, config_hash)
    }
    quad = {q: np.array([dict(((m, qq), v) for m, qq, v in r)[("quadrature", q)]
                         for r in rows]) for q in orders}
    spec2 = np.array([dict(((m, qq), v) for m, qq, v in r)[("spectral", 2)]
                      for r in rows])
    var_rows = [(q, quad[q].var(ddof=1)) for q in orders]
    tables["per_q_variance.csv"] = _csv(("q", "variance"), var_rows,
                                        config_hash)
    dual_rms = math.sqrt(np.mean((quad[2] - spec2) ** 2)) \
        / math.sqrt(np.mean(spec2**2))
    tables["duality.csv"] = _csv(("second_chaos_rms_discrepancy",),
                                 [(dual_rms,)], config_hash)
    checks = {"second_chaos_duality_1pct": bool(dual_rms <= 0.01)}
    return tables, checks


def run_study(config, out_dir=None, workers=None):
    """Execute a study; optionally write tables + manifest to ``out_dir``."""
    cfg = config if workers is None else replace(config, workers=workers)
    config_hash = _config_hash(replace(cfg, workers=1))
    t0 = time.perf_counter()
    extra_tables = {}
    if cfg.study == "mean-length":
        tables, checks = _study_mean_length(cfg, config_hash)
    elif cfg.study == "variance-scaling":
        tables, checks, fit = _study_variance_scaling(cfg, config_hash)
        extra_tables = _plot_scaling(fit, config_hash)
    elif cfg.study == "berry-profile":
        tables, checks, prof = _study_berry_profile(cfg, config_hash)
        extra_tables = _plot_berry(prof, config_hash)
    elif cfg.study == "limit-law":
        tables, checks, _report = _study_limit_law(cfg, config_hash)
    elif cfg.study == "chaos-audit":
        tables, checks = _study_chaos_audit(cfg, config_hash)
    else:
        raise ValueError(f"unknown study {cfg.study!r}")
    tables.update(extra_tables)
    wall = time.perf_counter() - t0

    result = StudyResult(study=cfg.study, config=cfg, tables=tables,
                         checks=checks, wall_time_s=wall)
    result.manifest = _render_manifest(result, config_hash)
    if out_dir is not None:
        _write_result(result, Path(out_dir))
    return result


# ---- plot-data emission ----------------------------------------------

def _plot_scaling(fit, config_hash):
    rows = [(math.log10(t), math.log10(v))
            for t, v in zip(fit.horizons, fit.variances)]
    text = [f"# levelcurves {__version__} config sha256:{config_hash}",
            f"# fitted_slope = {_fmt(fit.fitted_exponent)}",
            f"# slope_se = {_fmt(fit.exponent_se)}",
            "log10_horizon,log10_variance"]
    text += [",".join(_fmt(v) for v in r) for r in rows]
    return {"fig_scaling.csv": "\n".join(text) + "\n"}


def _plot_berry(prof, config_hash):
    marker = prof.predicted_cancellation
    text = [f"# levelcurves {__version__} config sha256:{config_hash}",
            f"# predicted_cancellation = "
            f"{_fmt(marker) if marker is not None else 'none'}",
            "u,variance,long_constant"]
    for u, v, p in zip(prof.levels, prof.variances, prof.predicted_constants):
        text.append(",".join(_fmt(x) for x in
                             (u, v, p if p is not None else float("nan"))))
    return {"fig_berry.csv": "\n".join(text) + "\n"}


def emit_plot_data(result, out_dir):
    """Write the figure-ready tables of a completed study to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in result.tables.items():
        if name.startswith("fig_") or name == "limit_cdf.csv":
            path = out / name
            path.write_text(text)
            written.append(path)
    return written


# ---- manifest / replay ------------------------------------------------

def _render_manifest(result, config_hash):
    lines = [
        "levelcurves-manifest v1",
        f"package_version: {__version__}",
        f"study: {result.study}",
        f"seed: {result.config.seed}",
        f"config_sha256: {config_hash}",
        f"wall_time_s: {result.wall_time_s:.3f}",
    ]
    for name in sorted(result.tables):
        digest = hashlib.sha256(result.tables[name].encode()).hexdigest()
        lines.append(f"table: {name} sha256:{digest}")
    for name in sorted(result.checks):
        lines.append(
            f"check: {name} {'pass' if result.checks[name] else 'FAIL'}")
    lines.append("config:")
    # worker count normalized: results are worker-independent by design
    canonical = replace(result.config, workers=1)
    lines += ["|" + ln for ln in render_config(canonical).splitlines()]
    return "\n".join(lines) + "\n"


def _write_result(result, out_dir):
    tables_dir = out_dir / "tables"
    tables_dir.mkdir(parents=True, exist_ok=True)
    for name, text in result.tables.items():
        (tables_dir / name).write_text(text)
    (out_dir / "manifest.txt").write_text(result.manifest)


def replay(manifest_path, out_dir):
    """Re-run the manifest's config and verify byte-identical tables."""
    text = Path(manifest_path).read_text()
    lines = text.splitlines()
    if not lines or lines[0] != "levelcurves-manifest v1":
        raise ValueError(f"{manifest_path} is not a levelcurves manifest")
    recorded = {}
    config_lines = []
    in_config = False
    for ln in lines[1:]:
        if in_config:
            if ln.startswith("|"):
                config_lines.append(ln[1:])
            continue
        if ln == "config:":
            in_config = True
        elif ln.startswith("table: "):
            name, digest = ln[len("table: "):].rsplit(" sha256:", 1)
            recorded[name] = digest
    if not config_lines:
        raise ValueError("manifest carries no config block")
    cfg = parse_config("\n".join(config_lines))
    result = run_study(cfg, out_dir=out_dir)
    mismatches = []
    for name, digest in recorded.items():
        new = hashlib.sha256(result.tables.get(name, "").encode()).hexdigest()
        if new != digest:
            mismatches.append(name)
    return result, mismatches


# ----------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", required=True, help="path to the study config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--mesh-level", type=int, help="override mesh level")
    p.add_argument("--replicates", type=int, help="override replicate count")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="levelcurves",
        description="Level-curve statistics workbench for sphere-cross-time "
                    "Gaussian fields",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for study in STUDIES:
        p = sub.add_parser(study, help=f"run the {study} study")
        _add_common(p)
    p = sub.add_parser("replay", help="re-run a manifest and verify tables")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            result, mismatches = replay(args.manifest, args.out)
            for name in sorted(result.tables):
                status = "FAIL" if name in mismatches else "ok"
                print(f"replay {name}: {status}")
            if mismatches:
                print(f"replay: {len(mismatches)} table(s) differ")
                return 2
            print("replay: byte-identical")
            return 0

        cfg = parse_config(Path(args.config).read_text())
        if cfg.study != args.command:
            cfg = replace(cfg, study=args.command)
            _validate_config(cfg)
        for attr, key in (("seed", "seed"), ("workers", "workers"),
                          ("mesh_level", "mesh_level"),
                          ("replicates", "replicates")):
            val = getattr(args, attr, None)
            if val is not None:
                cfg = replace(cfg, **{key: val})
        _validate_config(cfg)
        result = run_study(cfg, out_dir=args.out)
        for name, ok in sorted(result.checks.items()):
            print(f"check {name}: {'pass' if ok else 'FAIL'}")
        print(f"wrote {len(result.tables)} table(s) to {args.out}")
        return 0 if result.passed else 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
