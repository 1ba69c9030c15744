"""Command-line driver: ``dcebus {sweep,optimize,fano,decompose,converge,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .channel import AffineMap, tomography
from .dynamics import ModelParams, PropagationError, PropagatorConfig, ProtocolSchedule, dce_photons
from .fano import (
    DecompositionError,
    completeness_residual,
    elementary_sequence,
    kraus_from_sequence,
    structural_residuals,
)
from .information import coherent_information, unpolarized
from .sweep import (
    FANO_FIELDS,
    RECORD_FIELDS,
    ConfigError,
    SweepConfig,
    dump,
    load,
    metadata,
    run_fano,
    run_sweep,
    validate_rows,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
CONVERGE_LADDER = (2, 4, 8, 16, 32, 64)

log = logging.getLogger("dcebus")


def _common(p: argparse.ArgumentParser, grid: bool = True) -> None:
    # defaults are None so that config-file values survive unless a flag is given
    if grid:
        p.add_argument("--g-min", type=float)
        p.add_argument("--g-max", type=float)
        p.add_argument("--steps", type=int)
    p.add_argument("--window", choices=["rect", "hamming"])
    p.add_argument("--xi", type=float)
    p.add_argument("--protocol", choices=["p0", "p1", "p2"])
    p.add_argument("--stage", choices=["full", "e1", "e2"])
    p.add_argument("--rwa", action="store_true", default=None)
    p.add_argument("--n-max", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--jobs", type=int)
    p.add_argument("--config", help="JSON file with default keys (flags override it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcebus", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="observables on a uniform coupling grid")
    _common(p)
    p.add_argument("--observables", help="comma-separated subset of Ic_u,Q1,n_end,n_dce,rate")

    p = sub.add_parser("optimize", help="timing-optimized protocol on a coupling grid")
    _common(p)
    p.add_argument("--observables", help="comma-separated subset of Ic_u,Q1,n_end,n_dce,rate")

    p = sub.add_parser("fano", help="affine-map parameters and structural residuals per coupling")
    _common(p)

    for name, text in (("decompose", "elementary-map decomposition at one coupling"),
                       ("converge", "cutoff convergence table at one coupling")):  # fmt: skip
        p = sub.add_parser(name, help=text)
        p.add_argument("--g", type=float, required=True)
        _common(p, grid=False)

    p = sub.add_parser("validate", help="re-check an emitted data file")
    p.add_argument("path")
    return parser


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def sweep_config(args: argparse.Namespace, **forced) -> SweepConfig:
    """Merge built-in defaults, config-file keys, and explicit flags (in rising precedence)."""
    known = {f.name for f in fields(SweepConfig)}
    merged = _load_config_file(getattr(args, "config", None))
    unknown = set(merged) - known - {"g"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    merged.pop("g", None)
    for key, value in vars(args).items():
        if key in known and value is not None:
            merged[key] = value
    if isinstance(merged.get("observables"), str):
        merged["observables"] = tuple(o.strip() for o in merged["observables"].split(",") if o.strip())
    elif "observables" in merged:
        merged["observables"] = tuple(merged["observables"])
    merged.update(forced)
    try:
        return SweepConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_sweep(cfg: SweepConfig, command: str = "sweep") -> int:
    records = run_sweep(cfg)
    _emit(dump([r.row() for r in records], metadata(cfg, command, RECORD_FIELDS), cfg.format), cfg.out)
    return EXIT_NUMERIC if any(r.failure for r in records) else EXIT_OK


def cmd_optimize(cfg: SweepConfig) -> int:
    return cmd_sweep(cfg, "optimize")


def cmd_fano(cfg: SweepConfig) -> int:
    rows = run_fano(cfg)
    _emit(dump(rows, metadata(cfg, "fano", FANO_FIELDS), cfg.format), cfg.out)
    return EXIT_NUMERIC if any(math.isnan(r["m_xx"]) for r in rows) else EXIT_OK


def _complex_list(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def decomposition_report(g: float, cfg: SweepConfig) -> dict:
    """Decomposition of the standard-timing channel at ``g``.

    ``g = 0`` decomposes the identity map, the no-dynamics reference point.
    """
    if g == 0:
        amap = AffineMap.identity()
    else:
        params = ModelParams(g, rwa=cfg.rwa)
        amap = tomography(params, ProtocolSchedule.standard(g), cfg.propagator())
    report = {
        "g": g,
        "rwa": cfg.rwa,
        "M": amap.M.tolist(),
        "a": amap.a.tolist(),
        "structural_residual": float(np.abs(structural_residuals(amap)).max()),
    }
    seq = elementary_sequence(amap)
    recon = float(np.max(np.abs(seq.affine().homogeneous() - amap.homogeneous())))
    report.update(
        theta=seq.displacement.theta,
        displacement_direction="+z" if seq.displacement.direction > 0 else "-z",
        rotation_inner=seq.rotation_inner,
        rotation_outer=seq.rotation_outer,
        net_rotation=math.remainder(seq.rotation_inner + seq.rotation_outer, 2 * math.pi),
        singular_values=list(seq.scaling),
        reconstruction_residual=recon,
    )
    try:
        ops = kraus_from_sequence(seq)
        report["kraus"] = [_complex_list(k) for k in ops]
        report["kraus_completeness_residual"] = completeness_residual(ops)
    except DecompositionError as exc:
        report["kraus"] = None
        report["kraus_error"] = str(exc)
        report["kraus_from_choi"] = [_complex_list(k) for k in amap.to_choi().kraus()]
    return report


def _text_report(rep: dict) -> str:
    lines = [f"g = {rep['g']}  (rwa={rep['rwa']})"]
    lines.append("M = " + np.array2string(np.array(rep["M"]), precision=6, suppress_small=True).replace("\n", "\n    "))
    lines.append(f"a = {np.array(rep['a'])}")
    lines.append(f"structural residual      {rep['structural_residual']:.3e}")
    lines.append(f"displacement theta       {rep['theta']:.10f}  toward {rep['displacement_direction']}")
    lines.append(f"rotation M4 (first)      {rep['rotation_inner']:.10f}")
    lines.append(f"rotation M2              {rep['rotation_outer']:.10f}")
    lines.append(f"net rotation             {rep['net_rotation']:.10f}")
    lines.append("singular values M3       " + "  ".join(f"{s:.10f}" for s in rep["singular_values"]))
    lines.append(f"reconstruction residual  {rep['reconstruction_residual']:.3e}")
    if rep.get("kraus") is not None:
        lines.append(f"Kraus operators ({len(rep['kraus'])}), completeness residual {rep['kraus_completeness_residual']:.3e}")
        for k in rep["kraus"]:
            m = np.array([[complex(*z) for z in row] for row in k])
            lines.append("  " + np.array2string(m, precision=6, suppress_small=True).replace("\n", "\n  "))
    else:
        lines.append(f"elementary Kraus composition unavailable: {rep['kraus_error']}")
        lines.append(f"Kraus set from the full Choi matrix has {len(rep['kraus_from_choi'])} operators")
    return "\n".join(lines) + "\n"


def cmd_decompose(g: float, cfg: SweepConfig) -> int:
    rep = decomposition_report(g, cfg)
    _emit(json.dumps(rep, indent=1) + "\n" if cfg.format == "json" else _text_report(rep), cfg.out)
    return EXIT_OK


def convergence_table(g: float, cfg: SweepConfig, ladder=CONVERGE_LADDER) -> dict:
    params = ModelParams(g, rwa=cfg.rwa)
    schedule = ProtocolSchedule.standard(g, cfg.window_obj())
    rows = []
    for n in ladder:
        pc = PropagatorConfig(n_max=n, method=cfg.method, tol=cfg.tol)
        rows.append({
            "n_max": n,
            "Ic_u": coherent_information(params, schedule, pc, unpolarized()),
            "n_end": dce_photons(params, pc, "end_of_protocol", schedule),
            "n_dce": dce_photons(params, pc, "pure_dce", schedule),
        })  # fmt: skip
    recommended = None
    for prev, cur in zip(rows, rows[1:]):
        diff = max(abs(cur[k] - prev[k]) for k in ("Ic_u", "n_end", "n_dce"))
        cur["max_diff"] = diff
        if recommended is None and diff < cfg.threshold:
            recommended = prev["n_max"]
    return {"g": g, "threshold": cfg.threshold, "rows": rows, "recommended_n_max": recommended}


def cmd_converge(g: float, cfg: SweepConfig) -> int:
    table = convergence_table(g, cfg)
    if cfg.format == "json":
        text = json.dumps(table, indent=1) + "\n"
    else:
        out = [f"# g = {g}, threshold = {table['threshold']}", "n_max,Ic_u,n_end,n_dce,max_diff"]
        for r in table["rows"]:
            diff = r.get("max_diff", math.nan)
            vals = ",".join(format(v, ".17g") for v in (r["Ic_u"], r["n_end"], r["n_dce"], diff))
            out.append(f"{r['n_max']},{vals}")
        out.append(f"# recommended n_max: {table['recommended_n_max']}")
        text = "\n".join(out) + "\n"
    _emit(text, cfg.out)
    return EXIT_OK if table["recommended_n_max"] is not None else EXIT_NUMERIC


def cmd_validate(path: str) -> int:
    try:
        meta, rows = load(Path(path).read_text())
    except (OSError, ValueError, KeyError, StopIteration) as exc:
        print(f"{path}: unreadable ({exc})", file=sys.stderr)
        return EXIT_CONFIG
    problems = validate_rows(rows)
    for p in problems:
        print(f"{path}: {p}", file=sys.stderr)
    print(f"{path}: {len(rows)} records, {len(problems)} problems")
    return EXIT_OK if not problems else EXIT_CONFIG


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args.path)
        if args.command in ("decompose", "converge"):
            if args.g < 0:
                raise ConfigError("g must be non-negative")
            cfg = sweep_config(args, g_min=max(args.g, 1e-12), g_max=max(args.g, 1e-12), steps=1)
            if args.command == "decompose":
                return cmd_decompose(args.g, cfg)
            if args.g == 0:
                raise ConfigError("convergence study needs g > 0")
            return cmd_converge(args.g, cfg)
        if args.command == "optimize":
            return cmd_optimize(sweep_config(args, protocol="p2"))
        if args.command == "fano":
            return cmd_fano(sweep_config(args))
        return cmd_sweep(sweep_config(args))
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PropagationError, DecompositionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
