"""Per-coupling evaluation of the bus observables and flat-file emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .channel import tomography
from .dynamics import (
    CouplingWindow,
    ModelParams,
    PropagationError,
    PropagatorConfig,
    ProtocolSchedule,
    converged_cutoff,
    dce_photons,
    run_protocol,
)
from .fano import structural_residuals
from .hilbert import DensityMatrix, Layout, mean_photon_number
from .information import (
    coherent_information,
    maximize_coherent_information,
    optimize_timing,
    unpolarized,
)

log = logging.getLogger(__name__)

RECORD_FIELDS = ("g", "n_max", "Ic_u", "Q1", "n_end", "n_dce", "rate", "T1", "Tc", "T2", "converged")
FANO_FIELDS = (
    "g", "n_max", "m_xx", "m_xy", "m_yx", "m_yy", "m_zz", "a_z",
    "r_xz", "r_yz", "r_zx", "r_zy", "r_ax", "r_ay", "converged",
)  # fmt: skip
OBSERVABLES = ("Ic_u", "Q1", "n_end", "n_dce", "rate")
STAGE_NAMES = {"full": "full", "e1": "E1_only", "e2": "E2_only"}
WINDOW_NAMES = {"rect": "rectangular", "hamming": "hamming"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    g_min: float = 0.05
    g_max: float = 1.0
    steps: int = 96
    protocol: str = "p0"
    window: str | None = None
    xi: float | None = None
    stage: str = "full"
    rwa: bool = False
    n_max: int = 32
    auto_cutoff: bool = True
    max_n_max: int = 128
    threshold: float = 1e-6
    method: str = "auto"
    tol: float = 1e-10
    observables: tuple[str, ...] = OBSERVABLES
    out: str | None = None
    format: str = "csv"
    jobs: int | None = None

    def __post_init__(self):
        if not (0 < self.g_min <= self.g_max):
            raise ConfigError(f"need 0 < g_min <= g_max, got {self.g_min}, {self.g_max}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError(f"steps must be a positive integer, got {self.steps}")
        if self.protocol not in ("p0", "p1", "p2"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.window is not None and self.window not in WINDOW_NAMES:
            raise ConfigError(f"unknown window {self.window!r}")
        if self.stage not in STAGE_NAMES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        bad = set(self.observables) - set(OBSERVABLES)
        if bad:
            raise ConfigError(f"unknown observables {sorted(bad)}")
        if self.stage == "e2" and "Q1" in self.observables:
            object.__setattr__(self, "observables", tuple(o for o in self.observables if o != "Q1"))
        if self.protocol == "p2" and self.stage != "full":
            raise ConfigError("timing optimization runs on the full channel only")
        try:
            self.window_obj()
            self.propagator()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def grid(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.g_min])
        return np.linspace(self.g_min, self.g_max, int(self.steps))

    def window_obj(self) -> CouplingWindow:
        family = self.window or ("hamming" if self.protocol == "p1" else "rect")
        xi = self.xi if self.xi is not None else (0.5 if family == "hamming" else 0.0)
        return CouplingWindow(WINDOW_NAMES[family], xi if family == "hamming" else 0.0)

    def propagator(self) -> PropagatorConfig:
        return PropagatorConfig(
            n_max=self.n_max,
            method=self.method,
            tol=self.tol,
            convergence_threshold=self.threshold,
            max_n_max=self.max_n_max if self.auto_cutoff else self.n_max,
        )

    def effective(self) -> dict:
        d = asdict(self)
        d["window"], d["xi"] = self.window_obj().family, self.window_obj().xi
        d["observables"] = list(self.observables)
        # emission settings do not change the numbers
        for key in ("jobs", "out", "format"):
            d.pop(key)
        return d


@dataclass
class SweepRecord:
    g: float
    n_max: int
    Ic_u: float = math.nan
    Q1: float = math.nan
    n_end: float = math.nan
    n_dce: float = math.nan
    rate: float = math.nan
    T1: float = math.nan
    Tc: float = math.nan
    T2: float = math.nan
    converged: bool = False
    failure: str | None = field(default=None, compare=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in RECORD_FIELDS}


def cavity_unpolarized(n_max: int) -> DensityMatrix:
    m = np.zeros((n_max + 1, n_max + 1))
    m[0, 0] = m[1, 1] = 0.5
    return DensityMatrix(m, Layout(("C",), (n_max + 1,)))


def _input_for(schedule: ProtocolSchedule, pc: PropagatorConfig) -> DensityMatrix:
    return cavity_unpolarized(pc.n_max) if schedule.stage == "E2_only" else unpolarized()


def _photons_end(params, schedule, pc) -> float:
    return mean_photon_number(run_protocol(_input_for(schedule, pc), params, schedule, pc))


def _cheap_observables(params, schedule, pc) -> np.ndarray:
    ic = coherent_information(params, schedule, pc, _input_for(schedule, pc))
    return np.array([ic, _photons_end(params, schedule, pc), dce_photons(params, pc, "pure_dce", schedule)])


def evaluate_point(g: float, cfg: SweepConfig) -> SweepRecord:
    """All requested observables at one coupling; failures land in the record."""
    params = ModelParams(float(g), rwa=cfg.rwa)
    pc = cfg.propagator()
    schedule = ProtocolSchedule.standard(params.g, cfg.window_obj(), STAGE_NAMES[cfg.stage])
    ok = True
    try:
        if cfg.protocol == "p2":
            opt = optimize_timing(params, pc, base=schedule)
            ok &= opt.converged
            schedule = opt.timing.schedule(params.g, schedule)
        if cfg.auto_cutoff:
            n_used, vals, passed = converged_cutoff(lambda c: _cheap_observables(params, schedule, c), pc)
            ok &= passed
            pc = pc.with_cutoff(n_used)
        else:
            vals, n_used = _cheap_observables(params, schedule, pc), pc.n_max
        rec = SweepRecord(params.g, n_used, T1=schedule.T1, Tc=schedule.Tc, T2=schedule.T2)
        ic, n_end, n_dce = map(float, vals)
        want = cfg.observables
        if "Ic_u" in want or "rate" in want:
            rec.Ic_u = ic
        if "rate" in want:
            rec.rate = ic / schedule.total
        if "n_end" in want:
            rec.n_end = n_end
        if "n_dce" in want:
            rec.n_dce = n_dce
        if "Q1" in want and schedule.stage != "E2_only":
            opt_in = maximize_coherent_information(params, schedule, pc)
            ok &= opt_in.converged
            rec.Q1 = opt_in.q1
        rec.converged = bool(ok)
        return rec
    except (PropagationError, np.linalg.LinAlgError) as exc:
        log.error("g=%s failed: %s", g, exc)
        return SweepRecord(params.g, pc.n_max, converged=False, failure=str(exc))


def fano_point(g: float, cfg: SweepConfig) -> dict:
    params = ModelParams(float(g), rwa=cfg.rwa)
    pc = cfg.propagator()
    schedule = ProtocolSchedule.standard(params.g)

    def values(c):
        m = tomography(params, schedule, c)
        return np.concatenate([[m.M[0, 0], m.M[0, 1], m.M[1, 0], m.M[1, 1], m.M[2, 2], m.a[2]], structural_residuals(m)])

    try:
        if cfg.auto_cutoff:
            n_used, vals, ok = converged_cutoff(values, pc)
        else:
            n_used, vals, ok = pc.n_max, values(pc), True
    except PropagationError as exc:
        log.error("g=%s failed: %s", g, exc)
        return {"g": params.g, "n_max": pc.n_max, **{k: math.nan for k in FANO_FIELDS[2:-1]}, "converged": False}
    return {"g": params.g, "n_max": int(n_used), **dict(zip(FANO_FIELDS[2:-1], map(float, vals))), "converged": bool(ok)}


def _map(fn, grid, cfg: SweepConfig) -> list:
    jobs = cfg.jobs or os.cpu_count() or 1
    if jobs <= 1 or len(grid) <= 1:
        return [fn(g, cfg) for g in grid]
    with ProcessPoolExecutor(max_workers=min(jobs, len(grid))) as pool:
        return list(pool.map(fn, grid, [cfg] * len(grid)))


def run_sweep(cfg: SweepConfig) -> list[SweepRecord]:
    return _map(evaluate_point, cfg.grid(), cfg)


def run_fano(cfg: SweepConfig) -> list[dict]:
    return _map(fano_point, cfg.grid(), cfg)


# -- serialization ------------------------------------------------------------


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    value = float(value)
    return None if math.isnan(value) else value


def metadata(cfg: SweepConfig, command: str, columns) -> dict:
    return {"tool": f"dcebus {__version__}", "command": command, "columns": list(columns), "config": cfg.effective()}


def to_csv(rows: list[dict], meta: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# {meta['tool']}\n# command: {meta['command']}\n")
    for key, value in sorted(meta["config"].items()):
        buf.write(f"# {key}: {json.dumps(value)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(meta["columns"])
    for row in rows:
        writer.writerow([fmt(row[c]) for c in meta["columns"]])
    return buf.getvalue()


def to_json(rows: list[dict], meta: dict) -> str:
    payload = [{"metadata": meta}] + [{c: _json_value(row[c]) for c in meta["columns"]} for row in rows]
    return json.dumps(payload, indent=1) + "\n"


def dump(rows: list[dict], meta: dict, fmt_name: str) -> str:
    return to_csv(rows, meta) if fmt_name == "csv" else to_json(rows, meta)


def _parse_csv_value(text: str):
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        return float(text)


def load(text: str) -> tuple[dict, list[dict]]:
    """Parse an emitted CSV or JSON file into ``(metadata, rows)``."""
    stripped = text.lstrip()
    if stripped.startswith("["):
        payload = json.loads(text)
        meta = payload[0]["metadata"]
        rows = [{k: (math.nan if v is None else v) for k, v in r.items()} for r in payload[1:]]
        return meta, rows
    lines = text.splitlines()
    header = [ln[2:] for ln in lines if ln.startswith("# ")]
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = csv.reader(body)
    columns = next(reader)
    rows = [dict(zip(columns, map(_parse_csv_value, r))) for r in reader if r]
    meta = {"tool": header[0] if header else "", "columns": columns, "config": {}}
    for ln in header[1:]:
        key, _, value = ln.partition(": ")
        if key == "command":
            meta["command"] = value
        else:
            meta["config"][key] = json.loads(value)
    return meta, rows


def validate_rows(rows: list[dict]) -> list[str]:
    """Check emitted records against the record invariants; returns the problems found."""
    problems = []
    gs = [r["g"] for r in rows]
    if any(b <= a for a, b in zip(gs, gs[1:])):
        problems.append("g values are not strictly ascending")
    for r in rows:
        g = r["g"]
        if "rate" in r:
            for key in ("Q1", "n_end", "n_dce"):
                v = r.get(key, math.nan)
                if not math.isnan(v) and v < 0:
                    problems.append(f"g={g}: {key}={v} is negative")
            if not math.isnan(r["rate"]):
                expect = r["Ic_u"] / (r["T1"] + r["Tc"] + r["T2"])
                if abs(r["rate"] - expect) > 1e-12:
                    problems.append(f"g={g}: rate {r['rate']} != Ic_u/T = {expect}")
        if not isinstance(r.get("converged"), bool):
            problems.append(f"g={g}: converged flag missing")
    return problems
