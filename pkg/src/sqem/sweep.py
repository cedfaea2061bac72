"""Batch experiments: config parsing, grid expansion, row evaluation and output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import scipy

from . import __version__
from .channels import CHANNEL_FAMILIES, identity_channel, no_error_probability, register_channel
from .compiler import GateCircuit, circuit_from_json, layered_circuit, run_noisy_protocol, with_gate_noise
from .corrector import OptimizerConfig, optimize_corrections
from .protocol import (
    CHOI,
    NoiselessChannelError,
    ProtocolSpec,
    default_selection,
    execute,
    figures_of_merit,
    merit,
    spec_omegas,
)
from .qstate import PureState, ValidationError, product_state

SCHEMA_VERSION = 1
COLUMNS = ("scenario", "gate", "channel", "p_ne", "d", "aux", "omega1", "omega2", "P", "R", "F_CJ", "F0_CJ", "engine", "ms")
WORKERS_ENV = "SQEM_WORKERS"

_grid = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
        {
            "type": "object",
            "properties": {
                "from": {"type": "number"},
                "to": {"type": "number"},
                "steps": {"type": "integer", "minimum": 1},
            },
            "required": ["from", "to", "steps"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "scenario": {"enum": ["probabilistic", "quasi_deterministic", "noisy_cswap", "omega_scan"]},
        "gate": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "properties": {
                        "name": {"type": "string"},
                        "circuit": {"type": "array"},
                        "circuit_file": {"type": "string"},
                        "n_qubits": {"type": "integer", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
            ]
        },
        "channel": {
            "type": "object",
            "properties": {"family": {"enum": list(CHANNEL_FAMILIES)}, "p_ne": _grid},
            "required": ["family", "p_ne"],
            "additionalProperties": False,
        },
        "d": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 16}, "minItems": 1},
        "aux": {"type": "array", "items": {"type": "string"}},
        "aux_theta": _grid,
        "threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "seed": {"type": "integer"},
        "engine": {"enum": ["bruteforce", "closed_form", "auto"]},
        "cswap_eps": {"oneOf": [{"type": "number", "minimum": 0, "maximum": 1}, {"const": "match"}]},
        "noise_placement": {"enum": ["register", "per_gate"]},
        "optimizer": {
            "type": "object",
            "properties": {
                "max_evaluations": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "restarts": {"type": "integer", "minimum": 0},
                "parameterization": {"enum": ["single_qubit_products", "pauli_set"]},
                "shots": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    },
    "required": ["schema_version", "scenario", "gate", "channel", "d"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None, path: str = ""):
        self.line = line
        self.path = path
        where = f"line {line}: " if line else ""
        at = f"{path}: " if path else ""
        super().__init__(f"{where}{at}{message}")


def _locate(text: str, path) -> int | None:
    """Best-effort line of a JSON path inside ``text`` (keys searched in order)."""
    pos, line = 0, None
    for part in path:
        if isinstance(part, str):
            hit = text.find(f'"{part}"', pos)
            if hit < 0:
                break
            pos = hit
            line = text.count("\n", 0, hit) + 1
    return line


def expand_grid(grid) -> list[float]:
    if isinstance(grid, dict):
        steps = grid["steps"]
        if steps == 1:
            return [float(grid["from"])]
        return [float(x) for x in np.linspace(grid["from"], grid["to"], steps)]
    return [float(x) for x in grid]


_LAYERED = re.compile(r"^layered\((\d+)\)$")
_IDENTITY = re.compile(r"^identity(?:\((\d+)\))?$")
_RY = re.compile(r"^ry\(([-+0-9.eE]+)\)$")


@dataclass(frozen=True)
class Gate:
    label: str
    circuit: GateCircuit

    @property
    def m(self) -> int:
        return self.circuit.n_qubits

    @property
    def unitary(self) -> np.ndarray:
        return self.circuit.unitary()


def resolve_gate(gate, base_dir: Path | None = None) -> Gate:
    if isinstance(gate, dict):
        if "circuit" in gate:
            circ = circuit_from_json(gate["circuit"], gate.get("n_qubits"))
        elif "circuit_file" in gate:
            path = Path(gate["circuit_file"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            circ = circuit_from_json(path, gate.get("n_qubits"))
        else:
            raise ValidationError("custom gate needs 'circuit' or 'circuit_file'")
        return Gate(gate.get("name", "custom"), circ)
    name = gate.strip().lower()
    if name == "cnot":
        return Gate(name, circuit_from_json([{"gate": "cnot", "targets": [0, 1]}]))
    if name == "t":
        return Gate(name, circuit_from_json([{"gate": "t", "targets": [0]}]))
    if mt := _IDENTITY.match(name):
        return Gate(name, GateCircuit((), int(mt.group(1) or 1)))
    if mt := _LAYERED.match(name):
        return Gate(name, layered_circuit(int(mt.group(1))))
    raise ValidationError(f"unknown gate {gate!r}")


def resolve_aux(label: str, m: int) -> PureState | str:
    if label == CHOI:
        return CHOI
    if mt := _RY.match(label):
        th = float(mt.group(1))
        v = np.array([np.cos(th / 2), np.sin(th / 2)], dtype=complex)
        out = np.ones(1, dtype=complex)
        for _ in range(m):
            out = np.kron(out, v)
        return PureState(out)
    if len(label) != m:
        raise ValidationError(f"auxiliary {label!r} must name {m} qubits")
    return product_state(label)


@dataclass
class SweepSpec:
    scenario: str
    gate: Any
    family: str
    p_grid: list[float]
    d_list: list[int]
    aux: list[str]
    threshold: float = 1.0
    seed: int = 0
    engine: str = "auto"
    cswap_eps: float | str = 0.0
    noise_placement: str = "register"
    optimizer: dict = field(default_factory=dict)
    base_dir: Path | None = None
    raw: dict = field(default_factory=dict)

    def points(self) -> list[dict]:
        return [
            {
                "scenario": self.scenario,
                "gate": self.gate,
                "family": self.family,
                "p_ne": p,
                "d": d,
                "aux": aux,
                "engine": self.engine,
                "threshold": self.threshold,
                "seed": self.seed,
                "cswap_eps": self.cswap_eps,
                "noise_placement": self.noise_placement,
                "optimizer": self.optimizer,
                "base_dir": str(self.base_dir) if self.base_dir else None,
            }
            for aux in self.aux
            for d in self.d_list
            for p in self.p_grid
        ]

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def parse_config(text: str, base_dir: Path | None = None, seed: int | None = None) -> SweepSpec:
    """Parse and validate a sweep config; raises :class:`ConfigError` with a line number."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno) from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        raise ConfigError(err.message, _locate(text, path), "/".join(map(str, path)))

    def fail(msg, *path):
        raise ConfigError(msg, _locate(text, path), "/".join(map(str, path)))

    scenario = raw["scenario"]
    try:
        gate = resolve_gate(raw["gate"], base_dir)
    except (ValidationError, OSError) as exc:
        fail(str(exc), "gate")
    p_grid = expand_grid(raw["channel"]["p_ne"])
    if any(not 0.0 <= p <= 1.0 for p in p_grid):
        fail("p_ne values must lie in [0, 1]", "channel", "p_ne")
    aux = list(raw.get("aux", []))
    if scenario == "omega_scan":
        if "aux_theta" not in raw:
            fail("omega_scan needs an aux_theta grid", "scenario")
        aux += [f"ry({th!r})" for th in expand_grid(raw["aux_theta"])]
    if not aux:
        fail("at least one auxiliary is required", "aux")
    for label in aux:
        try:
            resolve_aux(label, gate.m)
        except ValidationError as exc:
            fail(str(exc), "aux")
    d_list = list(raw["d"])
    if scenario == "noisy_cswap" and any(d != 2 for d in d_list):
        fail("noisy_cswap supports d = 2 only", "d")
    if scenario == "noisy_cswap" and "cswap_eps" not in raw:
        fail("noisy_cswap needs cswap_eps", "scenario")
    eps = raw.get("cswap_eps", 0.0)
    placement = raw.get("noise_placement", "register")
    if placement == "per_gate" and not gate.circuit.ops:
        fail("per_gate noise needs a non-empty circuit", "noise_placement")
    opt = dict(raw.get("optimizer", {}))
    return SweepSpec(
        scenario=scenario,
        gate=raw["gate"],
        family=raw["channel"]["family"],
        p_grid=p_grid,
        d_list=d_list,
        aux=aux,
        threshold=float(raw.get("threshold", 1.0)),
        seed=int(seed if seed is not None else raw.get("seed", 0)),
        engine=raw.get("engine", "auto"),
        cswap_eps=eps,
        noise_placement=placement,
        optimizer=opt,
        base_dir=base_dir,
        raw=raw,
    )


def load_config(path: str | Path, seed: int | None = None) -> SweepSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent, seed)


# --- evaluation ------------------------------------------------------------------

def _omegas(spec: ProtocolSpec) -> tuple[float, float]:
    try:
        return spec_omegas(spec)
    except NoiselessChannelError as exc:
        return math.nan, exc.omega2


def build_spec(point: dict, gate: Gate | None = None) -> ProtocolSpec:
    gate = gate or resolve_gate(point["gate"], Path(point["base_dir"]) if point.get("base_dir") else None)
    channel = register_channel(point["family"], point["p_ne"], gate.m)
    variant = "quasi_deterministic" if point["scenario"] == "quasi_deterministic" else "probabilistic"
    return ProtocolSpec(
        gate.unitary, channel, d=point["d"], auxiliary=resolve_aux(point["aux"], gate.m), variant=variant
    )


def evaluate_point(point: dict) -> dict:
    """One CSV row (as a dict) for a grid point; errors become an ``error`` row."""
    t0 = time.perf_counter()
    gate_label = point["gate"] if isinstance(point["gate"], str) else point["gate"].get("name", "custom")
    row = {
        "scenario": point["scenario"],
        "gate": gate_label,
        "channel": point["family"],
        "p_ne": point["p_ne"],
        "d": point["d"],
        "aux": point["aux"],
    }
    try:
        gate = resolve_gate(point["gate"], Path(point["base_dir"]) if point.get("base_dir") else None)
        spec = build_spec(point, gate)
        scenario = point["scenario"]
        if scenario in ("probabilistic", "omega_scan"):
            run = execute(spec, point["engine"], selection=None if spec.d <= 2 else default_selection(spec.d))
            fm = figures_of_merit(run)
            engine = run.engine
        elif scenario == "quasi_deterministic":
            cfg = OptimizerConfig(threshold=point["threshold"], seed=point["seed"], **point["optimizer"])
            engine_req = "bruteforce" if point["engine"] == "bruteforce" else "auto"
            run = execute(spec, engine_req)
            table = optimize_corrections(spec, cfg, run)
            fm = merit(table.achieved_probability, table.achieved_F_CJ, no_error_probability(spec.channel))
            engine = run.engine
        else:
            eps = 1.0 - point["p_ne"] if point["cswap_eps"] == "match" else float(point["cswap_eps"])
            circuit = gate.circuit
            if point["noise_placement"] == "per_gate":
                circuit = with_gate_noise(circuit, point["family"], point["p_ne"])
                spec = replace(spec, channel=identity_channel(gate.m))
            res = run_noisy_protocol(circuit, spec, eps)
            fm = res.merit
            engine = "bruteforce"
        if point["scenario"] == "noisy_cswap" and point["noise_placement"] == "per_gate":
            om1, om2 = math.nan, math.nan
        else:
            om1, om2 = _omegas(spec)
        row.update(omega1=om1, omega2=om2, P=fm.P, R=fm.R, F_CJ=fm.F_CJ, F0_CJ=fm.F0_CJ, engine=engine)
        row["_sentinel"] = fm.r_sentinel
    except ValidationError as exc:
        row.update({k: math.nan for k in ("omega1", "omega2", "P", "R", "F_CJ", "F0_CJ")}, engine="error")
        row["_error"] = str(exc)
    row["ms"] = (time.perf_counter() - t0) * 1e3
    return row


def fmt(value) -> str:
    """17 significant digits, locale independent; ints and strings pass through."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(float(value), ".17g")
    return str(value)


def rows_to_csv(rows: list[dict], timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        vals = []
        for col in COLUMNS:
            if col == "ms":
                vals.append(format(row["ms"], ".3f") if timing else "0")
            else:
                vals.append(fmt(row[col]))
        writer.writerow(vals)
    return buf.getvalue()


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class SweepResult:
    rows: list[dict]
    manifest: dict

    @property
    def errors(self) -> list[dict]:
        return self.manifest["errors"]


def run_sweep(sweep: SweepSpec, workers: int | None = None) -> SweepResult:
    """Evaluate every grid point; rows come back in grid order whatever the pool does."""
    points = sweep.points()
    workers = workers or worker_count()
    t0 = time.perf_counter()
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate_point, points))
    else:
        rows = [evaluate_point(p) for p in points]
    errors = [{"row": i, "error": r["_error"]} for i, r in enumerate(rows) if "_error" in r]
    engines: dict[str, int] = {}
    for r in rows:
        engines[r["engine"]] = engines.get(r["engine"], 0) + 1
    manifest = {
        "config_sha256": sweep.config_hash(),
        "schema_version": SCHEMA_VERSION,
        "seed": sweep.seed,
        "versions": {
            "sqem": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "totals": {"rows": len(rows), "errors": len(errors), "engines": engines},
        "errors": errors,
        "r_sentinel_rows": [i for i, r in enumerate(rows) if r.get("_sentinel")],
        "workers": workers,
        "wall_time_s": time.perf_counter() - t0,
    }
    return SweepResult(rows, manifest)
