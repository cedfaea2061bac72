"""Gate-level circuits with per-gate noise.

Used to replace the ideal controlled swaps by their CNOT/Toffoli
decomposition with depolarizing noise after every CNOT, and to build the
layered benchmark unitary ``[CNOT (T ⊗ T)]^N``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import channels as ch
from .channels import KrausChannel, channel_from_json, channel_to_json, register_channel
from .protocol import (
    MAX_DENSITY_QUBITS,
    FiguresOfMerit,
    ProtocolRun,
    ProtocolSpec,
    RegisterTooLargeError,
    _collect,
    _initial_state,
    default_selection,
    figures_of_merit,
    cj_fidelity,
)
from .qstate import ValidationError, _apply_left, apply_superop, superoperator

H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
T = np.diag([np.exp(1j * np.pi / 8), np.exp(-1j * np.pi / 8)])  # exp(iπ/8 Z)
CNOT = np.eye(4, dtype=complex)[[0, 1, 3, 2]]
TOFFOLI = np.eye(8, dtype=complex)[[0, 1, 2, 3, 4, 5, 7, 6]]
FREDKIN = np.eye(8, dtype=complex)[[0, 1, 2, 3, 4, 6, 5, 7]]


def phase(angle: float) -> np.ndarray:
    return np.diag([1.0, np.exp(1j * angle)])


_FIXED = {
    "h": H,
    "x": ch.X,
    "y": ch.Y,
    "z": ch.Z,
    "t": T,
    "tdg": T.conj().T,
    "cnot": CNOT,
    "toffoli": TOFFOLI,
    "fredkin": FREDKIN,
}
_ARITY = {"h": 1, "x": 1, "y": 1, "z": 1, "t": 1, "tdg": 1, "phase": 1, "cnot": 2, "toffoli": 3, "fredkin": 3}
GATES = tuple(_ARITY)


@dataclass(frozen=True)
class GateOp:
    kind: str
    targets: tuple[int, ...]
    angle: float | None = None
    noise: KrausChannel | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.kind not in _ARITY:
            raise ValidationError(f"unknown gate {self.kind!r}")
        if len(self.targets) != _ARITY[self.kind] or len(set(self.targets)) != len(self.targets):
            raise ValidationError(f"{self.kind} needs {_ARITY[self.kind]} distinct targets, got {self.targets}")
        if self.kind == "phase" and self.angle is None:
            raise ValidationError("phase gate needs an angle")
        if self.noise is not None and self.noise.n_qubits != len(self.targets):
            raise ValidationError("attached noise must act on the gate's qubits")

    @property
    def matrix(self) -> np.ndarray:
        if self.kind == "phase":
            return phase(self.angle)
        return _FIXED[self.kind]


@dataclass(frozen=True)
class GateCircuit:
    ops: tuple[GateOp, ...]
    n_qubits: int

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        for op in self.ops:
            if any(not 0 <= t < self.n_qubits for t in op.targets):
                raise ValidationError(f"gate {op.kind} on {op.targets} outside {self.n_qubits} qubits")

    def __add__(self, other: "GateCircuit") -> "GateCircuit":
        return GateCircuit(self.ops + other.ops, max(self.n_qubits, other.n_qubits))

    def two_qubit_count(self) -> int:
        return sum(1 for op in self.ops if op.kind == "cnot")

    def unitary(self) -> np.ndarray:
        """Ideal unitary, ignoring attached noise."""
        n = self.n_qubits
        u = np.eye(1 << n, dtype=complex)
        for op in self.ops:
            u = _embed(op.matrix, op.targets, n) @ u
        return u

    def to_json(self) -> list[dict]:
        out = []
        for op in self.ops:
            item = {"gate": op.kind, "targets": list(op.targets)}
            if op.angle is not None:
                item["angle"] = op.angle
            if op.noise is not None:
                item["noise"] = channel_to_json(op.noise)
            out.append(item)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _embed(u: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    return _apply_left(np.eye(1 << n, dtype=complex), u, targets, n)


def noise_from_json(doc: dict, n_qubits: int) -> KrausChannel:
    """``{"family": ..., "p_ne": ...}`` or a full operator document."""
    if "operators" in doc:
        chan = channel_from_json(doc)
    else:
        try:
            chan = register_channel(doc["family"], float(doc["p_ne"]), n_qubits)
        except KeyError as exc:
            raise ValidationError(f"noise spec missing {exc.args[0]!r}") from None
    if chan.n_qubits != n_qubits:
        raise ValidationError("noise size does not match the gate")
    return chan


def circuit_from_json(doc: list | str | Path, n_qubits: int | None = None) -> GateCircuit:
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text())
    ops = []
    for i, item in enumerate(doc):
        try:
            kind, targets = item["gate"].lower(), list(item["targets"])
        except (KeyError, TypeError, AttributeError):
            raise ValidationError(f"gate {i}: needs 'gate' and 'targets'") from None
        noise = noise_from_json(item["noise"], len(targets)) if item.get("noise") else None
        ops.append(GateOp(kind, tuple(targets), item.get("angle"), noise))
    width = n_qubits if n_qubits is not None else 1 + max((t for op in ops for t in op.targets), default=0)
    return GateCircuit(tuple(ops), width)


# --- decompositions --------------------------------------------------------------

def toffoli_ops(c1: int, c2: int, t: int, cnot_noise: KrausChannel | None = None) -> list[GateOp]:
    """Standard 6-CNOT Toffoli; ``phase(±π/4)`` are the usual T/T† gates."""
    tq, tdg = np.pi / 4, -np.pi / 4

    def cx(a, b):
        return GateOp("cnot", (a, b), noise=cnot_noise)

    return [
        GateOp("h", (t,)),
        cx(c2, t), GateOp("phase", (t,), tdg),
        cx(c1, t), GateOp("phase", (t,), tq),
        cx(c2, t), GateOp("phase", (t,), tdg),
        cx(c1, t), GateOp("phase", (c2,), tq), GateOp("phase", (t,), tq),
        GateOp("h", (t,)),
        cx(c1, c2), GateOp("phase", (c1,), tq), GateOp("phase", (c2,), tdg),
        cx(c1, c2),
    ]


def fredkin_ops(c: int, a: int, b: int, cnot_noise: KrausChannel | None = None) -> list[GateOp]:
    """Controlled swap as ``CNOT(b→a) · Toffoli(c, a → b) · CNOT(b→a)``."""
    return [
        GateOp("cnot", (b, a), noise=cnot_noise),
        *toffoli_ops(c, a, b, cnot_noise),
        GateOp("cnot", (b, a), noise=cnot_noise),
    ]


def cnot_depolarizing(eps: float) -> KrausChannel | None:
    """Uniform two-qubit Pauli noise with total error probability ``eps``."""
    if eps < 0 or eps > 1:
        raise ValidationError("eps must lie in [0, 1]")
    return None if eps == 0 else ch.depolarizing(1.0 - eps, n_qubits=2)


def cswap_decomposition(m: int, eps: float = 0.0) -> GateCircuit:
    """Controlled swap of two ``m``-qubit registers on qubits ``0 | 1..m | m+1..2m``."""
    if m < 1:
        raise ValidationError("need m >= 1")
    noise = cnot_depolarizing(eps)
    ops: list[GateOp] = []
    for i in range(m):
        ops += fredkin_ops(0, 1 + i, 1 + m + i, noise)
    return GateCircuit(tuple(ops), 1 + 2 * m)


def layered_circuit(
    n_layers: int,
    one_qubit_noise: KrausChannel | None = None,
    two_qubit_noise: KrausChannel | None = None,
) -> GateCircuit:
    if n_layers < 1:
        raise ValidationError("need at least one layer")
    ops = []
    for _ in range(n_layers):
        ops += [
            GateOp("t", (0,), noise=one_qubit_noise),
            GateOp("t", (1,), noise=one_qubit_noise),
            GateOp("cnot", (0, 1), noise=two_qubit_noise),
        ]
    return GateCircuit(tuple(ops), 2)


def layered_unitary(n_layers: int) -> np.ndarray:
    if n_layers < 1:
        raise ValidationError("need at least one layer")
    return np.linalg.matrix_power(CNOT @ np.kron(T, T), n_layers)


def with_gate_noise(circuit: GateCircuit, family: str, p_ne: float) -> GateCircuit:
    """Attach ``family`` noise of no-error probability ``p_ne`` after every gate."""
    return GateCircuit(
        tuple(replace(op, noise=register_channel(family, p_ne, len(op.targets))) for op in circuit.ops),
        circuit.n_qubits,
    )


# --- simulation -------------------------------------------------------------------

def apply_circuit(rho: np.ndarray, circuit: GateCircuit, qubits: Sequence[int], n: int) -> np.ndarray:
    """Run ``circuit`` (with its noise) on register qubits ``qubits`` of a ``2**n`` state."""
    if len(qubits) != circuit.n_qubits:
        raise ValidationError("qubit map does not match the circuit width")
    for op in circuit.ops:
        targets = [qubits[t] for t in op.targets]
        gate_ops = [op.matrix] if op.noise is None else [k @ op.matrix for k in op.noise.operators]
        rho = apply_superop(rho, superoperator(gate_ops), targets, n)
    return rho


@dataclass(frozen=True)
class NoisyProtocolResult:
    run: ProtocolRun
    merit: FiguresOfMerit
    baseline_F_CJ: float


def run_noisy_protocol(
    circuit: GateCircuit,
    spec: ProtocolSpec,
    eps: float,
    selection=None,
) -> NoisyProtocolResult:
    """Two-branch protocol with gate-level noisy controlled swaps.

    Every register runs ``circuit`` (and its per-gate noise) followed by
    ``spec.channel``. The baseline fidelity is the same noisy computation on
    the input alone, without controlled swaps or auxiliaries.
    """
    if spec.d != 2:
        raise ValidationError("gate-level controlled swaps are built for d = 2")
    if not spec.cj:
        raise ValidationError("figures of merit need the Choi input")
    if circuit.n_qubits != spec.m:
        raise ValidationError("circuit width differs from the register size")
    if np.abs(circuit.unitary() - spec.unitary).max() > 1e-10:
        raise ValidationError("spec unitary differs from the circuit's ideal unitary")
    lay = spec.layout
    n = lay.n_qubits
    if n > MAX_DENSITY_QUBITS:
        raise RegisterTooLargeError(f"{n} qubits exceeds the {MAX_DENSITY_QUBITS}-qubit ceiling")

    cswap = cswap_decomposition(spec.m, eps)
    cswap_qubits = lay["c"] + lay["a"] + lay["b1"]
    noise_sop = superoperator(spec.channel.operators)

    rho = _initial_state(spec)
    rho = apply_circuit(rho, cswap, cswap_qubits, n)
    for reg in ("a", "b1"):
        rho = apply_circuit(rho, circuit, lay[reg], n)
        rho = apply_superop(rho, noise_sop, lay[reg], n)
    rho = apply_circuit(rho, cswap, cswap_qubits, n)
    run = _collect(spec, rho, n, engine="bruteforce")

    base_spec = replace(spec, d=1)
    base_lay = base_spec.layout
    nb = base_lay.n_qubits
    rho0 = _initial_state(base_spec)
    rho0 = apply_circuit(rho0, circuit, base_lay["a"], nb)
    rho0 = apply_superop(rho0, noise_sop, base_lay["a"], nb)
    f0 = cj_fidelity(_collect(base_spec, rho0, nb, engine="bruteforce"), default_selection(1))

    merit = figures_of_merit(run, selection, f0=f0)
    return NoisyProtocolResult(run, merit, f0)
