"""Kraus channels: construction, validation, composition and application."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import reduce
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .qstate import (
    DensityMatrix,
    ValidationError,
    _check_targets,
    _n_qubits,
    apply_superop,
    is_unitary,
    superoperator,
)

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, X, Y, Z)

MAX_KRAUS_OPERATORS = 10**6
_DROP_TOL = 1e-15


def pauli_string(labels: Sequence[int]) -> np.ndarray:
    """Tensor product of Paulis, 0=I 1=X 2=Y 3=Z, first label on qubit 0."""
    return reduce(np.kron, (PAULIS[k] for k in labels), np.eye(1, dtype=complex))


def pauli_group(m: int) -> list[np.ndarray]:
    """All 4**m Pauli strings, identity first, in lexicographic label order."""
    return [pauli_string(lab) for lab in itertools.product(range(4), repeat=m)]


@dataclass(frozen=True)
class KrausChannel:
    operators: tuple[np.ndarray, ...]
    declared_p_ne: float | None = None

    def __post_init__(self):
        ops = []
        for k in self.operators:
            a = np.array(k, dtype=complex)
            a.setflags(write=False)
            ops.append(a)
        if not ops:
            raise ValidationError("a channel needs at least one Kraus operator")
        dim = ops[0].shape[0]
        if any(a.shape != (dim, dim) for a in ops):
            raise ValidationError("Kraus operators must be square and of equal size")
        _n_qubits(dim)
        object.__setattr__(self, "operators", tuple(ops))

    @property
    def n_qubits(self) -> int:
        return _n_qubits(self.dim)

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    def __len__(self) -> int:
        return len(self.operators)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    completeness_deviation: float
    identity_convention: bool | None
    messages: tuple[str, ...] = ()


def validate(channel: KrausChannel, tol: float = 1e-10) -> ValidationReport:
    """Check completeness and the ``K_0 = sqrt(p_ne) I`` convention. Never raises."""
    msgs = []
    total = sum(k.conj().T @ k for k in channel.operators)
    dev = float(np.abs(total - np.eye(channel.dim)).max())
    if dev > tol:
        msgs.append(f"sum K^dag K deviates from identity by {dev:.3e}")
    convention = None
    if channel.declared_p_ne is not None:
        target = np.sqrt(channel.declared_p_ne) * np.eye(channel.dim)
        convention = bool(np.abs(channel.operators[0] - target).max() <= 1e-12)
        if not convention:
            msgs.append("operator 0 is not sqrt(p_ne) * identity")
    return ValidationReport(not msgs, dev, convention, tuple(msgs))


def _check_prob(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def _weighted(weights: Sequence[float], ops: Sequence[np.ndarray], p_ne: float | None) -> KrausChannel:
    # zero-weight operators are dropped, but operator 0 always stays
    kept = [np.sqrt(w) * op for i, (w, op) in enumerate(zip(weights, ops)) if i == 0 or w > _DROP_TOL]
    return KrausChannel(tuple(kept), declared_p_ne=p_ne)


def identity_channel(n_qubits: int = 1) -> KrausChannel:
    return KrausChannel((np.eye(1 << n_qubits, dtype=complex),), declared_p_ne=1.0)


def dephasing(p_ne: float) -> KrausChannel:
    p = _check_prob("p_ne", p_ne)
    return _weighted([p, 1 - p], [I2, Z], p)


def bit_flip(p_ne: float) -> KrausChannel:
    p = _check_prob("p_ne", p_ne)
    return _weighted([p, 1 - p], [I2, X], p)


def depolarizing(p_ne: float, n_qubits: int = 1) -> KrausChannel:
    """Uniform Pauli channel: weight ``(1-p_ne)/(4**n - 1)`` on each non-identity string."""
    p = _check_prob("p_ne", p_ne)
    ops = pauli_group(n_qubits)
    rest = (1 - p) / (len(ops) - 1)
    return _weighted([p] + [rest] * (len(ops) - 1), ops, p)


def pauli_channel(probs: Sequence[float]) -> KrausChannel:
    """Pauli channel with ``probs[k]`` on the k-th string of :func:`pauli_group`."""
    probs = np.asarray(probs, dtype=float)
    m = _n_qubits(probs.size) // 2
    if probs.size != 4**m or np.any(probs < -1e-15) or abs(probs.sum() - 1) > 1e-12:
        raise ValidationError("Pauli weights must be a probability vector of length 4**m")
    return _weighted(list(np.clip(probs, 0, None)), pauli_group(m), float(probs[0]))


def amplitude_damping(gamma: float) -> KrausChannel:
    g = _check_prob("gamma", gamma)
    k0 = np.array([[1, 0], [0, np.sqrt(1 - g)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(g)], [0, 0]], dtype=complex)
    return KrausChannel((k0, k1) if g > 0 else (k0,))


def tensor_power(channel: KrausChannel, m: int) -> KrausChannel:
    """Independent action on ``m`` copies; operator 0 stays the all-first combination."""
    if m < 1:
        raise ValidationError("tensor power needs m >= 1")
    if len(channel) ** m > MAX_KRAUS_OPERATORS:
        raise ValidationError(f"{len(channel)}**{m} Kraus operators exceeds {MAX_KRAUS_OPERATORS}")
    ops = tuple(
        reduce(np.kron, combo)
        for combo in itertools.product(channel.operators, repeat=m)
    )
    p = None if channel.declared_p_ne is None else channel.declared_p_ne**m
    return KrausChannel(ops, declared_p_ne=p)


def compose_parallel(channels: Sequence[KrausChannel]) -> KrausChannel:
    """Channels acting on consecutive qubit blocks, first channel on the high-order block."""
    if len(channels) == 1:
        return channels[0]
    ops = tuple(reduce(np.kron, combo) for combo in itertools.product(*(c.operators for c in channels)))
    if len(ops) > MAX_KRAUS_OPERATORS:
        raise ValidationError("too many Kraus operators")
    ps = [c.declared_p_ne for c in channels]
    return KrausChannel(ops, declared_p_ne=None if None in ps else float(np.prod(ps)))


def apply(channel: KrausChannel, rho: DensityMatrix, targets: Sequence[int]) -> DensityMatrix:
    targets = _check_targets(targets, rho.n_qubits, channel.n_qubits)
    return DensityMatrix(apply_raw(channel, rho.entries, targets, rho.n_qubits), normalized=rho.normalized)


def apply_raw(channel: KrausChannel, rho: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    return apply_superop(rho, superoperator(channel.operators), targets, n)


def noisy_gate(u: np.ndarray, channel: KrausChannel) -> Callable[[DensityMatrix], DensityMatrix]:
    """The map ``ρ -> Σ_j K_j U ρ U† K_j†`` on a register of ``channel.n_qubits`` qubits."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (channel.dim, channel.dim):
        raise ValidationError("unitary and channel act on different dimensions")
    if not is_unitary(u):
        raise ValidationError("operator is not unitary within 1e-10")
    merged = KrausChannel(tuple(k @ u for k in channel.operators))
    targets = list(range(channel.n_qubits))

    def gate(rho: DensityMatrix) -> DensityMatrix:
        if rho.n_qubits != channel.n_qubits:
            raise ValidationError("state and gate sizes differ")
        return apply(merged, rho, targets)

    return gate


def no_error_probability(channel: KrausChannel) -> float:
    """Declared ``p_ne`` if set, otherwise ``Σ_j |Tr K_j|² / dim²``."""
    if channel.declared_p_ne is not None:
        return float(channel.declared_p_ne)
    dim = channel.dim
    return float(sum(abs(np.trace(k)) ** 2 for k in channel.operators) / dim**2)


def canonical_kraus(channel: KrausChannel) -> tuple[np.ndarray, ...]:
    """Remix the Kraus list so only operator 0 has nonzero trace.

    Operator 0 then carries the whole identity component,
    ``Tr K_0 / dim = sqrt(p_ne)`` with ``p_ne`` the gauge-invariant value, and
    for Pauli channels it is exactly ``sqrt(p_ne) I``.
    """
    ops = np.array(channel.operators)
    dim = channel.dim
    t = np.einsum("jaa->j", ops) / dim
    norm = np.linalg.norm(t)
    if norm < 1e-15:
        return tuple(ops)
    n = len(ops)
    first = t.conj() / norm
    # unitary with the given first row: Householder-style completion
    basis = np.column_stack([first.conj(), np.eye(n, dtype=complex)])
    q, _ = np.linalg.qr(basis)
    q = q[:, :n]
    q[:, 0] = first.conj()
    for k in range(1, n):
        q[:, k] -= q[:, :k] @ (q[:, :k].conj().T @ q[:, k])
        q[:, k] /= np.linalg.norm(q[:, k])
    v = q.conj().T  # rows orthonormal, row 0 == first
    mixed = np.einsum("ij,jab->iab", v, ops)
    return tuple(mixed)


def remix(channel: KrausChannel, v: np.ndarray) -> KrausChannel:
    """Kraus list ``K'_i = Σ_j v_ij K_j`` for unitary ``v`` (same channel)."""
    ops = np.einsum("ij,jab->iab", np.asarray(v), np.array(channel.operators))
    return KrausChannel(tuple(ops))


# --- serialization ----------------------------------------------------------

def channel_to_json(channel: KrausChannel) -> dict:
    return {
        "n_qubits": channel.n_qubits,
        "operators": [[[[float(z.real), float(z.imag)] for z in row] for row in k] for k in channel.operators],
    }


def channel_from_json(doc: dict | str | Path) -> KrausChannel:
    """Load ``{"n_qubits": k, "operators": [[[re, im], ...], ...]}``; raises on an invalid channel."""
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text())
    try:
        k = int(doc["n_qubits"])
        ops = [np.array(op, dtype=float) for op in doc["operators"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed channel document: {exc}") from None
    mats = []
    for op in ops:
        if op.shape != (1 << k, 1 << k, 2):
            raise ValidationError(f"operator shape {op.shape} does not match n_qubits={k}")
        mats.append(op[..., 0] + 1j * op[..., 1])
    ch = KrausChannel(tuple(mats))
    report = validate(ch)
    if not report.ok:
        raise ValidationError("; ".join(report.messages))
    return ch


_FAMILIES = {
    "dephasing": dephasing,
    "bit_flip": bit_flip,
    "depolarizing": depolarizing,
}


def register_channel(family: str, p_ne: float, n_qubits: int) -> KrausChannel:
    """Per-qubit ``family`` noise on ``n_qubits`` whose total no-error probability is ``p_ne``.

    Each qubit gets the single-qubit channel with parameter ``p_ne**(1/n)``.
    ``depolarizing_global`` is the uniform ``n``-qubit Pauli channel instead,
    and ``amplitude_damping`` takes ``p_ne`` as ``1 - gamma`` per qubit.
    """
    p = _check_prob("p_ne", p_ne)
    if family == "identity":
        return identity_channel(n_qubits)
    if family == "depolarizing_global":
        return depolarizing(p, n_qubits)
    per_qubit = p ** (1.0 / n_qubits)
    if family == "amplitude_damping":
        return tensor_power(amplitude_damping(1 - per_qubit), n_qubits)
    try:
        ctor = _FAMILIES[family]
    except KeyError:
        raise ValidationError(f"unknown channel family {family!r}") from None
    return tensor_power(ctor(per_qubit), n_qubits)


CHANNEL_FAMILIES = ("identity", "dephasing", "bit_flip", "depolarizing", "depolarizing_global", "amplitude_damping")
