"""Dense states, operators and measurements on multi-qubit registers.

Qubit 0 is the most significant bit of a basis-state index (big-endian).
Density matrices may be subnormalized: after a projective measurement the
trace of the conditional state is the probability of the outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_DENSITY_QUBITS = 13


class ValidationError(ValueError):
    """Raised when a state, operator or layout breaks its invariants."""


def _n_qubits(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or 1 << n != dim:
        raise ValidationError(f"dimension {dim} is not a power of two")
    return n


def _frozen(a, dtype=complex) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        _n_qubits(amps.size)

    @property
    def n_qubits(self) -> int:
        return _n_qubits(self.amplitudes.size)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def check(self, atol: float = 1e-12) -> None:
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > atol:
            raise ValidationError(f"state norm {norm!r} differs from 1")

    def density(self) -> "DensityMatrix":
        v = self.amplitudes
        return DensityMatrix(np.outer(v, v.conj()))

    def normalized(self) -> "PureState":
        return PureState(self.amplitudes / np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        rho = _frozen(self.entries)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValidationError(f"density matrix must be square, got {rho.shape}")
        _n_qubits(rho.shape[0])
        object.__setattr__(self, "entries", rho)

    @property
    def n_qubits(self) -> int:
        return _n_qubits(self.entries.shape[0])

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.entries)))

    def check(self, herm_tol: float = 1e-10, psd_tol: float = 1e-10, trace_tol: float = 1e-10) -> None:
        """Raise :class:`ValidationError` unless the matrix is a valid (sub)normalized state."""
        rho = self.entries
        dev = np.abs(rho - rho.conj().T).max() if rho.size else 0.0
        if dev > herm_tol:
            raise ValidationError(f"not Hermitian (max deviation {dev:.3e})")
        lo = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
        if lo < -psd_tol:
            raise ValidationError(f"negative eigenvalue {lo:.3e}")
        tr = self.trace
        if self.normalized and abs(tr - 1.0) > trace_tol:
            raise ValidationError(f"trace {tr!r} differs from 1")
        if not -trace_tol <= tr <= 1.0 + trace_tol:
            raise ValidationError(f"trace {tr!r} outside [0, 1]")

    def normalize(self) -> "DensityMatrix":
        tr = self.trace
        if tr <= 0:
            return DensityMatrix(np.zeros_like(self.entries), normalized=False)
        return DensityMatrix(self.entries / tr)


@dataclass(frozen=True)
class MeasurementBasis:
    """Ordered orthonormal vectors on a register; ``partial`` marks an incomplete set."""

    vectors: np.ndarray  # shape (n_elements, dim), row k is element k
    partial: bool = False

    def __post_init__(self):
        vecs = _frozen(self.vectors)
        if vecs.ndim != 2:
            raise ValidationError("basis vectors must be a 2-d array")
        object.__setattr__(self, "vectors", vecs)
        if not self.partial and vecs.shape[0] != vecs.shape[1]:
            raise ValidationError(
                f"complete basis needs {vecs.shape[1]} elements, got {vecs.shape[0]}"
            )

    @classmethod
    def from_states(cls, states: Sequence[PureState], partial: bool = False) -> "MeasurementBasis":
        return cls(np.array([s.amplitudes for s in states]), partial=partial)

    @property
    def n_qubits(self) -> int:
        return _n_qubits(self.vectors.shape[1])

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __getitem__(self, k: int) -> PureState:
        return PureState(self.vectors[k])

    def check(self, atol: float = 1e-10) -> None:
        gram = self.vectors.conj() @ self.vectors.T
        dev = np.abs(gram - np.eye(len(self))).max()
        if dev > atol:
            raise ValidationError(f"basis not orthonormal (max deviation {dev:.3e})")


@dataclass(frozen=True)
class RegisterLayout:
    """Named, contiguous qubit ranges, in order of increasing qubit index."""

    registers: dict[str, range] = field(default_factory=dict)

    @classmethod
    def build(cls, sizes: Sequence[tuple[str, int]]) -> "RegisterLayout":
        regs: dict[str, range] = {}
        start = 0
        for name, size in sizes:
            if name in regs:
                raise ValidationError(f"duplicate register {name!r}")
            regs[name] = range(start, start + size)
            start += size
        return cls(regs)

    @property
    def n_qubits(self) -> int:
        return sum(len(r) for r in self.registers.values())

    def __getitem__(self, name: str) -> list[int]:
        return list(self.registers[name])

    def __contains__(self, name: str) -> bool:
        return name in self.registers

    def check(self) -> None:
        seen: list[int] = []
        for r in self.registers.values():
            seen.extend(r)
        if sorted(seen) != list(range(self.n_qubits)) or len(set(seen)) != len(seen):
            raise ValidationError("register ranges overlap or leave gaps")


# --- constructors -----------------------------------------------------------

def basis_state(bits: str | Sequence[int]) -> PureState:
    bits = [int(b) for b in bits]
    v = np.zeros(1 << len(bits), dtype=complex)
    v[int("".join(map(str, bits)) or "0", 2)] = 1.0
    return PureState(v)


_NAMED_1Q = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
    "i": np.array([1, 1j], dtype=complex) / np.sqrt(2),
    "j": np.array([1, -1j], dtype=complex) / np.sqrt(2),
}


def product_state(label: str) -> PureState:
    """Product state from a label over the alphabet ``01+-ij`` (``i``/``j`` are the ±Y eigenstates)."""
    try:
        vecs = [_NAMED_1Q[ch] for ch in label]
    except KeyError as exc:
        raise ValidationError(f"unknown single-qubit label {exc.args[0]!r} in {label!r}") from None
    v = np.ones(1, dtype=complex)
    for u in vecs:
        v = np.kron(v, u)
    return PureState(v)


def bell_pairs(m: int) -> PureState:
    """``m`` Bell pairs with pair ``k`` on qubits ``(k, m + k)``.

    The first ``m`` qubits form the reference half and the last ``m`` the
    half that is handed to a channel.
    """
    if m < 1:
        raise ValidationError("need at least one Bell pair")
    dim = 1 << m
    v = np.zeros(dim * dim, dtype=complex)
    idx = np.arange(dim)
    v[idx * dim + idx] = 1.0 / np.sqrt(dim)
    return PureState(v)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_pure_state(n_qubits: int, rng: np.random.Generator) -> PureState:
    v = rng.standard_normal(1 << n_qubits) + 1j * rng.standard_normal(1 << n_qubits)
    return PureState(v / np.linalg.norm(v))


def random_density_matrix(n_qubits: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    dim = 1 << n_qubits
    rank = rank or dim
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return DensityMatrix(rho / np.trace(rho).real)


def completed_basis(first: PureState) -> MeasurementBasis:
    """Orthonormal basis whose element 0 is exactly ``first``."""
    v = first.normalized().amplitudes
    dim = v.size
    q, r = np.linalg.qr(np.column_stack([v, np.eye(dim, dtype=complex)]))
    q = q[:, :dim]
    q[:, 0] = v
    # columns 1.. are orthogonal to v already; re-orthonormalise against exact v
    for k in range(1, dim):
        q[:, k] -= q[:, :k] @ (q[:, :k].conj().T @ q[:, k])
        q[:, k] /= np.linalg.norm(q[:, k])
    return MeasurementBasis(q.T.copy())


def fourier_basis(d: int, n_qubits: int) -> MeasurementBasis:
    """Fourier basis of the first ``d`` levels of an ``n_qubits`` register.

    Element ``k < d`` is ``sum_j exp(2πi jk/d)|j>/sqrt(d)``; element 0 is the
    uniform superposition. Levels ``d..2**n-1`` are appended as computational
    basis states so the basis stays complete.
    """
    dim = 1 << n_qubits
    if not 1 <= d <= dim:
        raise ValidationError(f"cannot embed {d} levels in {n_qubits} qubits")
    vecs = np.zeros((dim, dim), dtype=complex)
    j = np.arange(d)
    for k in range(d):
        vecs[k, :d] = np.exp(2j * np.pi * j * k / d) / np.sqrt(d)
    for k in range(d, dim):
        vecs[k, k] = 1.0
    return MeasurementBasis(vecs)


# --- kernels ---------------------------------------------------------------

def _apply_left(mat: np.ndarray, op: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Return ``(op on targets) @ mat`` for a ``2**n`` row space."""
    k = len(targets)
    if k == 0:
        return mat * op.reshape(())
    t = mat.reshape([2] * n + [-1])
    t = np.tensordot(op.reshape([2] * (2 * k)), t, axes=(list(range(k, 2 * k)), list(targets)))
    t = np.moveaxis(t, list(range(k)), list(targets))
    return t.reshape(mat.shape)


def superoperator(ops: Sequence[np.ndarray]) -> np.ndarray:
    """``Σ_j K_j ⊗ conj(K_j)``: the map ``ρ -> Σ_j K_j ρ K_j†`` on row-major ``vec(ρ)``."""
    return sum(np.kron(k, k.conj()) for k in ops)


def apply_superop(rho: np.ndarray, sop: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Apply a superoperator from :func:`superoperator` to ``targets`` of a ``2**n`` matrix."""
    k = len(targets)
    if k == 0:
        return rho * sop.reshape(())
    axes = list(targets) + [n + q for q in targets]
    t = np.tensordot(sop.reshape([2] * (4 * k)), rho.reshape([2] * (2 * n)), axes=(list(range(2 * k, 4 * k)), axes))
    t = np.moveaxis(t, list(range(2 * k)), axes)
    return t.reshape(rho.shape)


def conjugate_by(rho: np.ndarray, op: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """``op ρ op†`` with ``op`` embedded on ``targets``; raw arrays, no checks."""
    return apply_superop(rho, superoperator([op]), targets, n)


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.abs(u.conj().T @ u - np.eye(u.shape[0])).max() <= atol


def _check_targets(targets: Sequence[int], n: int, k: int | None = None) -> list[int]:
    targets = [int(t) for t in targets]
    if len(set(targets)) != len(targets) or any(not 0 <= t < n for t in targets):
        raise ValidationError(f"bad target qubits {targets} for a {n}-qubit register")
    if k is not None and len(targets) != k:
        raise ValidationError(f"operator acts on {k} qubits but {len(targets)} targets given")
    return targets


# --- operations -------------------------------------------------------------

def tensor_product(a, b):
    """Kronecker composition; ``a`` occupies the high-order qubits."""
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(np.kron(a.entries, b.entries), normalized=a.normalized and b.normalized)
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def apply_unitary(rho: DensityMatrix, u: np.ndarray, targets: Sequence[int], validate: bool = False) -> DensityMatrix:
    u = np.asarray(u, dtype=complex)
    k = _n_qubits(u.shape[0])
    targets = _check_targets(targets, rho.n_qubits, k)
    if not is_unitary(u):
        raise ValidationError("operator is not unitary within 1e-10")
    out = DensityMatrix(conjugate_by(rho.entries, u, targets, rho.n_qubits), normalized=rho.normalized)
    if validate:
        out.check()
    return out


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Reduced state on ``keep`` (in the given order)."""
    n = rho.n_qubits
    keep = _check_targets(keep, n)
    t = rho.entries.reshape([2] * (2 * n))
    ket = list(range(n))
    bra = [n + q if q in keep else q for q in range(n)]
    out = [q for q in keep] + [n + q for q in keep]
    red = np.einsum(t, ket + bra, out)
    dim = 1 << len(keep)
    return DensityMatrix(red.reshape(dim, dim), normalized=rho.normalized)


def project(rho: DensityMatrix, onto: PureState, targets: Sequence[int]) -> tuple[float, DensityMatrix]:
    """Project ``targets`` onto ``onto``.

    Returns the outcome probability and the subnormalized conditional state on
    the remaining qubits (their original order). A zero-probability outcome
    yields the zero matrix.
    """
    n = rho.n_qubits
    targets = _check_targets(targets, n, onto.n_qubits)
    rest = [q for q in range(n) if q not in targets]
    t = rho.entries.reshape([2] * (2 * n))
    v = onto.amplitudes.reshape([2] * len(targets))
    cond = np.einsum(
        t, list(range(2 * n)),
        v.conj(), list(targets),
        v, [n + q for q in targets],
        rest + [n + q for q in rest],
    )
    dim = 1 << len(rest)
    cond = cond.reshape(dim, dim)
    prob = float(np.real(np.trace(cond)))
    if prob <= 0.0:
        return 0.0, DensityMatrix(np.zeros((dim, dim), dtype=complex), normalized=False)
    return prob, DensityMatrix(cond, normalized=False)


def measurement_blocks(
    rho: np.ndarray,
    n: int,
    groups: Sequence[tuple[Sequence[int], MeasurementBasis]],
) -> tuple[np.ndarray, list[int]]:
    """Measure several registers at once, each in its own complete basis.

    Returns ``(blocks, rest)`` where ``blocks[o]`` is the subnormalized state
    on the unmeasured qubits ``rest`` for the joint outcome ``o``. ``o`` is the
    big-endian mixed-radix index over the groups, in the given order.
    """
    rho = np.asarray(rho)
    measured: list[int] = []
    for targets, basis in groups:
        if basis.partial:
            raise ValidationError("bulk measurement needs complete bases")
        # rotate so that basis element k becomes computational state |k>
        rho = conjugate_by(rho, basis.vectors.conj(), list(targets), n)
        measured.extend(targets)
    rest = [q for q in range(n) if q not in measured]
    t = rho.reshape([2] * (2 * n))
    t = t.transpose(measured + rest + [n + q for q in measured] + [n + q for q in rest])
    M, R = 1 << len(measured), 1 << len(rest)
    t = t.reshape(M, R, M, R)
    return np.einsum("iaib->iab", t), rest


def state_fidelity(psi: PureState, rho: DensityMatrix) -> float:
    """``<ψ|ρ|ψ>`` (no renormalization of a subnormalized ``rho``)."""
    if psi.dim != rho.dim:
        raise ValidationError(f"dimension mismatch {psi.dim} vs {rho.dim}")
    v = psi.amplitudes
    return float(np.real(v.conj() @ rho.entries @ v))
