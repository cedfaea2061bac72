"""Superposed error mitigation: exact simulation and closed forms.

Register order for a run is ``c, [r], a, [rb1], b1, ..., [rb{d-1}], b{d-1}``:
the control, the reference half of the Choi input (``cj`` mode only), the
input, and for every branch beyond the first an auxiliary register (preceded
by its reference half when the Choi-like auxiliary is used).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal, Sequence

import numpy as np

from .channels import KrausChannel, canonical_kraus, no_error_probability, pauli_group
from .qstate import (
    MAX_DENSITY_QUBITS,
    DensityMatrix,
    MeasurementBasis,
    PureState,
    RegisterLayout,
    ValidationError,
    bell_pairs,
    completed_basis,
    apply_superop,
    fourier_basis,
    is_unitary,
    measurement_blocks,
    state_fidelity,
    superoperator,
)

CJ = "cj"
CHOI = "choi"


class RegisterTooLargeError(ValidationError):
    pass


class UnsupportedOutcomeError(ValidationError):
    pass


class NoiselessChannelError(ValueError):
    """ω₁ is undefined for a channel without errors; ``omega2`` is still reported."""

    def __init__(self, omega2: float):
        super().__init__("omega1 is undefined for a noiseless channel")
        self.omega2 = omega2


@dataclass(frozen=True, order=True)
class OutcomeKey:
    control: int
    aux: tuple[int, ...] = ()

    @property
    def homogeneous(self) -> bool:
        return len(set(self.aux)) <= 1

    def label(self, d: int) -> str:
        if d == 2:
            c = "+-"[self.control]
        else:
            c = str(self.control)
        return ",".join([c] + [str(a) for a in self.aux])


@dataclass(frozen=True)
class OutcomeRecord:
    key: OutcomeKey
    probability: float
    state: DensityMatrix
    fidelity: float

    @property
    def subnormalized(self) -> np.ndarray:
        return self.probability * self.state.entries


@dataclass(frozen=True)
class BranchOverlaps:
    beta: np.ndarray
    A: float


@dataclass(frozen=True)
class ProtocolSpec:
    """One configuration of the protocol.

    ``auxiliary`` is an ``m``-qubit pure state or ``"choi"`` (half of ``m``
    Bell pairs with a Bell-type measurement). ``input_state`` is an
    ``m``-qubit pure state or ``"cj"`` for the Choi input. ``aux_basis``
    defaults to a basis whose first element is the ideally propagated
    auxiliary.
    """

    unitary: np.ndarray
    channel: KrausChannel
    d: int = 2
    auxiliary: PureState | str = CHOI
    input_state: PureState | str = CJ
    aux_basis: MeasurementBasis | None = None
    variant: Literal["probabilistic", "quasi_deterministic"] = "probabilistic"

    def __post_init__(self):
        u = np.array(self.unitary, dtype=complex)
        u.setflags(write=False)
        object.__setattr__(self, "unitary", u)
        if u.shape != (self.channel.dim, self.channel.dim):
            raise ValidationError("unitary and channel sizes differ")
        if not is_unitary(u):
            raise ValidationError("target operation is not unitary within 1e-10")
        if self.d < 1:
            raise ValidationError("need d >= 1")
        if isinstance(self.auxiliary, str) and self.auxiliary != CHOI:
            raise ValidationError(f"unknown auxiliary {self.auxiliary!r}")
        if isinstance(self.auxiliary, PureState) and self.auxiliary.n_qubits != self.m:
            raise ValidationError("auxiliary must have m qubits")
        if isinstance(self.input_state, str) and self.input_state != CJ:
            raise ValidationError(f"unknown input mode {self.input_state!r}")
        if isinstance(self.input_state, PureState) and self.input_state.n_qubits != self.m:
            raise ValidationError("input state must have m qubits")
        if self.aux_basis is not None and self.aux_basis.vectors.shape[1] != 1 << self.aux_width:
            raise ValidationError("auxiliary basis has the wrong dimension")

    @property
    def m(self) -> int:
        return self.channel.n_qubits

    @property
    def cj(self) -> bool:
        return isinstance(self.input_state, str)

    @property
    def choi(self) -> bool:
        return isinstance(self.auxiliary, str)

    @property
    def aux_width(self) -> int:
        return 2 * self.m if self.choi else self.m

    @property
    def input_width(self) -> int:
        return 2 * self.m if self.cj else self.m

    @cached_property
    def phi0(self) -> PureState:
        return bell_pairs(self.m) if self.choi else self.auxiliary

    @cached_property
    def basis(self) -> MeasurementBasis:
        if self.aux_basis is not None:
            return self.aux_basis
        if self.choi:
            return choi_auxiliary(self.unitary, self.m)[1]
        return completed_basis(PureState(self.unitary @ self.phi0.amplitudes))

    @cached_property
    def psi(self) -> PureState:
        return bell_pairs(self.m) if self.cj else self.input_state

    @cached_property
    def target(self) -> PureState:
        """Ideal output: ``U|ψ>`` or ``(1 ⊗ U)|Φ_m+>``."""
        return PureState(_embed_last(self.unitary, self.input_width) @ self.psi.amplitudes)

    @cached_property
    def layout(self) -> RegisterLayout:
        nc = control_qubits(self.d)
        sizes = [("c", nc)]
        if self.cj:
            sizes.append(("r", self.m))
        sizes.append(("a", self.m))
        for k in range(1, self.d):
            if self.choi:
                sizes.append((f"rb{k}", self.m))
            sizes.append((f"b{k}", self.m))
        return RegisterLayout.build(sizes)

    def aux_targets(self, k: int) -> list[int]:
        lay = self.layout
        return (lay[f"rb{k}"] if self.choi else []) + lay[f"b{k}"]

    def outcome_keys(self) -> list[OutcomeKey]:
        return [
            OutcomeKey(c, aux)
            for c in range(self.d)
            for aux in itertools.product(range(len(self.basis)), repeat=self.d - 1)
        ]


@dataclass(frozen=True)
class ProtocolRun:
    spec: ProtocolSpec
    records: tuple[OutcomeRecord, ...]
    engine: str
    complete: bool = True

    def record(self, key: OutcomeKey) -> OutcomeRecord:
        for rec in self.records:
            if rec.key == key:
                return rec
        raise KeyError(key)


@dataclass(frozen=True)
class FiguresOfMerit:
    P: float
    R: float
    F_CJ: float
    F0_CJ: float
    r_sentinel: bool = False


def control_qubits(d: int) -> int:
    return max(0, math.ceil(math.log2(d))) if d > 1 else 0


def default_selection(d: int) -> tuple[OutcomeKey, ...]:
    return (OutcomeKey(0, (0,) * (d - 1)),)


def _embed_last(op: np.ndarray, width: int) -> np.ndarray:
    """``1 ⊗ op`` acting on the last qubits of a ``width``-qubit space."""
    k = op.shape[0].bit_length() - 1
    return np.kron(np.eye(1 << (width - k)), op)


def choi_auxiliary(u: np.ndarray, m: int) -> tuple[PureState, MeasurementBasis]:
    """Bell-pair auxiliary and the basis ``{(P_i ⊗ U)|Φ_m+>}``, identity element first."""
    phi = bell_pairs(m).amplitudes
    u = np.asarray(u, dtype=complex)
    vecs = [np.kron(p, u) @ phi for p in pauli_group(m)]
    return bell_pairs(m), MeasurementBasis(np.array(vecs))


def branch_overlaps(spec: ProtocolSpec, element: int = 0) -> BranchOverlaps:
    """``β_j = <φ_e| K_j U |φ_0>`` for basis element ``e`` of the auxiliary measurement."""
    phi0 = spec.phi0.amplitudes
    phif = spec.basis.vectors[element]
    w = spec.aux_width
    beta = np.array([phif.conj() @ (_embed_last(k @ spec.unitary, w) @ phi0) for k in spec.channel.operators])
    return BranchOverlaps(beta, float(np.sum(np.abs(beta) ** 2)))


def omega_metrics(u: np.ndarray, channel: KrausChannel, phi0: PureState, phi_f: PureState) -> tuple[float, float]:
    """Sensitivity ω₁ of ``U|φ0>`` to the errors and overlap ω₂ with ``φ_f``.

    When ``phi0`` is wider than the channel, ``U`` and the Kraus operators act
    on its last qubits. Raises :class:`NoiselessChannelError` when ``p_ne = 1``.
    """
    width = phi0.n_qubits
    x = _embed_last(np.asarray(u, dtype=complex), width) @ phi0.amplitudes
    omega2 = min(1.0, float(abs(phi_f.amplitudes.conj() @ x) ** 2))
    p_ne = no_error_probability(channel)
    if p_ne >= 1.0 - 1e-14:
        raise NoiselessChannelError(omega2)
    ops = canonical_kraus(channel)
    leak = sum(abs(x.conj() @ _embed_last(k, width) @ x) ** 2 for k in ops[1:])
    omega1 = 1.0 - leak / (1.0 - p_ne)
    # outside [0, 1] only for channels with no identity-proportional Kraus element
    return float(min(1.0, max(0.0, omega1))), omega2


def spec_omegas(spec: ProtocolSpec, element: int = 0) -> tuple[float, float]:
    return omega_metrics(spec.unitary, spec.channel, spec.phi0, spec.basis[element])


def analytic_P_R(p_ne: float, d: int) -> tuple[float, float]:
    """Post-selection probability and infidelity ratio when ω₁ = ω₂ = 1."""
    if not 0.0 < p_ne <= 1.0 or d < 1:
        raise ValidationError("need p_ne in (0, 1] and d >= 1")
    P = p_ne**d * (1.0 + (1.0 / p_ne - 1.0) / d)
    R = 1.0 + (d - 1) * p_ne
    return P, R


def analytic_fidelity(p_ne: float, d: int) -> float:
    return d * p_ne / (1.0 + (d - 1) * p_ne)


# --- brute force -------------------------------------------------------------

def cswap_permutation(layout: RegisterLayout, d: int) -> np.ndarray:
    """Index map of ``Σ_k |k><k|_c ⊗ SWAP(a, b_k)`` (identity for k = 0)."""
    n = layout.n_qubits
    idx = np.arange(1 << n)
    bits = (idx[:, None] >> (n - 1 - np.arange(n))) & 1
    weights = 1 << (n - 1 - np.arange(n))
    ctrl = layout["c"]
    k = bits[:, ctrl] @ (1 << (len(ctrl) - 1 - np.arange(len(ctrl)))) if ctrl else np.zeros_like(idx)
    out = bits.copy()
    a = layout["a"]
    for branch in range(1, d):
        b = layout[f"b{branch}"]
        sel = k == branch
        out[np.ix_(sel, a)] = bits[np.ix_(sel, b)]
        out[np.ix_(sel, b)] = bits[np.ix_(sel, a)]
    return out @ weights


def _initial_state(spec: ProtocolSpec) -> np.ndarray:
    nc = spec.layout.registers["c"].stop
    ctrl = np.zeros(1 << nc, dtype=complex)
    ctrl[: spec.d] = 1 / np.sqrt(spec.d)
    v = np.kron(ctrl, spec.psi.amplitudes)
    for _ in range(1, spec.d):
        v = np.kron(v, spec.phi0.amplitudes)
    return np.outer(v, v.conj())


def run_bruteforce(spec: ProtocolSpec) -> ProtocolRun:
    """Simulate the whole register exactly and return every outcome."""
    lay = spec.layout
    n = lay.n_qubits
    if n > MAX_DENSITY_QUBITS:
        raise RegisterTooLargeError(f"{n} qubits exceeds the {MAX_DENSITY_QUBITS}-qubit ceiling")
    rho = _initial_state(spec)
    perm = cswap_permutation(lay, spec.d)
    rho = rho[np.ix_(perm, perm)]
    sop = superoperator([k @ spec.unitary for k in spec.channel.operators])
    for reg in ["a"] + [f"b{k}" for k in range(1, spec.d)]:
        rho = apply_superop(rho, sop, lay[reg], n)
    rho = rho[np.ix_(perm, perm)]
    return _collect(spec, rho, n, engine="bruteforce")


def _collect(spec: ProtocolSpec, rho: np.ndarray, n: int, engine: str) -> ProtocolRun:
    lay = spec.layout
    groups = []
    if lay["c"]:
        groups.append((lay["c"], fourier_basis(spec.d, len(lay["c"]))))
    for k in range(1, spec.d):
        groups.append((spec.aux_targets(k), spec.basis))
    blocks, rest = measurement_blocks(rho, n, groups)
    radices = [len(b) for _, b in groups]
    records = []
    for key in spec.outcome_keys():
        digits = ([key.control] if lay["c"] else []) + list(key.aux)
        o = 0
        for digit, radix in zip(digits, radices):
            o = o * radix + digit
        records.append(_record(spec, key, blocks[o]))
    return ProtocolRun(spec, tuple(records), engine)


def _record(spec: ProtocolSpec, key: OutcomeKey, sub: np.ndarray) -> OutcomeRecord:
    sub = (sub + sub.conj().T) / 2
    prob = float(np.real(np.trace(sub)))
    if prob <= 1e-15:
        zero = DensityMatrix(np.zeros_like(sub), normalized=False)
        return OutcomeRecord(key, max(prob, 0.0), zero, 0.0)
    state = DensityMatrix(sub / prob)
    fid = min(1.0, max(0.0, state_fidelity(spec.target, state)))
    return OutcomeRecord(key, prob, state, fid)


# --- closed forms ------------------------------------------------------------

def _input_density(spec: ProtocolSpec) -> np.ndarray:
    v = spec.psi.amplitudes
    return np.outer(v, v.conj())


def _propagated(spec: ProtocolSpec) -> list[np.ndarray]:
    """``K_j U`` embedded on the input space."""
    return [_embed_last(k @ spec.unitary, spec.input_width) for k in spec.channel.operators]


def closed_form_d2(spec: ProtocolSpec, outcome: OutcomeKey) -> OutcomeRecord:
    """Two-branch output from the double Kraus sum, sign set by the control outcome."""
    if spec.d != 2:
        raise ValidationError("closed_form_d2 needs d = 2")
    rho_in = _input_density(spec)
    ops = _propagated(spec)
    ov = branch_overlaps(spec, outcome.aux[0])
    sign = 1.0 if outcome.control == 0 else -1.0
    incoherent = sum(k @ rho_in @ k.conj().T for k in ops)
    # coefficient <φ_f|K_j U φ0><φ0 U† K_i† φ_f> multiplies K_i U ρ U† K_j†
    cross = sum(
        ov.beta[j] * ov.beta[i].conj() * (ops[i] @ rho_in @ ops[j].conj().T)
        for i in range(len(ops))
        for j in range(len(ops))
    )
    return _record(spec, outcome, 0.5 * (ov.A * incoherent + sign * cross))


def closed_form_general(spec: ProtocolSpec, outcome: OutcomeKey) -> OutcomeRecord:
    """``d``-branch output for an outcome with every auxiliary on the same element.

    With ``B = Σ_j conj(β_j) K_j U`` the (subnormalized) output is
    ``[A^(d-1) E_U(ρ) + s A^(d-2) B ρ B†] / d`` where ``s = d - 1`` for the
    uniform control outcome and ``s = -1`` for every other Fourier outcome.
    Other outcomes go to the brute-force engine when the register fits.
    """
    d = spec.d
    if d == 1:
        rho_in = _input_density(spec)
        return _record(spec, outcome, sum(k @ rho_in @ k.conj().T for k in _propagated(spec)))
    if not outcome.homogeneous:
        if spec.layout.n_qubits > MAX_DENSITY_QUBITS:
            raise UnsupportedOutcomeError("mixed auxiliary outcome beyond the brute-force ceiling")
        return run_bruteforce(spec).record(outcome)
    rho_in = _input_density(spec)
    ops = _propagated(spec)
    ov = branch_overlaps(spec, outcome.aux[0])
    b = sum(beta.conj() * k for beta, k in zip(ov.beta, ops))
    incoherent = sum(k @ rho_in @ k.conj().T for k in ops)
    s = (d - 1) if outcome.control == 0 else -1
    sub = (ov.A ** (d - 1) * incoherent + s * ov.A ** (d - 2) * (b @ rho_in @ b.conj().T)) / d
    return _record(spec, outcome, sub)


def run_closed_form(spec: ProtocolSpec, keys: Iterable[OutcomeKey] | None = None) -> ProtocolRun:
    """Closed-form records for ``keys`` (default: every homogeneous outcome)."""
    if keys is None:
        if spec.d <= 2:
            keys = spec.outcome_keys()
        else:
            keys = [OutcomeKey(c, (e,) * (spec.d - 1)) for c in range(spec.d) for e in range(len(spec.basis))]
    keys = list(keys)
    fn = closed_form_d2 if spec.d == 2 else closed_form_general
    if spec.d == 1:
        keys = [OutcomeKey(0, ())]
    records = tuple(fn(spec, k) for k in keys)
    complete = spec.d <= 2 and len(keys) == len(spec.outcome_keys())
    return ProtocolRun(spec, records, "closed_form", complete=complete)


def execute(spec: ProtocolSpec, engine: str = "auto", selection: Sequence[OutcomeKey] | None = None) -> ProtocolRun:
    """Run with the requested engine; ``auto`` prefers the closed form when it covers ``selection``."""
    if engine == "bruteforce":
        return run_bruteforce(spec)
    if engine not in ("auto", "closed_form"):
        raise ValidationError(f"unknown engine {engine!r}")
    selection = list(selection) if selection is not None else None
    closed_ok = spec.d <= 2 or (selection is not None and all(k.homogeneous for k in selection))
    if engine == "closed_form" or closed_ok:
        if not closed_ok:
            raise UnsupportedOutcomeError("closed form needs homogeneous outcomes for d > 2")
        return run_closed_form(spec, None if spec.d <= 2 else selection)
    return run_bruteforce(spec)


# --- figures of merit ----------------------------------------------------------

def _selected(run: ProtocolRun, selection: Iterable[OutcomeKey] | None) -> list[OutcomeRecord]:
    keys = list(selection) if selection is not None else list(default_selection(run.spec.d))
    if not keys:
        raise ValidationError("empty post-selection")
    return [run.record(k) for k in keys]


def cj_fidelity(run: ProtocolRun, selection: Iterable[OutcomeKey] | None = None) -> float:
    """CJ fidelity of the probability-weighted mixture of the selected outcomes."""
    if not run.spec.cj:
        raise ValidationError("CJ fidelity needs the Choi input mode")
    recs = _selected(run, selection)
    total = sum(r.probability for r in recs)
    if total <= 0:
        return 0.0
    return float(sum(r.probability * r.fidelity for r in recs) / total)


def figures_of_merit(
    run: ProtocolRun,
    selection: Iterable[OutcomeKey] | None = None,
    f0: float | None = None,
) -> FiguresOfMerit:
    """``P`` and ``R = (1 - F0)/(1 - F)``; ``F0`` defaults to the channel's ``p_ne``.

    ``R`` is 1 when both fidelities are 1 (flagged as a sentinel) and
    ``inf`` when only ``F`` is.
    """
    recs = _selected(run, selection)
    P = float(sum(r.probability for r in recs))
    F = cj_fidelity(run, [r.key for r in recs])
    F0 = no_error_probability(run.spec.channel) if f0 is None else f0
    return merit(P, F, F0)


def merit(P: float, F: float, F0: float) -> FiguresOfMerit:
    if 1.0 - F <= 1e-13:
        if 1.0 - F0 <= 1e-13:
            return FiguresOfMerit(P, 1.0, F, F0, r_sentinel=True)
        return FiguresOfMerit(P, math.inf, F, F0)
    return FiguresOfMerit(P, (1.0 - F0) / (1.0 - F), F, F0)
