import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sqem import channels as ch
from sqem.qstate import DensityMatrix, ValidationError, bell_pairs, random_density_matrix, random_unitary

from oracles import choi_fidelity, embed

SETTINGS = settings(max_examples=40, deadline=None, derandomize=True)
seeds = st.integers(0, 2**32 - 1)
probs = st.floats(0.0, 1.0)


def random_pauli_probs(m, rng, p_min=0.0):
    p0 = rng.uniform(p_min, 1.0)
    rest = rng.dirichlet(np.ones(4**m - 1)) * (1 - p0)
    return np.concatenate([[p0], rest])


def test_pauli_group_order():
    g = ch.pauli_group(1)
    assert np.allclose(g[0], np.eye(2)) and np.allclose(g[3], ch.Z)
    assert len(ch.pauli_group(2)) == 16
    assert np.allclose(ch.pauli_group(2)[6], np.kron(ch.X, ch.Y))


@SETTINGS
@given(probs)
def test_constructors_are_complete(p):
    for chan in (
        ch.dephasing(p),
        ch.bit_flip(p),
        ch.depolarizing(p),
        ch.depolarizing(p, n_qubits=2),
        ch.amplitude_damping(p),
        ch.tensor_power(ch.dephasing(p), 2),
    ):
        report = ch.validate(chan)
        assert report.ok and report.completeness_deviation < 1e-12


def test_declared_convention():
    assert ch.validate(ch.dephasing(0.9)).identity_convention is True
    assert np.allclose(ch.depolarizing(0.7).operators[0], np.sqrt(0.7) * np.eye(2))
    broken = ch.KrausChannel((np.eye(2) * 0.5,), declared_p_ne=0.25)
    report = ch.validate(broken)
    assert not report.ok and report.completeness_deviation == pytest.approx(0.75)


def test_rejects_bad_input():
    with pytest.raises(ValidationError):
        ch.dephasing(1.2)
    with pytest.raises(ValidationError):
        ch.pauli_channel([0.5, 0.5, 0.1, 0])
    with pytest.raises(ValidationError):
        ch.KrausChannel((np.eye(2), np.eye(4)))
    with pytest.raises(ValidationError):
        ch.register_channel("nonsense", 0.9, 1)


def test_zero_weight_operators_dropped():
    assert len(ch.dephasing(1.0)) == 1
    assert len(ch.depolarizing(0.0)) == 4
    assert len(ch.pauli_channel([0.0, 0.0, 0.0, 1.0])) == 2


def test_no_error_probability_examples():
    assert ch.no_error_probability(ch.dephasing(0.9)) == 0.9
    assert ch.no_error_probability(ch.depolarizing(1.0)) == 1.0
    # undeclared: gauge-invariant trace formula, checked against the Choi overlap
    ad = ch.amplitude_damping(0.36)
    assert ch.no_error_probability(ad) == pytest.approx(0.81, abs=1e-12)
    assert choi_fidelity(ad.operators, np.eye(2)) == pytest.approx(0.81, abs=1e-12)


@SETTINGS
@given(seeds)
def test_no_error_probability_gauge_invariant(seed):
    rng = np.random.default_rng(seed)
    base = ch.dephasing(0.9)
    remixed = ch.remix(base, random_unitary(2, rng))
    assert abs(ch.no_error_probability(remixed) - 0.9) < 1e-10
    # a general channel too, padded with a zero operator so the mix is square
    ad = ch.amplitude_damping(rng.uniform())
    v = random_unitary(3, rng)
    padded = ch.KrausChannel(ad.operators + (np.zeros((2, 2)),))
    assert abs(ch.no_error_probability(ch.remix(padded, v)) - ch.no_error_probability(ad)) < 1e-10


@SETTINGS
@given(seeds)
def test_canonical_kraus_is_same_channel(seed):
    rng = np.random.default_rng(seed)
    chan = ch.remix(ch.pauli_channel(random_pauli_probs(1, rng)), random_unitary(4, rng))
    canon = ch.canonical_kraus(chan)
    rho = random_density_matrix(1, rng).entries
    a = sum(k @ rho @ k.conj().T for k in chan.operators)
    b = sum(k @ rho @ k.conj().T for k in canon)
    assert np.allclose(a, b, atol=1e-12)
    assert all(abs(np.trace(k)) < 1e-12 for k in canon[1:])
    # for a Pauli channel operator 0 is exactly sqrt(p_ne) I up to phase
    k0 = canon[0] * np.exp(-1j * np.angle(canon[0][0, 0]))
    assert np.allclose(k0, np.sqrt(ch.no_error_probability(chan)) * np.eye(2), atol=1e-10)


@pytest.mark.parametrize(
    "chan",
    [ch.dephasing(0.8), ch.bit_flip(0.6), ch.depolarizing(0.7), ch.amplitude_damping(0.4), ch.depolarizing(0.9, 2)],
    ids=["dephasing", "bit_flip", "depolarizing", "amplitude_damping", "depolarizing2"],
)
def test_apply_preserves_trace_and_positivity(chan):
    rng = np.random.default_rng(11)
    n = chan.n_qubits + 1
    for _ in range(200):
        rho = random_density_matrix(n, rng)
        out = ch.apply(chan, rho, list(range(1, n)))
        out.check(psd_tol=1e-12, trace_tol=1e-12)


def test_apply_matches_full_matrix():
    rng = np.random.default_rng(3)
    chan = ch.pauli_channel(random_pauli_probs(1, rng))
    rho = random_density_matrix(3, rng)
    expect = sum(embed(k, [1], 3) @ rho.entries @ embed(k, [1], 3).conj().T for k in chan.operators)
    assert np.allclose(ch.apply(chan, rho, [1]).entries, expect, atol=1e-12)


@SETTINGS
@given(seeds, st.integers(1, 2))
def test_pauli_channel_cj_fidelity_is_p_ne(seed, m):
    rng = np.random.default_rng(seed)
    chan = ch.pauli_channel(random_pauli_probs(m, rng))
    u = random_unitary(1 << m, rng)
    # package route: noisy gate on half of the Bell pairs
    phi = bell_pairs(m)
    rho = DensityMatrix(np.outer(phi.amplitudes, phi.amplitudes.conj()))
    merged = ch.KrausChannel(tuple(np.kron(np.eye(1 << m), k @ u) for k in chan.operators))
    out = ch.apply(merged, rho, list(range(2 * m))).entries
    target = np.kron(np.eye(1 << m), u) @ phi.amplitudes
    f = float(np.real(target.conj() @ out @ target))
    assert abs(f - ch.no_error_probability(chan)) < 1e-10
    assert abs(choi_fidelity([k @ u for k in chan.operators], u) - f) < 1e-10


def test_noisy_gate():
    gate = ch.noisy_gate(ch.X, ch.dephasing(0.75))
    out = gate(DensityMatrix(np.diag([1.0, 0.0]))).entries
    assert np.allclose(out, np.diag([0.0, 1.0]))
    with pytest.raises(ValidationError):
        ch.noisy_gate(np.diag([1.0, 2.0]), ch.dephasing(0.5))


def test_tensor_power_and_parallel():
    t = ch.tensor_power(ch.dephasing(0.9), 3)
    assert len(t) == 8 and t.n_qubits == 3
    assert ch.no_error_probability(t) == pytest.approx(0.729)
    par = ch.compose_parallel([ch.dephasing(0.9), ch.bit_flip(0.8)])
    assert ch.no_error_probability(par) == pytest.approx(0.72)
    assert np.allclose(par.operators[1], np.sqrt(0.9 * 0.2) * np.kron(np.eye(2), ch.X))


def test_register_channel_semantics():
    chan = ch.register_channel("dephasing", 0.81, 2)
    assert ch.no_error_probability(chan) == pytest.approx(0.81)
    assert np.allclose(chan.operators[0], 0.9 * np.eye(4))
    glob = ch.register_channel("depolarizing_global", 0.7, 2)
    assert len(glob) == 16
    ad = ch.register_channel("amplitude_damping", 0.64, 2)
    assert ch.validate(ad).ok
    assert ch.no_error_probability(ch.register_channel("identity", 0.3, 1)) == 1.0


def test_json_round_trip(tmp_path):
    chan = ch.amplitude_damping(0.3)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(ch.channel_to_json(chan)))
    back = ch.channel_from_json(path)
    assert all(np.array_equal(a, b) for a, b in zip(chan.operators, back.operators))
    bad = ch.channel_to_json(ch.KrausChannel((np.eye(2) * 0.5,)))
    with pytest.raises(ValidationError):
        ch.channel_from_json(bad)
