import numpy as np
import pytest

from sqem import channels as ch
from sqem.compiler import CNOT, T
from sqem.corrector import (
    OptimizerConfig,
    optimize_corrections,
    pauli_angles,
    product_unitary,
    rank_outcomes,
    u3,
)
from sqem.protocol import CHOI, ProtocolSpec, execute
from sqem.qstate import ValidationError, product_state


def t_spec(p, aux=CHOI):
    return ProtocolSpec(T, ch.dephasing(p), d=2, auxiliary=aux, variant="quasi_deterministic")


def test_u3_and_pauli_angles_reproduce_paulis():
    assert np.allclose(u3(0, 0, 0), np.eye(2))
    for angles, pauli in zip(pauli_angles(1), ch.pauli_group(1)):
        v = product_unitary(angles)
        # equal up to a global phase
        assert abs(abs(np.trace(v.conj().T @ pauli)) - 2) < 1e-12
    assert len(pauli_angles(2)) == 16


def test_rank_outcomes_greedy_prefix():
    run = execute(t_spec(0.8))
    kept = rank_outcomes(run.records, 0.5)
    assert len(kept) == 1 and kept[0].probability > 0.5
    full = rank_outcomes(run.records, 1.0)
    assert sum(r.probability for r in full) == pytest.approx(1.0)
    probs = [r.probability for r in full]
    assert probs == sorted(probs, reverse=True)
    with pytest.raises(ValidationError):
        rank_outcomes(run.records, 1.5)
    with pytest.raises(ValidationError):
        rank_outcomes(run.records, 0.0)


def test_config_validation():
    with pytest.raises(ValidationError):
        OptimizerConfig(threshold=1.2)
    with pytest.raises(ValidationError):
        OptimizerConfig(parameterization="gradient")


@pytest.mark.parametrize("p", [0.7, 0.9])
def test_pauli_set_matches_exhaustive_search(p):
    spec = t_spec(p, product_state("+"))
    table = optimize_corrections(spec, OptimizerConfig(parameterization="pauli_set"))
    target = spec.target.amplitudes
    for entry in table.entries.values():
        rec = execute(spec).record(entry.key)
        best = max(
            float(np.real(target.conj() @ np.kron(np.eye(2), q) @ rec.state.entries @ np.kron(np.eye(2), q).conj().T @ target))
            for q in ch.pauli_group(1)
        )
        assert entry.fidelity == pytest.approx(best, abs=1e-12)


@pytest.mark.parametrize("p", [0.7, 0.9])
def test_deterministic_t_gate_beats_noisy_gate(p):
    spec = t_spec(p)
    pauli = optimize_corrections(spec, OptimizerConfig(parameterization="pauli_set"))
    assert pauli.achieved_probability == pytest.approx(1.0, abs=1e-9)
    assert pauli.achieved_F_CJ > p
    # derived by hand for dephasing with the Choi auxiliary
    q = 1 - p
    assert pauli.achieved_F_CJ == pytest.approx(p + max(p * q, 2 * q * q) / 2, abs=1e-9)
    simplex = optimize_corrections(spec, OptimizerConfig(restarts=1, seed=3))
    assert simplex.achieved_F_CJ >= pauli.achieved_F_CJ - 1e-6


def test_never_worse_than_uncorrected():
    spec = ProtocolSpec(CNOT, ch.register_channel("depolarizing", 0.8, 2), d=2,
                        auxiliary=product_state("++"), variant="quasi_deterministic")
    table = optimize_corrections(spec, OptimizerConfig(restarts=0, max_evaluations=600))
    assert table.achieved_F_CJ >= table.uncorrected_F_CJ - 1e-12
    for e in table.entries.values():
        assert e.fidelity >= e.uncorrected_fidelity - 1e-12


def test_threshold_drops_rare_outcomes():
    table = optimize_corrections(t_spec(0.8), OptimizerConfig(threshold=0.5, parameterization="pauli_set"))
    included = [e for e in table.entries.values() if e.include]
    assert len(included) == 1
    assert table.achieved_probability == pytest.approx(included[0].probability)


def test_reproducible_with_seed():
    cfg = OptimizerConfig(restarts=2, seed=5)
    a = optimize_corrections(t_spec(0.8), cfg).dumps()
    b = optimize_corrections(t_spec(0.8), cfg).dumps()
    assert a == b


def test_budget_exhaustion_is_reported():
    table = optimize_corrections(t_spec(0.8), OptimizerConfig(max_evaluations=10, restarts=1))
    assert table.budget_exhausted
    assert any("budget" in w for w in table.warnings)


def test_shot_noise_objective_runs():
    table = optimize_corrections(t_spec(0.8), OptimizerConfig(shots=2000, restarts=0, max_evaluations=400))
    assert 0.8 <= table.achieved_F_CJ <= 1.0


def test_needs_cj_input():
    spec = ProtocolSpec(T, ch.dephasing(0.8), input_state=product_state("0"))
    with pytest.raises(ValidationError):
        optimize_corrections(spec, OptimizerConfig())


def test_json_layout():
    doc = optimize_corrections(t_spec(0.9), OptimizerConfig(parameterization="pauli_set")).to_json()
    assert doc["achieved_probability"] == pytest.approx(1.0)
    assert {"control", "aux", "angles", "include", "probability", "fidelity"} <= set(doc["entries"][0])
