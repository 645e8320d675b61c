import math

import numpy as np
import pytest

from keyforge import asymptotic, protocol
from keyforge.errors import OutOfRange, PerturbationOutOfRange, SOutOfRange, UnsupportedConstraint

from _scenarios import random_scenario, tomographic_scenario


def analytic(q):
    return 1 - 2 * asymptotic.binary_entropy(q)


def test_binary_entropy():
    assert asymptotic.binary_entropy(0.0) == 0.0
    assert asymptotic.binary_entropy(0.5) == pytest.approx(1.0)
    assert asymptotic.binary_entropy(0.11) == pytest.approx(0.4999, abs=1e-4)


def test_radau_rule_basics():
    rule = asymptotic.gauss_radau_rule(5)
    assert rule.nodes[-1] == 1.0
    assert np.all(np.diff(rule.nodes) > 0) and rule.nodes[0] > 0
    assert rule.weights.sum() == pytest.approx(1.0)
    assert np.all(rule.weights > 0)
    with pytest.raises(OutOfRange):
        asymptotic.gauss_radau_rule(0)


def test_chsh_rate():
    assert asymptotic.chsh_di_rate(2 * math.sqrt(2), 0.0) == pytest.approx(1.0, abs=1e-9)
    assert asymptotic.chsh_di_rate(2.0, 0.0) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(SOutOfRange):
        asymptotic.chsh_di_rate(3.0, 0.0)


def test_devetak_winter_clamps():
    raw, clamped = asymptotic.devetak_winter_rate(0.2, qber=0.11)
    assert raw < 0 and clamped == 0.0


def test_perturbation_range():
    sc = protocol.bb84_scenario(0.02)
    with pytest.raises(PerturbationOutOfRange):
        asymptotic.objective_f(np.eye(4) / 4, sc, eps=0.5)
    with pytest.raises(PerturbationOutOfRange):
        asymptotic.objective_f(np.eye(4) / 4, sc, eps=0.0)


def test_zeta_hand_value():
    # 2 ε (d'-1) log2(d' / (ε (d'-1))) at ε = 1e-8, d' = 4
    assert asymptotic.zeta_eps(1e-8, 4) == pytest.approx(6e-8 * math.log2(4 / 3e-8), rel=1e-12)
    assert asymptotic.zeta_eps(1e-12, 4) < asymptotic.zeta_eps(1e-8, 4)


@pytest.mark.parametrize("q", [0.01, 0.06])
def test_fw_bb84(q):
    rep = asymptotic.fw_rate(protocol.bb84_scenario(q))
    assert rep.raw_rate == pytest.approx(analytic(q), abs=1e-4)
    assert rep.raw_rate <= analytic(q) + 1e-9
    assert rep.bound <= rep.details["f_iterate"] + 1e-9
    assert rep.residual < 1e-7


def test_fw_coarse_statistics_lower():
    fine = asymptotic.fw_rate(protocol.bb84_scenario(0.04, granularity="fine"))
    coarse = asymptotic.fw_rate(protocol.bb84_scenario(0.04, granularity="coarse"))
    assert coarse.raw_rate <= fine.raw_rate + 1e-6


def test_gr_bb84():
    rep = asymptotic.gr_rate(protocol.bb84_scenario(0.03), m=6)
    assert rep.raw_rate == pytest.approx(analytic(0.03), abs=1e-3)
    assert rep.raw_rate <= analytic(0.03) + 1e-9


def test_gr_kappa_keeps_validity():
    sc, rho = random_scenario(7)
    exact = asymptotic.exact_f(sc, rho) / protocol.CompressedG(sc).p_pass
    for kappa in (0.5, 1.0, 2.0):
        bound, _ = asymptotic.gauss_radau_bound(sc, m=4, kappa=kappa)
        assert bound <= exact + 1e-9
    with pytest.raises(OutOfRange):
        asymptotic.gauss_radau_bound(sc, m=4, kappa=0.0)
    with pytest.raises(OutOfRange):
        asymptotic.gauss_radau_bound(sc, m=1)


def test_hmin_fixed_state_matches_program():
    rho = protocol.bb84_state(0.05, 0.05)
    sc = tomographic_scenario(rho)
    fixed = asymptotic.hmin_bound(sc, rho=rho)
    optimized = asymptotic.hmin_bound(sc)
    assert optimized == pytest.approx(fixed, abs=1e-5)
    assert fixed <= asymptotic.key_entropy_given_eve(rho, sc.povms_a[0], 2) + 1e-9


def test_hmin_pure_product_state():
    # Alice's qubit in |+>: her Z outcome is a fair coin unknown to Eve
    plus = np.array([1, 1]) / math.sqrt(2)
    rho = np.kron(np.outer(plus, plus), np.diag([1.0, 0.0]))
    pz, _ = protocol.bb84_povms()
    assert asymptotic.guessing_probability(rho, pz, 2) == pytest.approx(0.5, abs=1e-7)


def test_hmin_rejects_discards():
    sc = protocol.bb84_scenario(0.02, eta_b={(0, 0): 0.9}, noclick=True)
    with pytest.raises(UnsupportedConstraint):
        asymptotic.hmin_bound(sc)


def test_closest_feasible_is_feasible():
    sc, _ = random_scenario(9)
    rho = asymptotic.closest_feasible(sc)
    assert np.linalg.eigvalsh(rho)[0] > -1e-8
    for c in sc.constraints:
        assert np.trace(c.op @ rho).real == pytest.approx(c.value, abs=1e-6)


PHI = np.array([1, 0, 0, 1]) / math.sqrt(2)
PHI_STATE = np.outer(PHI, PHI)


def test_objective_on_bell_state():
    assert asymptotic.objective_f(PHI_STATE, protocol.bb84_scenario(0.0), eps=1e-12) == pytest.approx(0.5, abs=1e-9)


def test_objective_vanishes_for_classical_z_state():
    pz, px = protocol.bb84_povms()
    km = {(0, a, 0): a for a in (0, 1)}
    sc = protocol.make_scenario([pz, px], [pz, px], [(0, 0)], km, [], check=False)
    classical = (np.diag([1.0, 0, 0, 0]) + np.diag([0, 0, 0, 1.0])) / 2
    assert asymptotic.objective_f(classical, sc, eps=1e-12) == pytest.approx(0.0, abs=1e-9)


def test_gradient_zero_for_constant_key():
    pz, px = protocol.bb84_povms()
    km = {(0, a, 0): 0 for a in (0, 1)}
    sc = protocol.make_scenario([pz, px], [pz, px], [(0, 0)], km, [], key_size=1, check=False)
    assert np.allclose(asymptotic.gradient_f(np.eye(4) / 4, sc), 0, atol=1e-12)


def test_fw_noiseless_optimum():
    sc = protocol.bb84_scenario(0.0)
    st = asymptotic.frank_wolfe_minimize(sc)
    assert st.f == pytest.approx(0.5, abs=1e-4)
    bound, _ = asymptotic.certified_bound_fw(st, sc)
    assert bound >= 0.5 - 1e-3


def test_fw_no_key_at_half():
    st = asymptotic.frank_wolfe_minimize(protocol.bb84_scenario(0.5))
    assert st.f == pytest.approx(0.0, abs=1e-4)


def test_fw_quarter_qber():
    # the maximally mixed state has QBER 1/2, so Q = 1/4 still leaves 1 - h(1/4) per sifted round
    sc = protocol.bb84_scenario(0.25)
    st = asymptotic.frank_wolfe_minimize(sc)
    assert st.f == pytest.approx(0.5 * (1 - asymptotic.binary_entropy(0.25)), abs=1e-4)


def test_zeta_example():
    # 2e-10 · 15 · log2(16 / 1.5e-9) = 9.9937e-8 (often quoted as ≈ 1.0e-7)
    assert asymptotic.zeta_eps(1e-10, 16) == pytest.approx(9.99371710597953e-08, rel=1e-12)
    assert asymptotic.zeta_eps(1e-10, 16) == pytest.approx(1.004e-7, abs=1e-9)


def test_identity_only_scenario_bound():
    pz, px = protocol.bb84_povms()
    km = {(0, a, 0): a for a in (0, 1)}
    sc = protocol.make_scenario([pz, px], [pz, px], [(0, 0)], km, [], check=False)
    st = asymptotic.frank_wolfe_minimize(sc)
    bound, _ = asymptotic.certified_bound_fw(st, sc)
    assert bound <= 1e-6


def test_radau_small_rules():
    r1 = asymptotic.gauss_radau_rule(1)
    assert r1.nodes.tolist() == [1.0] and r1.weights.tolist() == [1.0]
    r2 = asymptotic.gauss_radau_rule(2)
    assert np.allclose(r2.nodes, [1 / 3, 1])
    assert np.allclose(r2.weights, [3 / 4, 1 / 4])


def test_gr_noiseless():
    bound, _ = asymptotic.gauss_radau_bound(protocol.bb84_scenario(0.0), m=8)
    assert bound >= 1 - 1e-3


def test_gr_monotone_in_m():
    sc = protocol.bb84_scenario(0.05)
    bounds = [asymptotic.gauss_radau_bound(sc, m=m)[0] for m in (2, 4, 8)]
    assert bounds[0] <= bounds[1] + 1e-9 <= bounds[2] + 2e-9


def test_gr_high_noise():
    assert asymptotic.gauss_radau_bound(protocol.bb84_scenario(0.5), m=8)[0] <= 1e-3
    q = asymptotic.gauss_radau_bound(protocol.bb84_scenario(0.25), m=8)[0]
    assert q == pytest.approx(1 - asymptotic.binary_entropy(0.25), abs=1e-3)


def test_hmin_examples():
    pz, _ = protocol.bb84_povms()
    assert asymptotic.hmin_bound(tomographic_scenario(PHI_STATE), rho=PHI_STATE) == pytest.approx(1.0, abs=1e-7)
    copy = (np.diag([1.0, 0, 0, 0]) + np.diag([0, 0, 0, 1.0])) / 2
    assert asymptotic.guessing_probability(copy, pz, 2) == pytest.approx(1.0, abs=1e-7)


def test_devetak_winter_examples():
    assert asymptotic.devetak_winter_rate(1.0, qber=0.0) == (1.0, 1.0)
    raw, _ = asymptotic.devetak_winter_rate(1 - asymptotic.binary_entropy(0.11), qber=0.11)
    assert raw == pytest.approx(1.6808e-4, abs=1e-7)
    root = __import__("scipy.optimize", fromlist=["brentq"]).brentq(analytic, 0.05, 0.2)
    assert root == pytest.approx(0.1100, abs=1e-4)
    raw, clamped = asymptotic.devetak_winter_rate(0.3, ec_term=0.5)
    assert raw == pytest.approx(-0.2) and clamped == 0.0


def test_chsh_example():
    assert asymptotic.chsh_di_rate(2.5, 0.02) == pytest.approx(0.3150, abs=1e-3)
