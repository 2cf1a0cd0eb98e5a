import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from rgstep.fieldalg import CouplingConstants, FieldSpace, random_element, tau
from rgstep.functionals import (
    BlockFunctional,
    GasCircle,
    MissingPolymerError,
    PolymerFunctional,
    ScaleMismatch,
    check_space_K,
    circle_product,
    circle_with_block,
    grade_profile,
    indicator_empty,
    interaction_block,
    k1_tilde,
    profile_product,
    random_K,
    verify_binomial_lemma,
)
from rgstep.gaussian import expect_theta, make_toy_decomposition
from rgstep.lattice import Torus
from rgstep.polymers import paving, submasks
from rgstep.rgmap import random_couplings

T9 = Torus(1, 3, 2, a=(0,), b=(4,))
SP = FieldSpace(9, 4, torus=T9)
PV = paving(T9, 0)
seeds = st.integers(0, 10**6)


def random_block_functional(seed, j=0, const=1):
    rng = random.Random(seed)
    pv = paving(T9, j)
    vals = {}
    for i in range(pv.n):
        sites = [T9.index(x) for x in T9.block_sites(pv.blocks[i])]
        vals[i] = SP.const(const) + random_element(SP, rng, sites, n_terms=3, max_deg=2).filter(lambda k: k != 0)
    return BlockFunctional(T9, j, SP, lambda i: vals[i], "F")


@given(seeds, seeds, st.integers(1, (1 << 9) - 1))
def test_gas_recursion_matches_literal_circle_product(s1, s2, mask):
    F = random_block_functional(s1)
    K = random_K(T9, 0, SP, random.Random(s2), max_size=3)
    assert GasCircle(F, K).value(mask) == circle_product(F, K, mask)


@given(seeds, seeds)
def test_binomial_lemma(s1, s2):
    F1 = random_block_functional(s1, const=1)
    F2 = random_block_functional(s2, const=0)
    for mask in [0b1, 0b101, 0b111111111]:
        assert verify_binomial_lemma(F1, F2, mask)


def test_empty_indicator_is_the_circle_identity():
    F = random_block_functional(7)
    one = indicator_empty(T9, 0, SP)
    for mask in [0, 0b11, 0b100100, PV.full]:
        assert circle_product(F, one, mask) == F.power(mask)


def test_circle_with_block_is_the_circle_product():
    K = random_K(T9, 0, SP, random.Random(3), max_size=2)
    D = random_block_functional(4, const=0)
    KD = circle_with_block(K, D)
    for mask in [0b1, 0b11, 0b10001, 0b1110111]:
        assert KD.at(mask) == circle_product(K, D, mask)


def test_block_powers_inverses_and_coarsening():
    F = random_block_functional(11, const=2)
    for mask in [0b1, 0b110, PV.full]:
        assert F.power(mask) * F.inverse_power(mask) == SP.const(1)
    up = F.coarsen()
    for i in range(paving(T9, 1).n):
        assert up.block(i) == F.power(PV.children_mask(1 << i))
    G = random_block_functional(12, const=0)
    assert (F + G).block(3) == F.block(3) + G.block(3)
    assert (F - G).block(3) == F.block(3) - G.block(3)
    assert (-F).block(0) == -F.block(0)
    with pytest.raises(ScaleMismatch):
        F + up


def test_factorising_functional_multiplies_over_components():
    K = random_K(T9, 0, SP, random.Random(9), max_size=2)
    assert K.at(0b1001) == K.at(0b1) * K.at(0b1000)
    assert K.at(0) == SP.const(1)
    assert K.at(0b111).is_zero()
    stored = PolymerFunctional(T9, 0, SP, values={0b1: tau(SP, 0)})
    with pytest.raises(MissingPolymerError):
        stored.at(0b10)


def test_json_round_trip_of_polymer_functional():
    K = random_K(T9, 0, SP, random.Random(2), max_size=2).materialise(2)
    again = PolymerFunctional.from_json(K.to_json(), SP)
    for m in PV.connected_masks(2):
        assert again.at(m) == K.at(m)
    assert again.to_json() == K.to_json()


def test_sector_projection_of_functionals():
    K = random_K(T9, 0, SP, random.Random(8), max_size=2)
    for m in PV.connected_masks(2):
        v = K.at(m)
        assert K.project("a").at(m) == v.project("a")
        assert K.without_sector("a").at(m) + v.project("a") == v


@given(seeds, seeds)
def test_grade_profile_bounds_products(s1, s2):
    F = random_element(SP, random.Random(s1), range(9), n_terms=6)
    G = random_element(SP, random.Random(s2), range(9), n_terms=6)
    predicted = profile_product(grade_profile(F), grade_profile(G), SP.p)
    actual = grade_profile(F * G)
    for sector, g in actual.items():
        assert sector in predicted and predicted[sector] <= g


def test_random_K_lies_in_the_space():
    for seed in range(3):
        K = random_K(T9, 0, SP, random.Random(seed), max_size=3)
        report = check_space_K(K, rng=random.Random(seed))
        assert report.passed, report.violations[:3]


def test_space_audit_catches_violations():
    K = random_K(T9, 0, SP, random.Random(1), max_size=2)
    far = K.derived(lambda m, v: v + tau(SP, 5) * tau(SP, 5) if m == 0b1 else v, "far")
    assert any(v["check"] == "field locality" for v in check_space_K(far).violations)
    charged = K.derived(lambda m, v: v + SP.phi(0) * SP.phi(1) if m == 0b1 else v, "charged")
    assert any(v["check"] == "gauge invariance" for v in check_space_K(charged).violations)
    obs = K.derived(lambda m, v: v + SP.sigma() * SP.phibar(5) if m == 0b100000 else v, "obs")
    assert any(v["check"] == "sector a outside a" for v in check_space_K(obs).violations)
    twisted = K.derived(lambda m, v: v + tau(SP, 2) if m == 0b100 else v, "twisted")
    assert any(v["check"] == "Euclidean covariance" for v in check_space_K(twisted).violations)


def test_interaction_block_without_W_is_exponential():
    V = CouplingConstants(Fraction(1, 3), Fraction(1, 5))
    I = interaction_block(V, T9, 0, SP)
    from rgstep.fieldalg import V_of, exp_truncated

    assert I.block(4) == exp_truncated(-V_of(V, [4], T9, SP))
    I1 = interaction_block(V, T9, 1, SP)
    assert I1.block(1) == I.coarsen().block(1)


def test_first_step_identity_two_samples():
    dec = make_toy_decomposition(T9)
    rng = random.Random(21)
    for _ in range(2):
        V0 = random_couplings(rng, y=False)
        V1 = random_couplings(rng, y=False)
        K1 = k1_tilde(V0, V1, dec, T9, SP)
        lhs = expect_theta(dec.at(1), interaction_block(V0, T9, 0, SP).power(PV.full))
        rhs = circle_product(interaction_block(V1, T9, 0, SP).coarsen(), K1, paving(T9, 1).full)
        assert lhs == rhs


def test_first_step_functional_factorises_on_a_larger_ring():
    T = Torus(1, 3, 3, a=(0,), b=(4,))
    sp = FieldSpace(27, 4, torus=T)
    dec = make_toy_decomposition(T)
    rng = random.Random(22)
    V0 = random_couplings(rng, y=False, observables=False)
    V1 = random_couplings(rng, y=False, observables=False)
    K1 = k1_tilde(V0, V1, dec, T, sp)
    up = paving(T, 1)
    for X, Y in [(0b1, 0b100), (0b11, 0b10000), (0b1, 0b1100000)]:
        assert not up.touches_mask(X, Y)
        assert K1.at(X | Y) == K1.at(X) * K1.at(Y)
