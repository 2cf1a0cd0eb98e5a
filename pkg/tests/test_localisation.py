import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from rgstep.fieldalg import CouplingConstants, FieldSpace, NormParams, V_of, random_element, tau
from rgstep.gaussian import expect_theta, make_toy_decomposition
from rgstep.lattice import Torus
from rgstep.localisation import LocError, LocSpec, loc_blocks, loc_data, loc_norm_constant, loc_X, loc_XB
from rgstep.polymers import Polymer, coalescence_scale, paving

T9 = Torus(1, 3, 2, a=(0,), b=(4,))
SP = FieldSpace(9, 4, torus=T9)
seeds = st.integers(0, 10**6)


@st.composite
def polymers(draw, torus=T9):
    j = draw(st.integers(0, torus.N))
    n = paving(torus, j).n
    mask = draw(st.integers(1, (1 << n) - 1))
    return Polymer(torus, j, mask)


def sites_of(X):
    return [X.torus.index(x) for x in X.sites()]


@given(seeds, polymers())
def test_loc_is_an_idempotent_projection(seed, X):
    F = random_element(SP, random.Random(seed), range(9), n_terms=12)
    L = loc_X(F, X)
    assert loc_X(L, X) == L


@given(seeds, seeds, polymers())
def test_loc_is_linear(s1, s2, X):
    F = random_element(SP, random.Random(s1), range(9), n_terms=8)
    G = random_element(SP, random.Random(s2), range(9), n_terms=8)
    assert loc_X(F + G.scale(3), X) == loc_X(F, X) + loc_X(G, X).scale(3)


@given(seeds, polymers())
def test_block_shares_add_up_to_loc(seed, X):
    F = random_element(SP, random.Random(seed), range(9), n_terms=12)
    total = SP.zero()
    for B, share in loc_blocks(F, X).items():
        assert share == loc_XB(F, X, B)
        total = total + share
    assert total == loc_X(F, X)


@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5), st.integers(1, 510))
def test_bulk_polynomials_are_reproduced_on_proper_polymers(g, nu, z, y, mask):
    V = CouplingConstants(Fraction(g, 3), Fraction(nu, 2), Fraction(z, 7), Fraction(y, 5))
    X = Polymer(T9, 0, mask)
    F = V_of(V, sites_of(X), T9, SP) + SP.const(Fraction(1, 3))
    d = loc_data(F, X)
    assert d.couplings == V
    assert d.constant == Fraction(1, 3)


def test_on_whole_torus_the_gradient_term_folds_into_the_laplacian_term():
    V = CouplingConstants(1, 2, Fraction(1, 7), Fraction(1, 11))
    X = Polymer.whole(T9, 0)
    d = loc_data(V_of(V, range(9), T9, SP), X)
    assert d.couplings.y == 0
    assert d.couplings.z == Fraction(1, 7) + Fraction(1, 11)
    assert d.couplings.g == 1 and d.couplings.nu == 2


def test_observable_couplings_below_and_above_coalescence():
    assert coalescence_scale(T9) == 1
    V = CouplingConstants(lam_a=Fraction(2, 3), lam_b=Fraction(1, 2))
    small = Polymer.from_sites(T9, 0, [(0,)])
    d = loc_data(V_of(V, [0], T9, SP), small)
    assert d.couplings.lam_a == Fraction(2, 3) and d.couplings.lam_b == 0
    big = Polymer.from_sites(T9, 1, [(0,)])
    d = loc_data(V_of(V, sites_of(big), T9, SP), big)
    assert d.couplings.lam_a == 0
    frozen = LocSpec(1, observables_before_coalescence=False)
    assert loc_data(V_of(V, [0], T9, SP), small, frozen).couplings.lam_a == 0


def test_pair_observable_is_apportioned():
    V = CouplingConstants(q_a=Fraction(1, 5), q_b=Fraction(1, 4))
    only_a = Polymer.from_sites(T9, 0, [(0,)])
    assert loc_data(V_of(V, [0], T9, SP), only_a).couplings.q_a == Fraction(1, 5)
    both = Polymer.whole(T9, 0)
    d = loc_data(V_of(V, range(9), T9, SP), both)
    assert d.couplings.q_a == d.couplings.q_b == Fraction(9, 40)
    shares = loc_blocks(V_of(V, range(9), T9, SP), both)
    pair = {B: s.project("ab") for B, s in shares.items() if not s.project("ab").is_zero()}
    assert {B.blocks[0].corner for B in pair} == {(0,), (4,)}


def test_irrelevant_monomials_are_dropped_in_high_dimension():
    spec = LocSpec(5)
    assert not spec.keeps("g") and spec.keeps("nu") and spec.keeps("z")
    assert all(LocSpec(4).keeps(n) for n in ("g", "nu", "z", "y"))
    assert all(LocSpec(1).keeps(n) for n in ("g", "nu", "z", "y"))
    marginal_off = LocSpec(1, max_dimension=0)
    assert marginal_off.keeps("g") and marginal_off.keeps("nu")
    assert not marginal_off.keeps("z") and not marginal_off.keeps("y")
    V = CouplingConstants(Fraction(1, 3), Fraction(1, 5), Fraction(1, 7), Fraction(1, 11))
    X = Polymer.from_blocks(T9, 0, [3, 4])
    d = loc_data(V_of(V, [3, 4], T9, SP), X, marginal_off)
    assert d.couplings.z == 0 and d.couplings.y == 0 and d.couplings.g == Fraction(1, 3)
    with pytest.raises(LocError):
        LocSpec(1, max_dimension=-1).threshold


def test_first_order_mass_shift():
    dec = make_toy_decomposition(T9)
    C = dec.at(1)
    V = CouplingConstants(Fraction(1, 3), Fraction(1, 5))
    F = expect_theta(C, V_of(V, [2], T9, SP))
    X = Polymer.from_sites(T9, 0, [(2,)])
    nu = loc_data(F.collapse_weight(), X).couplings.nu
    assert nu == V.nu + 2 * V.g * C.value(2, 2)


def test_errors_and_norm_constant():
    F = tau(SP, 0)
    with pytest.raises(LocError):
        loc_X(F, Polymer(T9, 0, 0))
    X = Polymer.from_blocks(T9, 0, [0, 1])
    with pytest.raises(LocError):
        loc_XB(F, X, Polymer.from_blocks(T9, 0, [2]))
    assert loc_norm_constant(F, Polymer.from_blocks(T9, 0, [0]), NormParams(0, 3, 1)) == pytest.approx(1.0)
    assert loc_norm_constant(SP.zero(), X, NormParams(0, 3, 1)) == 0.0
