import itertools
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rgstep.fieldalg import FieldSpace, random_element, tau, tau_pair
from rgstep.gaussian import (
    Covariance,
    CovarianceDecomposition,
    CovarianceError,
    DoubledFields,
    boson_moment_oracle,
    determinant,
    engine,
    expect,
    expect_theta,
    fermion_moment_oracle,
    make_toy_decomposition,
    permanent,
    progressive_expectation,
    supersymmetry_residual,
    toy_covariance,
    truncated_pair_expectation,
    verify_factorization,
)
from rgstep.lattice import Torus

T9 = Torus(1, 3, 2, a=(0,), b=(4,))
SP = FieldSpace(9, 4, torus=T9)
SP8 = FieldSpace(9, 8, torus=T9)
DEC = make_toy_decomposition(T9)
seeds = st.integers(0, 10**6)


def test_toy_covariance_is_finite_range_symmetric_and_psd():
    for T in [T9, Torus(1, 3, 3), Torus(2, 3, 2)]:
        dec = make_toy_decomposition(T, Fraction(1, 10))
        for j in range(1, T.N + 1):
            C = dec.at(j)
            assert C.range < Fraction(T.L**j, 2)
            M = np.array(C.matrix(), dtype=float)
            assert np.allclose(M, M.T)
            assert np.linalg.eigvalsh(M).min() > -1e-12
            assert C.is_psd()
        total = dec.total()
        assert np.linalg.eigvalsh(np.array(total.matrix(), dtype=float)).min() > -1e-12


def test_covariance_validation():
    with pytest.raises(CovarianceError):
        Covariance(T9, 1, {(0,): 1, (2,): 1, (-2,): 1})
    with pytest.raises(CovarianceError):
        Covariance(T9, 1, {(0,): 1, (1,): 1})
    C = Covariance(T9, 1, {(0,): 2, (1,): Fraction(1, 2), (-1,): Fraction(1, 2)})
    assert Covariance.from_json(T9, C.to_json()).entries == C.entries
    assert (C + C).value(0, 1) == 1


def test_permanent_and_determinant_small_cases():
    m = [[1, 2], [3, 4]]
    assert permanent(m) == 10
    assert determinant(m) == -2
    rng = np.random.default_rng(3)
    a = rng.integers(-3, 4, size=(4, 4))
    assert determinant(a.tolist()) == round(np.linalg.det(a))


def boson_word(space, xs, ys):
    out = space.const(1)
    for x in xs:
        out = out * space.phi(x)
    for y in ys:
        out = out * space.phibar(y)
    return out


def fermion_word(space, xs, ys):
    out = space.const(1)
    for x, y in zip(xs, ys):
        out = out * space.psi(x) * space.psibar(y)
    return out


sites = st.integers(0, 8)


@given(st.lists(sites, min_size=1, max_size=3), st.data())
def test_boson_moments_are_permanents(xs, data):
    ys = data.draw(st.lists(sites, min_size=len(xs), max_size=len(xs)))
    C = DEC.at(1)
    got = expect(C, boson_word(SP8, xs, ys)).collapse_weight().constant_part()
    assert got == boson_moment_oracle(C, xs, ys)


@given(st.lists(sites, min_size=1, max_size=3, unique=True), st.data())
def test_fermion_moments_are_determinants(xs, data):
    ys = data.draw(st.lists(sites, min_size=len(xs), max_size=len(xs), unique=True))
    C = DEC.at(2)
    got = expect(C, fermion_word(SP8, xs, ys)).collapse_weight().constant_part()
    assert got == fermion_moment_oracle(C, xs, ys)


def test_unbalanced_moments_vanish():
    C = DEC.at(1)
    assert expect(C, SP.phi(0) * SP.phi(1)).is_zero()
    assert expect(C, SP.psi(0) * SP.psi(1)).is_zero()


@given(seeds)
def test_heat_operator_matches_doubled_field_integral(seed):
    F = random_element(SP, random.Random(seed), range(9), n_terms=8)
    C = DEC.at(1)
    doubled = DoubledFields(C, SP)
    via_doubling = doubled.integrate(doubled.theta(doubled.lift(F)))
    assert via_doubling == expect_theta(C, F)


@given(seeds)
def test_expectation_sets_fields_to_zero_after_heat(seed):
    F = random_element(SP, random.Random(seed), range(9), n_terms=8)
    C = DEC.at(2)
    assert expect(C, F) == expect_theta(C, F).at_zero_field()


def test_fluctuation_moment_through_theta():
    C = DEC.at(1)
    got = expect_theta(C, SP.phi(0) * SP.phibar(1)).collapse_weight()
    assert got == SP.phi(0) * SP.phibar(1) + SP.const(C.value(0, 1))


def test_supersymmetric_polynomials_have_trivial_expectation():
    C = DEC.at(2)
    span = [SP.const(1)] + [tau(SP, x) for x in range(9)]
    span += [tau(SP, x) * tau(SP, y) for x in range(9) for y in range(x, 9)]
    rng = random.Random(4)
    for F in span:
        assert supersymmetry_residual(C, F).is_zero()
    combo = SP.zero()
    for F in rng.sample(span, 12):
        combo = combo + F.scale(Fraction(rng.randrange(-5, 6), rng.randrange(1, 5)))
    assert supersymmetry_residual(C, combo).is_zero()
    assert not supersymmetry_residual(C, SP.phi(0) * SP.phibar(0)).is_zero()


def test_factorisation_for_separated_supports():
    T = Torus(1, 3, 3)
    sp = FieldSpace(27, 4, torus=T)
    C = make_toy_decomposition(T).at(1)
    rng = random.Random(5)
    for start in range(0, 27, 3):
        F1 = random_element(sp, rng, [start, start + 1], n_terms=5)
        far = [(start + 3 + k) % 27 for k in range(2, 20)]
        F2 = random_element(sp, rng, rng.sample(far, 3), n_terms=5)
        assert verify_factorization(C, F1, F2)
        assert truncated_pair_expectation(C, F1, F2).is_zero()
    # neighbouring supports do not factorise in general
    G1, G2 = sp.phi(0) * sp.phibar(1), sp.phi(1) * sp.phibar(0)
    assert not verify_factorization(C, G1, G2)
    assert verify_factorization(C, tau_pair(sp, 0, 1), sp.const(1))


@given(st.lists(st.tuples(sites, sites), min_size=1, max_size=2), st.integers(-4, 4))
def test_progressive_equals_single_shot_on_boson_inputs(pairs, c):
    F = SP.const(c)
    for x, y in pairs:
        F = F + SP.phi(x) * SP.phibar(y)
    F = F * F if len(pairs) == 1 else F
    single = expect_theta(DEC.total(), F)
    assert progressive_expectation(DEC, F) == single
    assert progressive_expectation(DEC, F, keep_fields=False) == single.at_zero_field()


def test_progressive_expectation_is_order_independent():
    F = (SP.phi(0) * SP.phibar(2) + SP.phi(1) * SP.phibar(1)) ** 2
    slices = DEC.slices
    assert progressive_expectation(list(reversed(slices)), F) == progressive_expectation(slices, F)


def test_engine_cache_is_transparent():
    C = DEC.at(1)
    e = engine(C, SP)
    F = tau(SP, 0) * tau(SP, 1) + SP.phi(2) * SP.phibar(3)
    assert e.theta(F) == e.theta(F) == expect_theta(C, F)
    assert e.full(F) == expect(C, F)


def test_decomposition_total_is_sum_of_slices():
    dec = make_toy_decomposition(T9, Fraction(1, 4))
    assert isinstance(dec, CovarianceDecomposition)
    for x, y in itertools.product(range(9), repeat=2):
        assert dec.total().value(x, y) == sum(dec.at(j).value(x, y) for j in range(1, T9.N + 1))
    assert toy_covariance(T9, 1).range <= 1
