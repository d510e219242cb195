import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopobs.dynamics import flow, measurement_distance, sample_box
from koopobs.exprlang import Const, ExprVector, parse
from koopobs.koopman import KoopmanEigenpair, KoopmanSet, validate_eigenpair
from koopobs.models import get_model, linear_koopman_extract, linear_system
from koopobs.observability import group_eigenvalues
from koopobs.symmetry import (MULTIPLICITY_BOUND, NO_RULE, SYMMETRIC_MEASUREMENT, ClassificationError,
                              PermutationSymmetry, candidate_permutations, classify_eigenfunctions, find_symmetries,
                              induced_Q, mode_symmetry_check, symmetry_verdict, verify_measurement_symmetry,
                              verify_state_symmetry)


def _X(kset_or_sys, m=200, seed=0):
    box = kset_or_sys.domain_box
    return sample_box(box, m, np.random.default_rng(seed))


# ------------------------------------------------------------- permutations

def test_permutation_action_convention():
    P = PermutationSymmetry((2, 3, 1))
    x = np.array([10.0, 20.0, 30.0])
    np.testing.assert_array_equal(P.matrix() @ x, P.apply(x))
    np.testing.assert_array_equal(P.matrix() @ np.eye(3)[0], np.eye(3)[1])


def test_permutation_rejects_bad_input():
    with pytest.raises(ValueError):
        PermutationSymmetry((1, 2, 3))
    with pytest.raises(ValueError):
        PermutationSymmetry((1, 1, 3))
    with pytest.raises(ValueError):
        PermutationSymmetry.from_matrix(np.ones((2, 2)))


def test_permutation_from_matrix_round_trip():
    P = PermutationSymmetry((3, 1, 4, 2))
    assert PermutationSymmetry.from_matrix(P.matrix()).perm == P.perm


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8).flatmap(lambda n: st.permutations(list(range(1, n + 1)))))
def test_power_of_order_is_identity(perm):
    perm = tuple(perm)
    if perm == tuple(range(1, len(perm) + 1)):
        return
    P = PermutationSymmetry(perm)
    I = np.eye(P.n)
    np.testing.assert_array_equal(P.power_matrix(P.order), I)
    for k in range(1, P.order):
        assert not np.array_equal(P.power_matrix(k), I)
    np.testing.assert_array_equal(P.inverse().matrix() @ P.matrix(), I)


# ------------------------------------------------------------ state checks

def test_swap_is_a_state_symmetry(ex2):
    assert verify_state_symmetry(ex2.system, PermutationSymmetry((2, 1, 3)), _X(ex2.system)).passed


def test_swap_with_third_coordinate_is_not(ex2):
    check = verify_state_symmetry(ex2.system, PermutationSymmetry((3, 2, 1)), _X(ex2.system))
    assert not check.passed and check.max_residual > 1e-3


def test_nems_half_shift_is_a_state_symmetry(nems):
    assert verify_state_symmetry(nems.system, nems.symmetries[0], _X(nems.system)).passed


def test_symmetric_measurement_check(ex2, nems):
    P = PermutationSymmetry((2, 1, 3))
    assert verify_measurement_symmetry(ex2.system, P, _X(ex2.system)).passed
    assert not verify_measurement_symmetry(ex2.with_measurement("alt"), P, _X(ex2.system)).passed
    assert verify_measurement_symmetry(nems.system, nems.symmetries[0], _X(nems.system)).passed


def test_dimension_mismatch(ex2):
    with pytest.raises(ValueError):
        verify_state_symmetry(ex2.system, PermutationSymmetry((2, 1)), _X(ex2.system))


def test_candidate_search_finds_every_consensus_symmetry(undirected, directed):
    X = _X(undirected.system)
    assert len(find_symmetries(undirected.system, candidate_permutations(3), X)) == 5
    found = {P.perm for P in find_symmetries(directed.system, candidate_permutations(3), X)}
    assert found == {(2, 3, 1), (3, 1, 2)}


# ----------------------------------------------------------- classification

def test_example2_classification(ex2):
    cl = classify_eigenfunctions(ex2.kset, ex2.symmetries[0], _X(ex2.kset))
    assert [i for i, _ in cl.rotational] == [4]
    assert [(i, j) for i, j, _ in cl.reflectional] == [(0, 1), (2, 3)]
    assert all(abs(c - 1) <= 1e-10 for _, _, c in cl.reflectional)
    assert cl.to_json()["reflectional"][0] == {"i": 1, "j": 2, "c": [pytest.approx(1.0), pytest.approx(0.0, abs=1e-10)]}


def test_directed_classification_is_all_rotational(directed):
    cl = classify_eigenfunctions(directed.kset, directed.symmetries[0], _X(directed.kset))
    assert not cl.reflectional and len(cl.rotational) == 3
    w = complex(-0.5, np.sqrt(3) / 2)
    got = sorted((round(c.real, 9), round(c.imag, 9)) for _, c in cl.rotational)
    want = sorted((round(z.real, 9), round(z.imag, 9)) for z in (1, w, w.conjugate()))
    assert got == want


def test_undirected_classification(undirected):
    cl = classify_eigenfunctions(undirected.kset, undirected.symmetries[0], _X(undirected.kset))
    assert [i for i, _ in cl.rotational] == [0]
    assert [(i, j) for i, j, _ in cl.reflectional] == [(1, 2)]


def test_constant_eigenfunction_is_rotational_with_unit_factor():
    pairs = (KoopmanEigenpair(0.0, Const(1.0), None, [1.0, 0.0]),
             KoopmanEigenpair(1.0, parse("x1", 2), None, [1.0, 0.0]),
             KoopmanEigenpair(1.0, parse("x2", 2), None, [0.0, 1.0]))
    cl = classify_eigenfunctions(KoopmanSet(pairs, 2), PermutationSymmetry((2, 1)), _X(KoopmanSet(pairs, 2)))
    assert cl.rotational == ((0, pytest.approx(1.0)),)


def test_unresolved_eigenfunction_raises():
    # x1 maps to x2, which is outside the lambda=1 span of this set
    pairs = (KoopmanEigenpair(1.0, parse("x1", 2), None, [1.0, 0.0]),
             KoopmanEigenpair(2.0, parse("x2", 2), None, [0.0, 1.0]))
    kset = KoopmanSet(pairs, 2)
    with pytest.raises(ClassificationError) as info:
        classify_eigenfunctions(kset, PermutationSymmetry((2, 1)), _X(kset))
    assert info.value.index == 0
    lax = classify_eigenfunctions(kset, PermutationSymmetry((2, 1)), _X(kset), strict=False)
    assert lax.unresolved == (0, 1)


@pytest.mark.parametrize("name", ["example2", "consensus-undirected", "consensus-directed"])
def test_composed_eigenfunctions_remain_eigenfunctions(name):
    m = get_model(name)
    P = m.symmetries[0]
    X = _X(m.kset, seed=11)
    for pair in m.kset:
        assert validate_eigenpair(m.system, pair.composed(P.source_of), X).passed


# --------------------------------------------------------------- modes, Q

@pytest.mark.parametrize("name", ["example2", "consensus-undirected", "consensus-directed"])
def test_mode_identity_holds(name):
    m = get_model(name)
    P = m.symmetries[0]
    cl = classify_eigenfunctions(m.kset, P, _X(m.kset))
    checks = mode_symmetry_check(m.kset, P, cl)
    assert all(c.passed for c in checks), [c.residual for c in checks]


def test_perturbed_mode_fails(ex2):
    pairs = list(ex2.kset)
    p = pairs[1]
    pairs[1] = KoopmanEigenpair(p.lam, p.psi_re, p.psi_im, p.mode + np.array([0, 1e-3, 0]), p.label)
    kset = KoopmanSet(tuple(pairs), 3)
    P = ex2.symmetries[0]
    checks = mode_symmetry_check(kset, P, classify_eigenfunctions(kset, P, _X(kset)))
    assert not checks[0].passed or not checks[1].passed


def test_induced_Q_for_example2(ex2):
    cl = classify_eigenfunctions(ex2.kset, ex2.symmetries[0], _X(ex2.kset))
    Q = induced_Q(cl, ex2.kset.eigenvalues)
    expected = np.zeros((5, 5))
    expected[[1, 0, 3, 2, 4], [0, 1, 2, 3, 4]] = 1
    np.testing.assert_array_equal(Q.matrix(), expected)
    assert not Q.is_identity


def test_all_rotational_gives_identity_note(directed):
    cl = classify_eigenfunctions(directed.kset, directed.symmetries[0], _X(directed.kset))
    Q = induced_Q(cl, directed.kset.eigenvalues)
    assert Q.is_identity and Q.note() == "no nonidentity induced symmetry"


# ----------------------------------------------------------------- verdicts

def test_verdict_symmetric_measurement(ex2):
    v = symmetry_verdict(ex2.system, ex2.symmetries[0], ex2.kset, _X(ex2.system))
    assert (v.verdict, v.rule) == ("Unobservable", SYMMETRIC_MEASUREMENT)
    assert v.to_json()["theorem"] == SYMMETRIC_MEASUREMENT


def test_verdict_multiplicity_bound(undirected):
    v = symmetry_verdict(undirected.system, undirected.symmetries[0], undirected.kset, _X(undirected.system))
    assert (v.verdict, v.rule) == ("Unobservable", MULTIPLICITY_BOUND)
    assert v.rationale == "q=1 < max multiplicity 2"


def test_verdict_inconclusive(directed):
    v = symmetry_verdict(directed.system, directed.symmetries[0], directed.kset, _X(directed.system))
    assert (v.verdict, v.rule) == ("Inconclusive", NO_RULE)


def test_verdict_without_koopman_set(nems):
    v = symmetry_verdict(nems.system, nems.symmetries[0], None, _X(nems.system))
    assert v.verdict == "Unobservable" and "no Koopman set" in v.rationale


def test_verdict_rejects_broken_dynamics_symmetry(ex2):
    v = symmetry_verdict(ex2.system, PermutationSymmetry((3, 2, 1)), ex2.kset, _X(ex2.system))
    assert v.verdict == "Inconclusive" and not v.state_symmetric


# --------------------------------------------------------------- properties

def _circulant(c0, c1):
    return np.array([[c0, c1, c1], [c1, c0, c1], [c1, c1, c0]])


_perm3 = st.sampled_from([(2, 1, 3), (1, 3, 2), (3, 2, 1), (2, 3, 1), (3, 1, 2)])


@settings(max_examples=40, deadline=None)
@given(st.integers(-3, 3), st.integers(1, 3), _perm3)
def test_reflectional_pairs_live_in_repeated_groups(c0, c1, perm):
    A = _circulant(float(c0), float(c1))
    kset = linear_koopman_extract(A)
    P = PermutationSymmetry(perm)
    cl = classify_eigenfunctions(kset, P, _X(kset), strict=False)
    mult = {i: g.multiplicity for g in group_eigenvalues(kset.eigenvalues) for i in g.indices}
    for i, j, _ in cl.reflectional:
        assert mult[i] >= 2 and abs(kset.eigenvalues[i] - kset.eigenvalues[j]) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2, allow_nan=False), st.floats(-2, 2, allow_nan=False), _perm3,
       st.integers(0, 2**31 - 1))
def test_symmetric_measurement_implies_unobservable(a, b, perm, seed):
    A = _circulant(-2.0, 1.0)
    h = ExprVector.parse([f"{a!r}*(x1 + x2 + x3) + {b!r}*(x1^2 + x2^2 + x3^2)"], 3)
    sys = linear_system(A, [[1, 0, 0]], "u").with_measurement(h)
    X = sample_box(sys.domain_box, 100, np.random.default_rng(seed))
    v = symmetry_verdict(sys, PermutationSymmetry(perm), linear_koopman_extract(A), X)
    assert v.verdict == "Unobservable" and v.rule == SYMMETRIC_MEASUREMENT


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3))
def test_symmetric_pairs_are_indistinguishable(x0):
    m = get_model("example2")
    P = m.symmetries[0]
    a = flow(m.system, x0, 1.0)
    b = flow(m.system, P.apply(np.asarray(x0)), 1.0)
    assert measurement_distance(a, b) <= 1e-8
