import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdkit.distinctness import (
    conformance_check,
    delta_hat,
    delta_tilde,
    midpoint_state,
    p_neq_max_bounds,
    path_cost,
    trace_distance,
    unhalved_trace_norm,
    zero_functional,
)
from qkdkit.errors import DimMismatch, EmptyPath
from qkdkit.statekit import ket, projector, random_density, random_pure

RHO = np.diag([0.65, 0.35])
TAU = np.eye(2) / 2
seeds = st.integers(0, 2**32 - 1)


def test_reference_pair_values():
    assert trace_distance(RHO, TAU) == pytest.approx(0.15, abs=1e-12)
    assert delta_tilde(RHO, TAU) == pytest.approx(0.3, abs=1e-8)
    assert delta_tilde(TAU, RHO) == pytest.approx(1 - 0.5 / 0.65, abs=1e-8)
    assert delta_hat(RHO, TAU) == pytest.approx(3 / 13, abs=1e-8)


def test_reference_midpoint():
    m = midpoint_state(RHO, TAU)
    np.testing.assert_allclose(m.omega.matrix, np.diag([13 / 23, 10 / 23]), atol=1e-12)
    assert m.eps_prime == pytest.approx(3 / 23, abs=1e-12)
    assert path_cost([RHO, m.omega, TAU]) <= 6 / 23 + 1e-8


def test_reference_bounds():
    b = p_neq_max_bounds(RHO, TAU)
    assert b.lower == pytest.approx(0.15, abs=1e-12)
    assert b.upper == pytest.approx(3 / 13, abs=1e-8)
    assert len(b.witness_path) >= 2


def test_identical_states_have_zero_bounds(rng):
    rho = random_density(3, rng)
    b = p_neq_max_bounds(rho, rho)
    assert b.lower == pytest.approx(0.0, abs=1e-12)
    assert b.upper == pytest.approx(0.0, abs=1e-8)
    assert delta_tilde(rho, rho) <= 1e-9


def test_orthogonal_states():
    a, b = projector(ket(0, 2)), projector(ket(1, 2))
    assert delta_tilde(a, b) == 1.0
    bounds = p_neq_max_bounds(a, b)
    assert bounds.lower == pytest.approx(1.0, abs=1e-10)
    assert bounds.upper == pytest.approx(1.0, abs=1e-10)


def test_refinement_is_monotone_in_budget(rng):
    rho, sigma = random_density(3, rng), random_pure(3, rng)
    uppers = [p_neq_max_bounds(rho, sigma, refine_budget=k, seed=7).upper for k in (0, 20, 80)]
    assert uppers[0] >= uppers[1] - 1e-12 >= uppers[2] - 2e-12


def test_refinement_is_deterministic(rng):
    rho, sigma = random_density(2, rng), random_density(2, rng)
    a = p_neq_max_bounds(rho, sigma, refine_budget=30, seed=3)
    b = p_neq_max_bounds(rho, sigma, refine_budget=30, seed=3)
    assert a.upper == b.upper


def test_empty_path():
    with pytest.raises(EmptyPath):
        path_cost([RHO])


def test_dim_mismatch():
    with pytest.raises(DimMismatch):
        trace_distance(RHO, np.eye(3) / 3)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 4))
def test_sandwich(seed, d):
    rng = np.random.default_rng(seed)
    rho, sigma = random_density(d, rng), random_density(d, rng)
    td = trace_distance(rho, sigma)
    b = p_neq_max_bounds(rho, sigma)
    assert b.lower == pytest.approx(td, abs=1e-12)
    assert b.lower <= b.upper <= min(2 * td, 2 * td / (1 + td)) + 1e-8


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 4))
def test_delta_tilde_dominates_trace_distance(seed, d):
    rng = np.random.default_rng(seed)
    rho, sigma = random_density(d, rng), random_density(d, rng)
    assert delta_hat(rho, sigma) >= trace_distance(rho, sigma) - 1e-8


def test_trace_distance_passes_conformance():
    report = conformance_check(trace_distance, samples=200, seed=11)
    assert report.all_passed
    assert report.to_json()["axioms"]["A1"]["witness"] is None


def test_unhalved_norm_fails_operational_bound():
    report = conformance_check(unhalved_trace_norm, samples=200, seed=11)
    assert not report["A3"].passed
    assert report["A3"].witness is not None
    assert report["A1"].passed and report["P2"].passed


def test_zero_functional_fails_faithfulness():
    report = conformance_check(zero_functional, samples=50, seed=11)
    assert not report["P1"].passed
    assert report["P1"].witness["value"] == 0.0
