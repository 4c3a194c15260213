import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdkit.errors import (
    BadDistribution,
    InvalidState,
    ParseError,
    UnsupportedLengths,
)
from qkdkit.keystates import (
    KeyedCQState,
    KeyLengthPair,
    all_keys,
    combine_parts,
    correctness_epsilon,
    distance_to_uniform,
    fixed_length_secrecy,
    key_replacer,
    max_guess_probability,
    mismatch_probability,
    random_key_distribution,
    random_keyed_state,
    secrecy_epsilon,
    security_epsilon,
    security_report,
    yuen_check,
    yuen_counterexample,
    per_value_deviation,
)

seeds = st.integers(0, 2**32 - 1)


def classical(dist):
    return KeyedCQState.from_distribution(dist)


def eve_copy(l, p_accept=1.0):
    """Uniform ``l``-bit key, perfectly correlated and copied to Eve."""
    entries = {(k, k, k): np.array([[p_accept / 2**l]]) for k in all_keys(l)}
    if p_accept < 1:
        entries[("", "", "")] = np.array([[1 - p_accept]])
    return KeyedCQState(entries)


def ideal(l, dim_e=2, rng=None):
    rng = rng or np.random.default_rng(0)
    from qkdkit.statekit import random_density
    sigma = random_density(dim_e, rng)
    return KeyedCQState({(k, k): sigma / 2**l for k in all_keys(l)}, dim_e)


def test_key_length_pairs():
    assert KeyLengthPair(2, 2).symmetric
    assert not KeyLengthPair(2, 0).symmetric
    with pytest.raises(InvalidState):
        KeyLengthPair(1, 2)


def test_rejects_bad_states():
    with pytest.raises(InvalidState):
        classical({("0", "01"): 1.0})
    with pytest.raises(InvalidState):
        classical({("0", "0"): 0.6})
    with pytest.raises(InvalidState):
        KeyedCQState({("0", "0"): np.diag([1.2, -0.2])}, 2)
    with pytest.raises(InvalidState):
        classical({("0a", "0a"): 1.0})


def test_replacer_is_idempotent():
    s = ideal(2)
    r = key_replacer(s)
    assert security_epsilon(s) <= 1e-12
    for k, m in s.items():
        np.testing.assert_allclose(r.entries[k], m, atol=1e-12)


def test_replacer_on_deterministic_key():
    r = key_replacer(classical({("0", "0"): 1.0}))
    assert r.key_distribution() == pytest.approx({("0", "0"): 0.5, ("1", "1"): 0.5})


def test_abort_only_state():
    s = classical({("", ""): 1.0})
    assert key_replacer(s).key_distribution() == {("", ""): 1.0}
    assert security_epsilon(s) == 0.0
    assert secrecy_epsilon(s) == 0.0
    assert correctness_epsilon(s) == 0.0
    assert s.acceptance_probability() == 0.0


def test_deterministic_key_security():
    s = classical({("0", "0"): 1.0})
    assert security_epsilon(s) == pytest.approx(1.0)
    assert secrecy_epsilon(s) == pytest.approx(1.0)
    assert correctness_epsilon(s) == 0.0


def test_correlated_keys_are_correct():
    s = classical({("0", "0"): 0.5, ("1", "1"): 0.5})
    assert mismatch_probability(s) == 0.0
    assert correctness_epsilon(s) == 0.0
    assert security_epsilon(s) == pytest.approx(0.0, abs=1e-15)


def test_independent_uniform_keys():
    s = classical({(a, b): 0.25 for a in "01" for b in "01"})
    assert mismatch_probability(s) == pytest.approx(0.5)
    assert correctness_epsilon(s) == pytest.approx(1.0)
    assert secrecy_epsilon(s) == pytest.approx(0.0)


def test_asymmetric_block_is_not_a_mismatch():
    s = classical({("0", ""): 0.5, ("1", "1"): 0.5})
    assert mismatch_probability(s) == 0.0
    assert not s.symmetric_abort


def test_eve_copy():
    s = eve_copy(1)
    assert secrecy_epsilon(s) == pytest.approx(1.0)
    assert correctness_epsilon(s) == 0.0


@pytest.mark.parametrize("n,L", [(1, 1), (3, 2), (5, 3)])
def test_prefactor_scales_secrecy(n, L):
    s = eve_copy(L, p_accept=2.0**-n)
    assert fixed_length_secrecy(s, L) == pytest.approx(2.0**-n * 2 * (1 - 2.0**-L), abs=1e-14)
    assert fixed_length_secrecy(s, L) == pytest.approx(secrecy_epsilon(s), abs=1e-14)


def test_prefactor_zero_weight():
    s = classical({("", ""): 1.0})
    assert fixed_length_secrecy(s, 2) == 0.0


def test_fixed_length_rejects_other_lengths():
    s = classical({("0", "0"): 0.5, ("00", "00"): 0.5})
    with pytest.raises(UnsupportedLengths):
        fixed_length_secrecy(s, 1)


def test_combine_parts():
    assert combine_parts(0.0, 0.0) == 0.0
    assert combine_parts(0.1, 0.2) == pytest.approx(0.3)
    assert combine_parts(1.5, 1.5) == 2.0
    with pytest.raises(ValueError):
        combine_parts(-0.1, 0.2)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 4))
def test_security_from_parts(seed, dim_e):
    rng = np.random.default_rng(seed)
    s = random_keyed_state(rng, max_length=3, dim_E=dim_e)
    assert security_epsilon(s) <= combine_parts(correctness_epsilon(s), secrecy_epsilon(s)) + 1e-10


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 4))
def test_correctness_is_twice_mismatch(seed, l):
    s = classical(random_key_distribution(np.random.default_rng(seed), l))
    assert correctness_epsilon(s) == pytest.approx(2 * mismatch_probability(s), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_eve_channel_cannot_increase_secrecy(seed):
    from qkdkit.statekit import random_channel
    rng = np.random.default_rng(seed)
    s = random_keyed_state(rng, max_length=2, dim_E=3)
    t = s.map_eve(random_channel(3, rng, dim_out=2))
    assert secrecy_epsilon(t) <= secrecy_epsilon(s) + 1e-10
    assert security_epsilon(t) <= security_epsilon(s) + 1e-10


def test_security_report_fields():
    rep = security_report(eve_copy(2, 0.5))
    d = rep.to_json()
    assert d["acceptance_probability"] == pytest.approx(0.5)
    assert d["combined_bound"] == pytest.approx(rep.epsilon_correctness + rep.epsilon_secrecy_alice)
    assert set(d["per_length_terms"]) == {"0", "2"}


def test_json_round_trip():
    rng = np.random.default_rng(3)
    s = random_keyed_state(rng, max_length=2, dim_E=2, symmetric=False)
    t = KeyedCQState.from_json(s.to_json())
    assert security_epsilon(t) == pytest.approx(security_epsilon(s), abs=1e-14)
    s2 = eve_copy(1)
    assert KeyedCQState.from_json(s2.to_json()).entries.keys() == s2.entries.keys()


def test_json_errors():
    with pytest.raises(ParseError):
        KeyedCQState.from_json({"blocks": []})
    with pytest.raises(InvalidState):
        KeyedCQState.from_json({"dim_E": 1, "blocks": [
            {"lA": 1, "lB": 1, "entries": [{"kA": "00", "kB": "0", "op": {"dim": 1, "entries": [[1, 0]]}}]}]})


def test_per_value_counterexample():
    p = yuen_counterexample(2, 0.1)
    np.testing.assert_allclose(p, [0.325, 0.225, 0.225, 0.225], atol=1e-15)
    assert not yuen_check(p, 0.1)
    assert distance_to_uniform(p) == pytest.approx(0.075, abs=1e-15)
    assert yuen_check(np.full(8, 1 / 8), 0.0)
    assert per_value_deviation(np.diag(p), np.eye(4) / 4) == pytest.approx(0.3)


def test_per_value_errors():
    with pytest.raises(BadDistribution):
        yuen_check([0.5, 0.3, 0.2], 0.1)
    with pytest.raises(BadDistribution):
        yuen_counterexample(2, 1.5)


@settings(max_examples=100, deadline=None)
@given(seeds, st.integers(1, 5))
def test_guessing_bound(seed, l):
    p = np.random.default_rng(seed).dirichlet(np.full(2**l, 0.3))
    assert max_guess_probability(p) <= 2.0**-l + distance_to_uniform(p) + 1e-12


def test_bob_only_key_escapes_both_parts():
    # outside symmetric abort the parts do not bound security
    s = classical({("", "0"): 1.0})
    assert correctness_epsilon(s) == 0.0
    assert secrecy_epsilon(s) == 0.0
    assert security_epsilon(s) == pytest.approx(1.0)
