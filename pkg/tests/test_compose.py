import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdkit.compose import (
    chain_terms,
    composite_secrecy,
    event_probability_gap,
    first_chain_term_conditional,
    joint_state,
    parallel_compose,
    sequential_compose,
    transcript_copying_attack,
)
from qkdkit.errors import BadConfig, BadEffect, DimensionOverflow
from qkdkit.keystates import KeyedCQState, random_keyed_state, secrecy_epsilon, security_epsilon
from qkdkit.protocol import AttackModel, ProtocolConfig, run_protocol
from qkdkit.statekit import KrausChannel, helstrom, random_channel, random_density, schatten_1_norm

ABORT = KeyedCQState.from_distribution({("", ""): 1.0})
PERFECT = KeyedCQState.from_distribution({("0", "0"): 0.5, ("1", "1"): 0.5})
seeds = st.integers(0, 2**32 - 1)


def skewed(p=0.7):
    return KeyedCQState.from_distribution({("0", "0"): p, ("1", "1"): 1 - p})


def test_abort_only_runs():
    rep = sequential_compose([ABORT, ABORT])
    assert rep.combined_epsilon_measured == 0.0
    assert rep.combined_epsilon_bound == 0.0
    assert rep.slack == 0.0


def test_perfect_run_adds_nothing():
    s = skewed()
    rep = sequential_compose([PERFECT, s])
    assert rep.combined_epsilon_measured == pytest.approx(security_epsilon(s), abs=1e-12)


def test_sequential_needs_two_runs():
    with pytest.raises(BadConfig):
        sequential_compose([PERFECT])
    with pytest.raises(BadConfig):
        sequential_compose([PERFECT, PERFECT], mode="fast")


@pytest.mark.parametrize("n", [2, 3, 5])
def test_repetition_scales_linearly(n):
    s = skewed(0.6)
    rep = sequential_compose([s] * n, mode="independent")
    assert rep.combined_epsilon_measured <= n * security_epsilon(s) + 1e-9
    assert rep.combined_epsilon_measured > security_epsilon(s)


def test_independent_mode_matches_exact():
    one = run_protocol(ProtocolConfig(2, sifting="delayed"), AttackModel.passive_depolarizing(0.2))
    exact = sequential_compose([one, one])
    fast = sequential_compose([one, one], mode="independent")
    assert fast.combined_epsilon_measured == pytest.approx(exact.combined_epsilon_measured, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_sequential_union_bound_on_random_states(seed):
    rng = np.random.default_rng(seed)
    a = random_keyed_state(rng, max_length=2, dim_E=2)
    b = random_keyed_state(rng, max_length=2, dim_E=2)
    rep = sequential_compose([a, b])
    assert rep.within_bound(1e-9)


def test_adaptive_second_run_sees_history():
    cfg = ProtocolConfig(2, sifting="random")
    r1 = run_protocol(cfg, AttackModel.intercept_resend())
    seen = []

    def second(history):
        seen.append(history)
        return run_protocol(cfg, AttackModel.passive_depolarizing(0.1))

    rep = sequential_compose([r1, second])
    assert len(set(seen)) == len(seen) == rep.details["histories_per_run"][1]
    assert rep.within_bound(1e-9)


def test_entry_ceiling():
    s = random_keyed_state(np.random.default_rng(0), max_length=3, dim_E=1, n_blocks=4, classical=True)
    with pytest.raises(DimensionOverflow):
        joint_state([s, s, s], max_entries=50)


def test_independent_parallel_runs():
    a, b = skewed(0.7), skewed(0.6)
    rep = parallel_compose(a, b)
    assert rep.combined_epsilon_measured <= secrecy_epsilon(a) + secrecy_epsilon(b) + 1e-12
    # product of distributions: 1.5 rather than the sum 2 here
    c, d = KeyedCQState.from_distribution({("0", "0"): 1.0}), PERFECT
    assert parallel_compose(c, c).combined_epsilon_measured == pytest.approx(1.5)
    assert parallel_compose(c, d).combined_epsilon_measured == pytest.approx(1.0)


def test_aborting_second_run():
    a = skewed(0.8)
    rep = parallel_compose(a, ABORT)
    assert rep.combined_epsilon_measured == 0.0
    assert rep.details["secrecy_all_branches"] == pytest.approx(secrecy_epsilon(a), abs=1e-12)


def test_transcript_copying_parallel():
    cfg = ProtocolConfig(2, sifting="random")
    r1 = run_protocol(cfg, AttackModel.intercept_resend())
    rep = parallel_compose(r1, transcript_copying_attack(cfg))
    assert rep.within_bound(1e-9)
    d = rep.details
    assert d["chain_first"] == pytest.approx(d["chain_first_conditional"], abs=1e-10)
    assert rep.combined_epsilon_measured <= d["chain_first"] + d["chain_second"] + 1e-12


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_chain_on_random_states(seed):
    rng = np.random.default_rng(seed)
    a = random_keyed_state(rng, max_length=2, dim_E=2)
    b = random_keyed_state(rng, max_length=2, dim_E=2)
    joint, _ = joint_state([a, b])
    t = chain_terms(joint)
    assert t["first"] == pytest.approx(first_chain_term_conditional(joint), abs=1e-10)
    assert composite_secrecy(joint, on_omega=True) <= t["first"] + t["second"] + 1e-10


def test_gap_with_identity_effect(rng):
    a, b = random_density(3, rng), random_density(3, rng)
    g = event_probability_gap(a, b, KrausChannel.identity(3), np.eye(3))
    assert g.p_real == pytest.approx(1.0)
    assert g.gap == pytest.approx(0.0, abs=1e-14)


def test_gap_for_equal_states(rng):
    a = random_density(2, rng)
    ch = random_channel(2, rng, dim_out=3)
    g = event_probability_gap(a, a, ch, random_density(3, rng))
    assert g.gap == 0.0


def test_helstrom_effect_attains_output_distance(rng):
    a, b = random_density(3, rng), random_density(3, rng)
    ch = random_channel(3, rng, dim_out=2)
    lam = helstrom(ch.apply(a), ch.apply(b)).effect
    g = event_probability_gap(a, b, ch, lam)
    assert g.gap == pytest.approx(0.5 * schatten_1_norm(ch.apply(a) - ch.apply(b)), abs=1e-9)
    assert g.gap <= g.bound + 1e-10


def test_bad_effect(rng):
    a, b = random_density(2, rng), random_density(2, rng)
    with pytest.raises(BadEffect):
        event_probability_gap(a, b, KrausChannel.identity(2), 2 * np.eye(2))
    with pytest.raises(BadEffect):
        event_probability_gap(a, b, KrausChannel.identity(2), np.diag([1.0, -0.5]))


def test_report_json():
    d = sequential_compose([PERFECT, skewed()]).to_json()
    assert set(d) >= {"component_epsilons", "combined_epsilon_measured", "combined_epsilon_bound", "slack"}
