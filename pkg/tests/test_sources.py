"""Tests for source models: pmfs, envelopes, projections, sampling."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsfc import (
    EnvelopeSpec,
    SourcePmf,
    TailPartitionIndex,
    builtin_envelope,
    entropy,
    envelope_contains,
    envelope_distribution,
    head_mass,
    maxent_threshold,
    projected_divergence,
    projected_entropy,
    sample_block,
    sample_envelope_member,
    tail_start,
    tail_threshold,
)
from dsfc.errors import ConfigInvalid, NotSummable
from dsfc.sources import tail_ratio_series


# ---------------------------------------------------------------------------
# SourcePmf basics
# ---------------------------------------------------------------------------


def test_point_mass_concentrates():
    p = SourcePmf.point_mass(5)
    assert p.mass_at(5) == 1
    assert p.mass_at(4) == 0
    assert p.mass_at(6) == 0


def test_uniform_masses_are_exact():
    u = SourcePmf.uniform(1, 4)
    assert all(u.mass_at(x) == Fraction(1, 4) for x in range(1, 5))
    assert u.mass_at(5) == 0


def test_geometric_masses():
    g = SourcePmf.geometric()
    assert g.mass_at(1) == Fraction(1, 2)
    assert g.mass_at(3) == Fraction(1, 8)


def test_suffix_mass_is_inclusive_and_vanishes_off_support():
    u = SourcePmf.uniform(1, 4)
    assert u.suffix_mass(3) == Fraction(1, 2)
    assert u.suffix_mass(1) == 1
    assert u.suffix_mass(10) == 0


def test_head_mass_complements_suffix():
    g = SourcePmf.geometric()
    assert head_mass(g, 2) == Fraction(3, 4)
    assert head_mass(g, 2) + g.suffix_mass(3) == 1


def test_from_weights_normalizes_exactly():
    p = SourcePmf.from_weights(1, [3, 1])
    assert p.mass_at(1) == Fraction(3, 4)
    assert p.mass_at(2) == Fraction(1, 4)


def test_from_weights_rejects_negative():
    with pytest.raises((ConfigInvalid, ValueError)):
        SourcePmf.from_weights(1, [1, -1])


# ---------------------------------------------------------------------------
# Entropy and projections
# ---------------------------------------------------------------------------


def test_entropy_uniform_four_is_two_bits():
    assert entropy(SourcePmf.uniform(1, 4)) == pytest.approx(2.0, abs=1e-12)


def test_entropy_point_mass_is_zero():
    assert entropy(SourcePmf.point_mass(3)) == 0.0


def test_entropy_geometric_is_two_bits():
    assert entropy(SourcePmf.geometric()) == pytest.approx(2.0, abs=1e-12)


def test_projected_entropy_halves_uniform():
    u = SourcePmf.uniform(1, 4)
    assert projected_entropy(u, ((1, 2), (3, 4))) == pytest.approx(1.0, abs=1e-12)


def test_projected_entropy_single_cell_is_zero():
    u = SourcePmf.uniform(1, 4)
    assert projected_entropy(u, ((1, 2, 3, 4),)) == 0.0


def test_projected_entropy_never_exceeds_entropy():
    g = envelope_distribution(builtin_envelope("geometric"))
    for k in (1, 2, 5):
        assert projected_entropy(g, TailPartitionIndex(k)) <= entropy(g) + 1e-12


def test_projected_divergence_self_is_zero():
    u = SourcePmf.uniform(1, 4)
    assert projected_divergence(u, u, ((1, 2), (3, 4))) == 0.0


def test_projected_divergence_single_cell_is_zero():
    p = SourcePmf.uniform(1, 4)
    q = SourcePmf.from_weights(1, [1, 2, 3, 4])
    assert projected_divergence(p, q, ((1, 2, 3, 4),)) == 0.0


def test_projected_divergence_binary_value():
    p = SourcePmf.uniform(1, 4)
    q = SourcePmf.from_weights(1, [Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 8)])
    want = 0.5 * math.log2(0.5 / 0.75) + 0.5 * math.log2(0.5 / 0.25)
    assert projected_divergence(p, q, ((1, 2), (3, 4))) == pytest.approx(want, abs=1e-12)


def test_projected_divergence_nonnegative():
    p = SourcePmf.from_weights(1, [5, 2, 1])
    q = SourcePmf.from_weights(1, [1, 1, 6])
    assert projected_divergence(p, q, ((1,), (2,), (3,))) >= 0.0


# ---------------------------------------------------------------------------
# Envelopes: built-ins and frozen constants
# ---------------------------------------------------------------------------


def test_builtin_names():
    for name in ("geometric", "polynomial", "exponential"):
        env = builtin_envelope(name)
        assert env.summable


def test_builtin_unknown_name_rejected():
    with pytest.raises((ConfigInvalid, KeyError, ValueError)):
        builtin_envelope("midnight")


def test_geometric_envelope_values():
    env = builtin_envelope("geometric")
    assert env.value_at(1) == Fraction(1, 2)
    assert env.value_at(3) == Fraction(1, 8)
    assert env.suffix_mass(2) == Fraction(1, 2)


def test_envelope_tail_start_and_leftover():
    geo = builtin_envelope("geometric")
    poly = builtin_envelope("polynomial")
    expo = builtin_envelope("exponential")
    dg = envelope_distribution(geo)
    dp = envelope_distribution(poly)
    de = envelope_distribution(expo)
    assert tail_start(geo) == 1
    assert tail_start(poly) == 2
    assert tail_start(expo) == 2
    # Mass not claimed by the envelope at or above its tail start lands on
    # the first symbol when the distribution is normalized.
    assert float(dg.mass_at(1)) == pytest.approx(0.5, abs=1e-12)
    assert float(dp.mass_at(1)) == pytest.approx(0.3550659331517736, abs=1e-12)
    assert float(de.mass_at(1)) == pytest.approx(0.5718054686042318, abs=1e-9)
    # At and beyond the tail start the distribution follows the envelope.
    assert float(dp.mass_at(2)) == pytest.approx(0.25, abs=1e-12)
    assert float(de.mass_at(2)) == pytest.approx(2 * math.exp(-2), abs=1e-12)


def test_envelope_distribution_entropies():
    assert entropy(envelope_distribution(builtin_envelope("geometric"))) == pytest.approx(
        2.0, abs=1e-12
    )
    assert entropy(envelope_distribution(builtin_envelope("polynomial"))) == pytest.approx(
        3.235604535193241, abs=1e-9
    )
    assert entropy(envelope_distribution(builtin_envelope("exponential"))) == pytest.approx(
        1.6279382676105414, abs=1e-9
    )


def test_envelope_projected_entropies_at_k2():
    cases = {
        "geometric": 1.3112781244591327,
        "polynomial": 2.6437658449100034,
        "exponential": 0.864850593544121,
    }
    for name, want in cases.items():
        dist = envelope_distribution(builtin_envelope(name))
        assert projected_entropy(dist, TailPartitionIndex(2)) == pytest.approx(want, abs=1e-9)


def test_tail_threshold_frozen_values():
    geo = builtin_envelope("geometric")
    poly = builtin_envelope("polynomial")
    expo = builtin_envelope("exponential")
    assert tail_threshold(geo, 8) == 4
    assert tail_threshold(poly, 8) == 8
    assert tail_threshold(expo, 8) == 3
    assert tail_threshold(geo, 100) == 7
    assert tail_threshold(poly, 100) == 100
    assert tail_threshold(expo, 100) == 5


def test_tail_threshold_definition():
    env = builtin_envelope("geometric")
    for n in (2, 8, 64, 500):
        k = tail_threshold(env, n)
        assert env.suffix_mass(k + 1) < Fraction(1, n)
        if k > 1:
            assert env.suffix_mass(k) >= Fraction(1, n)


def test_tail_threshold_nondecreasing_in_n():
    for name in ("geometric", "polynomial", "exponential"):
        env = builtin_envelope(name)
        values = [tail_threshold(env, n) for n in (2, 4, 8, 16, 32, 64)]
        assert values == sorted(values)


def test_maxent_threshold_builtins():
    for name in ("geometric", "polynomial", "exponential"):
        assert maxent_threshold(builtin_envelope(name)) == 2


def test_not_summable_polynomial():
    env = EnvelopeSpec.polynomial(1.0)
    assert not env.summable
    with pytest.raises(NotSummable):
        envelope_distribution(env)
    with pytest.raises(NotSummable):
        tail_threshold(env, 8)


def test_envelope_contains_self_and_rejects_excess():
    env = builtin_envelope("geometric")
    assert envelope_contains(env, envelope_distribution(env))
    too_big = SourcePmf.from_weights(1, [Fraction(3, 4), Fraction(1, 4)])
    assert not envelope_contains(env, too_big)


def test_envelope_contains_respects_tail():
    env = builtin_envelope("exponential")
    dist = envelope_distribution(env)
    assert envelope_contains(env, dist)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def test_sample_point_mass_is_constant():
    rng = np.random.default_rng(7)
    block = sample_block(SourcePmf.point_mass(3), 4, rng)
    assert block.tolist() == [3, 3, 3, 3]


def test_sample_block_deterministic_given_seed():
    g = SourcePmf.geometric()
    a = sample_block(g, 64, np.random.default_rng(42))
    b = sample_block(g, 64, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_sample_block_respects_support_floor():
    g = SourcePmf.geometric(floor=3)
    block = sample_block(g, 256, np.random.default_rng(0))
    assert block.min() >= 3


def test_sample_block_matches_masses():
    p = SourcePmf.from_weights(1, [3, 1])
    block = sample_block(p, 20000, np.random.default_rng(11))
    freq = np.mean(block == 1)
    # 4 sigma around 3/4 with n=20000
    assert abs(freq - 0.75) < 4 * math.sqrt(0.75 * 0.25 / 20000)


def test_sampled_member_contained_and_deterministic():
    env = builtin_envelope("geometric")
    a = sample_envelope_member(env, np.random.default_rng(3))
    b = sample_envelope_member(env, np.random.default_rng(3))
    assert a.probs == b.probs and a.support_floor == b.support_floor
    assert envelope_contains(env, a)


# ---------------------------------------------------------------------------
# Tail entropy ratio
# ---------------------------------------------------------------------------


def test_tail_ratio_frozen_values():
    assert tail_ratio_series(builtin_envelope("polynomial"), 10**4) == pytest.approx(
        2.217148419881442, rel=1e-9
    )
    assert tail_ratio_series(builtin_envelope("exponential"), 50) == pytest.approx(
        1.0213038009155697, rel=1e-9
    )
    assert tail_ratio_series(builtin_envelope("geometric"), 2) == pytest.approx(3.0, abs=1e-12)


def test_tail_ratio_stays_below_twice_the_claimed_limits():
    poly_limit = 5.101092193460861
    exp_limit = 0.94208469268186
    for k in (100, 1000, 10**4):
        assert tail_ratio_series(builtin_envelope("polynomial"), k) < 2 * poly_limit
    for k in (20, 50, 200):
        assert tail_ratio_series(builtin_envelope("exponential"), k) < 2 * exp_limit


def test_tail_ratio_converges_to_decay_constants():
    # Power-law suffixes approach p/(p-1); exponential suffixes approach 1.
    assert abs(tail_ratio_series(builtin_envelope("polynomial"), 10**4) - 2.0) < 0.25
    assert abs(tail_ratio_series(builtin_envelope("exponential"), 200) - 1.0) < 0.01
    poly = builtin_envelope("polynomial")
    values = [tail_ratio_series(poly, k) for k in (100, 1000, 10**4)]
    assert values == sorted(values, reverse=True)


def test_tail_ratio_rejects_bad_inputs():
    from dsfc.errors import EntropySeriesDiverges

    with pytest.raises(EntropySeriesDiverges):
        tail_ratio_series(EnvelopeSpec.polynomial(1.0), 100)
    with pytest.raises(ValueError):
        tail_ratio_series(builtin_envelope("polynomial"), 1)


# ---------------------------------------------------------------------------
# Projection and threshold inequalities
# ---------------------------------------------------------------------------


def test_projected_divergence_never_exceeds_full():
    p = SourcePmf.from_weights(1, [4, 3, 2, 1])
    q = SourcePmf.from_weights(1, [1, 2, 3, 4])
    singletons = ((1,), (2,), (3,), (4,))
    full = projected_divergence(p, q, singletons)
    for cells in (((1, 2), (3, 4)), ((1, 2, 3), (4,)), ((1, 2, 3, 4),)):
        assert projected_divergence(p, q, cells) <= full + 1e-12


def test_threshold_neighborhood_inequality():
    # At the scheduled threshold the remaining tail mass x satisfies x < 1/n,
    # hence x*log2(1/x) <= log2(n)/n once n >= 3.
    for name in ("geometric", "polynomial", "exponential"):
        env = builtin_envelope(name)
        dist = envelope_distribution(env)
        for n in (3, 8, 64, 500):
            u = tail_threshold(env, n)
            x = float(dist.suffix_mass(u + 1))
            assert x < 1 / n
            if x > 0:
                assert x * math.log2(1 / x) <= math.log2(n) / n + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10**6))
def test_sampled_members_always_contained(seed):
    env = builtin_envelope("exponential")
    member = sample_envelope_member(env, np.random.default_rng(seed))
    assert envelope_contains(env, member)
    total = float(sum(member.probs))
    if member.tail is None:
        assert abs(total - 1.0) <= 1e-9
    else:
        assert total <= 1.0 + 1e-9


@settings(max_examples=20, deadline=None)
@given(
    weights=st.lists(st.integers(min_value=1, max_value=9), min_size=1, max_size=6),
    n=st.integers(min_value=1, max_value=16),
)
def test_projection_data_processing(weights, n):
    """Merging symbols can only lose information."""
    p = SourcePmf.from_weights(1, weights)
    w = len(weights)
    cells = ((tuple(range(1, w + 1)),) if w == 1 else
             (tuple(range(1, (w + 1) // 2 + 1)), tuple(range((w + 1) // 2 + 1, w + 1))))
    assert projected_entropy(p, cells) <= entropy(p) + 1e-12
