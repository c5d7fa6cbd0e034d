"""End-to-end acceptance checks for the toolkit, one verdict line per check.

Run with ``pytest -s tests/test_acceptance.py`` to see every verdict line;
without ``-s`` pytest shows the captured lines for failing checks only.
Check 6 is expected to fail at desk scale: the measured tail-ratio series is
still far from its analytic limit at the largest thresholds that run in
seconds, and the gap is reported honestly rather than widened into a pass.
"""

import itertools
import math
import time
from fractions import Fraction

import mpmath as mp
import numpy as np

from dsfc.codec import CodecConfig, measured_rate, roundtrip, tail_matched_schedule
from dsfc.codes import (
    BlockPartition,
    enumerate_types,
    first_stage_encode,
    grid_prototype_of_cell,
    grid_radius,
    per_type_code,
    second_stage_code,
    type_index_code,
)
from dsfc.distortion import DistortionSpec, RationalDistortionLevel
from dsfc.oracles import (
    FiniteInstance,
    blahut_arimoto_rate_distortion,
    brute_force_operational_rate,
    capacity_problem_from_family,
    disjoint_family_builder,
    envelope_subfamily,
    projected_info_radius,
    truncated_image_instance,
    truncation_identity_gap,
)
from dsfc.sources import (
    EnvelopeSpec,
    SourcePmf,
    TailPartitionIndex,
    builtin_envelope,
    envelope_distribution,
    head_mass,
    maxent_threshold,
    projected_entropy,
    sample_block,
    sample_envelope_member,
    tail_ratio_series,
)

_SEED = 20260819

ABS = DistortionSpec("absolute")
BND = DistortionSpec("bounded", scale=2, clip=5)

# The envelope/distortion pairings every matrix-style check below runs over:
# the two unbounded-cost envelopes use the absolute cost, the third exercises
# the clipped kind.
ENVELOPE_SPECS = (
    ("geometric", ABS),
    ("polynomial", ABS),
    ("exponential", BND),
)
N_GRID = (1, 2, 8, 64)
D_GRID = ((1, 2), (1, 1), (7, 2))


def _verdict(num, label, ok, detail):
    print(f"acceptance {num} ({label}): {'PASS' if ok else 'FAIL'} [{detail}]")
    assert ok, f"acceptance {num} ({label}): {detail}"


def _level(num, den=1):
    return RationalDistortionLevel(num, den)


# ---------------------------------------------------------------------------
# 1. hard distortion budget, zero violations, first-stage domination
# ---------------------------------------------------------------------------


def test_criterion_1_distortion_contract():
    trials = 10_000
    t0 = time.perf_counter()
    failures = []
    settings = 0
    worst_ratio = Fraction(0)
    for ei, (name, spec) in enumerate(ENVELOPE_SPECS):
        env = builtin_envelope(name)
        mu = envelope_distribution(env)
        for ni, n in enumerate(N_GRID):
            for di, (num, den) in enumerate(D_GRID):
                lvl = _level(num, den)
                d = lvl.as_fraction()
                cfg = CodecConfig(env, spec, lvl, n=n, first_stage="grid")
                rng = np.random.default_rng(_SEED + 97 * ei + 13 * ni + di)
                cost = None
                k = 0
                for _ in range(trials):
                    x = sample_block(mu, n, rng)
                    stream, _, rho = roundtrip(cfg, x)
                    if cost is None:
                        # Per-letter cost of the first-stage reconstruction on
                        # the merged alphabet {1..k+1}; integer valued for both
                        # cost kinds, so the domination check stays exact.
                        k = stream.k
                        r = grid_radius(spec, lvl)
                        width = 2 * r + 1
                        cost = np.zeros(k + 2, dtype=np.int64)
                        for y in range(1, k + 2):
                            p = grid_prototype_of_cell((y - 1) // width, r, k)
                            err = abs(y - p)
                            cost[y] = err if spec.kind == "absolute" else 2 * min(err, 5)
                    ratio = rho / d
                    if ratio > worst_ratio:
                        worst_ratio = ratio
                    merged = np.minimum(x, k + 1)
                    if rho > d or rho * n > int(cost[merged].sum()):
                        failures.append((name, n, str(d), x.tolist()))
                        break
                settings += 1
                if failures:
                    break
            if failures:
                break
        if failures:
            break
    dt = time.perf_counter() - t0
    ok = not failures and settings == 36 and dt < 600
    _verdict(
        1,
        "hard distortion budget",
        ok,
        f"{settings} settings x {trials} blocks, max rho/d {float(worst_ratio):.4f}, "
        f"{len(failures)} violations, {dt:.0f}s",
    )


# ---------------------------------------------------------------------------
# 2. Kraft certification of every constructed prefix code
# ---------------------------------------------------------------------------


def test_criterion_2_kraft_certification():
    certs = []

    # second-stage codes at every threshold the other checks run with
    geo_ks = {1, 2, 4} | {tail_matched_schedule(builtin_envelope("geometric"), 2**e) for e in range(4, 13)}
    for name, ks in (
        ("geometric", sorted(geo_ks)),
        ("polynomial", (2, 4, 8, 16)),
        ("exponential", (2, 4, 8, 16)),
    ):
        env = builtin_envelope(name)
        for k in ks:
            certs.append((f"stage2 {name} k={k}", second_stage_code(env, k).kraft_certificate()))

    # type-class index codes across alphabet sizes and block lengths
    for alpha, n in ((2, 1), (2, 2), (2, 4), (2, 64), (3, 2), (3, 4), (3, 8), (3, 64), (5, 2), (5, 8)):
        certs.append((f"typeindex a={alpha} n={n}", type_index_code(alpha, n).kraft_certificate()))

    # per-class codes: exhaustive over small alphabets and block lengths
    for alpha in (2, 3):
        for n in (1, 2, 3):
            for lvl in (_level(1, 2), _level(1)):
                for counts in enumerate_types(alpha, n).types:
                    _, code = per_type_code(counts, lvl, ABS)
                    certs.append((f"perclass a={alpha} n={n} d={lvl} t={counts}", code.kraft_certificate()))
    for counts in enumerate_types(5, 2).types:
        _, code = per_type_code(counts, _level(1, 2), ABS)
        certs.append((f"perclass a=5 n=2 t={counts}", code.kraft_certificate()))
    for counts in enumerate_types(3, 8).types:
        _, code = per_type_code(counts, _level(1), ABS)
        certs.append((f"perclass a=3 n=8 t={counts}", code.kraft_certificate()))
    for counts in enumerate_types(3, 2).types:
        _, code = per_type_code(counts, _level(1), BND)
        certs.append((f"perclass bounded t={counts}", code.kraft_certificate()))

    bad = [label for label, c in certs if c > 1]
    worst = max(float(c) for _, c in certs)
    _verdict(
        2,
        "Kraft certification",
        not bad,
        f"{len(certs)} codes certified, max sum {worst:.6f}, violations {bad[:3] or 0}",
    )


# ---------------------------------------------------------------------------
# 3. truncation identities and the lower-bound sandwich on small instances
# ---------------------------------------------------------------------------

_WINDOW_PMFS = (
    ((1, 2), (1, 1)),
    ((1, 2), (1, 3)),
    ((2, 3), (2, 1)),
    ((1, 3), (1, 1)),
    ((1, 2, 3), (1, 1, 1)),
    ((1, 2, 3), (1, 2, 3)),
    ((1, 2, 3), (5, 4, 3)),
)


def _pmf_on(window, weights):
    floor = window[0]
    dense = [0] * (window[-1] - floor + 1)
    for sym, w in zip(window, weights):
        dense[sym - floor] = w
    return SourcePmf.from_weights(floor, dense)


def test_criterion_3_truncation_identities():
    cases = []
    for window, weights in _WINDOW_PMFS:
        for n in (1, 2):
            for lvl in (_level(1, 2), _level(1)):
                cases.append((window, weights, n, lvl, 1))
    for window, weights in _WINDOW_PMFS[-3:]:
        for lvl in (_level(1, 4), _level(3, 2)):
            cases.append((window, weights, 1, lvl, 1))
        cases.append((window, weights, 2, _level(1, 2), 2))

    equal_failures = []
    order_failures = []
    sandwich_failures = []
    for window, weights, n, lvl, trunc in cases:
        pm = _pmf_on(window, weights)
        plain = FiniteInstance.from_pmf(pm, window, n, ABS, lvl)
        clipped = FiniteInstance.from_pmf(pm, window, n, ABS, lvl, truncation_level=trunc)
        res_clipped, res_image, equal = truncation_identity_gap(clipped)
        if not equal:
            equal_failures.append((window, weights, n, str(lvl), trunc))
        res_plain = brute_force_operational_rate(plain)
        if res_clipped.rate > res_plain.rate + 1e-12:
            order_failures.append((window, weights, n, str(lvl), trunc))
        for inst, res in ((plain, res_plain), (truncated_image_instance(clipped), res_image)):
            if blahut_arimoto_rate_distortion(inst) > res.rate + 1e-6:
                sandwich_failures.append((inst.window, n, str(lvl)))
    ok = (
        len(cases) >= 20
        and not equal_failures
        and not order_failures
        and not sandwich_failures
    )
    _verdict(
        3,
        "truncation identities",
        ok,
        f"{len(cases)} instances, image-identity fails {len(equal_failures)}, "
        f"rate-order fails {len(order_failures)}, sandwich fails {len(sandwich_failures)}",
    )


# ---------------------------------------------------------------------------
# 4. finite-alphabet first-stage redundancy against the brute-force optimum
# ---------------------------------------------------------------------------


def _simplex_grid():
    pmfs = []
    for a in range(5):
        for b in range(5 - a):
            pmfs.append((Fraction(a, 4), Fraction(b, 4), Fraction(4 - a - b, 4)))
    return pmfs


def test_criterion_4_finite_alphabet_redundancy():
    k = 2
    rows = []
    ok = True
    # Levels chosen so the brute-force oracle is exact for every grid pmf
    # within its 12-block enumeration budget (windows are in-cell covers, so a
    # {1,3} support needs either a letter certificate or a tiny block space).
    for n, lvl in ((2, _level(1, 2)), (3, _level(1)), (4, _level(2))):
        bound = k * math.log2(n + 1) / n + 2 / n
        sup_gap = -math.inf
        length_cache = {}
        for probs in _simplex_grid():
            window = tuple(s for s in (1, 2, 3) if probs[s - 1] > 0)
            inst = FiniteInstance.from_pmf(SourcePmf(1, probs), window, n, ABS, lvl)
            res = brute_force_operational_rate(inst)
            expected_bits = Fraction(0)
            for x in itertools.product((1, 2, 3), repeat=n):
                p = math.prod((probs[s - 1] for s in x), start=Fraction(1))
                if p == 0:
                    continue
                if x not in length_cache:
                    bits, _ = first_stage_encode(k, n, lvl, ABS, x)
                    length_cache[x] = len(bits)
                expected_bits += p * length_cache[x]
            sup_gap = max(sup_gap, float(expected_bits) / n - res.rate)
        rows.append(f"n={n}: sup {sup_gap:.4f} <= {bound:.4f}")
        ok = ok and sup_gap <= bound
    _verdict(4, "finite-alphabet redundancy", ok, "; ".join(rows))


# ---------------------------------------------------------------------------
# 5. information radius of disjoint-support families grows like log2 m
# ---------------------------------------------------------------------------


def test_criterion_5_disjoint_family_radius():
    ones = EnvelopeSpec.tabulated((1,) * 8)
    radii = {}
    for m in (2, 4, 8):
        fam = disjoint_family_builder(ones, m)
        partition = BlockPartition(
            cells=tuple(((s,),) for s in range(1, m + 1)),
            prototypes=tuple((s,) for s in range(1, m + 1)),
        )
        problem = capacity_problem_from_family(fam.members, partition, 1)
        radii[m] = projected_info_radius(problem)
    ok = all(abs(radii[m] - math.log2(m)) <= 1e-3 for m in radii) and (
        radii[2] < radii[4] < radii[8]
    )
    detail = ", ".join(f"m={m}: {radii[m]:.5f} vs {math.log2(m):.5f}" for m in (2, 4, 8))
    _verdict(5, "disjoint-family radius", ok, detail)


# ---------------------------------------------------------------------------
# 6. tail-ratio series against its analytic limits (expected to FAIL:
#    convergence is far slower than any threshold that runs in seconds;
#    the module-level tests pin the actually measured values instead)
# ---------------------------------------------------------------------------


def test_criterion_6_tail_ratio_limits():
    mp.mp.dps = 40
    # limits evaluated independently by direct high-precision summation
    s1 = mp.nsum(lambda i: i**-2, [1, mp.inf])
    s2 = mp.nsum(lambda i: i**-2, [2, mp.inf])
    claimed_poly = float(2 * s1 / s2)
    e0 = mp.nsum(lambda i: 2 * mp.e ** (-(i - 1)), [1, mp.inf])
    e1 = mp.nsum(lambda i: 2 * mp.e ** (-i), [1, mp.inf])
    claimed_exp = float(e0 / (2 * e1 * mp.log(mp.e, 2)))

    measured_poly = tail_ratio_series(builtin_envelope("polynomial"), 10_000)
    measured_exp = tail_ratio_series(builtin_envelope("exponential"), 50)
    dev_poly = abs(measured_poly / claimed_poly - 1)
    dev_exp = abs(measured_exp / claimed_exp - 1)
    ok = dev_poly <= 0.05 and dev_exp <= 0.05
    _verdict(
        6,
        "tail-ratio series limits",
        ok,
        f"polynomial {measured_poly:.6f} vs limit {claimed_poly:.6f} (dev {dev_poly:.1%}), "
        f"exponential {measured_exp:.6f} vs limit {claimed_exp:.6f} (dev {dev_exp:.1%}), "
        f"tolerance 5%",
    )


# ---------------------------------------------------------------------------
# 7. the envelope distribution maximizes projected entropy over the family
# ---------------------------------------------------------------------------


def test_criterion_7_projected_entropy_maximum():
    members_per_envelope = 100
    min_gap = math.inf
    checks = 0
    for name, _ in ENVELOPE_SPECS:
        env = builtin_envelope(name)
        mu_env = envelope_distribution(env)
        k0 = maxent_threshold(env)
        reference = {
            k: projected_entropy(mu_env, TailPartitionIndex(k)) for k in range(k0, k0 + 21)
        }
        rng = np.random.default_rng(_SEED + len(name))
        for _ in range(members_per_envelope):
            member = sample_envelope_member(env, rng)
            for k, ref in reference.items():
                gap = ref - projected_entropy(member, TailPartitionIndex(k))
                min_gap = min(min_gap, gap)
                checks += 1
    ok = min_gap >= -1e-10
    _verdict(
        7,
        "projected-entropy maximum",
        ok,
        f"{checks} comparisons over 3 envelopes x {members_per_envelope} members, "
        f"min gap {min_gap:.3e} >= -1e-10",
    )


# ---------------------------------------------------------------------------
# 8. normalized redundancy stays bounded along the tail-matched schedule
# ---------------------------------------------------------------------------


def test_criterion_8_schedule_trend():
    env = builtin_envelope("geometric")
    mu = envelope_distribution(env)
    lvl = _level(7)
    t0 = time.perf_counter()

    # single-letter reference rate at this level is exactly zero
    window = tuple(range(1, 21))  # head mass 1 - 2^-20
    reference = blahut_arimoto_rate_distortion(
        FiniteInstance.from_pmf(mu, window, 1, ABS, lvl)
    )

    stats = []
    for e in range(4, 13):
        n = 2**e
        k = tail_matched_schedule(env, n)
        cfg = CodecConfig(env, ABS, lvl, n=n, k=k, first_stage="grid", schedule="tail")
        mr = measured_rate(cfg, mu, 64, _SEED)
        redundancy = mr.bits_per_sample - reference
        stats.append(redundancy * n / (k * math.log2(n)))
    upper = stats[-5:]
    ratio = max(upper) / min(upper)
    dt = time.perf_counter() - t0
    ok = (
        reference <= 1e-12
        and stats[-1] <= stats[0]
        and any(b <= a for a, b in zip(stats, stats[1:]))
        and ratio <= 3.0
    )
    series = " ".join(f"{s:.3f}" for s in stats)
    _verdict(
        8,
        "schedule redundancy trend",
        ok,
        f"statistic [{series}], upper-half max/min {ratio:.2f} <= 3, "
        f"reference {reference:.1e}, {dt:.1f}s",
    )


# ---------------------------------------------------------------------------
# 9. second-stage rate stays within the head-mass redundancy budget
# ---------------------------------------------------------------------------


def test_criterion_9_second_stage_redundancy():
    trials = 256
    failures = []
    min_margin = math.inf
    cells = 0
    for name, spec in ENVELOPE_SPECS:
        env = builtin_envelope(name)
        mu_env = envelope_distribution(env)
        members = envelope_subfamily(env, 6, _SEED)
        for n in N_GRID:
            cfg = CodecConfig(env, spec, _level(1), n=n, first_stage="grid")
            for mi, member in enumerate(members):
                mr = measured_rate(cfg, member, trials, _SEED + 31 * n + mi)
                k = mr.k
                merged_entropy = projected_entropy(member, TailPartitionIndex(k))
                lhs = mr.second_stage_bps - merged_entropy
                rhs = (
                    math.log2(1.0 / float(head_mass(mu_env, k)))
                    + 2
                    + 3 * mr.std_error
                )
                min_margin = min(min_margin, rhs - lhs)
                cells += 1
                if lhs > rhs:
                    failures.append((name, n, mi, lhs, rhs))
    _verdict(
        9,
        "second-stage redundancy budget",
        not failures,
        f"{cells} cells (3 envelopes x 6 members x {len(N_GRID)} block lengths, "
        f"{trials} trials each), min slack {min_margin:.4f} bits, "
        f"violations {len(failures)}",
    )
