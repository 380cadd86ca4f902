"""Timing statistics against independent oracles, CSV persistence, and a
small live benchmark run."""

import itertools
import math
import random
import statistics

import pytest

from qsh.bench import (
    CSV_HEADER,
    EXACT_LIMIT,
    BenchConfig,
    BenchError,
    BenchSample,
    WilcoxonResult,
    _approx_tails,
    _exact_tails,
    _rank_setup,
    export_csv,
    group_by_algorithm,
    load_csv,
    mode_for_algorithm,
    percent_diff,
    qq_data,
    run_benchmark,
    summarize,
    wilcoxon_rank_sum,
)
from qsh.certs import ValidationPolicy
from qsh.errors import TransportError
from qsh.handshake import Credential, Mode
from qsh.primitives import SeededRng

from fixtures_common import (
    PASSWORD,
    USER_ID,
    get_identity,
    get_live_chain,
    loopback_server,
    make_config,
)


# ---------------------------------------------------------------------------
# rank-sum oracle helpers

def _oracle_rank(combined_sorted, value):
    positions = [i + 1 for i, v in enumerate(combined_sorted) if v == value]
    return sum(positions) / len(positions)


def _oracle_tails(x, y):
    """Tail probabilities by explicit enumeration of every rank subset."""
    combined = sorted(list(x) + list(y))
    doubled = [round(2 * _oracle_rank(combined, v)) for v in combined]
    w_doubled = round(2 * sum(_oracle_rank(combined, v) for v in x))
    sums = [sum(c) for c in itertools.combinations(doubled, len(x))]
    lower = sum(1 for s in sums if s <= w_doubled) / len(sums)
    upper = sum(1 for s in sums if s >= w_doubled) / len(sums)
    return w_doubled / 2, lower, upper


def test_hand_checked_smallest_case():
    # x takes ranks 1 and 2 of four: W = 3, the lone minimal assignment
    # among C(4, 2) = 6, so the lower tail is exactly 1/6
    result = wilcoxon_rank_sum([1.0, 2.0], [3.0, 4.0])
    assert result.rank_sum_w == 3.0
    assert result.p_one_sided == pytest.approx(1 / 6, abs=1e-15)
    assert result.p_two_sided == pytest.approx(1 / 3, abs=1e-15)
    assert result.method == "exact"
    assert result.sided == "two"
    assert result.p_value == result.p_two_sided

    one = wilcoxon_rank_sum([1.0, 2.0], [3.0, 4.0], sided="one")
    assert one.p_value == one.p_one_sided == pytest.approx(1 / 6, abs=1e-15)


def test_fully_tied_samples_are_uninformative():
    exact = wilcoxon_rank_sum([5.0] * 3, [5.0] * 3)
    assert exact.method == "exact"
    assert exact.p_one_sided == 1.0
    assert exact.p_two_sided == 1.0

    approx = wilcoxon_rank_sum([7.0] * 50, [7.0] * 50)
    assert approx.method == "normal-approx"
    assert approx.p_one_sided == 1.0 and approx.p_two_sided == 1.0


def test_exact_test_matches_enumeration_all_small_sizes():
    """Every sample-size pair up to the exact limit of 7x7, with and without
    ties, against the brute-force subset enumeration."""
    rnd = random.Random(0xBE7C)
    for n in range(1, 8):
        for m in range(1, 8):
            for trial in range(4):
                if trial % 2 == 0:
                    x = [rnd.randint(0, 5) for _ in range(n)]  # heavy ties
                    y = [rnd.randint(0, 5) for _ in range(m)]
                else:
                    x = [rnd.random() for _ in range(n)]
                    y = [rnd.random() for _ in range(m)]
                w_oracle, lower, upper = _oracle_tails(x, y)
                result = wilcoxon_rank_sum(x, y)
                assert result.method == "exact"
                assert result.rank_sum_w == pytest.approx(w_oracle, abs=1e-12)
                assert result.p_one_sided == pytest.approx(lower, abs=1e-12)
                expected_two = min(1.0, 2 * min(lower, upper))
                assert result.p_two_sided == pytest.approx(expected_two, abs=1e-12)


def test_normal_approximation_tracks_exact_at_boundary():
    """At the largest exact size the approximation with continuity and tie
    corrections should sit within 0.01 of the enumerated tails."""
    rnd = random.Random(0x0A55)
    worst = 0.0
    for trial in range(100):
        if trial % 3 == 0:
            x = [rnd.randint(0, 20) for _ in range(EXACT_LIMIT)]
            y = [rnd.randint(0, 20) for _ in range(EXACT_LIMIT)]
        else:
            x = [rnd.gauss(0, 1) for _ in range(EXACT_LIMIT)]
            y = [rnd.gauss(0.5, 1) for _ in range(EXACT_LIMIT)]
        w, ranks = _rank_setup(x, y)
        exact_lower, exact_upper = _exact_tails(ranks, len(x), w)
        approx_lower, approx_upper = _approx_tails(ranks, len(x), len(y), w)
        worst = max(worst, abs(exact_lower - approx_lower), abs(exact_upper - approx_upper))
    assert worst < 0.01


def test_method_switches_at_exact_limit():
    x = list(range(EXACT_LIMIT))
    y = list(range(EXACT_LIMIT))
    assert wilcoxon_rank_sum(x, y).method == "exact"
    assert wilcoxon_rank_sum(x + [99], y).method == "normal-approx"
    assert wilcoxon_rank_sum(x, y + [99]).method == "normal-approx"


def test_null_calibration():
    """Under the null the two-sided test at alpha = 0.05 must reject at
    roughly the nominal rate."""
    rnd = random.Random(0xCA1B)
    rejections = 0
    replicates = 500
    for _ in range(replicates):
        x = [rnd.gauss(0, 1) for _ in range(50)]
        y = [rnd.gauss(0, 1) for _ in range(50)]
        if wilcoxon_rank_sum(x, y).p_two_sided < 0.05:
            rejections += 1
    assert 0.025 <= rejections / replicates <= 0.075


def test_power_against_shifted_distribution():
    rnd = random.Random(0xF0F0)
    for _ in range(5):
        x = [rnd.gauss(0, 1) for _ in range(60)]
        y = [rnd.gauss(2, 1) for _ in range(60)]
        result = wilcoxon_rank_sum(x, y, sided="one")
        assert result.p_one_sided < 1e-3  # x is clearly smaller


def test_wilcoxon_input_validation():
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([], [1.0])
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([1.0], [])
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([1.0], [2.0], sided="both")
    with pytest.raises(ValueError):
        WilcoxonResult(1.0, -0.1, 0.5, "exact", "two")
    with pytest.raises(ValueError):
        WilcoxonResult(1.0, 0.5, 1.5, "exact", "two")


def test_summarize_against_two_pass_oracle():
    rnd = random.Random(0x5A5A)
    for _ in range(50):
        values = [rnd.randint(1, 10**9) for _ in range(rnd.randint(2, 40))]
        mean_ms, stddev_ms = summarize(values)
        scaled = [v / 1e6 for v in values]
        mean_oracle = sum(scaled) / len(scaled)
        var_oracle = sum((v - mean_oracle) ** 2 for v in scaled) / (len(scaled) - 1)
        assert mean_ms == pytest.approx(mean_oracle, rel=1e-12)
        assert stddev_ms == pytest.approx(math.sqrt(var_oracle), rel=1e-9)

    assert summarize([1_000_000, 3_000_000]) == pytest.approx((2.0, math.sqrt(2)))
    with pytest.raises(ValueError):
        summarize([1_000_000])


def test_percent_diff_sign_and_magnitude():
    # a 162.514 ms mean against a 163.552 ms baseline is a 0.63% improvement
    assert percent_diff(162.514, 163.552) == pytest.approx(0.63466, abs=1e-4)
    assert percent_diff(50.0, 100.0) == 50.0
    assert percent_diff(200.0, 100.0) == -100.0
    assert percent_diff(100.0, 100.0) == 0.0
    with pytest.raises(ValueError):
        percent_diff(1.0, 0.0)
    with pytest.raises(ValueError):
        percent_diff(1.0, -2.0)


def test_qq_data_levels_and_interpolation():
    x = [0.0, 10.0]
    y = [0.0, 100.0]
    pairs = qq_data(x, y)
    assert len(pairs) == 2  # K = min(2, 2), levels 1/3 and 2/3
    assert pairs[0] == (pytest.approx(10 / 3), pytest.approx(100 / 3))
    assert pairs[1] == (pytest.approx(20 / 3), pytest.approx(200 / 3))

    # unequal sizes: K = min and both margins are interpolated at k/(K+1)
    x = sorted(random.Random(1).random() for _ in range(9))
    y = sorted(random.Random(2).random() for _ in range(4))
    pairs = qq_data(y, x)
    assert len(pairs) == 4
    for k, (qy, qx) in enumerate(pairs, start=1):
        level = k / 5
        pos = level * (len(x) - 1)
        low = math.floor(pos)
        expected = x[low] + (x[min(low + 1, len(x) - 1)] - x[low]) * (pos - low)
        assert qx == pytest.approx(expected, abs=1e-12)
    assert [p[0] for p in pairs] == sorted(p[0] for p in pairs)

    with pytest.raises(ValueError):
        qq_data([], [1.0])


def test_bench_sample_validation():
    sample = BenchSample("lwe-768", 0, 12345)
    assert sample.duration_ns == 12345
    with pytest.raises(ValueError):
        BenchSample("lwe-768", 0, 0)
    with pytest.raises(ValueError):
        BenchSample("lwe-768", 0, -5)
    with pytest.raises(ValueError):
        BenchSample("lwe-768", -1, 10)


def test_csv_roundtrip(tmp_path):
    rnd = random.Random(0xC5F)
    samples = [
        BenchSample(rnd.choice(("dh-2048", "lwe-768")), i, rnd.randint(1, 10**10))
        for i in range(50)
    ]
    path = tmp_path / "timings.csv"
    export_csv(samples, path)

    raw = path.read_bytes()
    assert raw.startswith(b"algorithm,iteration,duration_ns\n")
    assert b"\r" not in raw
    assert raw.endswith(b"\n")

    assert load_csv(path) == samples

    grouped = group_by_algorithm(samples)
    assert set(grouped) == {"dh-2048", "lwe-768"}
    assert sum(len(v) for v in grouped.values()) == 50
    first_algorithm = samples[0].algorithm
    assert list(grouped)[0] == first_algorithm


@pytest.mark.parametrize(
    "content",
    [
        "algorithm,iteration\n",
        "wrong,header,here\n",
        "",
        "algorithm,iteration,duration_ns\nlwe-768,0\n",
        "algorithm,iteration,duration_ns\nlwe-768,0,abc\n",
        "algorithm,iteration,duration_ns\nlwe-768,0,-4\n",
        "algorithm,iteration,duration_ns\nlwe-768,x,100\n",
    ],
)
def test_csv_load_errors(tmp_path, content):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(BenchError):
        load_csv(path)


def test_bench_config_validation():
    with pytest.raises(BenchError):
        BenchConfig("h", 1, ("lwe-768",), iterations=0)
    with pytest.raises(BenchError):
        BenchConfig("h", 1, ("lwe-768",), iterations=1, warmup=-1)
    with pytest.raises(BenchError):
        BenchConfig("h", 1, (), iterations=1)
    with pytest.raises(BenchError):
        run_benchmark(BenchConfig("h", 1, ("lwe-768",), iterations=1, fresh_process=True))


def test_mode_for_algorithm():
    assert mode_for_algorithm("dh-2048") is Mode.DH
    for name in ("lwe-512", "lwe-768", "lwe-1024"):
        assert mode_for_algorithm(name) is Mode.KEM


def _bench_config(port, **overrides):
    live_root, _ = get_live_chain()
    base = dict(
        host="127.0.0.1",
        port=port,
        algorithms=("lwe-512",),
        iterations=3,
        warmup=1,
        trust_root=live_root,
        policy=ValidationPolicy.HYBRID_BOTH,
        credential=Credential(USER_ID, PASSWORD),
        rng=SeededRng(b"bench-client"),
        timeout=10.0,
    )
    base.update(overrides)
    return BenchConfig(**base)


def _live_config(identity):
    _, live_chain = get_live_chain()
    return make_config(identity, chain=live_chain)


def test_run_benchmark_live_loopback():
    identity = get_identity()
    with loopback_server(_live_config(identity)) as server:
        samples = run_benchmark(
            _bench_config(server.port, algorithms=("lwe-512", "dh-2048"))
        )
    # warmup handshakes are run but never recorded
    assert [s.algorithm for s in samples] == ["lwe-512"] * 3 + ["dh-2048"] * 3
    assert [s.iteration for s in samples] == [0, 1, 2, 0, 1, 2]
    assert all(s.duration_ns > 0 for s in samples)


def test_run_benchmark_credential_failure_names_warmup():
    identity = get_identity()
    with loopback_server(_live_config(identity)) as server:
        with pytest.raises(BenchError) as exc_info:
            run_benchmark(
                _bench_config(server.port, credential=Credential(USER_ID, "bad"))
            )
    assert "warmup failed" in str(exc_info.value)


def test_run_benchmark_transport_errors_propagate():
    cfg = _bench_config(9, timeout=2.0)  # discard port: nothing listens
    with pytest.raises(TransportError):
        run_benchmark(cfg)
