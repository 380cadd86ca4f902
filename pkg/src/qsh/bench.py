"""Repeated-handshake timing and the statistics that compare algorithms.

The runner drives full connect-authenticate cycles against a live server,
strictly sequentially, with untimed warmup iterations first; each timed
iteration contributes one wall-clock nanosecond sample.  Statistics are
pure functions over those samples:

* ``summarize``        -- mean and sample (n-1) standard deviation, in ms
* ``wilcoxon_rank_sum``-- two-sample rank-sum test, midranks for ties;
  exact tail enumeration (dynamic programming over rank multisets) when
  both samples have <= 12 observations, else the normal approximation with
  continuity correction and the standard tie correction in the variance
* ``percent_diff``     -- signed percent change of the new mean against
  the baseline mean
* ``qq_data``          -- paired quantiles at levels k/(K+1) for QQ plots

CSV files use the header ``algorithm,iteration,duration_ns`` with LF line
endings and round-trip losslessly.
"""

from __future__ import annotations

import csv
import math
import statistics
import subprocess
import sys
import time
from dataclasses import dataclass

from .certs import Certificate, ValidationPolicy
from .channels import connect_tcp
from .errors import QshError, TransportError
from .handshake import ClientSession, Credential, Mode, default_sig_prefs, make_offer
from .kem import get_kem
from .primitives import Rng, SystemRng
from .server import client_authenticate

CSV_HEADER = ("algorithm", "iteration", "duration_ns")
EXACT_LIMIT = 12  # exact test when both sample sizes are at most this


class BenchError(QshError):
    pass


@dataclass(frozen=True)
class BenchSample:
    algorithm: str
    iteration: int
    duration_ns: int

    def __post_init__(self) -> None:
        if self.duration_ns <= 0:
            raise ValueError("duration must be positive")
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")


def summarize(durations_ns) -> tuple[float, float]:
    """Mean and sample standard deviation in milliseconds."""
    values = [d / 1e6 for d in durations_ns]
    if len(values) < 2:
        raise ValueError("need at least 2 samples for a standard deviation")
    return statistics.fmean(values), statistics.stdev(values)


def percent_diff(mean_a: float, mean_b: float) -> float:
    """Signed percent change of ``mean_a`` (new) against ``mean_b`` (baseline);
    positive when the new mean is lower."""
    if mean_b <= 0:
        raise ValueError("baseline mean must be positive")
    return 100.0 * (mean_b - mean_a) / mean_b


@dataclass(frozen=True)
class WilcoxonResult:
    rank_sum_w: float
    p_one_sided: float
    p_two_sided: float
    method: str  # "exact" | "normal-approx"
    sided: str  # which sidedness was requested

    def __post_init__(self) -> None:
        for p in (self.p_one_sided, self.p_two_sided):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p-value {p} outside [0, 1]")

    @property
    def p_value(self) -> float:
        return self.p_one_sided if self.sided == "one" else self.p_two_sided


def _midranks(combined) -> list[float]:
    """Ranks 1..N for a sorted sequence, tied runs averaged."""
    ranks = [0.0] * len(combined)
    i = 0
    while i < len(combined):
        j = i
        while j < len(combined) and combined[j] == combined[i]:
            j += 1
        mid = (i + j + 1) / 2  # average of 1-based ranks i+1 .. j
        for k in range(i, j):
            ranks[k] = mid
        i = j
    return ranks


def _rank_setup(x, y) -> tuple[float, list[float]]:
    combined = sorted(list(x) + list(y))
    ranks = _midranks(combined)
    by_value: dict = {}
    for value, rank in zip(combined, ranks):
        by_value[value] = rank
    w = sum(by_value[v] for v in x)
    return w, ranks


def _exact_tails(ranks: list[float], n: int, w_obs: float) -> tuple[float, float]:
    """P(W <= w_obs) and P(W >= w_obs) over all C(N, n) rank assignments,
    counted by subset-sum dynamic programming on doubled ranks."""
    doubled = [round(2 * r) for r in ranks]
    total_sum = sum(doubled)
    # ways[k][s]: subsets of size k with doubled-rank sum s
    ways = [[0] * (total_sum + 1) for _ in range(n + 1)]
    ways[0][0] = 1
    for d in doubled:
        for k in range(min(n, len(doubled)), 0, -1):
            row, prev = ways[k], ways[k - 1]
            for s in range(total_sum, d - 1, -1):
                if prev[s - d]:
                    row[s] += prev[s - d]
    total = math.comb(len(doubled), n)
    target = round(2 * w_obs)
    lower = sum(ways[n][: target + 1])
    upper = sum(ways[n][target:])
    return lower / total, upper / total


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2))


def _approx_tails(ranks: list[float], n: int, m: int, w_obs: float) -> tuple[float, float]:
    big_n = n + m
    mu = n * (big_n + 1) / 2
    tie_term = 0.0
    i = 0
    while i < len(ranks):
        j = i
        while j < len(ranks) and ranks[j] == ranks[i]:
            j += 1
        t = j - i
        tie_term += t**3 - t
        i = j
    var = n * m / 12 * ((big_n + 1) - tie_term / (big_n * (big_n - 1)))
    if var <= 0:
        return 1.0, 1.0  # every observation tied
    sigma = math.sqrt(var)
    p_lower = _phi((w_obs - mu + 0.5) / sigma)
    p_upper = 1.0 - _phi((w_obs - mu - 0.5) / sigma)
    return min(p_lower, 1.0), min(p_upper, 1.0)


def wilcoxon_rank_sum(x, y, sided: str = "two") -> WilcoxonResult:
    """Rank-sum test of ``x`` against ``y``; the one-sided alternative is
    that ``x`` is stochastically smaller (small rank sum)."""
    x, y = list(x), list(y)
    if not x or not y:
        raise ValueError("both samples must be non-empty")
    if sided not in ("one", "two"):
        raise ValueError("sided must be 'one' or 'two'")
    w, ranks = _rank_setup(x, y)
    if len(x) <= EXACT_LIMIT and len(y) <= EXACT_LIMIT:
        p_lower, p_upper = _exact_tails(ranks, len(x), w)
        method = "exact"
    else:
        p_lower, p_upper = _approx_tails(ranks, len(x), len(y), w)
        method = "normal-approx"
    return WilcoxonResult(
        rank_sum_w=w,
        p_one_sided=p_lower,
        p_two_sided=min(1.0, 2 * min(p_lower, p_upper)),
        method=method,
        sided=sided,
    )


def _quantile(sorted_values: list[float], level: float) -> float:
    position = level * (len(sorted_values) - 1)
    low = math.floor(position)
    high = min(low + 1, len(sorted_values) - 1)
    fraction = position - low
    return sorted_values[low] + (sorted_values[high] - sorted_values[low]) * fraction


def qq_data(x, y) -> list[tuple[float, float]]:
    """Paired quantiles at k/(K+1), K = min(len(x), len(y))."""
    if not x or not y:
        raise ValueError("both samples must be non-empty")
    sx, sy = sorted(x), sorted(y)
    count = min(len(sx), len(sy))
    pairs = []
    for k in range(1, count + 1):
        level = k / (count + 1)
        pairs.append((_quantile(sx, level), _quantile(sy, level)))
    return pairs


# ---------------------------------------------------------------------------
# CSV

def export_csv(samples, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for sample in samples:
            writer.writerow([sample.algorithm, sample.iteration, sample.duration_ns])


def load_csv(path) -> list[BenchSample]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_HEADER):
            raise BenchError(f"{path}: bad CSV header {header}")
        samples = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise BenchError(f"{path}: row {row_no}: expected 3 columns")
            try:
                samples.append(BenchSample(row[0], int(row[1]), int(row[2])))
            except ValueError as exc:
                raise BenchError(f"{path}: row {row_no}: {exc}") from None
        return samples


def group_by_algorithm(samples) -> dict[str, list[int]]:
    """Durations per algorithm, preserving first-seen order."""
    groups: dict[str, list[int]] = {}
    for sample in samples:
        groups.setdefault(sample.algorithm, []).append(sample.duration_ns)
    return groups


# ---------------------------------------------------------------------------
# Runner

@dataclass
class BenchConfig:
    host: str
    port: int
    algorithms: tuple[str, ...]
    iterations: int
    warmup: int = 10
    trust_root: Certificate | None = None
    policy: ValidationPolicy = ValidationPolicy.CLASSICAL_ONLY
    credential: Credential | None = None
    sig_prefs: tuple[str, ...] = ()
    require_signed: bool = True
    rng: Rng | None = None
    timeout: float = 30.0
    fresh_process: bool = False
    connect_argv: tuple[str, ...] = ()  # fresh-process base argv; --kem/--mode appended

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise BenchError("iterations must be >= 1")
        if self.warmup < 0:
            raise BenchError("warmup must be >= 0")
        if not self.algorithms:
            raise BenchError("at least one algorithm required")


def mode_for_algorithm(name: str) -> Mode:
    """Exchange-capable algorithms run the two-sided flow; the rest are
    encapsulated."""
    return Mode.DH if getattr(get_kem(name), "supports_exchange", False) else Mode.KEM


def _timed_handshake(cfg: BenchConfig, algorithm: str, mode: Mode) -> int:
    rng = cfg.rng or SystemRng()
    start = time.perf_counter_ns()
    channel = connect_tcp(cfg.host, cfg.port, timeout=cfg.timeout)
    try:
        session = ClientSession(
            offer=make_offer((algorithm,), cfg.sig_prefs or default_sig_prefs(), {mode}, rng),
            mode=mode,
            rng=rng,
            trust_root=cfg.trust_root,
            policy=cfg.policy,
            require_signed=cfg.require_signed,
        )
        result = client_authenticate(channel, session, cfg.credential, timeout=cfg.timeout)
    finally:
        channel.close()
    elapsed = time.perf_counter_ns() - start
    if not result.success:
        raise BenchError("server rejected the benchmark credentials")
    return elapsed


def _timed_subprocess(cfg: BenchConfig, algorithm: str, mode: Mode) -> int:
    argv = [
        sys.executable,
        "-m",
        "qsh",
        *cfg.connect_argv,
        "--kem",
        algorithm,
        "--mode",
        mode.value,
    ]
    start = time.perf_counter_ns()
    proc = subprocess.run(argv, capture_output=True)
    elapsed = time.perf_counter_ns() - start
    if proc.returncode != 0:
        raise BenchError(
            f"fresh-process handshake exited {proc.returncode}: "
            f"{proc.stderr.decode(errors='replace').strip()}"
        )
    return elapsed


def run_benchmark(cfg: BenchConfig) -> list[BenchSample]:
    """Sequential timed handshakes: per algorithm, ``warmup`` untimed then
    ``iterations`` timed.  Any failure aborts the whole run."""
    if cfg.fresh_process and not cfg.connect_argv:
        raise BenchError("fresh-process mode needs the connect argv")
    samples: list[BenchSample] = []
    for algorithm in cfg.algorithms:
        mode = mode_for_algorithm(algorithm)
        for count in range(cfg.warmup + cfg.iterations):
            iteration = count - cfg.warmup
            try:
                if cfg.fresh_process:
                    elapsed = _timed_subprocess(cfg, algorithm, mode)
                else:
                    elapsed = _timed_handshake(cfg, algorithm, mode)
            except TransportError:
                raise
            except QshError as exc:
                label = "warmup" if iteration < 0 else f"iteration {iteration}"
                raise BenchError(f"{algorithm} {label} failed: {exc}") from exc
            if iteration >= 0:
                samples.append(BenchSample(algorithm, iteration, elapsed))
    return samples
