"""Benchmark reports: structured text plus QQ data files and figures.

The text format is line-oriented and machine-parseable so its numbers can
be recomputed independently from the raw CSV:

    algorithm <name> count <n> mean_ms <float> stddev_ms <float>
    pair <a> vs <b> rank_sum_w <float> p_one_sided <float> p_two_sided
        <float> method <name> percent_diff <float> qq_file <file>

Floats are written with 17 significant digits, which round-trips every
IEEE double exactly.  QQ data lands in two-column whitespace-separated
text files next to the report; optional histogram and QQ figures render
through the non-interactive matplotlib backend.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .bench import (
    BenchError,
    group_by_algorithm,
    percent_diff,
    qq_data,
    summarize,
    wilcoxon_rank_sum,
)


def _fmt(value: float) -> str:
    return f"{value:.17g}"


@dataclass(frozen=True)
class AlgorithmStats:
    algorithm: str
    count: int
    mean_ms: float
    stddev_ms: float
    durations_ns: tuple[int, ...]  # retained for figure rendering


@dataclass(frozen=True)
class PairStats:
    alg_a: str  # the algorithm under evaluation
    alg_b: str  # the baseline
    rank_sum_w: float
    p_one_sided: float
    p_two_sided: float
    method: str
    percent_diff: float
    qq_pairs: tuple[tuple[float, float], ...]

    @property
    def qq_filename(self) -> str:
        return f"qq-{self.alg_a}-vs-{self.alg_b}.txt"


@dataclass(frozen=True)
class BenchReport:
    per_algorithm: tuple[AlgorithmStats, ...]
    pairs: tuple[PairStats, ...]


def build_report(samples, algorithm_order=None) -> BenchReport:
    """Compute every report field from raw samples; listed-first algorithms
    are treated as the one under evaluation in each pairing."""
    groups = group_by_algorithm(samples)
    order = list(algorithm_order) if algorithm_order else list(groups)
    missing = [name for name in order if name not in groups]
    if missing:
        raise BenchError(f"no samples for algorithm(s) {missing}")
    per_algorithm = []
    for name in order:
        durations = groups[name]
        mean_ms, stddev_ms = summarize(durations)
        per_algorithm.append(
            AlgorithmStats(name, len(durations), mean_ms, stddev_ms, tuple(durations))
        )
    pairs = []
    for i in range(len(order)):
        for j in range(i + 1, len(order)):
            a, b = per_algorithm[i], per_algorithm[j]
            ms_a = [d / 1e6 for d in a.durations_ns]
            ms_b = [d / 1e6 for d in b.durations_ns]
            wilcoxon = wilcoxon_rank_sum(ms_a, ms_b)
            pairs.append(
                PairStats(
                    alg_a=a.algorithm,
                    alg_b=b.algorithm,
                    rank_sum_w=wilcoxon.rank_sum_w,
                    p_one_sided=wilcoxon.p_one_sided,
                    p_two_sided=wilcoxon.p_two_sided,
                    method=wilcoxon.method,
                    percent_diff=percent_diff(a.mean_ms, b.mean_ms),
                    qq_pairs=tuple(qq_data(ms_a, ms_b)),
                )
            )
    return BenchReport(tuple(per_algorithm), tuple(pairs))


def render_report(report: BenchReport) -> str:
    lines = ["handshake timing report", ""]
    for stats in report.per_algorithm:
        lines.append(
            f"algorithm {stats.algorithm} count {stats.count} "
            f"mean_ms {_fmt(stats.mean_ms)} stddev_ms {_fmt(stats.stddev_ms)}"
        )
    for pair in report.pairs:
        lines.append(
            f"pair {pair.alg_a} vs {pair.alg_b} "
            f"rank_sum_w {_fmt(pair.rank_sum_w)} "
            f"p_one_sided {_fmt(pair.p_one_sided)} "
            f"p_two_sided {_fmt(pair.p_two_sided)} "
            f"method {pair.method} "
            f"percent_diff {_fmt(pair.percent_diff)} "
            f"qq_file {pair.qq_filename}"
        )
    return "\n".join(lines) + "\n"


def export_report(report: BenchReport, path, figures: bool = False) -> list[str]:
    """Write the report text, one QQ data file per pair, and (optionally)
    PNG figures, all in the report's directory.  Returns written paths."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    written = []
    for pair in report.pairs:
        qq_path = os.path.join(directory, pair.qq_filename)
        with open(qq_path, "w", encoding="utf-8") as fh:
            for qx, qy in pair.qq_pairs:
                fh.write(f"{_fmt(qx)} {_fmt(qy)}\n")
        written.append(qq_path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_report(report))
    written.append(path)
    if figures:
        written.extend(render_figures(report, path))
    return written


def render_figures(report: BenchReport, report_path) -> list[str]:
    """Histogram per algorithm and a QQ scatter per pair, rendered offscreen."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report_path = os.fspath(report_path)
    stem, _ = os.path.splitext(report_path)
    written = []

    figure, axis = plt.subplots(figsize=(7, 4.5))
    for stats in report.per_algorithm:
        axis.hist(
            [d / 1e6 for d in stats.durations_ns],
            bins=40,
            alpha=0.6,
            label=stats.algorithm,
        )
    axis.set_xlabel("handshake duration (ms)")
    axis.set_ylabel("count")
    axis.legend()
    hist_path = f"{stem}-hist.png"
    figure.savefig(hist_path, dpi=110)
    plt.close(figure)
    written.append(hist_path)

    for pair in report.pairs:
        figure, axis = plt.subplots(figsize=(5, 5))
        xs = [p[0] for p in pair.qq_pairs]
        ys = [p[1] for p in pair.qq_pairs]
        axis.scatter(xs, ys, s=8)
        bounds = [min(xs + ys), max(xs + ys)]
        axis.plot(bounds, bounds, linewidth=1)
        axis.set_xlabel(f"{pair.alg_a} quantiles (ms)")
        axis.set_ylabel(f"{pair.alg_b} quantiles (ms)")
        qq_fig_path = f"{stem}-qq-{pair.alg_a}-vs-{pair.alg_b}.png"
        figure.savefig(qq_fig_path, dpi=110)
        plt.close(figure)
        written.append(qq_fig_path)
    return written


def parse_report(path) -> dict:
    """Read a report back into plain dicts (used to cross-check a report
    against its CSV)."""
    algorithms: dict[str, dict] = {}
    pairs: dict[tuple[str, str], dict] = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            tokens = raw.split()
            if not tokens:
                continue
            if tokens[0] == "algorithm":
                if len(tokens) != 8:
                    raise BenchError(f"malformed algorithm line: {raw!r}")
                algorithms[tokens[1]] = {
                    "count": int(tokens[3]),
                    "mean_ms": float(tokens[5]),
                    "stddev_ms": float(tokens[7]),
                }
            elif tokens[0] == "pair":
                if len(tokens) != 16 or tokens[2] != "vs":
                    raise BenchError(f"malformed pair line: {raw!r}")
                pairs[(tokens[1], tokens[3])] = {
                    "rank_sum_w": float(tokens[5]),
                    "p_one_sided": float(tokens[7]),
                    "p_two_sided": float(tokens[9]),
                    "method": tokens[11],
                    "percent_diff": float(tokens[13]),
                    "qq_file": tokens[15],
                }
    return {"algorithms": algorithms, "pairs": pairs}
