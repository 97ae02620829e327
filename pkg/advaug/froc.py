"""
Detection evaluation: NMS peaks, candidate/ground-truth matching, the
FROC curve and its CPM summary, scan-level bootstrap intervals.

Hit rule: a candidate hits a relevant finding when its centre lies
strictly inside the finding's radius. Each finding is claimed once, by
the highest-scoring candidate (ties broken by candidate id); further
hits on a claimed finding and hits on irrelevant findings are ignored,
neither TP nor FP.
"""

import io
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import pandas as pd
from scipy import ndimage

from advaug.errors import ConfigError, FormatError, NonFiniteError
from advaug.util import atomic_write_text

CPM_FP_RATES = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)

CANDIDATE_COLUMNS = ["scan_id", "x", "y", "score"]
GROUND_TRUTH_COLUMNS = ["scan_id", "x", "y", "radius", "relevant"]

Outcome = Literal["TP", "FP", "ignored"]


@dataclass(frozen=True)
class Candidate:
    scan_id: str
    x: float
    y: float
    score: float
    id: int = 0  # noqa: A003


@dataclass(frozen=True)
class GroundTruth:
    scan_id: str
    x: float
    y: float
    radius: float
    relevant: bool = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"ground-truth radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class MatchResult:
    candidate: Candidate
    outcome: Outcome
    finding: Optional[int] = None  # index into the ground-truth list


@dataclass(frozen=True)
class MatchReport:
    results: tuple
    relevant_count: int

    def counts(self) -> Counter:
        return Counter(r.outcome for r in self.results)


@dataclass(frozen=True)
class FrocCurve:
    fp_per_scan: tuple
    sensitivity: tuple
    scan_count: int
    relevant_count: int

    def sensitivity_at(self, rate: float) -> float:
        """Step-function value: best sensitivity with fp/scan <= rate."""
        best = 0.0
        for fp, sens in zip(self.fp_per_scan, self.sensitivity):
            if fp <= rate:
                best = max(best, sens)
        return best


@dataclass(frozen=True)
class CpmScore:
    rates: tuple
    sensitivities: tuple
    mean: float


# ----------------------------------------------------------------------
# NMS
# ----------------------------------------------------------------------


def nms(
    heatmap: np.ndarray,
    min_distance: float,
    max_candidates: int,
    scan_id: str = "",
    threshold: Optional[float] = None,
) -> list[Candidate]:
    """
    Greedy peak picking on the 3x3 local maxima of `heatmap`, highest
    first (ties by row-major index); a peak closer than min_distance to
    an accepted one is dropped. Values at or below `threshold` (default:
    the heatmap minimum) never become peaks.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if not np.all(np.isfinite(heatmap)):
        raise NonFiniteError("heatmap contains non-finite values")
    if max_candidates < 0 or min_distance < 0:
        raise ConfigError("min_distance and max_candidates must be >= 0")

    floor = heatmap.min() if threshold is None else threshold
    peaks = (heatmap == ndimage.maximum_filter(heatmap, size=3, mode="nearest")) & (
        heatmap > floor
    )
    flat = np.flatnonzero(peaks)
    order = flat[np.lexsort((flat, -heatmap.reshape(-1)[flat]))]

    accepted: list[tuple[int, int]] = []
    candidates = []
    for index in order:
        if len(candidates) >= max_candidates:
            break
        row, col = divmod(int(index), heatmap.shape[1])
        if any(
            (row - r) ** 2 + (col - c) ** 2 < min_distance**2 for r, c in accepted
        ):
            continue
        accepted.append((row, col))
        candidates.append(
            Candidate(
                scan_id=scan_id,
                x=float(col),
                y=float(row),
                score=float(heatmap[row, col]),
                id=len(candidates),
            )
        )
    return candidates


# ----------------------------------------------------------------------
# matching and FROC
# ----------------------------------------------------------------------


def match(candidates, ground_truths) -> MatchReport:
    candidates = list(candidates)
    ground_truths = list(ground_truths)

    duplicates = [i for i, n in Counter(c.id for c in candidates).items() if n > 1]
    if duplicates:
        raise FormatError(f"duplicate candidate ids: {sorted(duplicates)[:5]}")

    findings = defaultdict(list)
    for index, gt in enumerate(ground_truths):
        findings[gt.scan_id].append(index)

    claimed = set()
    results = []
    for cand in sorted(candidates, key=lambda c: (-c.score, c.id)):
        hits_relevant, hits_irrelevant = [], False
        for index in findings.get(cand.scan_id, ()):
            gt = ground_truths[index]
            distance = np.hypot(cand.x - gt.x, cand.y - gt.y)
            if distance < gt.radius:
                if gt.relevant:
                    hits_relevant.append((distance, index))
                else:
                    hits_irrelevant = True

        open_hits = sorted(hit for hit in hits_relevant if hit[1] not in claimed)
        if open_hits:
            index = open_hits[0][1]
            claimed.add(index)
            results.append(MatchResult(cand, "TP", index))
        elif hits_relevant or hits_irrelevant:
            results.append(MatchResult(cand, "ignored"))
        else:
            results.append(MatchResult(cand, "FP"))

    relevant = sum(1 for gt in ground_truths if gt.relevant)
    return MatchReport(results=tuple(results), relevant_count=relevant)


def froc(report: MatchReport, scan_count: int) -> FrocCurve:
    """Operating points at every distinct score, plus the empty-set origin."""
    if scan_count < 1:
        raise ConfigError(f"scan count must be >= 1, got {scan_count}")
    if report.relevant_count == 0:
        raise ConfigError("no relevant ground-truth findings to evaluate against")

    scored = [r for r in report.results if r.outcome != "ignored"]
    scored.sort(key=lambda r: -r.candidate.score)

    fp_per_scan = [0.0]
    sensitivity = [0.0]
    tp = fp = 0
    for i, result in enumerate(scored):
        if result.outcome == "TP":
            tp += 1
        else:
            fp += 1
        is_last_of_score = (
            i + 1 == len(scored)
            or scored[i + 1].candidate.score != result.candidate.score
        )
        if is_last_of_score:
            fp_per_scan.append(fp / scan_count)
            sensitivity.append(tp / report.relevant_count)

    return FrocCurve(
        fp_per_scan=tuple(fp_per_scan),
        sensitivity=tuple(sensitivity),
        scan_count=scan_count,
        relevant_count=report.relevant_count,
    )


def cpm(curve: FrocCurve, rates=CPM_FP_RATES) -> CpmScore:
    values = tuple(curve.sensitivity_at(rate) for rate in rates)
    mean = sum(values) / len(values)
    return CpmScore(rates=tuple(rates), sensitivities=values, mean=mean)


def _per_scan_results(report: MatchReport, ground_truths):
    results = defaultdict(list)
    for result in report.results:
        results[result.candidate.scan_id].append(result)
    relevant = Counter(gt.scan_id for gt in ground_truths if gt.relevant)
    return results, relevant


def bootstrap_cpm(
    candidates,
    ground_truths,
    scan_ids,
    rng: np.random.Generator,
    resamples: int = 1000,
    rates=CPM_FP_RATES,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile interval of CPM over scans drawn with replacement."""
    scan_ids = list(scan_ids)
    if not scan_ids:
        raise ConfigError("bootstrap needs at least one scan")
    report = match(candidates, ground_truths)
    results, relevant = _per_scan_results(report, ground_truths)

    scores = []
    for _ in range(resamples):
        drawn = rng.integers(0, len(scan_ids), size=len(scan_ids))
        relevant_count = sum(relevant[scan_ids[i]] for i in drawn)
        if relevant_count == 0:
            continue
        pooled = tuple(r for i in drawn for r in results[scan_ids[i]])
        curve = froc(MatchReport(pooled, relevant_count), len(scan_ids))
        scores.append(cpm(curve, rates).mean)

    if not scores:
        return (0.0, 0.0)
    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(scores, [tail, 100.0 - tail])
    return float(low), float(high)


def froc_report(
    candidates,
    ground_truths,
    scan_ids,
    rng: np.random.Generator,
    resamples: int = 1000,
    rates=CPM_FP_RATES,
) -> dict:
    scan_ids = list(scan_ids)
    report = match(candidates, ground_truths)
    curve = froc(report, len(scan_ids))
    score = cpm(curve, rates)
    low, high = bootstrap_cpm(
        candidates, ground_truths, scan_ids, rng, resamples, rates
    )
    counts = report.counts()
    outcomes = ("TP", "FP", "ignored")
    return {
        "scans": len(scan_ids),
        "relevant_findings": report.relevant_count,
        "candidates": {outcome: counts.get(outcome, 0) for outcome in outcomes},
        "curve": [
            {"fp_per_scan": fp, "sensitivity": sens}
            for fp, sens in zip(curve.fp_per_scan, curve.sensitivity)
        ],
        "sensitivities": {
            str(rate): value for rate, value in zip(rates, score.sensitivities)
        },
        "cpm": score.mean,
        "cpm_ci95": [low, high],
        "bootstrap_resamples": resamples,
    }


def stress_summary(values) -> tuple[float, float]:
    """Population mean and standard deviation of confidence readouts."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ConfigError("stress summary of an empty set")
    return float(values.mean()), float(values.std())


# ----------------------------------------------------------------------
# CSV files
# ----------------------------------------------------------------------


def _read_frame(path, columns) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"scan_id": str}, float_precision="round_trip")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return frame


def read_candidates(path) -> list[Candidate]:
    frame = _read_frame(path, CANDIDATE_COLUMNS)
    scores = frame["score"].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(scores) & (scores >= 0) & (scores <= 1)):
        raise FormatError(f"{path}: scores must be finite and within [0, 1]")
    return [
        Candidate(str(row.scan_id), float(row.x), float(row.y), float(row.score), i)
        for i, row in enumerate(frame.itertuples(index=False))
    ]


def read_ground_truths(path) -> list[GroundTruth]:
    frame = _read_frame(path, GROUND_TRUTH_COLUMNS)
    try:
        return [
            GroundTruth(
                str(row.scan_id),
                float(row.x),
                float(row.y),
                float(row.radius),
                bool(int(row.relevant)),
            )
            for row in frame.itertuples(index=False)
        ]
    except ConfigError as exc:
        raise FormatError(f"{path}: {exc}")


def write_candidates(path, candidates):
    frame = pd.DataFrame(
        [(c.scan_id, c.x, c.y, c.score) for c in candidates],
        columns=CANDIDATE_COLUMNS,
    )
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False)
    atomic_write_text(path, buffer.getvalue())


def write_ground_truths(path, ground_truths):
    frame = pd.DataFrame(
        [(g.scan_id, g.x, g.y, g.radius, int(g.relevant)) for g in ground_truths],
        columns=GROUND_TRUTH_COLUMNS,
    )
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False)
    atomic_write_text(path, buffer.getvalue())
