"""Crowd-rating reliability pipeline: test questions, worker filters,
score normalization, and MOS aggregation.

Workers pass through four ordered gates: quiz accuracy, hidden-test
accuracy, correlation against the preliminary MOS of the remaining
crowd, and the line-clicker ratio (most-used answer count over the sum
of the other four). Survivors' scores are rescaled per worker to
[1, 100] before aggregation, compensating for differing personal rating
ranges. The shipped thresholds (0.7 / 0.7 / 0.5 / 2.0) are the study's
reference operating point.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .analysis import plcc
from .catalog import RatingEvent
from .errors import ConstantRaterError

QUIZ_ACCURACY_DEFAULT = 0.7
HIDDEN_ACCURACY_DEFAULT = 0.7
OUTLIER_PLCC_DEFAULT = 0.5
LINECLICK_RATIO_DEFAULT = 2.0
MIN_PLCC_IMAGES = 3


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


@dataclass
class TestQuestion:
    image_id: str
    expert_mos: float
    expert_sd: float
    allowed_answers: frozenset[int]


@dataclass
class FilterThresholds:
    quiz_accuracy: float = QUIZ_ACCURACY_DEFAULT
    hidden_accuracy: float = HIDDEN_ACCURACY_DEFAULT
    outlier_plcc: float = OUTLIER_PLCC_DEFAULT
    lineclick_ratio: float = LINECLICK_RATIO_DEFAULT


@dataclass
class WorkerStats:
    worker_id: str
    quiz_accuracy: float
    hidden_accuracy: float
    plcc_vs_prelim: float | None
    lineclick_ratio: float
    verdict: str  # kept | failed_quiz | failed_hidden | outlier | line_clicker


@dataclass
class NormalizedEvent:
    worker_id: str
    image_id: str
    raw_score: int
    value: float


@dataclass
class MosRecord:
    image_id: str
    mos: float | None
    vote_count: int
    sd: float
    distribution: tuple[int, int, int, int, int]


# ---------------------------------------------------------------------------
# test questions from expert ratings


def make_test_questions(expert_scores: Mapping[str, Sequence[float]]) -> list[TestQuestion]:
    """Allowed answers are the integers within expert MOS +- one sample SD.

    When the span covers more than three integers, the three closest to
    the expert MOS are kept (ties toward the lower integer); the answer
    set is clamped to the 1..5 scale and is never empty.
    """
    questions = []
    for image_id in sorted(expert_scores):
        scores = np.asarray(expert_scores[image_id], dtype=float)
        if len(scores) < 2:
            raise ValueError(f"image {image_id!r}: need at least 2 expert ratings")
        mos = float(scores.mean())
        sd = float(scores.std(ddof=1))
        lo, hi = _round_half_away(mos - sd), _round_half_away(mos + sd)
        allowed = [i for i in range(1, 6) if lo <= i <= hi]
        if len(allowed) > 3:
            allowed = sorted(allowed, key=lambda i: (abs(i - mos), i))[:3]
        questions.append(
            TestQuestion(
                image_id=image_id,
                expert_mos=mos,
                expert_sd=sd,
                allowed_answers=frozenset(allowed),
            )
        )
    return questions


# ---------------------------------------------------------------------------
# worker filtering


def _ordered_worker_events(events: Sequence[RatingEvent]) -> dict[str, list[RatingEvent]]:
    """Per-worker events in protocol order: timestamps when complete, else file order."""
    per_worker: dict[str, list[RatingEvent]] = defaultdict(list)
    for ev in events:
        per_worker[ev.worker_id].append(ev)
    for worker, evs in per_worker.items():
        if all(e.timestamp is not None for e in evs):
            evs.sort(key=lambda e: e.timestamp)  # stable: ties keep file order
    return per_worker


def _split_test_pools(evs: Sequence[RatingEvent]) -> tuple[list[RatingEvent], list[RatingEvent]]:
    """Quiz events precede the worker's first real rating; the rest are hidden."""
    quiz, hidden = [], []
    seen_real = False
    for ev in evs:
        if ev.is_test:
            (hidden if seen_real else quiz).append(ev)
        else:
            seen_real = True
    return quiz, hidden


def _accuracy(pool: Sequence[RatingEvent], allowed_of: Mapping[str, frozenset[int]]) -> float:
    """Fraction answered within the allowed set; an empty pool is vacuously 1."""
    if not pool:
        return 1.0
    correct = 0
    for ev in pool:
        allowed = ev.allowed_answers if ev.allowed_answers else allowed_of.get(ev.image_id)
        if allowed and ev.score in allowed:
            correct += 1
    return correct / len(pool)


def filter_workers(
    events: Sequence[RatingEvent],
    questions: Sequence[TestQuestion] = (),
    thresholds: FilterThresholds | None = None,
) -> tuple[dict[str, WorkerStats], list[RatingEvent]]:
    """Apply the four reliability gates in order.

    Returns per-worker stats (verdict = first failing stage) and the
    surviving non-test events of kept workers, in input order. Workers
    with too little evidence for a stage (no test events, fewer than
    three images in common with the preliminary MOS, or no ratings at
    all) pass that stage.
    """
    thr = thresholds or FilterThresholds()
    allowed_of = {q.image_id: q.allowed_answers for q in questions}
    per_worker = _ordered_worker_events(events)

    stats: dict[str, WorkerStats] = {}
    stage2_survivors: list[str] = []
    quiz_acc: dict[str, float] = {}
    hidden_acc: dict[str, float] = {}
    for worker in sorted(per_worker):
        quiz, hidden = _split_test_pools(per_worker[worker])
        quiz_acc[worker] = _accuracy(quiz, allowed_of)
        hidden_acc[worker] = _accuracy(hidden, allowed_of)
        if quiz_acc[worker] < thr.quiz_accuracy:
            stats[worker] = WorkerStats(worker, quiz_acc[worker], hidden_acc[worker], None, 0.0, "failed_quiz")
        elif hidden_acc[worker] < thr.hidden_accuracy:
            stats[worker] = WorkerStats(worker, quiz_acc[worker], hidden_acc[worker], None, 0.0, "failed_hidden")
        else:
            stage2_survivors.append(worker)

    # preliminary MOS on raw scores from stage-2 survivors' real ratings
    sums: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    for worker in stage2_survivors:
        for ev in per_worker[worker]:
            if not ev.is_test:
                sums[ev.image_id] += ev.score
                counts[ev.image_id] += 1
    prelim = {img: sums[img] / counts[img] for img in sums}

    kept_workers = []
    for worker in stage2_survivors:
        own = [(ev.score, prelim[ev.image_id]) for ev in per_worker[worker] if not ev.is_test]
        correlation = None
        if len(own) >= MIN_PLCC_IMAGES:
            x = [s for s, _ in own]
            y = [p for _, p in own]
            if len(set(x)) > 1 and len(set(y)) > 1:
                correlation = plcc(x, y)
        if correlation is not None and correlation < thr.outlier_plcc:
            stats[worker] = WorkerStats(worker, quiz_acc[worker], hidden_acc[worker], correlation, 0.0, "outlier")
            continue

        score_counts = Counter(ev.score for ev in per_worker[worker] if not ev.is_test)
        if score_counts:
            top = max(score_counts.values())
            rest = sum(score_counts.values()) - top
            ratio = math.inf if rest == 0 else top / rest
        else:
            ratio = 0.0
        if ratio > thr.lineclick_ratio:
            stats[worker] = WorkerStats(worker, quiz_acc[worker], hidden_acc[worker], correlation, ratio, "line_clicker")
            continue
        stats[worker] = WorkerStats(worker, quiz_acc[worker], hidden_acc[worker], correlation, ratio, "kept")
        kept_workers.append(worker)

    kept_set = set(kept_workers)
    surviving = [ev for ev in events if not ev.is_test and ev.worker_id in kept_set]
    return stats, surviving


# ---------------------------------------------------------------------------
# normalization and aggregation


def normalize_scores(events: Sequence[RatingEvent]) -> list[NormalizedEvent]:
    """Rescale each worker's scores to [1, 100] by their personal range."""
    lo: dict[str, int] = {}
    hi: dict[str, int] = {}
    for ev in events:
        lo[ev.worker_id] = min(ev.score, lo.get(ev.worker_id, 5))
        hi[ev.worker_id] = max(ev.score, hi.get(ev.worker_id, 1))
    for worker in lo:
        if lo[worker] == hi[worker]:
            raise ConstantRaterError(worker)
    return [
        NormalizedEvent(
            worker_id=ev.worker_id,
            image_id=ev.image_id,
            raw_score=ev.score,
            value=1.0 + 99.0 * (ev.score - lo[ev.worker_id]) / (hi[ev.worker_id] - lo[ev.worker_id]),
        )
        for ev in events
    ]


def compute_mos(
    normalized: Sequence[NormalizedEvent],
    image_ids: Iterable[str] | None = None,
) -> dict[str, MosRecord]:
    """Per-image MOS, sample SD, and the raw 1..5 vote distribution.

    ``image_ids`` may add images with zero votes (mos absent).
    """
    values: dict[str, list[float]] = defaultdict(list)
    dists: dict[str, list[int]] = defaultdict(lambda: [0] * 5)
    for ev in normalized:
        values[ev.image_id].append(ev.value)
        dists[ev.image_id][ev.raw_score - 1] += 1
    wanted = set(values) | (set(image_ids) if image_ids is not None else set())
    records = {}
    for image_id in sorted(wanted):
        vals = values.get(image_id, [])
        if vals:
            arr = np.asarray(vals)
            mos = float(arr.mean())
            sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        else:
            mos, sd = None, 0.0
        records[image_id] = MosRecord(
            image_id=image_id,
            mos=mos,
            vote_count=len(vals),
            sd=sd,
            distribution=tuple(dists[image_id]),
        )
    return records


def align_to_experts(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """OLS (slope, intercept) mapping crowd MOS onto the expert scale."""
    if len(pairs) < 2:
        raise ValueError("need at least 2 (crowd, expert) pairs")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    dx = x - x.mean()
    sxx = float((dx * dx).sum())
    if sxx == 0.0:
        raise ValueError("crowd MOS values are constant; line is undetermined")
    slope = float((dx * (y - y.mean())).sum() / sxx)
    return slope, float(y.mean() - slope * x.mean())


# ---------------------------------------------------------------------------
# CSV carriers for the CLI


def write_worker_stats(path: str | Path, stats: Mapping[str, WorkerStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "quiz_accuracy", "hidden_accuracy", "plcc_vs_prelim", "lineclick_ratio", "verdict"])
        for worker in sorted(stats):
            s = stats[worker]
            writer.writerow(
                [
                    s.worker_id,
                    f"{s.quiz_accuracy:.6g}",
                    f"{s.hidden_accuracy:.6g}",
                    "" if s.plcc_vs_prelim is None else f"{s.plcc_vs_prelim:.6g}",
                    "inf" if math.isinf(s.lineclick_ratio) else f"{s.lineclick_ratio:.6g}",
                    s.verdict,
                ]
            )


def write_mos_records(path: str | Path, records: Mapping[str, MosRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "mos", "vote_count", "sd", "n1", "n2", "n3", "n4", "n5"])
        for image_id in sorted(records):
            r = records[image_id]
            writer.writerow(
                [
                    r.image_id,
                    "" if r.mos is None else repr(r.mos),
                    r.vote_count,
                    repr(r.sd),
                    *r.distribution,
                ]
            )
