"""Correlation statistics and bootstrap reliability analyses.

Events are plain ``(worker_id, image_id, value)`` triples so the same
machinery runs on raw 1..5 scores, rescaled [1,100] scores, or synthetic
fixtures. All randomized operations draw per-repeat child seeds from one
root seed, so results are reproducible and independent of any internal
parallel schedule.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

Event = tuple[str, str, float]


# ---------------------------------------------------------------------------
# correlations


def average_ranks(x) -> np.ndarray:
    """Ranks 1..n with ties replaced by the mean of their rank block."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be one-dimensional and equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    den = math.sqrt(float((dx * dx).sum()) * float((dy * dy).sum()))
    if den == 0.0:
        raise ValueError("constant input")
    return float((dx * dy).sum() / den)


def srocc(x, y) -> float:
    """Spearman rank-order correlation: Pearson on average-ranked data."""
    return plcc(average_ranks(x), average_ranks(y))


def rmse(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("inputs must have equal length")
    d = x - y
    return float(np.sqrt((d * d).mean()))


# ---------------------------------------------------------------------------
# event plumbing


def _by_image(events) -> dict[str, list[float]]:
    out: dict[str, list[float]] = defaultdict(list)
    for worker, image, value in events:
        out[image].append(float(value))
    return out


def _by_worker(events) -> dict[str, list[tuple[str, float]]]:
    out: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for worker, image, value in events:
        out[worker].append((image, float(value)))
    return out


def _group_mos(worker_events: dict[str, list[tuple[str, float]]], group) -> dict[str, tuple[float, int]]:
    """Per-image (mean, vote count) over the given workers."""
    sums: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    for w in group:
        for image, value in worker_events.get(w, ()):
            sums[image] += value
            counts[image] += 1
    return {img: (sums[img] / counts[img], counts[img]) for img in sums}


def _default_sizes(max_size: int) -> list[int]:
    sizes = []
    s = 1
    while s < max_size:
        sizes.append(s)
        s *= 2
    sizes.append(max_size)
    return sizes


# ---------------------------------------------------------------------------
# bootstrap reliability


@dataclass
class RmsePoint:
    votes: int
    mean_rmse: float
    ci_low: float
    ci_high: float


def bootstrap_rmse_vs_reference(
    events,
    reference: dict[str, float],
    sizes,
    repeats: int,
    seed: int,
    with_replacement: bool = True,
) -> list[RmsePoint]:
    """RMSE of resampled per-image MOS against a reference, per vote count.

    For each size k and repeat, k ratings are drawn per image (with
    replacement by default); the repeat's RMSE compares the resampled MOS
    to the reference over all reference-covered images. The CI is the
    2.5/97.5 percentile band of the repeat RMSEs.
    """
    pools = {
        img: np.asarray(vals, dtype=float)
        for img, vals in _by_image(events).items()
        if img in reference
    }
    if not pools:
        raise ValueError("reference does not cover any rated image")
    images = sorted(pools)
    ref = np.array([reference[img] for img in images])
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(sizes) * repeats)
    curve: list[RmsePoint] = []
    for si, k in enumerate(sizes):
        run_rmse = np.empty(repeats)
        for r in range(repeats):
            rng = np.random.default_rng(children[si * repeats + r])
            mos = np.empty(len(images))
            for ii, img in enumerate(images):
                pool = pools[img]
                if with_replacement:
                    picks = pool[rng.integers(0, len(pool), size=k)]
                else:
                    if k > len(pool):
                        raise ValueError(
                            f"image {img!r} has {len(pool)} ratings; cannot draw {k} without replacement"
                        )
                    picks = pool[rng.permutation(len(pool))[:k]]
                mos[ii] = picks.mean()
            run_rmse[r] = rmse(mos, ref)
        lo, hi = np.percentile(run_rmse, [2.5, 97.5])
        curve.append(RmsePoint(int(k), float(run_rmse.mean()), float(lo), float(hi)))
    return curve


@dataclass
class AgreementPoint:
    group_size: int
    votes_per_image: float
    mean_srocc: float
    ci_half_width: float


@dataclass
class AgreementCurve:
    points: list[AgreementPoint]
    repeats: int


def group_agreement_curve(
    events,
    max_group_size: int,
    repeats: int,
    seed: int,
    sizes=None,
) -> AgreementCurve:
    """Mean SROCC between per-image MOS of two disjoint random worker groups.

    Sizes default to a doubling ladder 1, 2, 4, ... capped at
    ``max_group_size``. Each point also records the mean votes per image
    contributed by one group, the x-axis used for model-equivalence reads.
    """
    worker_events = _by_worker(events)
    workers = sorted(worker_events)
    sizes = list(sizes) if sizes is not None else _default_sizes(max_group_size)
    if 2 * max(sizes) > len(workers):
        raise ValueError(f"need at least {2 * max(sizes)} workers, have {len(workers)}")
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(sizes) * repeats)
    points: list[AgreementPoint] = []
    for si, s in enumerate(sizes):
        coeffs, votes = [], []
        for r in range(repeats):
            rng = np.random.default_rng(children[si * repeats + r])
            perm = rng.permutation(len(workers))
            group_a = [workers[i] for i in perm[:s]]
            group_b = [workers[i] for i in perm[s : 2 * s]]
            mos_a = _group_mos(worker_events, group_a)
            mos_b = _group_mos(worker_events, group_b)
            common = sorted(set(mos_a) & set(mos_b))
            if len(common) < 3:
                continue
            xa = [mos_a[i][0] for i in common]
            xb = [mos_b[i][0] for i in common]
            if len(set(xa)) < 2 or len(set(xb)) < 2:
                continue
            coeffs.append(srocc(xa, xb))
            na = sum(mos_a[i][1] for i in common)
            nb = sum(mos_b[i][1] for i in common)
            votes.append(0.5 * (na + nb) / len(common))
        if not coeffs:
            raise ValueError(f"no valid repeat at group size {s}: too few common images")
        arr = np.asarray(coeffs)
        half = 1.96 * arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0
        points.append(AgreementPoint(int(s), float(np.mean(votes)), float(arr.mean()), float(half)))
    return AgreementCurve(points=points, repeats=repeats)


@dataclass
class NmaxResult:
    n_max: float
    model_srocc: float
    curve: list[AgreementPoint]


def nmax_equivalence(events, model_scores: dict[str, float], repeats: int, seed: int, sizes=None) -> NmaxResult:
    """Votes-per-image a model is worth, against half-split ground truth.

    Each repeat takes a random half of the workers as ground truth; the
    model and growing groups from the other half are scored against that
    truth. ``n_max`` is the largest effective votes-per-image whose mean
    group SROCC stays at or below the model's, linearly interpolated;
    ``inf`` when the model beats every tested group.
    """
    worker_events = _by_worker(events)
    workers = sorted(worker_events)
    if len(workers) < 4:
        raise ValueError("need at least 4 workers")
    half = len(workers) // 2
    sizes = list(sizes) if sizes is not None else _default_sizes(len(workers) - half)
    if max(sizes) > len(workers) - half:
        raise ValueError("group size exceeds the non-truth half")
    root = np.random.SeedSequence(seed)
    children = root.spawn(repeats)
    model_coeffs = []
    group_coeffs: dict[int, list[float]] = {s: [] for s in sizes}
    group_votes: dict[int, list[float]] = {s: [] for s in sizes}
    for r in range(repeats):
        rng = np.random.default_rng(children[r])
        perm = rng.permutation(len(workers))
        truth_workers = [workers[i] for i in perm[:half]]
        rest = [workers[i] for i in perm[half:]]
        truth = _group_mos(worker_events, truth_workers)
        model_common = sorted(set(truth) & set(model_scores))
        if len(model_common) >= 3:
            tv = [truth[i][0] for i in model_common]
            mv = [model_scores[i] for i in model_common]
            if len(set(tv)) >= 2 and len(set(mv)) >= 2:
                model_coeffs.append(srocc(mv, tv))
        for s in sizes:
            group = rest[:s]
            gm = _group_mos(worker_events, group)
            common = sorted(set(gm) & set(truth))
            if len(common) < 3:
                continue
            gv = [gm[i][0] for i in common]
            tv = [truth[i][0] for i in common]
            if len(set(gv)) < 2 or len(set(tv)) < 2:
                continue
            group_coeffs[s].append(srocc(gv, tv))
            group_votes[s].append(sum(gm[i][1] for i in common) / len(common))
    if not model_coeffs:
        raise ValueError("model scores share too few images with the ground truth")
    model_mean = float(np.mean(model_coeffs))
    curve = []
    for s in sizes:
        if not group_coeffs[s]:
            continue
        arr = np.asarray(group_coeffs[s])
        half_w = 1.96 * arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0
        curve.append(AgreementPoint(int(s), float(np.mean(group_votes[s])), float(arr.mean()), float(half_w)))
    if not curve:
        raise ValueError("no group size produced a valid agreement estimate")
    xs = [pt.votes_per_image for pt in curve]
    ys = [pt.mean_srocc for pt in curve]
    if model_mean >= ys[-1]:
        n_max = math.inf
    elif model_mean < ys[0]:
        n_max = 0.0
    else:
        i = max(k for k in range(len(ys)) if ys[k] <= model_mean)
        x0, y0, x1, y1 = xs[i], ys[i], xs[i + 1], ys[i + 1]
        n_max = x0 if y1 == y0 else x0 + (model_mean - y0) * (x1 - x0) / (y1 - y0)
    return NmaxResult(n_max=float(n_max), model_srocc=model_mean, curve=curve)


# ---------------------------------------------------------------------------
# training-size extrapolation


@dataclass
class FitResult:
    a: float
    b: float
    residual: float
    ci_a: tuple[float, float] = field(default=(math.nan, math.nan))
    ci_b: tuple[float, float] = field(default=(math.nan, math.nan))

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 1.0 - 1.0 / (x**self.a + self.b)


def _fit_once(x: np.ndarray, y: np.ndarray, starts: int, rng: np.random.Generator) -> tuple[float, float, float]:
    def sse(theta):
        a, b = np.exp(theta)
        f = 1.0 - 1.0 / (np.power(x, a) + b)
        r = y - f
        return float((r * r).sum())

    best = None
    start_points = [(0.5, 1.0), (1.0, 1.0)]
    while len(start_points) < starts:
        start_points.append((float(rng.uniform(0.05, 3.0)), float(np.exp(rng.uniform(-2.0, 4.0)))))
    for a0, b0 in start_points[:starts]:
        res = minimize(
            sse,
            x0=np.log([a0, b0]),
            method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000},
        )
        if best is None or res.fun < best.fun:
            best = res
    a, b = np.exp(best.x)
    return float(a), float(b), float(best.fun)


def fit_extrapolation(points, repeats: int = 200, starts: int = 8, seed: int = 0) -> FitResult:
    """Least-squares fit of 1 - (x^a + b)^(-1) to (size, srocc) points.

    Optimized over (log a, log b) so positivity is implicit; multi-start
    local descent guards against the flat basin at small a. Confidence
    intervals come from refitting ``repeats`` bootstrap resamples of the
    points (95% percentile band).
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(x <= 0):
        raise ValueError("sizes must be positive")
    if np.any((y <= 0) | (y >= 1)):
        raise ValueError("srocc values must lie in (0, 1)")
    if len(set(pts)) == 1:
        raise ValueError("degenerate input: all points identical")
    root = np.random.SeedSequence(seed)
    rng = np.random.default_rng(root.spawn(1)[0])
    a, b, residual = _fit_once(x, y, starts, rng)
    boot_a, boot_b = [], []
    boot_children = root.spawn(repeats + 1)[1:]
    for child in boot_children:
        brng = np.random.default_rng(child)
        idx = brng.integers(0, len(pts), size=len(pts))
        bx, by = x[idx], y[idx]
        if len(set(bx.tolist())) < 2:
            continue
        ba, bb, _ = _fit_once(bx, by, min(starts, 4), brng)
        boot_a.append(ba)
        boot_b.append(bb)
    ci_a = tuple(np.percentile(boot_a, [2.5, 97.5])) if boot_a else (math.nan, math.nan)
    ci_b = tuple(np.percentile(boot_b, [2.5, 97.5])) if boot_b else (math.nan, math.nan)
    return FitResult(a=a, b=b, residual=residual, ci_a=ci_a, ci_b=ci_b)


# ---------------------------------------------------------------------------
# rater agreement


def icc(events) -> float:
    """One-way random-effects, single-measure intra-class correlation.

    Uses the unbalanced-design mean squares (images as groups): rater
    pools differ per image in a crowd study, so a fully crossed two-way
    model does not apply.
    """
    groups = _by_image(events)
    sizes = {img: len(v) for img, v in groups.items()}
    a = len(groups)
    n_total = sum(sizes.values())
    if a < 2:
        raise ValueError("need ratings on at least 2 images")
    if n_total - a < 1:
        raise ValueError("need at least one image with 2+ ratings")
    values = np.concatenate([np.asarray(v, dtype=float) for v in groups.values()])
    grand = values.mean()
    ssb = sum(len(v) * (np.mean(v) - grand) ** 2 for v in groups.values())
    ssw = sum(((np.asarray(v) - np.mean(v)) ** 2).sum() for v in groups.values())
    msb = ssb / (a - 1)
    msw = ssw / (n_total - a)
    n0 = (n_total - sum(k * k for k in sizes.values()) / n_total) / (a - 1)
    denom = msb + (n0 - 1.0) * msw
    if denom == 0.0:
        raise ValueError("degenerate design: zero variance everywhere")
    return float((msb - msw) / denom)
