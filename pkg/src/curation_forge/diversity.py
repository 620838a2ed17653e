"""Content quantization, uniform-histogram subset selection, and dedup.

The sampler picks M images whose indicator histograms are as flat as
possible: the objective is the summed L1 deviation between the selected
histogram and the uniform target (M/N per indicator bin, M/k per content
cluster), over all dimensions jointly. Small instances can be solved
exactly by enumeration; at scale a seeded greedy construction plus
swap hill-climbing approximates the optimum.

Near-duplicate removal works in the scaled indicator-plus-content space:
each scalar is min-max scaled to [0, 1], content contributes 0 for same
cluster and 1 otherwise, and the member of the globally closest pair is
removed repeatedly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .catalog import FeatureVector
from .indicators import SCALAR_DIMS, IndicatorVector

EXACT_MODE_CAP = 24


@dataclass
class ContentCodebook:
    k: int
    centroids: np.ndarray
    seed: int


@dataclass
class SamplingPlan:
    selected_ids: list[str]
    bins_per_dim: int
    histograms: dict[str, list[int]]
    objective: float
    mode: str
    trace: list[float] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "selected_ids": self.selected_ids,
            "bins_per_dim": self.bins_per_dim,
            "histograms": self.histograms,
            "objective": self.objective,
            "mode": self.mode,
        }


# ---------------------------------------------------------------------------
# k-means content codebook


def _pairwise_sq_dist(points: np.ndarray, centers: np.ndarray, chunk: int = 4096) -> np.ndarray:
    # row blocks keep the (chunk, k, d) intermediate bounded at large n
    out = np.empty((points.shape[0], centers.shape[0]))
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        diff = block[:, None, :] - centers[None, :, :]
        out[start : start + chunk] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def fit_codebook(features: Sequence[FeatureVector], k: int, seed: int, max_iter: int = 300) -> ContentCodebook:
    """Seeded k-means++ / Lloyd clustering of feature vectors.

    Iterates to an assignment fixpoint or ``max_iter`` rounds. An emptied
    cluster is re-seeded at the point farthest from its current centroid.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(features) < k:
        raise ValueError(f"need at least k={k} feature vectors, have {len(features)}")
    points = np.stack([f.values for f in features]).astype(float)
    n = points.shape[0]
    rng = np.random.default_rng(seed)

    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = int(rng.integers(n))
        centers[i] = points[idx]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))

    labels = np.argmin(_pairwise_sq_dist(points, centers), axis=1)
    for _ in range(max_iter):
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
            else:
                sq = _pairwise_sq_dist(points, centers)
                centers[c] = points[int(np.argmax(sq[np.arange(n), labels]))]
        new_labels = np.argmin(_pairwise_sq_dist(points, centers), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return ContentCodebook(k=k, centroids=centers, seed=seed)


def assign(codebook: ContentCodebook, feature: FeatureVector | np.ndarray) -> int:
    """Nearest-centroid index (Euclidean); exact ties go to the lowest index."""
    values = feature.values if isinstance(feature, FeatureVector) else np.asarray(feature, dtype=float)
    diff = codebook.centroids - values[None, :]
    return int(np.argmin((diff * diff).sum(axis=1)))


# ---------------------------------------------------------------------------
# indicator binning


def usable_dims(vectors: Sequence[IndicatorVector], dims: Sequence[str] = SCALAR_DIMS) -> list[str]:
    """Scalar dimensions that every vector carries a value for."""
    return [d for d in dims if all(v.scalar(d) is not None for v in vectors)]


def quantize_indicators(
    vectors: Sequence[IndicatorVector],
    n_bins: int,
    dims: Sequence[str] | None = None,
) -> list[tuple[int, ...]]:
    """Equal-width bin codes per image over the population [min, max].

    The maximum value lands in the top bin; a constant dimension sends
    every image to bin 0.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    dims = list(dims) if dims is not None else usable_dims(vectors)
    columns = []
    for d in dims:
        x = np.array([v.scalar(d) for v in vectors], dtype=float)
        lo, hi = x.min(), x.max()
        if hi > lo:
            codes = np.floor((x - lo) / ((hi - lo) / n_bins)).astype(int)
            codes = np.clip(codes, 0, n_bins - 1)
        else:
            codes = np.zeros(len(x), dtype=int)
        columns.append(codes)
    return [tuple(int(col[i]) for col in columns) for i in range(len(vectors))]


# ---------------------------------------------------------------------------
# uniform-histogram subset selection


class _Objective:
    """Incremental L1-deviation-from-uniform objective over all dimensions."""

    def __init__(self, bin_tuples, clusters, n_bins: int, n_clusters: int, target: int):
        codes = [list(t) for t in bin_tuples]
        self.codes = np.array([c + [cl] for c, cl in zip(codes, clusters)], dtype=int)
        self.sizes = [n_bins] * (self.codes.shape[1] - 1) + [n_clusters]
        self.targets = [target / s for s in self.sizes]
        self.reset()

    def reset(self):
        self.hists = [np.zeros(s, dtype=int) for s in self.sizes]

    def value(self) -> float:
        return float(
            sum(np.abs(h - t).sum() for h, t in zip(self.hists, self.targets))
        )

    def delta_add(self, i: int) -> float:
        d = 0.0
        for dim, (h, t) in enumerate(zip(self.hists, self.targets)):
            b = self.codes[i, dim]
            d += abs(h[b] + 1 - t) - abs(h[b] - t)
        return d

    def delta_swap(self, out_i: int, in_i: int) -> float:
        d = 0.0
        for dim, (h, t) in enumerate(zip(self.hists, self.targets)):
            bo, bi = self.codes[out_i, dim], self.codes[in_i, dim]
            if bo == bi:
                continue
            d += abs(h[bo] - 1 - t) - abs(h[bo] - t)
            d += abs(h[bi] + 1 - t) - abs(h[bi] - t)
        return d

    def add(self, i: int):
        for dim, h in enumerate(self.hists):
            h[self.codes[i, dim]] += 1

    def remove(self, i: int):
        for dim, h in enumerate(self.hists):
            h[self.codes[i, dim]] -= 1


def _exact_search(obj: _Objective, population: int, target: int) -> tuple[list[int], float]:
    """Chunked enumeration of all M-subsets; ties keep the first (lexicographic)."""
    codes = obj.codes
    n_dims = codes.shape[1]
    best_obj, best_sel = np.inf, None
    chunk = 65536
    combos = itertools.combinations(range(population), target)
    while True:
        block = list(itertools.islice(combos, chunk))
        if not block:
            break
        idx = np.array(block, dtype=int)  # (B, M)
        total = np.zeros(len(block))
        for dim in range(n_dims):
            c = codes[idx, dim]  # (B, M)
            counts = np.zeros((len(block), obj.sizes[dim]))
            np.add.at(counts, (np.repeat(np.arange(len(block)), target), c.ravel()), 1.0)
            total += np.abs(counts - obj.targets[dim]).sum(axis=1)
        j = int(np.argmin(total))
        if total[j] < best_obj:
            best_obj = float(total[j])
            best_sel = list(block[j])
    return best_sel, best_obj


def _greedy_construct(obj: _Objective, population: int, target: int, rng: np.random.Generator, randomized: bool) -> list[int]:
    obj.reset()
    selected: list[int] = []
    in_sel = np.zeros(population, dtype=bool)
    for _ in range(target):
        candidates = np.nonzero(~in_sel)[0]
        deltas = np.array([obj.delta_add(int(i)) for i in candidates])
        if randomized:
            # pick uniformly among the 3 best marginal moves
            order = np.argsort(deltas, kind="stable")[: min(3, len(candidates))]
            pick = int(candidates[order[rng.integers(len(order))]])
        else:
            pick = int(candidates[int(np.argmin(deltas))])
        obj.add(pick)
        in_sel[pick] = True
        selected.append(pick)
    return selected


def _hill_climb(obj: _Objective, selected: list[int], population: int, rng: np.random.Generator, trace: list[float]):
    in_sel = np.zeros(population, dtype=bool)
    in_sel[selected] = True
    current = obj.value()
    trace.append(current)
    improved = True
    while improved:
        improved = False
        sel = [i for i in selected]
        out_order = rng.permutation(len(sel))
        cand = np.nonzero(~in_sel)[0]
        cand_order = rng.permutation(len(cand))
        for oi in out_order:
            for ci in cand_order:
                out_i, in_i = sel[oi], int(cand[ci])
                if obj.delta_swap(out_i, in_i) < -1e-9:
                    obj.remove(out_i)
                    obj.add(in_i)
                    in_sel[out_i] = False
                    in_sel[in_i] = True
                    selected[selected.index(out_i)] = in_i
                    current = obj.value()
                    trace.append(current)
                    improved = True
                    break
            if improved:
                break


def sample_uniform(
    ids: Sequence[str],
    bin_tuples: Sequence[tuple[int, ...]],
    clusters: Sequence[int],
    n_bins: int,
    n_clusters: int,
    target: int,
    mode: str = "local_search",
    seed: int = 0,
    restarts: int = 4,
    dim_names: Sequence[str] | None = None,
) -> SamplingPlan:
    """Select ``target`` images minimizing total histogram deviation.

    ``exact`` enumerates every subset (populations up to 24 only);
    ``local_search`` runs a greedy build plus first-improvement swap
    hill-climbing, restarted ``restarts`` times from seeded variations,
    keeping the best plan found.
    """
    population = len(ids)
    if not (len(bin_tuples) == len(clusters) == population):
        raise ValueError("ids, bin tuples, and clusters must align")
    if target > population:
        raise ValueError(f"target {target} exceeds population {population}")
    obj = _Objective(bin_tuples, clusters, n_bins, n_clusters, target)
    trace: list[float] = []
    if mode == "exact":
        if population > EXACT_MODE_CAP:
            raise ValueError(f"exact mode supports populations up to {EXACT_MODE_CAP}")
        selected, best_obj = _exact_search(obj, population, target)
    elif mode == "local_search":
        root = np.random.SeedSequence(seed)
        children = root.spawn(max(1, restarts))
        best_obj, selected = np.inf, None
        for start, child in enumerate(children):
            rng = np.random.default_rng(child)
            run_trace: list[float] = []
            cand = _greedy_construct(obj, population, target, rng, randomized=start > 0)
            _hill_climb(obj, cand, population, rng, run_trace)
            value = obj.value()
            if value < best_obj:
                best_obj, selected, trace = float(value), cand, run_trace
        assert all(a >= b for a, b in zip(trace, trace[1:])), "local search objective increased"
    else:
        raise ValueError(f"unknown mode {mode!r}")

    obj.reset()
    for i in selected:
        obj.add(i)
    names = list(dim_names) if dim_names is not None else [f"dim{d}" for d in range(len(bin_tuples[0]))]
    names = names + ["cluster"]
    histograms = {name: h.tolist() for name, h in zip(names, obj.hists)}
    return SamplingPlan(
        selected_ids=[ids[i] for i in selected],
        bins_per_dim=n_bins,
        histograms=histograms,
        objective=float(best_obj),
        mode=mode,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# near-duplicate removal


def dedup_distances(vectors: Sequence[IndicatorVector], clusters: Sequence[int] | None = None) -> np.ndarray:
    """Full distance matrix in the scaled indicator + content space."""
    dims = usable_dims(vectors)
    cols = []
    for d in dims:
        x = np.array([v.scalar(d) for v in vectors], dtype=float)
        lo, hi = x.min(), x.max()
        cols.append((x - lo) / (hi - lo) if hi > lo else np.zeros(len(x)))
    coords = np.stack(cols, axis=1) if cols else np.zeros((len(vectors), 0))
    if clusters is None:
        clusters = [v.content_cluster for v in vectors]
        if any(c is None for c in clusters):
            raise ValueError("vectors lack content clusters; pass them explicitly")
    cl = np.asarray(clusters)
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = (diff * diff).sum(axis=2) + (cl[:, None] != cl[None, :]).astype(float)
    return np.sqrt(d2)


def dedup(
    vectors: Sequence[IndicatorVector],
    remove_count: int,
    clusters: Sequence[int] | None = None,
) -> list[str]:
    """Remove members of globally closest pairs, one per round.

    Equal-distance pairs order lexicographically by their sorted id pair,
    and the member with the larger id string is the one removed. Returns
    removed ids in removal order.
    """
    n = len(vectors)
    if remove_count >= n:
        raise ValueError(f"remove_count {remove_count} must be < population {n}")
    if remove_count == 0:
        return []
    ids = [v.image_id for v in vectors]
    dist = dedup_distances(vectors, clusters)
    np.fill_diagonal(dist, np.inf)
    alive = np.ones(n, dtype=bool)
    removed: list[str] = []
    for _ in range(remove_count):
        sub = dist[np.ix_(alive, alive)]
        alive_idx = np.nonzero(alive)[0]
        m = sub.min()
        tie_i, tie_j = np.nonzero(sub == m)
        best_pair = None
        for a, b in zip(alive_idx[tie_i], alive_idx[tie_j]):
            if a >= b:
                continue
            key = tuple(sorted((ids[a], ids[b])))
            if best_pair is None or key < best_pair[0]:
                best_pair = (key, a, b)
        _, a, b = best_pair
        victim = a if ids[a] > ids[b] else b
        alive[victim] = False
        removed.append(ids[victim])
    return removed
