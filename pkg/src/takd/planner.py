"""Distillation-path search: exhaustive enumeration, the dynamic program for
the best length-k path, a brute-force oracle, and the TA-size heuristic.

Paths over a size ladder (q0=T > q1 > ... > qn=S) form a layered DAG; the
dynamic program fills a (depth, size) table where entry (d, q) holds the
best outcome reachable at size q in exactly d distillation steps.  Edge
outcomes come from a pluggable evaluator: real training, or a closed-form
surrogate for fast, exact testing of the search logic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from math import comb, exp
from typing import Callable, Mapping, Protocol

from .data import Dataset
from .distill import DistillConfig, train
from .errors import BudgetError, LadderError, ParameterError
from .models import NetworkSpec, TrainedModel
from .rng import RandomStream, derive_seed


@dataclass(frozen=True)
class SizeLadder:
    """Strictly decreasing sizes, teacher first, student last."""

    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2:
            raise LadderError("a ladder needs at least teacher and student")
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise LadderError(f"ladder sizes must strictly decrease: {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def teacher(self) -> int:
        return self.sizes[0]

    @property
    def student(self) -> int:
        return self.sizes[-1]

    @property
    def interior(self) -> tuple[int, ...]:
        return self.sizes[1:-1]

    @property
    def n(self) -> int:
        """Index of the student: sizes are q0 .. qn."""
        return len(self.sizes) - 1

    def __len__(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class EvalOutcome:
    """Result of training (or simulating) one network."""

    size: int
    accuracy: float
    model: TrainedModel | None = None

    @property
    def loss(self) -> float:
        return 1.0 - self.accuracy


class PathEvaluator(Protocol):
    """Produces edge outcomes; deterministic given identical inputs."""

    def root(self) -> EvalOutcome: ...

    def distill(self, teacher: EvalOutcome, size: int,
                context: tuple[int, int, int]) -> EvalOutcome: ...


class CountingEvaluator:
    """Wrapper that counts distill calls (the unit of search cost)."""

    def __init__(self, inner: PathEvaluator):
        self.inner = inner
        self.calls = 0

    def root(self) -> EvalOutcome:
        return self.inner.root()

    def distill(self, teacher: EvalOutcome, size: int,
                context: tuple[int, int, int]) -> EvalOutcome:
        self.calls += 1
        return self.inner.distill(teacher, size, context)


class SurrogateEvaluator:
    """Closed-form stand-in for distillation outcomes.

    acc(q | teacher with accuracy a) =
        base(q) + beta * (a - base(q)) * exp(-gamma * (gap - 1))

    with gap = capacity(p) / capacity(q).  Student accuracy is strictly
    increasing in teacher accuracy (beta > 0), which is what makes the
    dynamic program exact; stronger decay gamma makes intermediate hops
    worthwhile.  Values stay inside (0, 1) whenever the base accuracies do
    and beta < 1; clipping is a safety net only.
    """

    def __init__(self, base: Mapping[int, float], beta: float = 0.6,
                 gamma: float = 0.3,
                 capacity: Callable[[int], float] | None = None):
        if not 0.0 < beta < 1.0:
            raise ParameterError("beta must lie in (0, 1)")
        if gamma < 0.0:
            raise ParameterError("gamma must be nonnegative")
        self.base = dict(base)
        self.beta = beta
        self.gamma = gamma
        self.capacity = capacity or (lambda s: float(s))
        self._root_size = max(self.base)

    @classmethod
    def random(cls, sizes: tuple[int, ...], seed: int) -> "SurrogateEvaluator":
        """Seeded instance with monotone base accuracies in (0.3, 0.95)."""
        stream = RandomStream(seed, "surrogate")
        u = sorted(stream.uniform(len(sizes)))
        base = {s: 0.3 + 0.65 * u[i] for i, s in enumerate(sorted(sizes))}
        beta = 0.2 + 0.7 * float(stream.uniform(1)[0])
        gamma = 0.05 + 0.6 * float(stream.uniform(1)[0])
        return cls(base, beta, gamma)

    def root(self) -> EvalOutcome:
        return EvalOutcome(self._root_size, self.base[self._root_size])

    def distill(self, teacher: EvalOutcome, size: int,
                context: tuple[int, int, int]) -> EvalOutcome:
        if size not in self.base:
            raise LadderError(f"no base accuracy for size {size}")
        gap = self.capacity(teacher.size) / self.capacity(size)
        b = self.base[size]
        acc = b + self.beta * (teacher.accuracy - b) * exp(-self.gamma * (gap - 1.0))
        return EvalOutcome(size, min(1.0, max(0.0, acc)))


class TrainingEvaluator:
    """Edge outcomes from real distillation runs.

    Each edge gets a seed derived from (root seed, depth, source index,
    target index), so any procedure evaluating the same edge observes the
    same trained model.
    """

    def __init__(self, specs: Mapping[int, NetworkSpec], dataset: Dataset,
                 cfg: DistillConfig, ladder: SizeLadder):
        self.specs = specs
        self.dataset = dataset
        self.cfg = cfg
        self.ladder = ladder

    def root(self) -> EvalOutcome:
        size = self.ladder.teacher
        cfg = self.cfg.with_seed(derive_seed(self.cfg.seed, "root", size))
        model = train(self.specs[size], self.dataset, replace(cfg, lam=0.0))
        return EvalOutcome(size, model.metrics["test_acc"], model)

    def distill(self, teacher: EvalOutcome, size: int,
                context: tuple[int, int, int]) -> EvalOutcome:
        d, i, j = context
        cfg = self.cfg.with_seed(derive_seed(self.cfg.seed, "edge", d, i, j))
        model = train(self.specs[size], self.dataset, cfg, teacher=teacher.model)
        return EvalOutcome(size, model.metrics["test_acc"], model)


@dataclass
class CacheEntry:
    outcome: EvalOutcome
    path: tuple[int, ...]
    loss: float


class ModelCache:
    """(depth, size) -> best outcome found so far; keys are write-once."""

    def __init__(self) -> None:
        self._entries: dict[tuple[int, int], CacheEntry] = {}

    def put(self, depth: int, size: int, entry: CacheEntry) -> None:
        key = (depth, size)
        if key in self._entries:
            raise KeyError(f"cache key {key} already written")
        if len(entry.path) != depth + 1 or entry.path[-1] != size:
            raise ValueError(f"path {entry.path} inconsistent with key {key}")
        self._entries[key] = entry

    def get(self, depth: int, size: int) -> CacheEntry | None:
        return self._entries.get((depth, size))

    def __contains__(self, key: tuple[int, int]) -> bool:
        return key in self._entries

    def items(self):
        return self._entries.items()


# ---------------------------------------------------------------------------
# Path enumeration


def enumerate_paths(ladder: SizeLadder) -> list[tuple[int, ...]]:
    """All 2^(n-1) teacher-to-student paths over subsets of interior sizes,
    ordered by ascending subset bitmask (bit i = interior size q_{i+1})."""
    interior = ladder.interior
    m = len(interior)
    out = []
    for mask in range(1 << m):
        mids = tuple(interior[i] for i in range(m) if mask >> i & 1)
        out.append((ladder.teacher,) + mids + (ladder.student,))
    return out


def full_path(ladder: SizeLadder) -> tuple[int, ...]:
    """The path through every available intermediate size."""
    return ladder.sizes


@dataclass
class SearchResult:
    ladder: SizeLadder
    k: int
    path: tuple[int, ...]
    outcome: EvalOutcome
    evaluator_calls: int
    edges: list[dict] = field(default_factory=list)

    @property
    def loss(self) -> float:
        return self.outcome.loss

    def to_dict(self) -> dict:
        return {
            "ladder": list(self.ladder.sizes),
            "k": self.k,
            "path": list(self.path),
            "accuracy": self.outcome.accuracy,
            "loss": self.loss,
            "evaluator_calls": self.evaluator_calls,
            "edges": self.edges,
        }


def dp_optimal_path(ladder: SizeLadder, k: int, evaluator: PathEvaluator,
                    cache: ModelCache | None = None) -> SearchResult:
    """Best path with exactly k distillation steps, by dynamic programming.

    Depth 1 evaluates a direct edge from the teacher to every smaller size;
    depth d extends the best depth-(d-1) entries, taking for each target j
    the argmin over interior sources 0 < i < j.  Ties prefer the smaller
    source index.  The evaluator-call count is at most
    n + (k-1) * n * (n-1) / 2.
    """
    n = ladder.n
    if not 1 <= k <= n:
        raise ParameterError(f"k must lie in [1, {n}], got {k}")
    cache = cache if cache is not None else ModelCache()
    counter = CountingEvaluator(evaluator)
    sizes = ladder.sizes
    root = counter.root()
    edges: list[dict] = []

    def run_edge(teacher: EvalOutcome, j: int, d: int, i: int) -> EvalOutcome:
        try:
            out = counter.distill(teacher, sizes[j], (d, i, j))
        except Exception as exc:
            raise type(exc)(
                f"evaluator failed at depth {d}, edge {sizes[i]}->{sizes[j]} "
                f"(d={d}, i={i}, j={j}): {exc}") from exc
        edges.append({"depth": d, "source": sizes[i], "target": sizes[j],
                      "accuracy": out.accuracy})
        return out

    for i in range(1, n + 1):
        out = run_edge(root, i, 1, 0)
        cache.put(1, sizes[i], CacheEntry(out, (sizes[0], sizes[i]), out.loss))

    for d in range(2, k + 1):
        for j in range(1, n + 1):
            best: tuple[float, int] | None = None
            best_out: EvalOutcome | None = None
            for i in range(1, j):
                prev = cache.get(d - 1, sizes[i])
                if prev is None:
                    continue
                out = run_edge(prev.outcome, j, d, i)
                if best is None or (out.loss, i) < best:
                    best = (out.loss, i)
                    best_out = out
            if best is None:
                continue
            prev = cache.get(d - 1, sizes[best[1]])
            cache.put(d, sizes[j],
                      CacheEntry(best_out, prev.path + (sizes[j],), best_out.loss))

    entry = cache.get(k, ladder.student)
    return SearchResult(ladder, k, entry.path, entry.outcome, counter.calls, edges)


def brute_force_optimal_path(ladder: SizeLadder, k: int,
                             evaluator: PathEvaluator,
                             cap: int = 100_000) -> SearchResult:
    """Evaluate every length-k path end to end and take the minimum loss.

    Candidate interior combinations are generated in ascending index order;
    among equal losses the path whose interior indices are smallest reading
    from the student backwards wins, which matches the dynamic program's
    smaller-source-index tie rule.
    """
    from itertools import combinations

    n = ladder.n
    if not 1 <= k <= n:
        raise ParameterError(f"k must lie in [1, {n}], got {k}")
    n_paths = comb(n - 1, k - 1)
    if n_paths > cap:
        raise BudgetError(f"{n_paths} candidate paths exceed the cap {cap}")
    counter = CountingEvaluator(evaluator)
    sizes = ladder.sizes
    root = counter.root()
    best_key: tuple[float, tuple[int, ...]] | None = None
    best: SearchResult | None = None
    for mids in combinations(range(1, n), k - 1):
        idx_path = (0,) + mids + (n,)
        outcome = root
        for d in range(1, len(idx_path)):
            outcome = counter.distill(outcome, sizes[idx_path[d]],
                                      (d, idx_path[d - 1], idx_path[d]))
        key = (outcome.loss, tuple(reversed(mids)))
        if best_key is None or key < best_key:
            best_key = key
            best = SearchResult(ladder, k,
                                tuple(sizes[i] for i in idx_path), outcome, 0)
    best.evaluator_calls = counter.calls
    return best


def suggest_ta_size(ladder: SizeLadder,
                    scratch_accuracies: Mapping[int, float]) -> int:
    """Interior size whose from-scratch accuracy is closest to the mean of
    the teacher's and student's; ties prefer the smaller size."""
    if not ladder.interior:
        raise LadderError("ladder has no interior sizes to suggest")
    missing = [s for s in ladder.sizes if s not in scratch_accuracies]
    if missing:
        raise LadderError(f"missing scratch accuracies for sizes {missing}")
    target = 0.5 * (scratch_accuracies[ladder.teacher]
                    + scratch_accuracies[ladder.student])
    return min(ladder.interior,
               key=lambda s: (abs(scratch_accuracies[s] - target), s))


def path_graph(ladder: SizeLadder, evaluator: PathEvaluator) -> dict:
    """Evaluate every path prefix over the ladder and export the resulting
    tree as an adjacency list with per-node accuracy."""
    counter = CountingEvaluator(evaluator)
    root = counter.root()
    nodes = [{"path": [ladder.teacher], "size": ladder.teacher,
              "accuracy": root.accuracy}]
    edges: list[list[int]] = []
    index = {(ladder.teacher,): 0}

    def expand(prefix: tuple[int, ...], outcome: EvalOutcome) -> None:
        pos = ladder.sizes.index(prefix[-1])
        for j in range(pos + 1, len(ladder.sizes)):
            size = ladder.sizes[j]
            child = counter.distill(outcome, size, (len(prefix), pos, j))
            child_path = prefix + (size,)
            nodes.append({"path": list(child_path), "size": size,
                          "accuracy": child.accuracy})
            index[child_path] = len(nodes) - 1
            edges.append([index[prefix], index[child_path]])
            expand(child_path, child)

    expand((ladder.teacher,), root)
    return {"ladder": list(ladder.sizes), "nodes": nodes, "edges": edges,
            "evaluator_calls": counter.calls}


def save_search_result(result: SearchResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
