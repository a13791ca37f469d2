"""Seeded random search over temperature/trade-off grids."""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import product
from typing import Callable, Sequence

from .distill import DistillConfig
from .errors import ConfigError
from .rng import RandomStream

TAU_GRID = (1.0, 2.0, 4.0, 8.0, 16.0, 20.0)
LAM_GRID = (0.05, 0.25, 0.5, 0.75, 0.95)
DEFAULT_BUDGET = 15


@dataclass
class Trial:
    config: DistillConfig
    score: float


@dataclass
class SearchLog:
    best: DistillConfig
    best_score: float
    trials: list[Trial]

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "best_score": self.best_score,
            "trials": [{"config": t.config.to_dict(), "score": t.score}
                       for t in self.trials],
        }


def grid_points(taus: Sequence[float] = TAU_GRID,
                lams: Sequence[float] = LAM_GRID) -> list[tuple[float, float]]:
    return list(product(taus, lams))


def hyper_search(space: dict, budget: int, base: DistillConfig,
                 objective: Callable[[DistillConfig], float],
                 seed: int | None = None, name: str = "hyper-search"
                 ) -> SearchLog:
    """Sample grid configs without replacement and keep the best score.

    ``space`` maps "temperature" and "lam" to value lists (defaults above).
    Ties keep the first trial found, so a constant objective returns the
    first sampled config.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    taus = tuple(space.get("temperature", TAU_GRID))
    lams = tuple(space.get("lam", LAM_GRID))
    points = grid_points(taus, lams)
    if not points:
        raise ConfigError("empty search grid")
    stream = RandomStream(base.seed if seed is None else seed, name)
    order = stream.sample_without_replacement(len(points),
                                              min(budget, len(points)))
    best: Trial | None = None
    trials: list[Trial] = []
    for idx in order:
        tau, lam = points[int(idx)]
        cfg = replace(base, temperature=tau, lam=lam)
        score = objective(cfg)
        trial = Trial(cfg, score)
        trials.append(trial)
        if best is None or trial.score > best.score:
            best = trial
    return SearchLog(best.config, best.score, trials)
