"""Simulated annealing (SA), adaptive SA (ASA) and adaptive tabu SA (ATSA).

All three runners maximise an objective over a :class:`ParamSpace`. Each
temperature level adjudicates ``moves_per_iteration`` candidate moves, and
every adjudicated move is logged as one :class:`TraceRow`.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .param_space import ParamSpace, Solution, perturb, sample_initial, solution_key

log = logging.getLogger(__name__)

ALGORITHMS = ("sa", "asa", "atsa")
MAX_TABU_REGENERATIONS = 50

Objective = Callable[[Solution], float]


class ObjectiveError(RuntimeError):
    """Raised when the objective fails on a particular solution."""


@dataclass(frozen=True)
class AnnealerConfig:
    algorithm: str = "atsa"
    initial_temperature: float = 1000.0
    cooling_rate: float = 0.1
    min_temperature: float = 2.0
    incline_coefficient: float = 2.0
    tabu_length: int = 20
    max_iterations: int = 1000
    moves_per_iteration: int = 8
    # SA only: stop as soon as T <= T_min (the literal loop guard) instead of
    # holding T at T_min and spending the full iteration budget.
    sa_stop_at_min_temperature: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.initial_temperature <= 0 or self.min_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if not 0 < self.cooling_rate < 1:
            raise ValueError("cooling_rate must lie in (0, 1)")
        if self.incline_coefficient <= 0:
            raise ValueError("incline_coefficient must be positive")
        for name in ("tabu_length", "max_iterations", "moves_per_iteration"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnnealerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown annealer settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TraceRow:
    iteration: int
    move: int
    temperature: float
    candidate_score: float
    current_score: float
    best_score: float
    accepted: bool
    tabu_hit: bool
    rejection_counter: int
    # not written to the trace file; kept for in-memory audits
    candidate_key: tuple | None = field(default=None, repr=False)


TRACE_COLUMNS = [
    "iteration", "move", "temperature", "candidate_score", "current_score",
    "best_score", "accepted", "tabu_hit", "rejection_counter",
]


@dataclass
class OptimizationResult:
    """Best solution found plus the full move trace.

    ``evaluations`` counts objective calls made for candidate moves (cache
    misses only); the evaluation of the initial solution is not included.
    """

    algorithm: str
    best_solution: Solution
    best_score: float
    trace: list[TraceRow]
    evaluations: int
    tabu_hits: int = 0
    skipped_moves: int = 0

    def write_trace(self, path: str | Path) -> None:
        write_trace(self.trace, path)


class TabuList:
    """Bounded FIFO of solution keys; index 0 is the newest entry."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("tabu capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def push(self, key) -> None:
        self._items.appendleft(key)

    def __contains__(self, key) -> bool:
        return key in self._items

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def top(self):
        return self._items[0]


def tabu_push(tabu: TabuList, key) -> TabuList:
    tabu.push(key)
    return tabu


def acceptance_probability(f_new: float, f_cur: float, T: float) -> float:
    """Metropolis acceptance for maximisation: ``min(1, exp((f_new - f_cur) / T))``."""
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    delta = f_new - f_cur
    if delta >= 0:
        return 1.0
    return math.exp(delta / T)


def geometric_cool(T: float, alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ValueError(f"cooling rate must lie in (0, 1), got {alpha}")
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return alpha * T


def adaptive_temperature(r: int, t_min: float, incline: float) -> float:
    if r < 0:
        raise ValueError(f"rejection counter must be non-negative, got {r}")
    if t_min <= 0 or incline <= 0:
        raise ValueError("t_min and incline must be positive")
    return t_min + incline * math.log(1 + r)


def update_rejection_counter(r_prev: int, f_new: float, f_cur: float) -> int:
    if f_new < f_cur:
        return r_prev + 1
    if f_new > f_cur:
        return 0
    return r_prev


class _Evaluator:
    """Memoises objective scores by solution key for one run."""

    def __init__(self, objective: Objective, space: ParamSpace):
        self.objective = objective
        self.space = space
        self.cache: dict[tuple, float] = {}
        self.calls = 0

    def __call__(self, s: Solution, key: tuple | None = None) -> float:
        if key is None:
            key = solution_key(self.space, s)
        if key in self.cache:
            return self.cache[key]
        try:
            score = float(self.objective(s))
        except Exception as exc:
            raise ObjectiveError(f"objective failed on {s.as_dict(self.space)}: {exc}") from exc
        if math.isnan(score):
            raise ObjectiveError(f"objective returned NaN on {s.as_dict(self.space)}")
        self.calls += 1
        self.cache[key] = score
        return score


def run_sa(objective: Objective, space: ParamSpace, config: AnnealerConfig,
           rng: np.random.Generator) -> OptimizationResult:
    if config.algorithm != "sa":
        raise ValueError("run_sa requires config.algorithm == 'sa'")
    evaluate = _Evaluator(objective, space)
    cur = sample_initial(space, rng)
    f_cur = evaluate(cur)
    best, f_best = cur, f_cur
    r = 0
    T = config.initial_temperature
    trace: list[TraceRow] = []
    for i in range(config.max_iterations):
        if config.sa_stop_at_min_temperature and T <= config.min_temperature:
            break
        for m in range(config.moves_per_iteration):
            cand = perturb(space, cur, rng)
            key = solution_key(space, cand)
            f_new = evaluate(cand, key)
            accepted = f_new >= f_cur or rng.random() < acceptance_probability(f_new, f_cur, T)
            r = update_rejection_counter(r, f_new, f_cur)
            if accepted:
                cur, f_cur = cand, f_new
            if f_cur > f_best:
                best, f_best = cur, f_cur
            trace.append(TraceRow(i, m, T, f_new, f_cur, f_best, accepted, False, r, key))
        T = geometric_cool(T, config.cooling_rate)
        if not config.sa_stop_at_min_temperature:
            T = max(T, config.min_temperature)
    return OptimizationResult("sa", best, f_best, trace, evaluate.calls - 1)


def run_asa(objective: Objective, space: ParamSpace, config: AnnealerConfig,
            rng: np.random.Generator) -> OptimizationResult:
    if config.algorithm != "asa":
        raise ValueError("run_asa requires config.algorithm == 'asa'")
    evaluate = _Evaluator(objective, space)
    cur = sample_initial(space, rng)
    f_cur = evaluate(cur)
    best, f_best = cur, f_cur
    r = 0
    trace: list[TraceRow] = []
    for i in range(config.max_iterations):
        for m in range(config.moves_per_iteration):
            T = adaptive_temperature(r, config.min_temperature, config.incline_coefficient)
            r_used = r
            cand = perturb(space, cur, rng)
            key = solution_key(space, cand)
            f_new = evaluate(cand, key)
            accepted = f_new >= f_cur or rng.random() < acceptance_probability(f_new, f_cur, T)
            r = update_rejection_counter(r, f_new, f_cur)
            if accepted:
                cur, f_cur = cand, f_new
            if f_cur > f_best:
                best, f_best = cur, f_cur
            trace.append(TraceRow(i, m, T, f_new, f_cur, f_best, accepted, False, r_used, key))
    return OptimizationResult("asa", best, f_best, trace, evaluate.calls - 1)


def run_atsa(objective: Objective, space: ParamSpace, config: AnnealerConfig,
             rng: np.random.Generator) -> OptimizationResult:
    """Adaptive SA with a tabu list of recently evaluated solutions.

    A candidate already in the tabu list is regenerated without being
    evaluated; after ``MAX_TABU_REGENERATIONS`` tabu draws the move is skipped,
    logged with a NaN candidate score, and the tabu list is re-initialised to
    the current solution. Equal-score candidates are not
    accepted and leave the rejection counter unchanged.
    """
    if config.algorithm != "atsa":
        raise ValueError("run_atsa requires config.algorithm == 'atsa'")
    evaluate = _Evaluator(objective, space)
    cur = sample_initial(space, rng)
    cur_key = solution_key(space, cur)
    f_cur = evaluate(cur, cur_key)
    best, f_best = cur, f_cur
    tabu = TabuList(config.tabu_length)
    tabu.push(cur_key)
    r = 0
    tabu_hits = skipped = 0
    trace: list[TraceRow] = []
    for i in range(config.max_iterations):
        for m in range(config.moves_per_iteration):
            T = adaptive_temperature(r, config.min_temperature, config.incline_coefficient)
            hit = False
            cand = key = None
            for _ in range(MAX_TABU_REGENERATIONS + 1):
                proposal = perturb(space, cur, rng)
                proposal_key = solution_key(space, proposal)
                if proposal_key in tabu:
                    hit = True
                    tabu_hits += 1
                    continue
                cand, key = proposal, proposal_key
                break
            if cand is None:
                # whole neighbourhood is tabu: skip the move and restart the
                # list from the current solution so the search cannot freeze
                skipped += 1
                tabu = TabuList(config.tabu_length)
                tabu.push(solution_key(space, cur))
                trace.append(TraceRow(i, m, T, math.nan, f_cur, f_best, False, True, r, None))
                continue
            tabu.push(key)
            f_new = evaluate(cand, key)
            r_used = r
            accepted = False
            if f_new > f_cur:
                accepted = True
            elif f_new < f_cur:
                accepted = rng.random() < acceptance_probability(f_new, f_cur, T)
            r = update_rejection_counter(r, f_new, f_cur)
            if accepted:
                cur, f_cur = cand, f_new
            if f_cur > f_best:
                best, f_best = cur, f_cur
            trace.append(TraceRow(i, m, T, f_new, f_cur, f_best, accepted, hit, r_used, key))
    if skipped:
        log.info("atsa: %d moves skipped after exhausting tabu regenerations", skipped)
    return OptimizationResult("atsa", best, f_best, trace, evaluate.calls - 1, tabu_hits, skipped)


RUNNERS = {"sa": run_sa, "asa": run_asa, "atsa": run_atsa}


def optimize(objective: Objective, space: ParamSpace, config: AnnealerConfig,
             rng: np.random.Generator) -> OptimizationResult:
    return RUNNERS[config.algorithm](objective, space, config, rng)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_trace(trace: list[TraceRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([_fmt(getattr(row, c)) for c in TRACE_COLUMNS])


def read_trace(path: str | Path) -> list[TraceRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(TraceRow(
                iteration=int(rec["iteration"]),
                move=int(rec["move"]),
                temperature=float(rec["temperature"]),
                candidate_score=float(rec["candidate_score"]) if rec["candidate_score"] else math.nan,
                current_score=float(rec["current_score"]),
                best_score=float(rec["best_score"]),
                accepted=rec["accepted"] == "1",
                tabu_hit=rec["tabu_hit"] == "1",
                rejection_counter=int(rec["rejection_counter"]),
            ))
    return rows
