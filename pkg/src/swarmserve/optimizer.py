"""NSGA-II over fixed-length binary genomes with constrained domination."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Rng
from .errors import ContractError, EvaluationError

Evaluation = tuple[Sequence[float], float]
EvaluateFn = Callable[[np.ndarray], Evaluation]
RepairFn = Callable[[np.ndarray], np.ndarray]

# offspring batches drawn per generation before duplicates are accepted
_DEDUP_ATTEMPTS = 3


@dataclass
class Individual:
    genome: np.ndarray
    objectives: tuple[float, ...]
    violation: float = 0.0
    rank: Optional[int] = None
    crowding: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.violation == 0

    def key(self) -> bytes:
        return self.genome.tobytes()


@dataclass
class Nsga2Config:
    population_size: int = 100
    generations: int = 200
    p_mut: Optional[float] = None  # None means 1 / genome length
    p_cx: float = 0.9
    seed: int = 0
    eliminate_duplicates: bool = True

    def __post_init__(self) -> None:
        if self.population_size < 4 or self.population_size % 2:
            raise ContractError(f"population_size must be even and >= 4, got {self.population_size}")
        if self.generations < 0:
            raise ContractError("generations must be >= 0")
        if self.p_mut is not None and not 0.0 <= self.p_mut <= 1.0:
            raise ContractError(f"p_mut must be in [0, 1], got {self.p_mut}")
        if not 0.0 <= self.p_cx <= 1.0:
            raise ContractError(f"p_cx must be in [0, 1], got {self.p_cx}")


@dataclass
class EvolveResult:
    population: list[Individual]
    front: list[Individual]
    generations: int
    evaluations: int = 0
    history: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Dominance, sorting, crowding
# ---------------------------------------------------------------------------


def dominates(a: Individual, b: Individual) -> bool:
    """Constrained domination: feasibility first, then lower violation, then Pareto."""
    if len(a.objectives) != len(b.objectives):
        raise ContractError(f"objective arity mismatch: {len(a.objectives)} vs {len(b.objectives)}")
    if a.feasible != b.feasible:
        return a.feasible
    if not a.feasible:
        return a.violation < b.violation
    better = False
    for x, y in zip(a.objectives, b.objectives):
        if x > y:
            return False
        if x < y:
            better = True
    return better


def domination_matrix(F: np.ndarray, cv: np.ndarray) -> np.ndarray:
    """``D[i, j]`` is True when individual i constrained-dominates j."""
    feas = cv == 0
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    pareto = le & lt
    both_feas = feas[:, None] & feas[None, :]
    both_infeas = ~feas[:, None] & ~feas[None, :]
    return (
        (both_feas & pareto)
        | (feas[:, None] & ~feas[None, :])
        | (both_infeas & (cv[:, None] < cv[None, :]))
    )


def sort_fronts(F: np.ndarray, cv: np.ndarray) -> list[np.ndarray]:
    """Index arrays of successive non-dominated fronts."""
    n = F.shape[0]
    if n == 0:
        return []
    D = domination_matrix(F, cv)
    dominated_by = D.sum(axis=0)
    remaining = np.ones(n, dtype=bool)
    fronts = []
    while remaining.any():
        current = np.flatnonzero(remaining & (dominated_by == 0))
        fronts.append(current)
        remaining[current] = False
        dominated_by = dominated_by - D[current].sum(axis=0)
        dominated_by[~remaining] = -1
    return fronts


def _arrays(pop: Sequence[Individual]) -> tuple[np.ndarray, np.ndarray]:
    F = np.array([ind.objectives for ind in pop], dtype=np.float64)
    cv = np.array([ind.violation for ind in pop], dtype=np.float64)
    return F, cv


def non_dominated_sort(pop: Sequence[Individual]) -> list[list[Individual]]:
    """Partition ``pop`` into fronts and set each member's ``rank``."""
    if len(pop) == 0:
        raise ContractError("non_dominated_sort needs a non-empty population")
    arity = {len(ind.objectives) for ind in pop}
    if len(arity) != 1:
        raise ContractError("objective arity differs across the population")
    fronts = []
    for rank, idx in enumerate(sort_fronts(*_arrays(pop))):
        members = [pop[i] for i in idx]
        for ind in members:
            ind.rank = rank
        fronts.append(members)
    return fronts


def crowding_array(F: np.ndarray) -> np.ndarray:
    n, k = F.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = math.inf
        return dist
    for j in range(k):
        order = np.argsort(F[:, j], kind="stable")
        col = F[order, j]
        dist[order[0]] = math.inf
        dist[order[-1]] = math.inf
        span = col[-1] - col[0]
        if span <= 0:
            continue
        gaps = (col[2:] - col[:-2]) / span
        dist[order[1:-1]] += gaps
    return dist


def crowding_distance(front: Sequence[Individual]) -> list[float]:
    """Assign and return the crowding distance of every member of ``front``."""
    if len(front) == 0:
        raise ContractError("crowding_distance needs a non-empty front")
    F, _ = _arrays(front)
    dist = crowding_array(F)
    for ind, d in zip(front, dist):
        ind.crowding = float(d)
    return dist.tolist()


# ---------------------------------------------------------------------------
# Variation operators
# ---------------------------------------------------------------------------


def bit_flip_mutation(genome: np.ndarray, p_mut: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p_mut <= 1.0:
        raise ContractError(f"p_mut must be in [0, 1], got {p_mut}")
    flips = rng.random(genome.shape[0]) < p_mut
    return np.where(flips, 1 - genome, genome).astype(np.uint8)


def single_point_crossover(
    a: np.ndarray, b: np.ndarray, rng: np.random.Generator, cut: Optional[int] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Swap suffixes after a cut point drawn uniformly from ``[1, L-1]``."""
    if a.shape != b.shape:
        raise ContractError(f"genome length mismatch: {a.shape[0]} vs {b.shape[0]}")
    L = a.shape[0]
    if L < 2:
        raise ContractError("crossover needs genomes of length >= 2")
    c = int(rng.integers(1, L)) if cut is None else cut
    if not 1 <= c <= L - 1:
        raise ContractError(f"cut point {c} outside [1, {L - 1}]")
    return (
        np.concatenate([a[:c], b[c:]]).astype(np.uint8),
        np.concatenate([b[:c], a[c:]]).astype(np.uint8),
    )


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------


class _Evaluator:
    """Memoizing wrapper; the callback is required to be pure."""

    def __init__(self, fn: EvaluateFn, arity: Optional[int] = None):
        self.fn = fn
        self.cache: dict[bytes, tuple[tuple[float, ...], float]] = {}
        self.arity = arity
        self.calls = 0

    def __call__(self, genome: np.ndarray) -> Individual:
        key = genome.tobytes()
        hit = self.cache.get(key)
        if hit is None:
            self.calls += 1
            hit = self._evaluate(genome)
            self.cache[key] = hit
        return Individual(genome.copy(), hit[0], hit[1])

    def _evaluate(self, genome: np.ndarray) -> tuple[tuple[float, ...], float]:
        try:
            objectives, violation = self.fn(genome)
        except EvaluationError:
            return (0.0,) * (self.arity or 1), math.inf
        objectives = tuple(float(x) for x in objectives)
        violation = float(violation)
        if self.arity is None:
            self.arity = len(objectives)
        elif len(objectives) != self.arity:
            raise ContractError("evaluation callback changed objective arity")
        if not all(math.isfinite(x) for x in objectives) or not math.isfinite(violation) or violation < 0:
            # discarded: maximal violation keeps it behind every real candidate
            return (0.0,) * self.arity, math.inf
        return objectives, violation


def _assign_rank_and_crowding(pop: list[Individual]) -> list[np.ndarray]:
    F, cv = _arrays(pop)
    fronts = sort_fronts(F, cv)
    for rank, idx in enumerate(fronts):
        dist = crowding_array(F[idx])
        for i, d in zip(idx, dist):
            pop[i].rank = rank
            pop[i].crowding = float(d)
    return fronts


def _tournament_winners(
    rank: np.ndarray, crowd: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """``count`` binary tournaments: lower rank, then higher crowding, then a coin flip."""
    cand = rng.integers(0, rank.shape[0], size=(count, 2))
    coin = rng.random(count) < 0.5
    a, b = cand[:, 0], cand[:, 1]
    ra, rb = rank[a], rank[b]
    ca, cb = crowd[a], crowd[b]
    pick_a = np.where(ra != rb, ra < rb, np.where(ca != cb, ca > cb, coin))
    return np.where(pick_a, a, b)


def _offspring_batch(
    pop: list[Individual], count: int, p_cx: float, p_mut: float, rng: np.random.Generator
) -> np.ndarray:
    """Tournament selection, single-point crossover and bit-flip mutation for a
    whole generation at once; same operator semantics as the public helpers."""
    genomes = np.stack([ind.genome for ind in pop])
    rank = np.array([ind.rank for ind in pop])
    crowd = np.array([ind.crowding for ind in pop])
    L = genomes.shape[1]
    pairs = count // 2
    parents = _tournament_winners(rank, crowd, 2 * pairs, rng).reshape(pairs, 2)
    pa, pb = genomes[parents[:, 0]], genomes[parents[:, 1]]
    if L >= 2:
        do_cx = rng.random(pairs) < p_cx
        cuts = rng.integers(1, L, size=pairs)
        head = (np.arange(L)[None, :] < cuts[:, None]) | ~do_cx[:, None]
    else:
        head = np.ones((pairs, L), dtype=bool)
    c1 = np.where(head, pa, pb)
    c2 = np.where(head, pb, pa)
    children = np.empty((2 * pairs, L), dtype=np.uint8)
    children[0::2], children[1::2] = c1, c2
    flips = rng.random(children.shape) < p_mut
    return (children ^ flips).astype(np.uint8)


def _survive(merged: list[Individual], m: int) -> list[Individual]:
    """(mu + lambda) environmental selection by fronts, then crowding."""
    fronts = _assign_rank_and_crowding(merged)
    chosen: list[Individual] = []
    for idx in fronts:
        if len(chosen) + len(idx) <= m:
            chosen.extend(merged[i] for i in idx)
            if len(chosen) == m:
                break
            continue
        crowd = np.array([merged[i].crowding for i in idx])
        order = np.argsort(-crowd, kind="stable")
        chosen.extend(merged[idx[k]] for k in order[: m - len(chosen)])
        break
    return chosen


def evolve(
    evaluate: EvaluateFn,
    genome_length: int,
    config: Nsga2Config = Nsga2Config(),
    repair: Optional[RepairFn] = None,
) -> EvolveResult:
    """Run NSGA-II and return the final population and its feasible rank-0 set.

    ``repair`` (optional) maps genomes into the valid search space before they
    are evaluated or compared for duplicates. It receives either one genome or
    an ``(n, L)`` batch and must work row-wise.
    """
    if genome_length < 1:
        raise ContractError("genome_length must be >= 1")
    rng = Rng(config.seed).stream("optimizer")
    m = config.population_size
    p_mut = config.p_mut if config.p_mut is not None else 1.0 / genome_length
    fix = repair if repair is not None else (lambda g: g)
    evaluator = _Evaluator(evaluate)

    pop: list[Individual] = []
    seen: set[bytes] = set()
    attempts = 0
    while len(pop) < m:
        g = fix((rng.random(genome_length) < 0.5).astype(np.uint8)).astype(np.uint8)
        attempts += 1
        k = g.tobytes()
        if config.eliminate_duplicates and k in seen and attempts < _DEDUP_ATTEMPTS * m:
            continue
        seen.add(k)
        pop.append(evaluator(g))
    _assign_rank_and_crowding(pop)

    history = []
    for _ in range(config.generations):
        seen = {ind.key() for ind in pop}
        offspring: list[Individual] = []
        spare: list[np.ndarray] = []
        for _round in range(_DEDUP_ATTEMPTS):
            batch = fix(_offspring_batch(pop, m, config.p_cx, p_mut, rng)).astype(np.uint8)
            for child in batch:
                k = child.tobytes()
                if config.eliminate_duplicates and k in seen:
                    spare.append(child)
                    continue
                seen.add(k)
                offspring.append(evaluator(child))
                if len(offspring) == m:
                    break
            if len(offspring) == m:
                break
        # search space smaller than the population: accept duplicates
        for child in spare[: m - len(offspring)]:
            offspring.append(evaluator(child))
        pop = _survive(pop + offspring, m)
        history.append(sum(1 for ind in pop if ind.rank == 0 and ind.feasible))

    front = feasible_front(pop)
    return EvolveResult(pop, front, config.generations, evaluator.calls, history)


def feasible_front(pop: Sequence[Individual]) -> list[Individual]:
    """Feasible, mutually non-dominated members with duplicate genomes removed."""
    feas = [ind for ind in pop if ind.feasible]
    if not feas:
        return []
    F, cv = _arrays(feas)
    first = sort_fronts(F, cv)[0]
    out, keys = [], set()
    for i in sorted(first, key=lambda i: (feas[i].objectives, feas[i].key())):
        k = feas[i].key()
        if k not in keys:
            keys.add(k)
            out.append(feas[i])
    return out
