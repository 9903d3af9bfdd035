"""Seedable real-coded genetic algorithm for bound-constrained minimization.

Blend crossover, Gaussian mutation, tournament selection and elitism.
Runs are fully deterministic for a fixed seed and configuration; every
evaluated candidate is clamped into the variable bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BLEND_ALPHA = 0.1  # crossover samples within the parent span extended by 10%


class NonFiniteFitnessError(RuntimeError):
    """Fitness returned nan/inf; carries the offending vector."""

    def __init__(self, x: np.ndarray, value: float):
        self.x = np.asarray(x, dtype=float)
        self.value = value
        super().__init__(f"non-finite fitness {value!r} at {self.x.tolist()}")


@dataclass
class GaConfig:
    population: int = 60
    generations: int = 300
    crossover_rate: float = 0.9
    mutation_rate: float = 0.15
    mutation_scale: float = 0.05   # stddev as a fraction of each variable's range
    elitism: int = 2
    seed: int = 0
    tolerance: float = 1e-10       # improvement below this counts as stagnant
    stall_generations: int = 50    # early stop after this many stagnant generations
    polish: bool = True            # let callers run a deterministic local refinement

    def validate(self) -> None:
        if self.population < 2:
            raise ValueError(f"population must be >= 2, got {self.population}")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not 0 <= self.elitism < self.population:
            raise ValueError(
                f"elitism must be in [0, population), got {self.elitism}")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")


@dataclass
class GaResult:
    x: np.ndarray
    fun: float
    history: np.ndarray   # best-so-far objective per generation (non-increasing)
    generations: int
    evaluations: int


def _evaluate(fitness, X, vectorized):
    if vectorized:
        vals = np.asarray(fitness(X), dtype=float)
    else:
        vals = np.array([float(fitness(x)) for x in X], dtype=float)
    if vals.shape != (X.shape[0],):
        raise ValueError(f"fitness returned shape {vals.shape}, expected ({X.shape[0]},)")
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteFitnessError(X[i], vals[i])
    return vals


def minimize(fitness, bounds, cfg: GaConfig, *, vectorized: bool = False,
             seeds=None) -> GaResult:
    """Minimize fitness over a box.

    fitness takes one vector (default) or, with vectorized=True, a
    (population, n) matrix returning (population,) values. ``seeds`` are
    optional starting individuals injected into the initial population
    (clamped to bounds).
    """
    cfg.validate()
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError(f"bounds must be (n, 2), got {bounds.shape}")
    lo, hi = bounds[:, 0], bounds[:, 1]
    if not (np.all(np.isfinite(bounds)) and np.all(lo <= hi)):
        raise ValueError("bounds must be finite with lo <= hi")

    n = len(lo)
    rng = np.random.default_rng(cfg.seed)
    span = hi - lo

    X = lo + rng.random((cfg.population, n)) * span
    if seeds is not None:
        for i, s in enumerate(np.atleast_2d(np.asarray(seeds, dtype=float))):
            if i >= cfg.population:
                break
            X[i] = np.clip(s, lo, hi)

    vals = _evaluate(fitness, X, vectorized)
    evaluations = cfg.population

    order = np.argsort(vals, kind="stable")
    X, vals = X[order], vals[order]
    best_x, best_val = X[0].copy(), float(vals[0])

    history = [best_val]
    stall = 0
    gens_run = 0
    n_children = cfg.population - cfg.elitism
    mut_sigma = cfg.mutation_scale * span

    for _ in range(cfg.generations):
        gens_run += 1

        # tournament (k=2) picks two parents per child
        cand = rng.integers(0, cfg.population, size=(n_children, 2, 2))
        pa = np.where(vals[cand[:, 0, 0]] <= vals[cand[:, 0, 1]],
                      cand[:, 0, 0], cand[:, 0, 1])
        pb = np.where(vals[cand[:, 1, 0]] <= vals[cand[:, 1, 1]],
                      cand[:, 1, 0], cand[:, 1, 1])
        A, B = X[pa], X[pb]

        # blend crossover within the parent span +- 10%
        do_cross = rng.random(n_children) < cfg.crossover_rate
        g_lo = np.minimum(A, B)
        g_hi = np.maximum(A, B)
        pad = BLEND_ALPHA * (g_hi - g_lo)
        children = (g_lo - pad) + rng.random((n_children, n)) * (g_hi - g_lo + 2 * pad)
        children[~do_cross] = A[~do_cross]

        # per-gene Gaussian mutation
        mutate = rng.random((n_children, n)) < cfg.mutation_rate
        noise = rng.standard_normal((n_children, n)) * mut_sigma
        children = np.where(mutate, children + noise, children)
        np.clip(children, lo, hi, out=children)

        child_vals = _evaluate(fitness, children, vectorized)
        evaluations += n_children

        X = np.vstack([X[:cfg.elitism], children])
        vals = np.concatenate([vals[:cfg.elitism], child_vals])
        order = np.argsort(vals, kind="stable")
        X, vals = X[order], vals[order]

        if vals[0] < best_val - cfg.tolerance:
            stall = 0
        else:
            stall += 1
        if vals[0] < best_val:
            best_val = float(vals[0])
            best_x = X[0].copy()
        history.append(best_val)

        if stall >= cfg.stall_generations:
            break

    return GaResult(x=best_x, fun=best_val, history=np.array(history),
                    generations=gens_run, evaluations=evaluations)
