"""Genetic matching: evolve the scaling of a Mahalanobis metric for balance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DomainError
from ..panel import Unit
from .balance import BalanceReport, MatchSet, balance_report, covariate_matrix, smd


@dataclass(frozen=True)
class GeneticConfig:
    population: int = 50
    generations: int = 100
    tournament: int = 3
    mutation_sd: float = 0.1
    elitism: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2 or self.generations < 0:
            raise ConfigError("population must be >= 2 and generations >= 0")
        if not 0 <= self.elitism <= self.population:
            raise ConfigError("elitism must lie in 0..population")
        if self.tournament < 1 or self.mutation_sd < 0:
            raise ConfigError("tournament must be >= 1 and mutation_sd >= 0")


@dataclass(frozen=True)
class GeneticResult:
    match: MatchSet
    balance: BalanceReport
    log_weights: np.ndarray
    history: np.ndarray  # best fitness after each generation
    identity_fitness: float


def _whitener(X: np.ndarray) -> np.ndarray:
    """Inverse square root of the covariance (pseudo-inverse on degenerate directions)."""
    if len(X) < 2:
        return np.eye(X.shape[1])
    S = np.atleast_2d(np.cov(X, rowvar=False))
    vals, vecs = np.linalg.eigh(S)
    tol = max(vals.max(initial=0.0), 1.0) * 1e-12
    inv = np.where(vals > tol, 1.0 / np.sqrt(np.where(vals > tol, vals, 1.0)), 0.0)
    return (vecs * inv) @ vecs.T


def nearest(dist: np.ndarray, ids: Sequence[str], k: int) -> np.ndarray:
    """Indices of the ``k`` smallest distances, ties broken by id."""
    order = sorted(range(len(ids)), key=lambda i: (dist[i], ids[i]))
    return np.array(order[:k], dtype=int)


def genetic_match(treated: Unit, pool: Sequence[Unit], k: int = 10, covariates: Sequence[str] | None = None,
                  seed: int = 0, config: GeneticConfig | None = None, years: np.ndarray | None = None) -> GeneticResult:
    """Pick ``k`` controls for ``treated`` from ``pool`` (without replacement).

    Distances are Mahalanobis after scaling each whitened covariate by
    ``exp(log_weight)``; the GA minimises the worst post-match |SMD|. The
    identity metric is in the starting population and elites survive, so
    the result is never worse than plain Mahalanobis matching. Dynamic
    covariates are averaged over ``years`` (default: years before the
    treated unit's treatment year).
    """
    cfg = config or GeneticConfig(seed=seed)
    pool = sorted(pool, key=lambda u: u.id)
    if k < 1:
        raise DomainError("k must be >= 1")
    if len(pool) < k:
        raise DomainError(f"pool of {len(pool)} is smaller than k={k}")
    if any(u.id == treated.id for u in pool):
        raise DomainError("treated unit is in its own pool")
    names = list(covariates) if covariates is not None else sorted(
        set(treated.covariates.static) | set(treated.covariates.dynamic))
    if not names:
        raise DomainError("no matching covariates")
    if years is None:
        years = treated.pre_years()
    x1 = covariate_matrix([treated], names, years)
    X0 = covariate_matrix(pool, names, years)
    scale = np.vstack([x1, X0]).std(axis=0, ddof=1)
    Z = (X0 - x1) @ _whitener(np.vstack([x1, X0]))
    ids = [u.id for u in pool]
    p = len(names)

    def select(logw):
        d = np.sqrt(((Z * np.exp(logw)) ** 2).sum(axis=1))
        return nearest(d, ids, k)

    def fitness(logw):
        return float(np.abs(smd(x1, X0[select(logw)], scale=scale)).max())

    rng = np.random.default_rng(cfg.seed)
    pop = np.vstack([np.zeros(p), rng.normal(0.0, 1.0, (cfg.population - 1, p))])
    fit = np.array([fitness(g) for g in pop])
    identity = fit[0]
    history = []
    for _ in range(cfg.generations):
        rank = np.lexsort((np.arange(len(fit)), fit))
        children = [pop[i] for i in rank[: cfg.elitism]]
        while len(children) < cfg.population:
            parents = []
            for _ in range(2):
                entrants = rng.choice(cfg.population, size=cfg.tournament, replace=False)
                parents.append(pop[entrants[np.argmin(fit[entrants])]])
            mask = rng.random(p) < 0.5
            child = np.where(mask, parents[0], parents[1]) + rng.normal(0.0, cfg.mutation_sd, p)
            children.append(child)
        pop = np.vstack(children)
        fit = np.concatenate([fit[rank[: cfg.elitism]], [fitness(g) for g in pop[cfg.elitism:]]])
        history.append(fit.min())
    best = int(np.lexsort((np.arange(len(fit)), fit))[0])
    chosen = select(pop[best])
    m = MatchSet(treated.id, {ids[i]: 1.0 / k for i in sorted(chosen, key=lambda i: ids[i])}, "genetic")
    report = balance_report(names, x1, X0, X0[chosen], scale=scale)
    return GeneticResult(m, report, pop[best].copy(), np.array(history), float(identity))
