"""Clustering of related series under a shared kernel per cluster.

A Chinese restaurant process with concentration alpha partitions the
series; each cluster owns one kernel tree, and members contribute
independent GP marginals under that tree. Inference alternates Gibbs
reassignment of series with the usual structure and hyper moves run
per cluster on its pooled members.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import NumericError
from .gp import DEFAULT_NOISE_VAR, Dataset, log_marginal
from .inference import ScheduleConfig, TraceState, mh_hyper_step, mh_structure_step
from .kernels import KernelAst, structure_label
from .prior import PriorConfig, ast_log_prior, sample_ast

DEFAULT_CONCENTRATION = 0.5


def crp_log_prior(assignments, concentration: float = DEFAULT_CONCENTRATION) -> float:
    """Log probability of a partition under the CRP.

    Accepts either a mapping from series index to cluster id or a
    sequence of cluster ids. The empty partition scores 0.
    """
    if concentration <= 0.0:
        raise ValueError(f"concentration {concentration} must be positive")
    values = (
        list(assignments.values())
        if isinstance(assignments, Mapping)
        else list(assignments)
    )
    n = len(values)
    if n == 0:
        return 0.0
    sizes: dict = {}
    for cid in values:
        sizes[cid] = sizes.get(cid, 0) + 1
    total = len(sizes) * math.log(concentration)
    total += sum(gammaln(size) for size in sizes.values())
    total -= gammaln(concentration + n) - gammaln(concentration)
    return float(total)


def canonical_partition(assignments: Mapping[int, int]) -> tuple[tuple[int, ...], ...]:
    """Partition as sorted member tuples, clusters ordered by least member."""
    groups: dict[int, list[int]] = {}
    for series, cid in assignments.items():
        groups.setdefault(cid, []).append(series)
    clusters = [tuple(sorted(members)) for members in groups.values()]
    return tuple(sorted(clusters, key=lambda members: members[0]))


@dataclass
class ClusterState:
    """Mutable state of the clustering chain."""

    series: tuple[Dataset, ...]
    assignments: dict[int, int]
    cluster_asts: dict[int, KernelAst]
    concentration: float
    prior: PriorConfig
    noise_var: float
    rng: np.random.Generator
    member_lls: dict[int, float] = field(default_factory=dict)
    next_cid: int = 0
    stats: dict[str, int] = field(default_factory=dict)

    @classmethod
    def init(
        cls,
        series: Sequence[Dataset],
        rng: np.random.Generator,
        concentration: float = DEFAULT_CONCENTRATION,
        prior: PriorConfig | None = None,
        noise_var: float = DEFAULT_NOISE_VAR,
    ) -> "ClusterState":
        """Start with every series in its own cluster with a prior tree."""
        if not series:
            raise ValueError("no series to cluster")
        if concentration <= 0.0:
            raise ValueError(f"concentration {concentration} must be positive")
        prior = prior if prior is not None else PriorConfig()
        state = cls(
            series=tuple(series),
            assignments={},
            cluster_asts={},
            concentration=concentration,
            prior=prior,
            noise_var=noise_var,
            rng=rng,
        )
        for index in range(len(state.series)):
            ast = sample_ast(prior, rng)
            state.assignments[index] = state.next_cid
            state.cluster_asts[state.next_cid] = ast
            state.member_lls[index] = log_marginal(
                ast, state.series[index], noise_var
            )
            state.next_cid += 1
        return state

    def bump(self, key: str) -> None:
        self.stats[key] = self.stats.get(key, 0) + 1

    def members(self, cid: int) -> list[int]:
        return sorted(i for i, c in self.assignments.items() if c == cid)


def joint_log_prob(state: ClusterState) -> float:
    """CRP prior plus tree priors plus member likelihoods, from scratch."""
    total = crp_log_prior(state.assignments, state.concentration)
    for cid, ast in state.cluster_asts.items():
        total += ast_log_prior(state.prior, ast)
        for index in state.members(cid):
            total += log_marginal(ast, state.series[index], state.noise_var)
    return total


def cached_joint_log_prob(state: ClusterState) -> float:
    """Same quantity assembled from the per-member likelihood cache."""
    total = crp_log_prior(state.assignments, state.concentration)
    for ast in state.cluster_asts.values():
        total += ast_log_prior(state.prior, ast)
    total += sum(state.member_lls.values())
    return float(total)


def _safe_ll(state: ClusterState, ast: KernelAst, index: int) -> float:
    try:
        return log_marginal(ast, state.series[index], state.noise_var)
    except NumericError:
        state.bump("reassign_numeric_zero")
        return -math.inf


def reassign_series_step(state: ClusterState, index: int) -> ClusterState:
    """Gibbs move of one series between clusters.

    The proposal set is every existing cluster (weighted by its size
    with the series removed) plus one fresh cluster weighted by the
    concentration. When the series currently sits alone, its own tree
    serves as the fresh-cluster candidate, which keeps the move
    reversible; otherwise the fresh tree is drawn from the prior.
    """
    current = state.assignments[index]
    others = {i: c for i, c in state.assignments.items() if i != index}
    sizes: dict[int, int] = {}
    for cid in others.values():
        sizes[cid] = sizes.get(cid, 0) + 1
    was_singleton = current not in sizes
    if was_singleton:
        fresh_ast = state.cluster_asts[current]
    else:
        fresh_ast = sample_ast(state.prior, state.rng)
    candidates: list[tuple[int | None, float]] = []
    for cid, size in sorted(sizes.items()):
        ll = _safe_ll(state, state.cluster_asts[cid], index)
        candidates.append((cid, math.log(size) + ll))
    fresh_ll = _safe_ll(state, fresh_ast, index)
    candidates.append((None, math.log(state.concentration) + fresh_ll))
    weights = np.array([w for _, w in candidates])
    if np.all(np.isinf(weights)):
        state.bump("reassign_stuck")
        return state
    probs = np.exp(weights - logsumexp(weights))
    probs /= probs.sum()
    choice = int(state.rng.choice(len(candidates), p=probs))
    target, _ = candidates[choice]
    if was_singleton:
        del state.cluster_asts[current]
    if target is None:
        target = state.next_cid
        state.next_cid += 1
        state.cluster_asts[target] = fresh_ast
    state.assignments[index] = target
    state.member_lls[index] = _safe_ll(state, state.cluster_asts[target], index)
    state.bump("reassign_moves")
    return state


def _cluster_tree_moves(state: ClusterState, cid: int, cfg: ScheduleConfig) -> None:
    """Run the per-cluster structure and hyper moves on pooled members."""
    members = state.members(cid)
    data = [state.series[i] for i in members]
    trace = TraceState.init(
        state.cluster_asts[cid], data, state.prior, state.rng, state.noise_var
    )
    for _ in range(cfg.hyper_steps):
        mh_hyper_step(trace)
    for _ in range(cfg.structure_steps):
        mh_structure_step(trace, cfg.size_correction)
    state.cluster_asts[cid] = trace.ast
    for index in members:
        state.member_lls[index] = log_marginal(
            trace.ast, state.series[index], state.noise_var
        )


@dataclass(frozen=True)
class ClusterSample:
    """One recorded sweep: the partition and each cluster's label."""

    sweep: int
    partition: tuple[tuple[int, ...], ...]
    labels: tuple[str, ...]


def cluster_sweep(state: ClusterState, cfg: ScheduleConfig) -> ClusterState:
    """One full sweep: reassign every series, then move every tree."""
    for index in range(len(state.series)):
        reassign_series_step(state, index)
    for cid in sorted(state.cluster_asts):
        _cluster_tree_moves(state, cid, cfg)
    return state


def run_cluster_schedule(
    series: Sequence[Dataset],
    sweeps: int | None,
    cfg: ScheduleConfig,
    concentration: float = DEFAULT_CONCENTRATION,
    prior: PriorConfig | None = None,
    noise_var: float = DEFAULT_NOISE_VAR,
) -> list[ClusterSample]:
    """Run the clustering chain and record one partition per sweep.

    A single series degenerates to ordinary structure search: every
    sweep keeps the one-cluster partition and only the tree moves.
    """
    prior = prior if prior is not None else PriorConfig()
    total_sweeps = cfg.sweeps if sweeps is None else int(sweeps)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    state = ClusterState.init(series, rng, concentration, prior, noise_var)
    samples: list[ClusterSample] = []
    for sweep in range(total_sweeps):
        cluster_sweep(state, cfg)
        partition = canonical_partition(state.assignments)
        labels = []
        for members in partition:
            cid = state.assignments[members[0]]
            labels.append(structure_label(state.cluster_asts[cid]))
        samples.append(
            ClusterSample(sweep=sweep, partition=partition, labels=tuple(labels))
        )
    return samples
