"""Markov chain inference over kernel trees and their hyperparameters.

Structure moves pick a node uniformly at random and resimulate the
subtree under it from the prior. Because the proposal density over the
regrown subtree equals its prior factor, everything except the
likelihoods and the node-count correction cancels from the
Metropolis-Hastings ratio:

    alpha = min(1, [size(T) / size(T')] * p(D | T') / p(D | T))

Hyperparameter moves either resimulate one site from its prior (the
ratio then collapses to a likelihood ratio the same way) or follow the
gradient of the log joint in unconstrained coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import expit

from .errors import NumericError, UnsupportedMoveError
from .gp import DEFAULT_NOISE_VAR, Dataset, GpPosterior, log_marginal_and_chol, predict
from .kernels import (
    BaseKernel,
    HyperSite,
    KernelAst,
    Operator,
    cov_matrices,
    hyper_sites,
    leaf_cov_grads,
    replace_subtree,
    structure_label,
    with_hyper,
)
from .prior import (
    PriorConfig,
    ast_log_prior,
    sample_ast,
    sample_hyper,
    sample_subtree,
    unconstrained_log_prior_grad,
)

HYPER_MODES = ("mh", "gradient", "mixed")


@dataclass(frozen=True)
class ScheduleConfig:
    """Knobs for one inference run."""

    sweeps: int = 30
    hyper_steps: int = 100
    structure_steps: int = 100
    step_size: float = 0.01
    chains: int = 1
    seed: int = 0
    burn_in: float = 0.2
    hyper_mode: str = "mixed"
    size_correction: bool = True

    def __post_init__(self):
        if self.sweeps < 0 or self.hyper_steps < 0 or self.structure_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.chains < 1:
            raise ValueError(f"chains {self.chains} must be at least 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError(f"burn_in {self.burn_in} outside [0, 1)")
        if self.hyper_mode not in HYPER_MODES:
            raise ValueError(
                f"hyper_mode {self.hyper_mode!r} not one of {HYPER_MODES}"
            )
        if self.step_size < 0.0:
            raise ValueError(f"step_size {self.step_size} must be non-negative")


@dataclass
class TraceState:
    """One chain's mutable position: tree, data, and cached scores.

    `datasets` may hold several series; the likelihood is then the sum
    of independent GP marginals, which is what cluster moves need.
    """

    ast: KernelAst
    datasets: tuple[Dataset, ...]
    prior: PriorConfig
    noise_var: float
    rng: np.random.Generator
    log_likelihood: float = 0.0
    log_prior: float = 0.0
    chols: tuple = ()
    stats: dict[str, int] = field(default_factory=dict)

    @classmethod
    def init(
        cls,
        ast: KernelAst,
        data,
        prior: PriorConfig,
        rng: np.random.Generator,
        noise_var: float = DEFAULT_NOISE_VAR,
    ) -> "TraceState":
        datasets = (data,) if isinstance(data, Dataset) else tuple(data)
        state = cls(
            ast=ast,
            datasets=datasets,
            prior=prior,
            noise_var=noise_var,
            rng=rng,
        )
        state.log_likelihood, state.chols = _total_loglik(
            ast, datasets, noise_var
        )
        state.log_prior = ast_log_prior(prior, ast)
        return state

    @property
    def log_joint(self) -> float:
        return self.log_likelihood + self.log_prior

    def bump(self, key: str) -> None:
        self.stats[key] = self.stats.get(key, 0) + 1

    def refresh(self) -> None:
        """Recompute every cached score from the current tree."""
        self.log_likelihood, self.chols = _total_loglik(
            self.ast, self.datasets, self.noise_var
        )
        self.log_prior = ast_log_prior(self.prior, self.ast)


def _total_loglik(
    ast: KernelAst, datasets: Sequence[Dataset], noise_var: float
) -> tuple[float, tuple]:
    total = 0.0
    chols = []
    for data in datasets:
        value, factor = log_marginal_and_chol(ast, data, noise_var)
        total += value
        chols.append(factor)
    return total, tuple(chols)


def _log_open_uniform(rng: np.random.Generator) -> float:
    u = rng.uniform()
    while u <= 0.0:
        u = rng.uniform()
    return math.log(u)


def mh_structure_step(state: TraceState, size_correction: bool = True) -> TraceState:
    """One resimulation MH move on the tree structure.

    Rejections leave everything but the move counters untouched. A
    proposal whose covariance cannot be factored counts as an automatic
    rejection rather than an error.
    """
    nodes = sorted(state.ast.nodes)
    target = nodes[int(state.rng.integers(len(nodes)))]
    regrown = sample_subtree(state.prior, target, state.rng)
    proposal = replace_subtree(state.ast, target, regrown)
    try:
        proposal_ll, proposal_chols = _total_loglik(
            proposal, state.datasets, state.noise_var
        )
    except NumericError:
        state.bump("structure_numeric_reject")
        state.bump("structure_reject")
        return state
    log_alpha = proposal_ll - state.log_likelihood
    if size_correction:
        log_alpha += math.log(len(state.ast)) - math.log(len(proposal))
    if _log_open_uniform(state.rng) < log_alpha:
        state.ast = proposal
        state.log_likelihood = proposal_ll
        state.chols = proposal_chols
        state.log_prior = ast_log_prior(state.prior, proposal)
        state.bump("structure_accept")
    else:
        state.bump("structure_reject")
    return state


def mh_hyper_step(
    state: TraceState, site: tuple[int, int] | None = None
) -> TraceState:
    """One prior-resimulation MH move on a single hyperparameter site.

    With no site given, one is chosen uniformly among all sites in the
    tree, changepoint locations included. Trees without hypers no-op.
    """
    sites = hyper_sites(state.ast)
    if not sites:
        state.bump("hyper_skip")
        return state
    if site is None:
        site = sites[int(state.rng.integers(len(sites)))]
    node, slot = site
    old = state.ast.nodes[node].hypers[slot]
    proposal_site = sample_hyper(state.rng, old.offset)
    proposal = with_hyper(state.ast, node, slot, proposal_site)
    try:
        proposal_ll, proposal_chols = _total_loglik(
            proposal, state.datasets, state.noise_var
        )
    except NumericError:
        state.bump("hyper_numeric_reject")
        state.bump("hyper_reject")
        return state
    if _log_open_uniform(state.rng) < proposal_ll - state.log_likelihood:
        state.ast = proposal
        state.log_likelihood = proposal_ll
        state.chols = proposal_chols
        state.log_prior = ast_log_prior(state.prior, proposal)
        state.bump("hyper_accept")
    else:
        state.bump("hyper_reject")
    return state


# ---------------------------------------------------------------------------
# Gradient moves


def gradient_supported(ast: KernelAst) -> bool:
    """Whether the tree admits gradient moves at all."""
    return not any(
        bundle.is_branch and bundle.operator is Operator.CHANGEPOINT
        for bundle in ast.nodes.values()
    )


def gradient_sites(ast: KernelAst) -> list[tuple[int, int]]:
    """Hyper sites gradient steps move: leaf hypers except white noise.

    White-noise scales enter the covariance only on the diagonal tie
    pattern, so they stay on MH moves, as do changepoint locations.
    """
    sites = []
    for node, slot in hyper_sites(ast):
        bundle = ast.nodes[node]
        if bundle.is_branch:
            continue
        if bundle.kernel is BaseKernel.WN:
            continue
        sites.append((node, slot))
    return sites


def hyper_gradients(state: TraceState) -> dict[tuple[int, int], float]:
    """Gradient of the log joint in unconstrained coordinates.

    Reverse sweep over the tree: the root covariance adjoint is
    0.5 (alpha alpha^T - A^{-1}); a sum node passes its adjoint to both
    children, a product node multiplies it elementwise by the sibling's
    covariance; at a leaf the adjoint contracts against the leaf's
    hyperparameter Jacobian. The chain rule through the softplus link
    and the Logistic prior term finish the job.
    """
    if not gradient_supported(state.ast):
        raise UnsupportedMoveError(
            "tree contains a changepoint; gradient moves are not defined for it"
        )
    sites = gradient_sites(state.ast)
    grads = {site: 0.0 for site in sites}
    if not sites:
        return grads
    nodes = state.ast.nodes
    for data, factor in zip(state.datasets, state.chols):
        if factor is None:
            continue
        mats = cov_matrices(state.ast, data.xs)
        alpha = cho_solve((factor, True), data.ys)
        a_inv = cho_solve((factor, True), np.eye(len(data)))
        adjoints = {1: 0.5 * (np.outer(alpha, alpha) - a_inv)}
        order = sorted(mats)
        for node in order:
            bundle = nodes[node]
            if not bundle.is_branch:
                continue
            parent = adjoints[node]
            left, right = 2 * node, 2 * node + 1
            if bundle.operator is Operator.SUM:
                adjoints[left] = parent
                adjoints[right] = parent
            elif bundle.operator is Operator.PRODUCT:
                adjoints[left] = parent * mats[right]
                adjoints[right] = parent * mats[left]
            else:
                raise UnsupportedMoveError("changepoint in gradient sweep")
        for node, slot in sites:
            jac = leaf_cov_grads(nodes[node], data.xs)[slot]
            grads[(node, slot)] += float(np.sum(adjoints[node] * jac))
    for node, slot in sites:
        site = nodes[node].hypers[slot]
        dh_dt = -float(expit(-site.unconstrained))
        grads[(node, slot)] *= dh_dt
        grads[(node, slot)] += unconstrained_log_prior_grad(site.unconstrained)
    return grads


# Unconstrained coordinates are kept where the softplus link still
# produces a constrained value strictly above the offset in floats:
# beyond t ~ 40 adding softplus(-t) to an offset like 0.01 rounds to
# the offset itself, and very negative t overflows downstream algebra.
_T_FLOOR = -500.0


def _t_ceiling(offset: float) -> float:
    return 700.0 if offset == 0.0 else 40.0


def gradient_step_hypers(state: TraceState, step_size: float) -> TraceState:
    """One ascent step on all gradient-eligible sites at once."""
    grads = hyper_gradients(state)
    state.bump("gradient_steps")
    if not grads or step_size == 0.0:
        return state
    ast = state.ast
    for (node, slot), grad in grads.items():
        old = ast.nodes[node].hypers[slot]
        moved_t = min(
            max(old.unconstrained + step_size * grad, _T_FLOOR),
            _t_ceiling(old.offset),
        )
        ast = with_hyper(
            ast, node, slot, HyperSite.from_unconstrained(moved_t, old.offset)
        )
    state.ast = ast
    state.refresh()
    return state


# ---------------------------------------------------------------------------
# Schedules


@dataclass(frozen=True)
class PosteriorSample:
    """One recorded point of a chain, taken at the end of a sweep."""

    chain: int
    sweep: int
    label: str
    ast: KernelAst
    log_likelihood: float
    log_prior: float

    @property
    def log_joint(self) -> float:
        return self.log_likelihood + self.log_prior


def _mh_fallback_sites(ast: KernelAst) -> list[tuple[int, int]]:
    eligible = set(gradient_sites(ast))
    return [site for site in hyper_sites(ast) if site not in eligible]


def _hyper_phase(state: TraceState, cfg: ScheduleConfig) -> None:
    for _ in range(cfg.hyper_steps):
        if cfg.hyper_mode == "mh":
            mh_hyper_step(state)
            continue
        can_grad = gradient_supported(state.ast) and gradient_sites(state.ast)
        if not can_grad:
            mh_hyper_step(state)
            continue
        gradient_step_hypers(state, cfg.step_size)
        if cfg.hyper_mode == "mixed":
            for site in _mh_fallback_sites(state.ast):
                mh_hyper_step(state, site)


def run_schedule(
    data,
    sweeps: int | None,
    cfg: ScheduleConfig,
    prior: PriorConfig | None = None,
    noise_var: float = DEFAULT_NOISE_VAR,
    init_ast: KernelAst | None = None,
) -> list[PosteriorSample]:
    """Run the full schedule and record one sample per sweep per chain.

    Each sweep interleaves a hyperparameter phase with a block of
    structure moves. Chains draw their generators from one seed
    sequence, so runs are reproducible given `cfg.seed`. Pass `sweeps`
    as None to take the count from the config.
    """
    prior = prior if prior is not None else PriorConfig()
    total_sweeps = cfg.sweeps if sweeps is None else int(sweeps)
    samples: list[PosteriorSample] = []
    seed_seq = np.random.SeedSequence(cfg.seed)
    for chain, child_seq in enumerate(seed_seq.spawn(cfg.chains)):
        rng = np.random.default_rng(child_seq)
        ast = init_ast if init_ast is not None else sample_ast(prior, rng)
        state = TraceState.init(ast, data, prior, rng, noise_var)
        for sweep in range(total_sweeps):
            try:
                _hyper_phase(state, cfg)
                for _ in range(cfg.structure_steps):
                    mh_structure_step(state, cfg.size_correction)
            except NumericError as err:
                raise NumericError(
                    f"chain {chain} sweep {sweep}: {err}", jitters=err.jitters
                ) from err
            samples.append(
                PosteriorSample(
                    chain=chain,
                    sweep=sweep,
                    label=structure_label(state.ast),
                    ast=state.ast,
                    log_likelihood=state.log_likelihood,
                    log_prior=state.log_prior,
                )
            )
    return samples


@dataclass(frozen=True)
class HyperTracePoint:
    """One per-step record of a fixed-structure hyperparameter chain."""

    chain: int
    step: int
    values: tuple[float, ...]
    log_joint: float


def run_hyper_inference(
    data: Dataset,
    skeleton: KernelAst,
    steps: int,
    method: str,
    cfg: ScheduleConfig,
    prior: PriorConfig | None = None,
    noise_var: float = DEFAULT_NOISE_VAR,
) -> tuple[list[HyperTracePoint], list[TraceState]]:
    """Fixed-structure hyperparameter inference with per-step traces.

    Every chain keeps the skeleton's shape but redraws all hypers from
    the prior as its starting point. `method` is "mh" or "gradient".
    Returns the traces and each chain's final state.
    """
    if method not in ("mh", "gradient"):
        raise ValueError(f"method {method!r} not one of ('mh', 'gradient')")
    prior = prior if prior is not None else PriorConfig()
    traces: list[HyperTracePoint] = []
    finals: list[TraceState] = []
    seed_seq = np.random.SeedSequence(cfg.seed)
    for chain, child_seq in enumerate(seed_seq.spawn(cfg.chains)):
        rng = np.random.default_rng(child_seq)
        ast = skeleton
        for node, slot in hyper_sites(skeleton):
            offset = skeleton.nodes[node].hypers[slot].offset
            ast = with_hyper(ast, node, slot, sample_hyper(rng, offset))
        state = TraceState.init(ast, data, prior, rng, noise_var)
        site_order = hyper_sites(ast)
        for step in range(steps):
            if method == "mh":
                mh_hyper_step(state)
            else:
                gradient_step_hypers(state, cfg.step_size)
            values = tuple(
                state.ast.nodes[node].hypers[slot].constrained
                for node, slot in site_order
            )
            traces.append(HyperTracePoint(chain, step, values, state.log_joint))
        finals.append(state)
    return traces, finals


# ---------------------------------------------------------------------------
# Aggregation over recorded samples


def drop_burn_in(
    samples: Sequence[PosteriorSample], fraction: float
) -> list[PosteriorSample]:
    """Discard the first `fraction` of sweeps of every chain."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"burn-in fraction {fraction} outside [0, 1)")
    by_chain: dict[int, int] = {}
    for sample in samples:
        by_chain[sample.chain] = max(by_chain.get(sample.chain, -1), sample.sweep)
    kept = []
    for sample in samples:
        cutoff = math.ceil((by_chain[sample.chain] + 1) * fraction)
        if sample.sweep >= cutoff:
            kept.append(sample)
    return kept


def structure_histogram(samples: Sequence[PosteriorSample]) -> dict[str, int]:
    """Occupancy counts of structure labels, highest count first."""
    counts: dict[str, int] = {}
    for sample in samples:
        counts[sample.label] = counts.get(sample.label, 0) + 1
    return dict(
        sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    )


def map_structure(samples: Sequence[PosteriorSample]) -> str:
    """Most frequent structure label; ties break lexicographically."""
    if not samples:
        raise ValueError("no samples to summarize")
    counts = structure_histogram(samples)
    return next(iter(counts))


def averaged_prediction(
    samples: Sequence[PosteriorSample],
    train: Dataset,
    probe_xs,
    noise_var: float = DEFAULT_NOISE_VAR,
    noisy: bool = False,
    label: str | None = None,
) -> GpPosterior:
    """Mixture predictive over recorded samples, optionally one label only.

    The mixture mean is the average of per-sample means and the mixture
    covariance adds the spread between those means.
    """
    chosen = [s for s in samples if label is None or s.label == label]
    if not chosen:
        raise ValueError("no samples to average over")
    probe = np.asarray(probe_xs, dtype=float)
    k = probe.size
    mean_acc = np.zeros(k)
    cov_acc = np.zeros((k, k))
    for sample in chosen:
        post = predict(sample.ast, train, probe, noise_var, noisy)
        mean_acc += post.mean
        cov_acc += post.cov + np.outer(post.mean, post.mean)
    mean = mean_acc / len(chosen)
    cov = cov_acc / len(chosen) - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    return GpPosterior(at=probe, mean=mean, cov=cov)
