"""
Architecture search: the closed-form optimum of a fitted law snapped to a real
shape, throughput maximization under a predicted-loss ceiling, Pareto fronts,
and the GQA local search with early stopping.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from archmodel import (
    ArchGridSpec,
    ArchitectureConfig,
    BudgetTooSmallException,
    InfeasibleHeadCountException,
    Snapping,
    count_params,
    derived_metrics,
    enumerate_variants,
    feasible_gqa,
    realize_architecture,
    shape_name,
    snap,
    solve_intermediate_size,
)
from costmodel import (
    HardwareProfile,
    MemoryCapacityException,
    Workload,
    builtin_hardware,
    estimate_throughput,
)
from fitter import FitOptions, fit_chinchilla, fit_conditional_law
from laws import ConditionalLaw, RefLossSource, conditional_loss, optimal_xr, ref_loss

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
DEFAULT_BASELINE_GQA = 4
DEFAULT_EPSILON = 0.002
DEFAULT_WORKLOAD = Workload(batch=16, t_in=1024, t_out=256)


class InvalidSearchProblemException(ValueError):
    pass


class NoFeasibleCandidateException(ValueError):
    def __init__(self, message: str, min_predicted_loss: float):
        super().__init__(message)
        self.min_predicted_loss = min_predicted_loss


@dataclass(frozen=True)
class SearchProblem:
    law: ConditionalLaw
    ref: RefLossSource
    n_target: int
    d_tokens: float
    loss_budget: float
    constraints: ArchGridSpec
    hardware: HardwareProfile
    workload: Workload = DEFAULT_WORKLOAD

    def reference_loss(self) -> float:
        return ref_loss(self.ref, self.n_target, self.d_tokens)

    def check(self) -> float:
        """
        :return: the reference loss L_opt(n_target, d_tokens) the budget was checked against
        """
        self.law.check()
        self.hardware.check()
        self.workload.check()
        self.constraints.check()
        if self.constraints.n_target != self.n_target:
            raise InvalidSearchProblemException("grid n_target differs from the problem's n_target")
        if self.d_tokens <= 0:
            raise InvalidSearchProblemException("d_tokens must be positive")
        l_opt = self.reference_loss()
        if math.isnan(self.loss_budget) or self.loss_budget < l_opt:
            raise InvalidSearchProblemException(
                f"loss budget {self.loss_budget} is below the reference loss {l_opt:.4f}"
            )
        return l_opt


@dataclass(frozen=True)
class CandidateEvaluation:
    arch: ArchitectureConfig
    x: float
    r: float
    predicted_loss: float
    modeled_throughput: float
    feasible: bool
    dominated: bool = False
    fits_memory: bool = True


@dataclass(frozen=True)
class SearchResult:
    candidates: Tuple[CandidateEvaluation, ...]
    best: CandidateEvaluation
    pareto: Tuple[CandidateEvaluation, ...]
    reference_loss: float


@dataclass(frozen=True)
class GqaEvaluation:
    gqa: int
    arch: ArchitectureConfig
    evaluator_loss: float
    modeled_throughput: float
    accepted: bool


@dataclass(frozen=True)
class AlgorithmResult:
    architecture: ArchitectureConfig
    gqa: int
    law: ConditionalLaw
    ref: RefLossSource
    search: Optional[SearchResult] = None
    gqa_trace: Tuple[GqaEvaluation, ...] = ()
    notes: List[str] = field(default_factory=list)


def closed_form_architecture(law: ConditionalLaw, n_target: int, n_layers: int, d_head: int, gqa: int,
                             snapping: Snapping = Snapping()) -> ArchitectureConfig:
    """
    Snaps the law's optimum (x*, r*) to a shape at the parameter budget:
    d_model = x* sqrt(N) to the hidden-size multiple, then heads and MLP width
    from r*.
    """
    x_star, r_star = optimal_xr(law)
    d_model = snap(x_star * math.sqrt(n_target), snapping.hidden_multiple(d_head))
    try:
        if d_model <= 0:
            raise InfeasibleHeadCountException("hidden size snaps to zero")
        config = realize_architecture(n_target, n_layers, d_model, d_head, gqa, r_star, snapping)
    except (BudgetTooSmallException, InfeasibleHeadCountException) as exc:
        raise InfeasibleHeadCountException(
            f"cannot realize optimum x*={x_star:.4f}, r*={r_star:.4f}: {exc}"
        ) from exc
    logger.info("closed-form optimum x*=%.4f r*=%.4f -> %s", x_star, r_star, config.name)
    return config


def modeled_throughput(config: ArchitectureConfig, hardware: HardwareProfile, workload: Workload) -> Tuple[float, bool]:
    """
    :return: (tokens per second, fits in memory); shapes that do not fit score 0
    """
    try:
        return estimate_throughput(config, hardware, workload).tokens_per_second, True
    except MemoryCapacityException as exc:
        logger.warning("%s", exc)
        return 0.0, False


def _dominance_mask(losses: np.ndarray, throughputs: np.ndarray) -> np.ndarray:
    # [i, j] is True when candidate i dominates candidate j
    no_worse = (losses[:, None] <= losses[None, :]) & (throughputs[:, None] >= throughputs[None, :])
    strictly = (losses[:, None] < losses[None, :]) | (throughputs[:, None] > throughputs[None, :])
    return no_worse & strictly


def mark_dominated(candidates: Sequence[CandidateEvaluation]) -> List[CandidateEvaluation]:
    """
    :return: the candidates, in order, with their dominated flag set
    """
    if not candidates:
        return []
    losses = np.array([c.predicted_loss for c in candidates], dtype=float)
    throughputs = np.array([c.modeled_throughput for c in candidates], dtype=float)
    dominated = _dominance_mask(losses, throughputs).any(axis=0)
    return [replace(c, dominated=bool(flag)) for c, flag in zip(candidates, dominated)]


def pareto_front(candidates: Sequence[CandidateEvaluation]) -> List[CandidateEvaluation]:
    """
    Candidates no other candidate beats on both predicted loss and throughput.
    Input order is preserved.
    """
    return [c for c in mark_dominated(candidates) if not c.dominated]


def _best_key(candidate: CandidateEvaluation):
    return (-candidate.modeled_throughput, candidate.predicted_loss, candidate.arch.shape_key())


def constrained_search(problem: SearchProblem) -> SearchResult:
    """
    Maximizes modeled throughput over the grid subject to predicted loss <=
    loss_budget. Every candidate is scored against the single reference loss
    L_opt(n_target, d_tokens).
    """
    l_opt = problem.check()
    variants = enumerate_variants(problem.constraints)
    if not variants:
        raise InvalidSearchProblemException("the grid produced no buildable variants")

    evaluations = []
    for config in variants:
        metrics = derived_metrics(config)
        loss = conditional_loss(problem.law, metrics.x, metrics.r, l_opt)
        throughput, fits = modeled_throughput(config, problem.hardware, problem.workload)
        evaluations.append(CandidateEvaluation(
            arch=config, x=metrics.x, r=metrics.r, predicted_loss=loss,
            modeled_throughput=throughput, feasible=loss <= problem.loss_budget, fits_memory=fits,
        ))
        logger.debug("%s loss=%.5f tput=%.1f", config.name, loss, throughput)

    evaluations = mark_dominated(evaluations)
    eligible = [c for c in evaluations if c.feasible and c.fits_memory]
    if not eligible:
        lowest = min(c.predicted_loss for c in evaluations)
        raise NoFeasibleCandidateException(
            f"no feasible candidate: lowest predicted loss {lowest:.5f} vs budget {problem.loss_budget:.5f}",
            min_predicted_loss=lowest,
        )
    best = min(eligible, key=_best_key)
    logger.info("search best %s: loss=%.5f tput=%.1f (%d of %d feasible)",
                best.arch.name, best.predicted_loss, best.modeled_throughput, len(eligible), len(evaluations))
    return SearchResult(
        candidates=tuple(evaluations),
        best=best,
        pareto=tuple(c for c in evaluations if not c.dominated),
        reference_loss=l_opt,
    )


def _with_gqa(base: ArchitectureConfig, n_target: int, gqa: int, f_multiple: int) -> ArchitectureConfig:
    f_size = solve_intermediate_size(
        n_target, base.n_layers, base.d_model, base.n_head, base.d_head, gqa, f_multiple
    )
    return ArchitectureConfig(
        name=shape_name(base.n_layers, base.d_model, base.n_head, gqa, f_size),
        n_layers=base.n_layers, d_model=base.d_model, n_head=base.n_head,
        d_head=base.d_head, gqa=gqa, f_size=f_size,
    )


def gqa_local_search(
    base: ArchitectureConfig,
    evaluator: Callable[[int], float],
    baseline_gqa: int = DEFAULT_BASELINE_GQA,
    epsilon: float = DEFAULT_EPSILON,
    hardware: Optional[HardwareProfile] = None,
    workload: Workload = DEFAULT_WORKLOAD,
    n_target: Optional[int] = None,
    snapping: Snapping = Snapping(),
) -> Tuple[List[GqaEvaluation], GqaEvaluation]:
    """
    Walks the GQA values at or above the baseline in ascending order, holding
    N, d_model and the head count fixed and re-solving the MLP width. The walk
    stops at the first value whose evaluated loss exceeds the baseline's by
    more than epsilon.

    :param base: architecture from the loss-driven step
    :param evaluator: gqa -> measured (or looked-up) loss
    :param n_target: parameter budget, defaults to the base's count
    :return: (every evaluation made, the chosen one)
    """
    if epsilon < 0:
        raise InvalidSearchProblemException("epsilon must be non-negative")
    hardware = hardware or builtin_hardware("a100-40g")
    n_target = n_target or count_params(base).n_nonembed

    baseline = base
    if base.gqa != baseline_gqa:
        if base.n_head % baseline_gqa:
            baseline = realize_architecture(
                n_target, base.n_layers, base.d_model, base.d_head, baseline_gqa,
                derived_metrics(base).r, snapping,
            )
        else:
            baseline = _with_gqa(base, n_target, baseline_gqa, snapping.f_multiple)
    if baseline.n_head % baseline_gqa:
        raise InvalidSearchProblemException(
            f"baseline gqa {baseline_gqa} does not divide {baseline.n_head} heads"
        )

    trace: List[GqaEvaluation] = []
    baseline_loss = None
    for gqa in (g for g in feasible_gqa(baseline.n_head) if g >= baseline_gqa):
        try:
            config = baseline if gqa == baseline_gqa else _with_gqa(baseline, n_target, gqa, snapping.f_multiple)
        except BudgetTooSmallException as exc:
            logger.debug("gqa=%d skipped: %s", gqa, exc)
            continue
        loss = float(evaluator(gqa))
        if baseline_loss is None:
            baseline_loss = loss
        throughput, _ = modeled_throughput(config, hardware, workload)
        accepted = loss <= baseline_loss + epsilon
        trace.append(GqaEvaluation(gqa, config, loss, throughput, accepted))
        logger.debug("gqa=%d loss=%.5f tput=%.1f accepted=%s", gqa, loss, throughput, accepted)
        if not accepted:
            break

    accepted = [e for e in trace if e.accepted]
    if not accepted:
        # NaN losses reject even the baseline
        return trace, trace[0]
    chosen = max(accepted, key=lambda e: (e.modeled_throughput, -e.gqa))
    logger.info("gqa search chose %d after %d evaluations", chosen.gqa, len(trace))
    return trace, chosen


def run_algorithm1(
    *,
    n_target: int,
    d_tokens: float,
    n_layers: int,
    d_head: int,
    loss_budget: Union[float, str],
    law: Optional[ConditionalLaw] = None,
    records: Optional[Sequence] = None,
    ref: Optional[RefLossSource] = None,
    grid: Optional[ArchGridSpec] = None,
    hardware: Optional[HardwareProfile] = None,
    workload: Workload = DEFAULT_WORKLOAD,
    evaluator: Optional[Callable[[int], float]] = None,
    baseline_gqa: int = DEFAULT_BASELINE_GQA,
    epsilon: float = DEFAULT_EPSILON,
    form: str = "multiplicative",
    fit_options: FitOptions = FitOptions(),
    snapping: Snapping = Snapping(),
) -> AlgorithmResult:
    """
    The full loop: make sure a reference loss and a law exist (fitting them
    from records when missing), find the loss-feasible architecture with the
    best modeled throughput (or the closed-form optimum when loss_budget is
    "optimal"), then optionally walk GQA upward with the evaluator.
    """
    hardware = hardware or builtin_hardware("a100-40g")
    notes = []
    if ref is None:
        if not records:
            raise InvalidSearchProblemException("a reference loss source or training records are required")
        ref = RefLossSource.from_chinchilla(fit_chinchilla(records, fit_options).law)
        notes.append("reference fitted as a Chinchilla law from records")
    if law is None:
        if not records:
            raise InvalidSearchProblemException("a fitted law or training records are required")
        law = fit_conditional_law(records, form, ref, fit_options).law
        notes.append(f"{form} law fitted from {len(records)} records")

    search = None
    if loss_budget == OPTIMAL:
        architecture = closed_form_architecture(law, n_target, n_layers, d_head, baseline_gqa, snapping)
    else:
        if grid is None:
            raise InvalidSearchProblemException("a numeric loss budget needs a candidate grid")
        problem = SearchProblem(law, ref, n_target, d_tokens, float(loss_budget), grid, hardware, workload)
        search = constrained_search(problem)
        architecture = search.best.arch

    trace: Tuple[GqaEvaluation, ...] = ()
    if evaluator is not None:
        evaluations, chosen = gqa_local_search(
            architecture, evaluator, baseline_gqa, epsilon, hardware, workload, n_target, snapping
        )
        trace = tuple(evaluations)
        architecture = chosen.arch
    return AlgorithmResult(
        architecture=architecture, gqa=architecture.gqa, law=law, ref=ref,
        search=search, gqa_trace=trace, notes=notes,
    )
