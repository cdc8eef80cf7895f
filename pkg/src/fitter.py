"""
Levenberg-Marquardt least squares with multi-start, the conditional-law and
Chinchilla fitting pipelines, and the fit-quality metrics (MSE, Spearman).
"""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from archmodel import count_params, derived_metrics
from laws import (
    ChinchillaParams,
    ConditionalLaw,
    RefLossSource,
    coefficient_names,
    conditional_values,
    empirical_lopt,
    ref_loss,
    rescale_gauge,
    u_term,
)

logger = logging.getLogger(__name__)

GRADIENT_TOL = 1e-10
LAMBDA_MAX = 1e12
FD_STEP = 1e-7
MIN_CHINCHILLA_BUCKETS = 5

Model = Callable[[np.ndarray, np.ndarray], np.ndarray]


class FitPreconditionException(ValueError):
    pass


class EmptyAfterFilterException(ValueError):
    pass


class MetricException(ValueError):
    pass


class FitFailedException(ArithmeticError):
    pass


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 200
    lambda_init: float = 1e-3
    nu: float = 10.0
    rel_tol: float = 1e-12
    param_bounds: Optional[Sequence[Tuple[float, float]]] = None
    multistart_grid: Optional[Sequence[Sequence[float]]] = None
    r_filter: Tuple[float, float] = (0.5, 5.0)

    def check(self) -> None:
        if not self.nu > 1:
            raise FitPreconditionException("nu must be greater than 1")
        if not self.lambda_init > 0 or not self.rel_tol > 0:
            raise FitPreconditionException("lambda_init and rel_tol must be positive")
        if self.max_iterations < 1:
            raise FitPreconditionException("max_iterations must be at least 1")
        low, high = self.r_filter
        if not 0 <= low <= high:
            raise FitPreconditionException("r_filter must be an ordered, non-negative interval")


@dataclass(frozen=True)
class FitResult:
    coefficients: Tuple[float, ...]
    sse: float
    iterations: int
    converged: bool
    residuals: Tuple[float, ...]
    train_mse: float
    start_index: int = 0
    message: str = ""
    sse_history: Tuple[float, ...] = ()
    law: object = None
    meta: Dict = field(default_factory=dict)


def _clip(coefs: np.ndarray, bounds) -> np.ndarray:
    if bounds is None:
        return coefs
    low = np.array([b[0] for b in bounds], dtype=float)
    high = np.array([b[1] for b in bounds], dtype=float)
    return np.clip(coefs, low, high)


def _jacobian(model: Model, coefs: np.ndarray, features: np.ndarray, base: np.ndarray) -> np.ndarray:
    """
    Forward differences of the predictions, step 1e-7 * max(1, |c|).
    """
    jac = np.empty((base.size, coefs.size))
    for j in range(coefs.size):
        step = FD_STEP * max(1.0, abs(coefs[j]))
        shifted = coefs.copy()
        shifted[j] += step
        jac[:, j] = (model(shifted, features) - base) / step
    return jac


def lm_fit(model: Model, features, targets, init, opts: FitOptions = FitOptions()) -> FitResult:
    """
    Damped Gauss-Newton (Levenberg-Marquardt) on the sum of squared residuals.
    Accepted steps divide the damping by nu, rejected ones multiply it.

    :param model: model(coefficients, features) -> predictions, vectorized over rows
    :param features: (n, k) feature rows
    :param targets: (n,) observed values
    :param init: starting coefficient vector
    :param opts: iteration controls
    :return: the best coefficients found; a step clipped to nothing at the
             bounds counts as converged, while the damping limit or the
             iteration budget leave converged False
    """
    opts.check()
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float).ravel()
    coefs = _clip(np.asarray(init, dtype=float).ravel().copy(), opts.param_bounds)
    if targets.size < coefs.size:
        raise FitPreconditionException(
            f"need at least as many points as coefficients ({targets.size} < {coefs.size})"
        )
    prediction = np.asarray(model(coefs, features), dtype=float)
    if not np.all(np.isfinite(prediction)):
        raise FitPreconditionException("model is not finite at the initial coefficients")

    residual = targets - prediction
    sse = float(residual @ residual)
    history = [sse]
    damping = opts.lambda_init
    converged = False
    message = "iteration limit reached"
    iteration = 0

    while iteration < opts.max_iterations:
        iteration += 1
        if sse == 0.0:
            converged, message = True, "exact fit"
            break
        jac = _jacobian(model, coefs, features, prediction)
        gradient = jac.T @ residual
        if np.linalg.norm(gradient) < GRADIENT_TOL:
            converged, message = True, "gradient below tolerance"
            break
        normal = jac.T @ jac
        scale = np.maximum(np.diag(normal), 1e-12)

        accepted = pinned = False
        while damping <= LAMBDA_MAX:
            try:
                step = np.linalg.solve(normal + damping * np.diag(scale), gradient)
            except np.linalg.LinAlgError:
                damping *= opts.nu
                continue
            trial = _clip(coefs + step, opts.param_bounds)
            if np.array_equal(trial, coefs) and not np.array_equal(coefs + step, coefs):
                pinned = True
                break
            trial_prediction = np.asarray(model(trial, features), dtype=float)
            trial_residual = targets - trial_prediction
            trial_sse = float(trial_residual @ trial_residual)
            if np.isfinite(trial_sse) and trial_sse < sse:
                accepted = True
                break
            damping *= opts.nu

        if pinned:
            converged, message = True, "step clipped to zero at the bounds"
            break
        if not accepted:
            message = "fit failed: damping limit reached"
            break

        improvement = (sse - trial_sse) / sse
        coefs, prediction, residual, sse = trial, trial_prediction, trial_residual, trial_sse
        history.append(sse)
        damping = max(damping / opts.nu, 1e-15)
        logger.debug("lm iteration %d sse=%.6e lambda=%.1e", iteration, sse, damping)
        if improvement < opts.rel_tol:
            converged, message = True, "relative improvement below tolerance"
            break

    return FitResult(
        coefficients=tuple(float(c) for c in coefs),
        sse=sse,
        iterations=iteration,
        converged=converged,
        residuals=tuple(float(v) for v in residual),
        train_mse=sse / targets.size,
        message=message,
        sse_history=tuple(history),
    )


def multistart_fit(model: Model, features, targets, opts: FitOptions) -> FitResult:
    """
    Runs lm_fit from every start of opts.multistart_grid and keeps the lowest
    SSE; ties go to the earliest start.
    """
    grid = opts.multistart_grid
    if not grid:
        raise FitPreconditionException("multistart_grid must be non-empty")
    best = None
    for index, init in enumerate(grid):
        try:
            result = lm_fit(model, features, targets, init, opts)
        except FitPreconditionException as exc:
            if "points" in str(exc):
                raise
            logger.debug("start %d skipped: %s", index, exc)
            continue
        if best is None or result.sse < best.sse:
            best = replace(result, start_index=index)
    if best is None:
        raise FitFailedException("fit failed: no start produced a finite model")
    logger.info("multistart winner: start %d of %d, sse=%.6e", best.start_index, len(grid), best.sse)
    return best


def default_multistart_grid(form: str) -> List[Tuple[float, ...]]:
    a0s, a1s, a2s = (1.0, 2.0, 3.0), (0.01, 0.1, 0.3), (0.005, 0.02, 0.05)
    b0s, b1s, b2s = (0.3, 0.5, 1.0), (0.005, 0.05), (0.005, 0.05)
    if form == "multiplicative":
        return list(itertools.product(a0s, a1s, a2s, b0s, b1s, b2s))
    if form == "additive":
        return list(itertools.product(a0s, a1s, a2s, b1s, b2s))
    if form == "joint":
        return list(itertools.product(a0s, a1s, a2s))
    coefficient_names(form)
    return []


def conditional_model(form: str) -> Model:
    """
    Model over feature columns (x, r, l_opt) for a law form.
    """
    names = coefficient_names(form)

    def model(coefs, features):
        law = ConditionalLaw(form=form, **dict(zip(names, coefs)))
        return conditional_values(law, features[:, 0], features[:, 1], features[:, 2])

    return model


def chinchilla_model(coefs, features):
    e, a, alpha, b, beta = coefs
    return e + a / features[:, 0] ** alpha + b / features[:, 1] ** beta


def _features(records, ref: RefLossSource) -> np.ndarray:
    rows = []
    for record in records:
        metrics = derived_metrics(record.arch)
        n = count_params(record.arch).n_nonembed
        l_opt = ref_loss(ref, n, record.d_tokens, record.size_label)
        rows.append((metrics.x, metrics.r, l_opt))
    return np.array(rows, dtype=float).reshape(-1, 3)


def filter_ratio(records, r_filter: Tuple[float, float]) -> list:
    low, high = r_filter
    return [rec for rec in records if low <= derived_metrics(rec.arch).r <= high]


def select_by_size(records, labels: Sequence[str]) -> list:
    """
    Keeps runs whose size label is in labels (progressive fit/evaluate protocols).
    """
    wanted = set(labels)
    return [rec for rec in records if rec.size_label in wanted]


def _normalize_sign(law: ConditionalLaw, features: np.ndarray) -> Tuple[ConditionalLaw, bool]:
    if law.form != "multiplicative":
        return law, True
    x_factor = law.a0 + u_term(features[:, 0], law.a1, law.a2)
    r_factor = law.b0 + u_term(features[:, 1], law.b1, law.b2)
    if np.all(x_factor < 0) and np.all(r_factor < 0):
        law = rescale_gauge(law, -1.0)
        x_factor, r_factor = -x_factor, -r_factor
    positive = bool(np.all(x_factor > 0) and np.all(r_factor > 0))
    if not positive:
        logger.warning("multiplicative factors are not positive over the fit domain")
    return law, positive


def fit_conditional_law(records, form: str, ref: RefLossSource, opts: FitOptions = FitOptions()) -> FitResult:
    """
    Fits a conditional law: features from the architecture, ratio outliers
    dropped, L_opt attached from the reference, then a multi-start LM fit on
    the observed losses.
    """
    opts.check()
    coefficient_names(form)
    kept = filter_ratio(records, opts.r_filter)
    logger.info("fitting %s law: %d of %d runs inside r in [%g, %g]",
                form, len(kept), len(records), opts.r_filter[0], opts.r_filter[1])
    if not kept:
        raise EmptyAfterFilterException("empty after outlier filter")
    features = _features(kept, ref)
    targets = np.array([rec.loss for rec in kept], dtype=float)
    if opts.multistart_grid is None:
        opts = replace(opts, multistart_grid=default_multistart_grid(form))
    result = multistart_fit(conditional_model(form), features, targets, opts)

    law = ConditionalLaw.from_vector(form, result.coefficients)
    law, positive = _normalize_sign(law, features)
    meta = {
        "n_records": len(records),
        "n_filtered": len(records) - len(kept),
        "n_used": len(kept),
        "r_filter": list(opts.r_filter),
        "start_index": result.start_index,
        "n_starts": len(opts.multistart_grid),
        "factors_positive": positive,
        "gauge": "unnormalized",
    }
    law = replace(law, fit_meta={**meta, "sse": result.sse, "train_mse": result.train_mse})
    return replace(result, coefficients=tuple(float(c) for c in law.to_vector()), law=law, meta=meta)


def default_chinchilla_grid() -> List[Tuple[float, ...]]:
    return list(itertools.product((1.5, 2.0), (100.0, 400.0), (0.2, 0.35), (100.0, 1000.0), (0.2, 0.35)))


def fit_chinchilla(records, opts: FitOptions = FitOptions()) -> FitResult:
    """
    Fits E + A/N^alpha + B/D^beta to the best loss of every (N bucket, D)
    group. Exponents are kept positive.
    """
    table = empirical_lopt(records).empirical_table
    if len(table) < MIN_CHINCHILLA_BUCKETS:
        raise FitPreconditionException(
            f"need at least {MIN_CHINCHILLA_BUCKETS} (N, D) buckets to fit a Chinchilla law, got {len(table)}"
        )
    features = np.array([(b.n_ref, b.d_tokens) for b in table], dtype=float)
    targets = np.array([b.loss for b in table], dtype=float)
    bounds = opts.param_bounds or ((-np.inf, np.inf), (0.0, np.inf), (1e-3, 2.0), (0.0, np.inf), (1e-3, 2.0))
    opts = replace(opts, param_bounds=bounds, multistart_grid=opts.multistart_grid or default_chinchilla_grid())
    result = multistart_fit(chinchilla_model, features, targets, opts)
    params = ChinchillaParams(*result.coefficients)
    return replace(result, law=params, meta={"n_buckets": len(table)})


def mse(predicted, actual) -> float:
    """
    :return: mean of squared differences
    """
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.size == 0:
        raise MetricException("mse needs two non-empty vectors of equal length")
    return float(np.mean((p - a) ** 2))


def spearman(predicted, actual) -> float:
    """
    Spearman rank correlation; ties get their average rank.
    """
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.size < 2:
        raise MetricException("spearman needs two vectors of equal length, at least 2")
    if np.ptp(p) == 0 or np.ptp(a) == 0:
        raise MetricException("spearman is undefined when every value is tied")
    return float(spearmanr(p, a)[0])


def evaluate_law(law: ConditionalLaw, records, ref: RefLossSource) -> Dict:
    """
    Predicts every run with a fitted law and scores it against the observed losses.
    """
    if not records:
        raise MetricException("no runs to evaluate")
    features = _features(records, ref)
    predicted = conditional_values(law, features[:, 0], features[:, 1], features[:, 2])
    actual = np.array([rec.loss for rec in records], dtype=float)
    report = {"n": len(records), "mse": mse(predicted, actual), "predicted": [float(v) for v in predicted]}
    report["spearman"] = spearman(predicted, actual) if len(records) >= 2 else math.nan
    return report
