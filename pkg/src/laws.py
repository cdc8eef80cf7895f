"""
Chinchilla law, the conditional calibrated laws over x = d_model / sqrt(N) and
r = mlp/attention, the L_opt reference and the closed-form architecture optimum.

All logarithms are natural.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from archmodel import InvalidArchitectureException, count_params, parse_size_label

logger = logging.getLogger(__name__)

FORMS = ("multiplicative", "additive", "joint")
DEFAULT_BUCKET_TOLERANCE = 0.10
EQUIVALENCE_REL_TOL = 1e-9


class InvalidLawException(ValueError):
    pass


class NoInteriorOptimumException(ArithmeticError):
    pass


class ReferenceLookupException(LookupError):
    pass


@dataclass(frozen=True)
class ChinchillaParams:
    E: float
    A: float
    alpha: float
    B: float
    beta: float

    def check(self) -> None:
        if self.A < 0 or self.B < 0:
            raise InvalidLawException("A and B must be non-negative")
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidLawException("alpha and beta must be positive")

    def to_vector(self) -> np.ndarray:
        return np.array([self.E, self.A, self.alpha, self.B, self.beta], dtype=float)


def coefficient_names(form: str) -> Tuple[str, ...]:
    if form == "multiplicative":
        return ("a0", "a1", "a2", "b0", "b1", "b2")
    if form == "additive":
        return ("a0", "a1", "a2", "b1", "b2")
    if form == "joint":
        return ("a0", "a1", "a2")
    raise InvalidLawException(f"unknown law form {form!r}")


@dataclass(frozen=True)
class ConditionalLaw:
    form: str
    a0: float
    a1: float
    a2: float
    b0: Optional[float] = None
    b1: Optional[float] = None
    b2: Optional[float] = None
    fit_meta: Dict = field(default_factory=dict, compare=False, hash=False)

    def check(self) -> None:
        names = coefficient_names(self.form)
        for name in ("a0", "a1", "a2", "b0", "b1", "b2"):
            value = getattr(self, name)
            if name in names and (value is None or not math.isfinite(value)):
                raise InvalidLawException(f"{self.form} law needs a finite {name}")
            if name not in names and value is not None:
                raise InvalidLawException(f"{self.form} law has no {name}")

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in coefficient_names(self.form)], dtype=float)

    @classmethod
    def from_vector(cls, form: str, coefs: Sequence[float], fit_meta: Optional[Dict] = None) -> "ConditionalLaw":
        names = coefficient_names(form)
        if len(coefs) != len(names):
            raise InvalidLawException(f"{form} law takes {len(names)} coefficients, got {len(coefs)}")
        law = cls(form=form, fit_meta=dict(fit_meta or {}), **{n: float(c) for n, c in zip(names, coefs)})
        law.check()
        return law


# Published multiplicative fits: on the 80M-297M variants, and on the 1B variants alone.
LAW_FIT_80M_TO_297M = ConditionalLaw("multiplicative", 2.697, 0.0974, 0.0078, 0.3870, 0.0063, 0.0065)
LAW_FIT_1B = ConditionalLaw("multiplicative", 2.319, 0.238, 0.0176, 0.5104, 0.0051, 0.0062)


@dataclass(frozen=True)
class RefBucket:
    n_ref: float
    d_tokens: float
    loss: float
    size_label: Optional[str] = None


@dataclass(frozen=True)
class RefLossSource:
    kind: str
    empirical_table: Tuple[RefBucket, ...] = ()
    chinchilla: Optional[ChinchillaParams] = None
    n_tolerance: float = DEFAULT_BUCKET_TOLERANCE

    @classmethod
    def from_chinchilla(cls, params: ChinchillaParams) -> "RefLossSource":
        params.check()
        return cls(kind="chinchilla", chinchilla=params)

    @classmethod
    def from_table(cls, buckets: Iterable[RefBucket], n_tolerance: float = DEFAULT_BUCKET_TOLERANCE) -> "RefLossSource":
        buckets = tuple(buckets)
        for bucket in buckets:
            if not bucket.loss > 0:
                raise InvalidLawException(f"reference loss must be positive, got {bucket.loss}")
        return cls(kind="empirical", empirical_table=buckets, n_tolerance=n_tolerance)


def chinchilla_loss(p: ChinchillaParams, n: float, d: float) -> float:
    """
    :return: E + A / n^alpha + B / d^beta
    """
    if n <= 0 or d <= 0:
        raise ValueError("n and d must be positive")
    return p.E + p.A / n ** p.alpha + p.B / d ** p.beta


def chinchilla_grid(p: ChinchillaParams, n_values: Sequence[float], d_values: Sequence[float]) -> List[Dict]:
    """
    Loss and 6ND training FLOPs over every (N, D) pair; the caller picks the
    allocation it prefers at a compute level.
    """
    rows = []
    for n in n_values:
        for d in d_values:
            rows.append({"n": n, "d": d, "flops": 6.0 * n * d, "loss": chinchilla_loss(p, n, d)})
    return rows


def u_term(y, c1, c2):
    """
    c1 * ln(y) + c2 / y; works elementwise on arrays.
    """
    return c1 * np.log(y) + c2 / y


def conditional_values(law: ConditionalLaw, x, r, l_opt):
    """
    Vectorized evaluation without argument checks, shared with the fitter.
    """
    if law.form == "multiplicative":
        return (law.a0 + u_term(x, law.a1, law.a2)) * (law.b0 + u_term(r, law.b1, law.b2)) * l_opt
    if law.form == "additive":
        return (law.a0 + u_term(x, law.a1, law.a2)) + u_term(r, law.b1, law.b2) + l_opt
    if law.form == "joint":
        return (law.a0 + u_term(x * r, law.a1, law.a2)) * l_opt
    raise InvalidLawException(f"unknown law form {law.form!r}")


def conditional_loss(law: ConditionalLaw, x: float, r: float, l_opt: float) -> float:
    """
    Predicted loss of an architecture with features (x, r) relative to the
    reference loss l_opt.
    """
    if x <= 0 or r <= 0 or l_opt <= 0:
        raise ValueError("x, r and l_opt must be positive")
    law.check()
    value = float(conditional_values(law, x, r, l_opt))
    if not math.isfinite(value):
        raise ArithmeticError(f"law evaluated to {value} at x={x}, r={r}")
    return value


def optimal_xr(law: ConditionalLaw) -> Tuple[float, float]:
    """
    Stationary point of each U-shaped term c1 ln y + c2 / y is y = c2 / c1,
    a minimum when both are positive. The joint form only pins x * r; its
    optimum is returned as (a2 / a1, 1.0).
    :return: (x_star, r_star)
    """
    law.check()
    if not (law.a1 > 0 and law.a2 > 0):
        raise NoInteriorOptimumException(
            f"no interior optimum in x: need a1 > 0 and a2 > 0 (a1={law.a1}, a2={law.a2})"
        )
    x_star = law.a2 / law.a1
    if law.form == "joint":
        return x_star, 1.0
    if not (law.b1 > 0 and law.b2 > 0):
        raise NoInteriorOptimumException(
            f"no interior optimum in r: need b1 > 0 and b2 > 0 (b1={law.b1}, b2={law.b2})"
        )
    if law.form == "multiplicative":
        # the other factor must be positive for the stationary point to be a minimum
        if law.b0 + u_term(law.b2 / law.b1, law.b1, law.b2) <= 0 or law.a0 + u_term(x_star, law.a1, law.a2) <= 0:
            raise NoInteriorOptimumException("multiplicative factors are not positive at the optimum")
    return x_star, law.b2 / law.b1


def rescale_gauge(law: ConditionalLaw, c: float) -> ConditionalLaw:
    """
    Multiplies the x-factor by c and the r-factor by 1/c; predictions are unchanged.
    """
    if law.form != "multiplicative":
        raise InvalidLawException("only the multiplicative form has a gauge")
    if c == 0:
        raise InvalidLawException("gauge factor must be non-zero")
    return replace(law, a0=law.a0 * c, a1=law.a1 * c, a2=law.a2 * c,
                   b0=law.b0 / c, b1=law.b1 / c, b2=law.b2 / c)


def ref_loss(src: RefLossSource, n: float, d: float, size_label: Optional[str] = None) -> float:
    """
    L_opt(N, D) from an empirical table or a Chinchilla law. Empirical lookups
    need the same D and an N inside the bucket tolerance (or a matching size
    label); misses are errors.
    """
    if src.kind == "chinchilla":
        return chinchilla_loss(src.chinchilla, n, d)
    if src.kind != "empirical":
        raise InvalidLawException(f"unknown reference kind {src.kind!r}")
    same_d = [b for b in src.empirical_table if math.isclose(b.d_tokens, d, rel_tol=1e-6)]
    if size_label is not None:
        for bucket in same_d:
            if bucket.size_label == size_label:
                return bucket.loss
    best = None
    for bucket in same_d:
        distance = abs(n - bucket.n_ref) / bucket.n_ref
        if distance <= src.n_tolerance and (best is None or distance < best[0]):
            best = (distance, bucket)
    if best is None:
        raise ReferenceLookupException(f"no reference for (N={n:.4g}, D={d:.4g})")
    return best[1].loss


def _bucket_records(records) -> List[List]:
    """
    Groups runs by (size bucket, D): by size label when present, otherwise by
    10% relative distance in non-embedding parameters.
    """
    groups: Dict[tuple, List] = {}
    unlabeled = []
    for record in records:
        if record.size_label:
            groups.setdefault((record.size_label, float(record.d_tokens)), []).append(record)
        else:
            unlabeled.append(record)
    clusters: List[Tuple[float, float, List]] = []
    for record in sorted(unlabeled, key=lambda rec: count_params(rec.arch).n_nonembed):
        n = count_params(record.arch).n_nonembed
        for anchor, d, members in clusters:
            if math.isclose(d, record.d_tokens, rel_tol=1e-6) and abs(n - anchor) <= DEFAULT_BUCKET_TOLERANCE * anchor:
                members.append(record)
                break
        else:
            clusters.append((n, float(record.d_tokens), [record]))
    return list(groups.values()) + [members for _, _, members in clusters]


def _label_size(label: Optional[str]) -> Optional[float]:
    if not label:
        return None
    try:
        size = parse_size_label(label)
        return size if size > 0 else None
    except InvalidArchitectureException:
        logger.debug("size label %r is not a parameter count; using the bucket median", label)
        return None


def empirical_lopt(records) -> RefLossSource:
    """
    L_opt per (N bucket, D) as the lowest observed loss in the bucket.
    """
    buckets = []
    for members in _bucket_records(records):
        sizes = sorted(count_params(rec.arch).n_nonembed for rec in members)
        label = members[0].size_label
        n_ref = _label_size(label) or float(sizes[len(sizes) // 2])
        buckets.append(RefBucket(
            n_ref=n_ref,
            d_tokens=float(members[0].d_tokens),
            loss=min(rec.loss for rec in members),
            size_label=label,
        ))
    buckets.sort(key=lambda b: (b.n_ref, b.d_tokens))
    logger.info("empirical L_opt over %d buckets", len(buckets))
    return RefLossSource.from_table(buckets)


def default_check_grid() -> List[Tuple[float, float, float]]:
    xs = np.geomspace(0.03, 0.3, 7)
    rs = np.geomspace(0.3, 6.0, 7)
    return [(float(x), float(r), l) for x in xs for r in rs for l in (2.5, 3.0)]


def laws_equivalent(law_a: ConditionalLaw, law_b: ConditionalLaw, check_grid=None,
                    rel_tol: float = EQUIVALENCE_REL_TOL) -> bool:
    """
    Gauge-invariant comparison: both laws must predict the same loss at every
    check point (x, r, l_opt).
    """
    if law_a.form != law_b.form:
        raise InvalidLawException("laws of different forms cannot be compared")
    grid = check_grid if check_grid is not None else default_check_grid()
    for x, r, l_opt in grid:
        a = conditional_loss(law_a, x, r, l_opt)
        b = conditional_loss(law_b, x, r, l_opt)
        if not math.isclose(a, b, rel_tol=rel_tol, abs_tol=0.0):
            return False
    return True
