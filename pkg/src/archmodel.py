"""
Decoder-only transformer shapes: parameter counting, the normalized hidden size
x = d_model / sqrt(N) and mlp-to-attention ratio r, and the solvers that build
architecture variants at a fixed non-embedding parameter budget.
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_N_TOLERANCE = 0.10
DEFAULT_F_MULTIPLE = 64
# d_head switches from 64 to 128 above this budget
D_HEAD_SWITCH = 1.5e9

CONFIG_KEYS = ("name", "n_layers", "d_model", "n_head", "d_head", "gqa", "f_size")
_SIZE_SUFFIXES = {"K": 1e3, "M": 1e6, "B": 1e9, "T": 1e12}


class InvalidArchitectureException(ValueError):
    pass


class BudgetTooSmallException(ValueError):
    pass


class InfeasibleHeadCountException(ValueError):
    pass


class InvalidGridException(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    name: str
    n_layers: int
    d_model: int
    n_head: int
    d_head: int
    gqa: int
    f_size: int

    @property
    def n_kv_heads(self) -> int:
        return self.n_head // self.gqa

    @property
    def d_q(self) -> int:
        return self.n_head * self.d_head

    @property
    def d_kv(self) -> int:
        return self.n_kv_heads * self.d_head

    def shape_key(self):
        """
        Identity of the shape without its name, used for de-duplication and
        deterministic ordering.
        """
        return (self.n_layers, self.d_model, self.n_head, self.d_head, self.gqa, self.f_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ArchitectureConfig":
        """
        Builds a config from its JSON object. Key names must match exactly.
        :param data: mapping with exactly the CONFIG_KEYS
        :return: the config (not validated; call validate)
        """
        if not isinstance(data, dict):
            raise InvalidArchitectureException("architecture must be a JSON object")
        unknown = sorted(set(data) - set(CONFIG_KEYS))
        if unknown:
            raise InvalidArchitectureException(f"unknown architecture keys: {unknown}")
        missing = [k for k in CONFIG_KEYS if k not in data]
        if missing:
            raise InvalidArchitectureException(f"missing architecture keys: {missing}")
        values = {}
        for key in CONFIG_KEYS[1:]:
            value = data[key]
            if (isinstance(value, bool) or not isinstance(value, (int, float))
                    or not math.isfinite(value) or value != int(value)):
                raise InvalidArchitectureException(f"{key} must be an integer, got {value!r}")
            values[key] = int(value)
        return cls(name=str(data["name"]), **values)


@dataclass(frozen=True)
class ParamBreakdown:
    attn_per_layer: int
    mlp_per_layer: int
    per_layer_total: int
    n_nonembed: int


@dataclass(frozen=True)
class DerivedMetrics:
    x: float
    r: float
    d_q: int
    d_kv: int
    n_kv_heads: int


@dataclass(frozen=True)
class Snapping:
    # None means "a multiple of d_head"
    d_multiple: Optional[int] = None
    f_multiple: int = DEFAULT_F_MULTIPLE

    def hidden_multiple(self, d_head: int) -> int:
        return self.d_multiple if self.d_multiple is not None else d_head


@dataclass(frozen=True)
class ArchGridSpec:
    n_target: int
    n_layers: int
    d_head: int
    gqa_values: Sequence[int]
    d_model_values: Sequence[int]
    r_values: Optional[Sequence[float]] = None
    f_values: Optional[Sequence[int]] = None
    n_tolerance: float = DEFAULT_N_TOLERANCE
    snapping: Snapping = field(default_factory=Snapping)

    def check(self) -> None:
        """
        Raises InvalidGridException when the grid is degenerate.
        """
        if not 0 < self.n_tolerance < 0.5:
            raise InvalidGridException("n_tolerance must lie in (0, 0.5)")
        if self.n_target <= 0 or self.n_layers <= 0 or self.d_head <= 0:
            raise InvalidGridException("n_target, n_layers and d_head must be positive")
        if (self.r_values is None) == (self.f_values is None):
            raise InvalidGridException("exactly one of r_values or f_values must be given")
        ratios = self.r_values if self.r_values is not None else self.f_values
        for label, values in (("gqa_values", self.gqa_values), ("d_model_values", self.d_model_values),
                              ("r_values/f_values", ratios)):
            if not values:
                raise InvalidGridException(f"{label} must be non-empty")
            if any(v <= 0 for v in values):
                raise InvalidGridException(f"{label} must be strictly positive")


def validate(config: ArchitectureConfig) -> List[str]:
    """
    Lists every broken invariant of a config.
    :param config: the architecture
    :return: violation descriptions, empty when the config is valid
    """
    violations = []
    for key in CONFIG_KEYS[1:]:
        value = getattr(config, key)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            violations.append(f"{key} must be an integer")
        elif value <= 0:
            violations.append(f"{key} must be positive")
    if not violations and config.n_head % config.gqa != 0:
        violations.append("gqa must divide n_head")
    return violations


def _require_valid(config: ArchitectureConfig) -> None:
    violations = validate(config)
    if violations:
        raise InvalidArchitectureException(f"{config.name}: " + "; ".join(violations))


def param_breakdown(n_layers, d_model, n_head, d_head, gqa, f_size) -> ParamBreakdown:
    """
    Non-embedding parameter count. Attention holds Q and O (2*d*d_q) plus K and
    V (2*d*d_kv); the gated MLP holds up, gate and down (3*d*f).
    """
    d_q = n_head * d_head
    d_kv = (n_head // gqa) * d_head
    attn = 2 * d_model * d_q + 2 * d_model * d_kv
    mlp = 3 * d_model * f_size
    per_layer = attn + mlp
    return ParamBreakdown(
        attn_per_layer=attn,
        mlp_per_layer=mlp,
        per_layer_total=per_layer,
        n_nonembed=n_layers * per_layer,
    )


def count_params(config: ArchitectureConfig) -> ParamBreakdown:
    _require_valid(config)
    return param_breakdown(
        config.n_layers, config.d_model, config.n_head, config.d_head, config.gqa, config.f_size
    )


def derived_metrics(config: ArchitectureConfig) -> DerivedMetrics:
    """
    :param config: a valid architecture
    :return: x = d_model / sqrt(N) and r = mlp / attention parameters per layer
    """
    params = count_params(config)
    return DerivedMetrics(
        x=config.d_model / math.sqrt(params.n_nonembed),
        r=params.mlp_per_layer / params.attn_per_layer,
        d_q=config.d_q,
        d_kv=config.d_kv,
        n_kv_heads=config.n_kv_heads,
    )


def snap(value: float, multiple: int) -> int:
    """
    Rounds to the nearest positive multiple (halves round up).
    """
    return int(math.floor(value / multiple + 0.5)) * multiple


def solve_intermediate_size(
    n_target, n_layers, d_model, n_head, d_head, gqa,
    f_multiple=DEFAULT_F_MULTIPLE, n_tolerance: Optional[float] = None,
) -> int:
    """
    Inverts the parameter formula for the MLP width.
    :param n_target: non-embedding parameter budget
    :param f_multiple: snapping quantum for f_size
    :param n_tolerance: when given, the snapped shape must land within this
                        relative distance of n_target
    :return: snapped f_size
    """
    attn = param_breakdown(n_layers, d_model, n_head, d_head, gqa, 0).attn_per_layer
    per_layer = n_target / n_layers
    if per_layer <= attn:
        raise BudgetTooSmallException(
            f"budget too small: attention alone needs {attn} per layer, budget is {per_layer:.0f}"
        )
    f_size = snap((per_layer - attn) / (3 * d_model), f_multiple)
    if f_size <= 0:
        raise BudgetTooSmallException(
            f"budget too small: MLP width rounds to zero at multiple {f_multiple}"
        )
    if n_tolerance is not None:
        n = param_breakdown(n_layers, d_model, n_head, d_head, gqa, f_size).n_nonembed
        if abs(n - n_target) > n_tolerance * n_target:
            raise BudgetTooSmallException(
                f"snapped shape has {n} parameters, outside {n_tolerance:.0%} of {n_target}"
            )
    return f_size


def solve_n_head(r_target: float, d_head: int, gqa: int, f_size: int) -> int:
    """
    Inverts r = 3f / (2 d_head n_head (1 + 1/gqa)) for the head count, snapped
    to the nearest multiple of gqa (ties to fewer heads).
    :return: n_head, a positive multiple of gqa
    """
    if r_target <= 0:
        raise InfeasibleHeadCountException("r_target must be positive")
    raw = 3 * f_size / (2 * d_head * r_target * (1 + 1 / gqa))
    return _snap_heads(raw, gqa)


def _snap_heads(raw: float, gqa: int) -> int:
    if raw < gqa / 2:
        raise InfeasibleHeadCountException(
            f"infeasible head count: raw solution {raw:.3f} is below gqa={gqa}"
        )
    low = math.floor(raw / gqa) * gqa
    high = low + gqa
    if low < gqa:
        return high
    # ties go to fewer heads
    return low if raw - low <= high - raw else high


def feasible_gqa(n_head: int) -> List[int]:
    """
    :param n_head: query head count
    :return: every divisor of n_head, ascending
    """
    if n_head < 1:
        raise InvalidArchitectureException("n_head must be positive")
    small = [d for d in range(1, math.isqrt(n_head) + 1) if n_head % d == 0]
    large = [n_head // d for d in reversed(small) if d * d != n_head]
    return small + large


def default_d_head(n_target: float) -> int:
    return 64 if n_target <= D_HEAD_SWITCH else 128


def parse_size_label(label: str) -> float:
    """
    Converts a nominal size such as "80M" or "1B" to a parameter count.
    """
    text = label.strip().upper()
    if text and text[-1] in _SIZE_SUFFIXES:
        try:
            return float(text[:-1]) * _SIZE_SUFFIXES[text[-1]]
        except ValueError:
            pass
    raise InvalidArchitectureException(f"unrecognized size label {label!r}")


def shape_name(n_layers, d_model, n_head, gqa, f_size) -> str:
    return f"L{n_layers}-d{d_model}-h{n_head}-g{gqa}-f{f_size}"


def realize_architecture(
    n_target, n_layers, d_model, d_head, gqa, r_target,
    snapping: Snapping = Snapping(), name: Optional[str] = None,
    n_tolerance: Optional[float] = DEFAULT_N_TOLERANCE,
) -> ArchitectureConfig:
    """
    Builds the shape with the given hidden size, ratio and GQA at a parameter
    budget: a first MLP width from the ratio split, the head count that keeps
    the ratio, then the MLP width re-solved so N lands on the budget.
    """
    per_layer = n_target / n_layers
    f_first = max(snap(per_layer * r_target / (1 + r_target) / (3 * d_model), snapping.f_multiple),
                  snapping.f_multiple)
    n_head = solve_n_head(r_target, d_head, gqa, f_first)
    f_size = solve_intermediate_size(
        n_target, n_layers, d_model, n_head, d_head, gqa, snapping.f_multiple, n_tolerance
    )
    return ArchitectureConfig(
        name=name or shape_name(n_layers, d_model, n_head, gqa, f_size),
        n_layers=n_layers, d_model=d_model, n_head=n_head,
        d_head=d_head, gqa=gqa, f_size=f_size,
    )


def _from_mlp_width(spec: ArchGridSpec, d_model: int, gqa: int, f_size: int) -> ArchitectureConfig:
    per_layer = spec.n_target / spec.n_layers
    attn_budget = per_layer - 3 * d_model * f_size
    if attn_budget <= 0:
        raise BudgetTooSmallException("budget too small for the requested MLP width")
    n_head = _snap_heads(attn_budget / (2 * d_model * spec.d_head * (1 + 1 / gqa)), gqa)
    return ArchitectureConfig(
        name=shape_name(spec.n_layers, d_model, n_head, gqa, f_size),
        n_layers=spec.n_layers, d_model=d_model, n_head=n_head,
        d_head=spec.d_head, gqa=gqa, f_size=f_size,
    )


def enumerate_variants(spec: ArchGridSpec) -> List[ArchitectureConfig]:
    """
    Enumerates fixed-budget variants over hidden sizes, ratios (or MLP widths)
    and GQA values. Shapes that cannot be built, or miss the budget tolerance,
    are skipped.
    :param spec: the grid
    :return: valid, de-duplicated configs sorted by d_model, then r
    """
    spec.check()
    d_multiple = spec.snapping.hidden_multiple(spec.d_head)
    seen = {}
    for d_raw in spec.d_model_values:
        d_model = snap(d_raw, d_multiple)
        if d_model <= 0:
            continue
        for gqa in spec.gqa_values:
            if spec.r_values is not None:
                ratio_axis = [("r", r) for r in spec.r_values]
            else:
                ratio_axis = [("f", snap(f, spec.snapping.f_multiple)) for f in spec.f_values]
            for kind, value in ratio_axis:
                try:
                    if kind == "r":
                        config = realize_architecture(
                            spec.n_target, spec.n_layers, d_model, spec.d_head, gqa, value,
                            spec.snapping, n_tolerance=spec.n_tolerance,
                        )
                    else:
                        config = _from_mlp_width(spec, d_model, gqa, value)
                except (BudgetTooSmallException, InfeasibleHeadCountException) as exc:
                    logger.debug("skipping d=%d gqa=%d %s=%s: %s", d_model, gqa, kind, value, exc)
                    continue
                if validate(config):
                    continue
                n = count_params(config).n_nonembed
                if abs(n - spec.n_target) > spec.n_tolerance * spec.n_target:
                    continue
                seen.setdefault(config.shape_key(), config)
    variants = list(seen.values())
    variants.sort(key=lambda c: (c.d_model, derived_metrics(c).r, c.gqa, c.shape_key()))
    logger.info("enumerated %d variants around N=%d", len(variants), spec.n_target)
    return variants
