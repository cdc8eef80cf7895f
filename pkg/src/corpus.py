"""
Bundled architecture tables: every trained variant (80M to 1B, GQA 4, d_head
64) and the named comparison models, plus the RunRecord that pairs an
architecture with an observed loss.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

from archmodel import ArchitectureConfig, InvalidArchitectureException, derived_metrics, validate

logger = logging.getLogger(__name__)

X_TOLERANCE = 0.002
R_TOLERANCE = 0.02
TABLE_GQA = 4
TABLE_D_HEAD = 64


class CorpusIntegrityException(ValueError):
    pass


@dataclass(frozen=True)
class RunRecord:
    arch: ArchitectureConfig
    d_tokens: float
    loss: float
    size_label: Optional[str] = None
    variant: Optional[str] = None
    tags: Tuple[str, ...] = ()

    def check(self) -> None:
        if not self.loss > 0 or not math.isfinite(self.loss):
            raise ValueError(f"loss must be positive, got {self.loss}")
        if not self.d_tokens > 0:
            raise ValueError(f"d_tokens must be positive, got {self.d_tokens}")
        violations = validate(self.arch)
        if violations:
            raise InvalidArchitectureException("; ".join(violations))


@dataclass(frozen=True)
class CorpusEntry:
    size_label: str
    variant: str
    n_layers: int
    d_model: int
    n_head: int
    f_size: int
    printed_x: Optional[float]
    printed_r: Optional[float]
    gqa: int = TABLE_GQA
    d_head: int = TABLE_D_HEAD

    @property
    def name(self) -> str:
        return f"{self.size_label}/{self.variant}"

    def to_config(self) -> ArchitectureConfig:
        return ArchitectureConfig(
            name=self.name, n_layers=self.n_layers, d_model=self.d_model, n_head=self.n_head,
            d_head=self.d_head, gqa=self.gqa, f_size=self.f_size,
        )

    def discrepancies(self) -> List[str]:
        """
        Printed x and r against the values derived from the shape; a None
        printed value is not checked.
        """
        config = self.to_config()
        problems = validate(config)
        if problems:
            return problems
        metrics = derived_metrics(config)
        if self.printed_x is not None and abs(metrics.x - self.printed_x) > X_TOLERANCE:
            problems.append(f"x {metrics.x:.4f} differs from printed {self.printed_x}")
        if self.printed_r is not None and abs(metrics.r - self.printed_r) > R_TOLERANCE:
            problems.append(f"r {metrics.r:.3f} differs from printed {self.printed_r}")
        return problems


# size, variant, layers, d_model, heads, f_size, printed x, printed r
_TABLE = """
80M,v1,12,768,16,2048,0.086,2.40
80M,v2,12,768,4,2688,0.086,12.6
80M,v3,12,768,8,2560,0.085,6.00
80M,v4,12,768,24,1536,0.087,1.20
80M,v5,12,768,32,1152,0.086,0.68
80M,v6,12,768,40,768,0.086,0.36
80M,v7,12,768,48,256,0.087,0.10
80M,v8,12,384,32,4096,0.043,2.40
80M,v9,12,384,8,5376,0.043,12.6
80M,v10,12,384,16,5120,0.042,6.00
80M,v11,12,384,48,3072,0.044,1.20
80M,v12,12,384,64,2304,0.043,0.68
80M,v13,12,384,80,1536,0.043,0.36
80M,v14,12,384,96,512,0.044,0.10
80M,v15,12,1536,8,1024,0.171,2.40
80M,v16,12,1536,4,1280,0.169,6.00
80M,v17,12,1536,12,768,0.174,1.20
80M,v18,12,1536,16,640,0.169,0.75
80M,v19,12,1536,20,384,0.171,0.36
80M,v20,12,1536,24,128,0.174,0.10
80M,v21,12,512,24,3072,0.057,2.40
80M,v22,12,512,12,3840,0.056,6.00
80M,v23,12,512,16,3584,0.057,4.20
80M,v24,12,512,36,2304,0.058,1.20
80M,v25,12,512,48,1792,0.057,0.70
80M,v26,12,512,60,1152,0.057,0.36
80M,v27,12,512,72,384,0.058,0.10
80M,v28,12,1024,12,1536,0.114,2.40
80M,v29,12,1024,8,1792,0.113,4.20
80M,v30,12,1024,16,1280,0.115,1.50
80M,v31,12,1024,24,896,0.114,0.70
80M,v32,12,1024,36,256,0.114,0.13
80M,v33,12,2048,4,896,0.226,4.20
80M,v34,12,2048,8,640,0.231,1.50
80M,v35,12,2048,16,256,0.226,0.30
80M,v48,12,768,20,1792,0.086,1.68
80M,v49,12,768,28,1408,0.086,0.94
80M,v50,12,384,40,3584,0.043,1.68
80M,v51,12,384,52,3072,0.043,1.11
80M,v52,12,384,56,2816,0.043,0.94
80M,v53,12,384,60,2560,0.043,0.80
80M,v54,12,512,32,2560,0.058,1.50
80M,v55,12,512,40,2176,0.057,1.02
80M,v56,12,512,44,1920,0.058,0.82
80M,v57,12,1024,20,1152,0.113,1.08
145M,v1,12,1024,16,3072,0.085,3.60
145M,v2,12,1024,8,3584,0.084,8.40
145M,v3,12,1024,24,2560,0.086,2.00
145M,v4,12,1024,32,2304,0.084,1.35
145M,v5,12,1024,40,1792,0.085,0.84
145M,v6,12,1024,48,1280,0.086,0.50
145M,v7,12,1024,64,512,0.085,0.15
145M,v8,12,512,32,6144,0.043,3.60
145M,v9,12,512,16,7168,0.042,8.40
145M,v10,12,512,48,5120,0.043,2.00
145M,v11,12,512,64,4608,0.042,1.35
145M,v12,12,512,80,3584,0.043,0.84
145M,v13,12,512,96,2560,0.043,0.50
145M,v14,12,512,128,1024,0.043,0.15
145M,v15,12,2048,8,1536,0.170,3.60
145M,v16,12,2048,4,1792,0.168,8.40
145M,v17,12,2048,12,1280,0.172,2.00
145M,v18,12,2048,16,1152,0.168,1.35
145M,v19,12,2048,20,896,0.170,0.84
145M,v20,12,2048,24,640,0.172,0.50
145M,v21,12,2048,32,256,0.170,0.15
145M,v22,12,768,24,3840,0.065,3.00
145M,v23,12,768,32,3584,0.063,2.10
145M,v24,12,768,40,3072,0.064,1.44
145M,v25,12,768,48,2560,0.065,1.00
145M,v26,12,768,56,2304,0.063,0.77
145M,v27,12,768,64,1792,0.064,0.53
145M,v28,12,1536,12,1920,0.129,3.00
145M,v29,12,1536,16,1792,0.127,2.10
145M,v30,12,1536,20,1536,0.128,1.44
145M,v31,12,1536,24,1280,0.129,1.00
145M,v32,12,1536,28,1152,0.127,0.77
145M,v33,12,1536,32,896,0.128,0.53
145M,v34,12,4096,4,768,0.340,3.60
145M,v35,12,4096,16,128,0.340,0.15
145M,v48,12,1024,28,2368,0.086,1.59
145M,v49,12,1024,36,2048,0.085,1.07
145M,v50,12,512,52,5120,0.042,1.85
145M,v51,12,512,60,4800,0.042,1.50
145M,v52,12,512,68,4224,0.043,1.16
145M,v53,12,512,72,3968,0.043,1.03
145M,v54,12,768,44,2944,0.063,1.25
145M,v55,12,768,52,2432,0.064,0.88
297M,v1,12,1536,24,4096,0.089,3.20
297M,v2,12,1536,8,4864,0.090,11.4
297M,v3,12,1536,16,4608,0.088,5.40
297M,v4,12,1536,32,3584,0.090,2.10
297M,v5,12,1536,48,2816,0.089,1.10
297M,v6,12,1536,64,2048,0.088,0.60
297M,v7,12,1536,80,1024,0.090,0.24
297M,v8,12,768,48,8192,0.045,3.20
297M,v9,12,768,16,9728,0.045,11.4
297M,v10,12,768,32,9216,0.044,5.40
297M,v11,12,768,64,7168,0.045,2.10
297M,v12,12,768,96,5632,0.045,1.10
297M,v13,12,768,128,4096,0.044,0.60
297M,v14,12,768,160,2048,0.045,0.24
297M,v15,12,3072,12,2048,0.178,3.20
297M,v16,12,3072,4,2432,0.180,11.4
297M,v17,12,3072,8,2304,0.177,5.40
297M,v18,12,3072,16,1792,0.180,2.10
297M,v19,12,3072,24,1408,0.178,1.10
297M,v20,12,3072,32,1024,0.177,0.60
297M,v21,12,3072,40,512,0.180,0.24
297M,v22,12,1024,36,6144,0.059,3.20
297M,v23,12,1024,12,7296,0.060,11.4
297M,v24,12,1024,24,6912,0.059,5.40
297M,v25,12,1024,48,5376,0.060,2.10
297M,v26,12,1024,72,4224,0.059,1.10
297M,v27,12,1024,96,3072,0.059,0.60
297M,v28,12,1024,120,1536,0.060,0.24
297M,v29,12,2048,12,3456,0.118,5.40
297M,v30,12,2048,24,2688,0.120,2.10
297M,v31,12,2048,48,1536,0.118,0.60
297M,v32,12,2048,60,768,0.120,0.24
297M,v45,12,1536,40,3200,0.089,1.50
297M,v46,12,1536,44,3072,0.089,1.31
297M,v47,12,1536,52,2688,0.088,0.97
297M,v48,12,1536,56,2432,0.089,0.81
297M,v49,12,768,80,6400,0.045,1.50
297M,v50,12,768,88,6016,0.045,1.28
297M,v51,12,768,104,5376,0.044,0.97
297M,v52,12,768,112,4736,0.045,0.79
297M,v53,12,3072,20,1664,0.177,1.56
297M,v54,12,3072,28,1152,0.180,0.77
297M,v55,12,1024,56,4864,0.060,1.63
297M,v56,12,1024,64,4608,0.060,1.35
297M,v57,12,1024,80,3840,0.059,0.90
297M,v58,12,1024,88,3328,0.060,0.71
297M,v59,12,2048,32,2432,0.117,1.43
297M,v60,12,2048,36,2048,0.120,1.07
297M,v61,12,2048,40,1920,0.118,0.90
297M,v62,12,2048,44,1792,0.117,0.76
1B,v1,16,2048,32,8192,0.066,4.80
1B,v2,16,2048,72,5760,0.067,1.50
1B,v3,16,2816,92,2432,0.089,0.50
1B,v4,16,2816,76,3072,0.091,0.76
1B,v5,16,2816,68,3584,0.090,0.99
1B,v6,16,2816,60,4096,0.090,1.28
1B,v7,16,2816,56,4480,0.089,1.50
1B,v8,16,2816,24,6144,0.089,4.80
1B,v9,16,2816,48,4736,0.090,1.85
1B,v10,16,2816,40,5120,0.090,2.40
1B,v11,16,2816,36,5376,0.090,2.80
1B,v12,16,2560,64,4480,0.082,1.31
1B,v13,16,2560,72,4096,0.082,1.07
1B,v14,16,2560,80,3648,0.082,0.86
1B,v15,16,2560,56,4864,0.082,1.63
1B,v16,16,2560,88,3200,0.082,0.68
1B,v17,16,2560,48,5376,0.082,2.10
"""

# name, size, layers, d_model, heads, d_head, gqa, f_size, printed x, printed r
# LLaMA-3.2-3B prints r = 4.80 under a different attention count; only its x is checked.
_REFERENCE_MODELS = """
LLaMA-3.2-1B,1B,16,2048,32,64,4,8192,0.066,4.80
Panda-1B,1B,16,2560,72,64,4,4096,0.082,1.07
Surefire-1B,1B,16,2560,36,64,9,6144,0.082,3.6
LLaMA-3.2-3B,3B,28,3072,24,128,3,8192,0.058,
Panda-3B,3B,28,4096,36,128,3,4096,0.077,1
Surefire-3B,3B,28,4096,42,128,7,4096,0.077,1
Panda-3B-1b-fit,3B,28,4096,33,128,3,4608,0.076,1.23
Qwen2.5-1.5B,1.5B,28,1536,12,128,6,8960,,
Qwen3-0.6B,0.6B,28,1024,16,128,2,3072,,
"""


def _optional(text: str) -> Optional[float]:
    return float(text) if text else None


def _parse_table() -> List[CorpusEntry]:
    entries = []
    for line in _TABLE.strip().splitlines():
        size, variant, layers, d_model, heads, f_size, x, r = line.split(",")
        entries.append(CorpusEntry(size, variant, int(layers), int(d_model), int(heads), int(f_size),
                                   float(x), float(r)))
    return entries


def _parse_reference_models() -> List[CorpusEntry]:
    entries = []
    for line in _REFERENCE_MODELS.strip().splitlines():
        name, size, layers, d_model, heads, d_head, gqa, f_size, x, r = line.split(",")
        entries.append(CorpusEntry(size, name, int(layers), int(d_model), int(heads), int(f_size),
                                   _optional(x), _optional(r), gqa=int(gqa), d_head=int(d_head)))
    return entries


def _checked(entries: List[CorpusEntry]) -> Tuple[CorpusEntry, ...]:
    for entry in entries:
        problems = entry.discrepancies()
        if problems:
            raise CorpusIntegrityException(f"corpus row {entry.name}: " + "; ".join(problems))
    return tuple(entries)


@lru_cache(maxsize=None)
def corpus() -> Tuple[CorpusEntry, ...]:
    """
    Every trained variant, in table order. Each row is checked against the
    parameter formulas on first use.
    """
    entries = _checked(_parse_table())
    logger.debug("corpus loaded: %d variants", len(entries))
    return entries


@lru_cache(maxsize=None)
def reference_models() -> Tuple[CorpusEntry, ...]:
    return _checked(_parse_reference_models())


@lru_cache(maxsize=None)
def _index() -> Dict[Tuple[str, str], CorpusEntry]:
    return {(e.size_label.upper(), e.variant.lower()): e for e in corpus()}


def lookup(size_label: str, variant: str) -> CorpusEntry:
    """
    :param size_label: e.g. "80M"
    :param variant: e.g. "v1"
    """
    try:
        return _index()[(size_label.strip().upper(), variant.strip().lower())]
    except KeyError:
        raise LookupError(f"unknown corpus reference {size_label}/{variant}")


def reference_model(name: str) -> CorpusEntry:
    for entry in reference_models():
        if entry.variant.lower() == name.strip().lower():
            return entry
    raise LookupError(f"unknown reference model {name!r}")


def entries_by_size(size_labels) -> List[CorpusEntry]:
    wanted = {label.upper() for label in size_labels}
    return [e for e in corpus() if e.size_label.upper() in wanted]
