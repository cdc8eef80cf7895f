"""
Synthetic training losses for bundled architectures, generated from a known
conditional law. Every record is tagged "synthetic".
"""

import logging
from typing import Iterable, List, Optional

import numpy as np

from archmodel import count_params, derived_metrics, parse_size_label
from corpus import CorpusEntry, RunRecord
from laws import ChinchillaParams, ConditionalLaw, RefLossSource, conditional_loss, ref_loss

logger = logging.getLogger(__name__)

SYNTHETIC_TAG = "synthetic"
DEFAULT_TOKENS_PER_PARAM = 100
SYNTHETIC_CHINCHILLA = ChinchillaParams(E=1.69, A=406.4, alpha=0.34, B=410.7, beta=0.28)


def synthetic_reference() -> RefLossSource:
    return RefLossSource.from_chinchilla(SYNTHETIC_CHINCHILLA)


def generate_runs(
    entries: Iterable[CorpusEntry],
    law: ConditionalLaw,
    ref: Optional[RefLossSource] = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
    tokens_per_param: float = DEFAULT_TOKENS_PER_PARAM,
) -> List[RunRecord]:
    """
    One run per entry, trained on tokens_per_param times its nominal size.
    :param noise_sigma: standard deviation of the Gaussian noise added to each loss
    :param seed: the same seed always yields the same losses
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if tokens_per_param <= 0:
        raise ValueError("tokens_per_param must be positive")
    ref = ref or synthetic_reference()
    entries = list(entries)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_sigma, size=len(entries)) if noise_sigma > 0 else np.zeros(len(entries))

    records = []
    for entry, eps in zip(entries, noise):
        config = entry.to_config()
        metrics = derived_metrics(config)
        d_tokens = tokens_per_param * parse_size_label(entry.size_label)
        l_opt = ref_loss(ref, count_params(config).n_nonembed, d_tokens, entry.size_label)
        loss = conditional_loss(law, metrics.x, metrics.r, l_opt) + float(eps)
        if loss <= 0:
            raise ArithmeticError(f"{entry.name}: generated loss {loss} is not positive")
        records.append(RunRecord(
            arch=config, d_tokens=d_tokens, loss=loss, size_label=entry.size_label,
            variant=entry.variant, tags=(SYNTHETIC_TAG,),
        ))
    logger.info("generated %d synthetic runs (sigma=%g, seed=%d)", len(records), noise_sigma, seed)
    return records
