from __future__ import annotations

from dataclasses import dataclass

from .attackgraph import DEFAULT_IDENTITY_THRESHOLD, DEFAULT_K_MAX
from .mitigate import DEFAULT_MAX_CATALOG, DEFAULT_SPECULATIVE_K
from .vulndb import DEFAULT_COA, DEFAULT_COA_SCALE


@dataclass(frozen=True)
class Config:
    """Tunables shared by the CLI and the campaign loop."""

    msv: int = 30
    coa_scale: float = DEFAULT_COA_SCALE
    default_coa: int = DEFAULT_COA
    k_max: int = DEFAULT_K_MAX
    seed: int = 0
    budget: int = 100
    missing_mitigation_policy: str = "speculative"
    speculative_k: int = DEFAULT_SPECULATIVE_K
    identity_threshold: float = DEFAULT_IDENTITY_THRESHOLD
    max_catalog: int = DEFAULT_MAX_CATALOG
