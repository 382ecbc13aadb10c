"""Model-driven automotive security test-case generation."""

from .attackgraph import (
    AttackGraph,
    AttackNode,
    AttackVector,
    build_superposed_graph,
    cheapest_path,
    enumerate_below_msv,
    exclude_variants,
    export_dot,
    gate_verdict,
    prioritize,
)
from .campaign import CampaignReport, SimulatedSut, run_campaign, simulated_execute
from .config import Config
from .mitigate import Mitigation, apply_mitigations, optimize_mitigations, speculative_cost
from .model import SutModel, VariantSet, derive_adjacency, difference_set, load_model, load_variants
from .vulndb import VulnStore, coa_from_cvss, match_component, parse_feed

__version__ = "0.1.0"
