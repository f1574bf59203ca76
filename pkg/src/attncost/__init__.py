"""Analytical cost, roofline, and energy model for multi-head attention
and multi-head latent attention inference, with a toy-scale counting
kernel as the correctness oracle."""

from .chains import (
    ChainSpec,
    Residency,
    chain_macs,
    chain_traffic,
    enumerate_orders,
    format_order,
    optimal_order,
    parse_order,
)
from .config import (
    AttentionConfig,
    Phase,
    SchemeId,
    SchemeTag,
    Variant,
    Workload,
    builtin_config,
    builtin_names,
    kv_cache_elements_per_token,
    load_config,
    param_count,
)
from .layer_cost import (
    CostReport,
    CountOptions,
    OpIntensity,
    QK_ORDER_TREES,
    STAGES,
    layer_cost,
    operational_intensity,
    qk_order_sweep,
)
from .roofline import (
    Bound,
    EstimateOptions,
    PerfEstimate,
    Platform,
    corner,
    crossover_compute_ratio,
    crossover_compute_ratio_bisect,
    efficiency_threshold_bisect,
    efficiency_threshold_tops_per_w,
    estimate,
    load_platform,
    sweep_compute_ratio,
    sweep_efficiency,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "Bound",
    "ChainSpec",
    "CostReport",
    "CountOptions",
    "EstimateOptions",
    "OpIntensity",
    "PerfEstimate",
    "Phase",
    "Platform",
    "QK_ORDER_TREES",
    "Residency",
    "STAGES",
    "SchemeId",
    "SchemeTag",
    "Variant",
    "Workload",
    "builtin_config",
    "builtin_names",
    "chain_macs",
    "chain_traffic",
    "corner",
    "crossover_compute_ratio",
    "crossover_compute_ratio_bisect",
    "efficiency_threshold_bisect",
    "efficiency_threshold_tops_per_w",
    "enumerate_orders",
    "estimate",
    "format_order",
    "kv_cache_elements_per_token",
    "layer_cost",
    "load_config",
    "load_platform",
    "operational_intensity",
    "optimal_order",
    "param_count",
    "parse_order",
    "qk_order_sweep",
    "sweep_compute_ratio",
    "sweep_efficiency",
]
