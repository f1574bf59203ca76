"""Per-layer cost reports for the four attention execution schemes.

Accounting rules
----------------
* MACs are the atomic compute unit.  The conversion to operations
  (1 MAC = 2 ops) happens only at reporting boundaries (operational
  intensity, roofline, energy), never inside the counts.
* Fused execution: intermediates never touch DRAM.  Weights are streamed
  from DRAM once per layer invocation and are not reused across decode
  steps.  Activations and the cache are shared across heads and fetched
  once; per-head weights are fetched once per head.
* Decode reads the `length` previously cached entries; the entry produced
  by the current step is consumed on chip and written back once.  Prefill
  reads no cache and writes `length` entries (switchable).
* Prefill scores are counted as the full span-by-span square; no causal
  discount is applied.
* Batch scales every activation-, score-, and cache-dependent term;
  weight streaming and the on-chip recompute of the absorbed query/key
  matrix happen once per invocation, amortized over the batch.
* Softmax work is tallied separately as vector ops
  (softmax_ops_per_element per score element) and excluded from the ops
  total unless explicitly included.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .chains import (
    ChainSpec,
    NodeProduct,
    chain_macs,
    enumerate_orders,
    format_order,
    optimal_order,
    tree_products,
    validate_order,
)
from .config import (
    AttentionConfig,
    Phase,
    SchemeId,
    SchemeTag,
    Workload,
    validate_scheme,
)

# Fixed stage vocabulary of every report, in emission order.
STAGES = (
    "down_proj",
    "q_transform",
    "absorb_recompute",
    "scores",
    "softmax",
    "context",
    "up_v",
    "out_proj",
    "cache_update",
)

# Named groupings of the query/key chain [queries, d_q_latent, d_qk,
# d_kv_latent, span].  The numbers-first naming follows the usual
# product-order convention: L2R multiplies left to right, MID_FIRST forms
# the absorbed weight product first, OUTER_FIRST up-projects the cache.
QK_ORDER_TREES = {
    "l2r": (((0, 1), 2), 3),
    "mid_first": ((0, (1, 2)), 3),
    "outer_first": ((0, 1), (2, 3)),
}
QK_ORDER_NAMES = ("l2r", "mid_first", "outer_first")

RU_QK_TREE = ((0, 1), 2)  # queries * absorbed, then against the cache


@dataclass(frozen=True)
class CountOptions:
    softmax_ops_per_element: int = 5
    include_softmax_in_ops: bool = False
    include_prefill_cache_writes: bool = True


@dataclass
class StageCost:
    macs: int = 0
    read_bytes: int = 0
    write_bytes: int = 0

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.macs, self.read_bytes, self.write_bytes)


@dataclass(frozen=True)
class CostReport:
    """MACs, vector ops, and DRAM traffic of one layer invocation."""

    scheme: SchemeTag
    phase: Phase
    length: int
    batch: int
    bytes_per_element: int
    macs: int
    vector_ops: int
    dram_read_bytes: int
    dram_write_bytes: int
    breakdown: dict[str, StageCost]
    out_order: object
    qk_order: object
    tokens_out: int
    max_resident_bytes: int
    whole_absorbed_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.dram_read_bytes + self.dram_write_bytes

    def ops(self, opts: CountOptions | None = None) -> int:
        opts = opts or CountOptions()
        total = 2 * self.macs
        if opts.include_softmax_in_ops:
            total += self.vector_ops
        return total


@dataclass(frozen=True)
class OpIntensity:
    """Operations per DRAM byte, kept exact as a rational."""

    value: Fraction

    def __float__(self) -> float:
        return float(self.value)


def classify_qk_node(product: NodeProduct) -> str:
    """Stage name for one product of the query/key chain.

    Operands: 0 = latent queries, 1 = query up-projection, 2 = transposed
    key up-projection, 3 = transposed latent cache.  A weight-only product
    is the absorbed-matrix recompute; anything touching the cache counts
    as score work; the rest transforms the queries.
    """
    operands = set(range(product.lo, product.hi + 1))
    if operands <= {1, 2}:
        return "absorb_recompute"
    if 3 in operands:
        return "scores"
    return "q_transform"


def classify_ru_qk_node(product: NodeProduct) -> str:
    """Stage name for one product of the precomputed-absorbed chain
    [queries, absorbed, transposed cache]."""
    operands = set(range(product.lo, product.hi + 1))
    if 2 in operands:
        return "scores"
    return "q_transform"


def classify_out_node(product: NodeProduct) -> str:
    """Stage name for one product of the output chain.

    Operands: 0 = attention weights, 1 = value source (cache or values),
    2 = value up-projection, 3 = output projection.  Products not touching
    the attention weights prepare the value side; products applying the
    attention weights are classified by what they are being applied to.
    """
    operands = set(range(product.lo, product.hi + 1))
    if 0 not in operands:
        return "out_proj" if 3 in operands else "up_v"
    right = set(range(product.split + 1, product.hi + 1))
    if 1 in right:
        return "context"
    if 3 in right:
        return "out_proj"
    return "up_v"


def _mha_cost(cfg, scheme, w, opts, stages, resident):
    h, d, dqk, dv = cfg.n_heads, cfg.d_model, cfg.d_qk, cfg.d_v
    b = w.bytes_per_element
    lq = w.queries_per_sequence
    n = w.attention_span
    batch = w.batch

    stages["down_proj"].macs += batch * lq * h * d * (2 * dqk + dv)
    stages["down_proj"].read_bytes += h * d * (2 * dqk + dv) * b  # Q,K,V weights
    stages["down_proj"].read_bytes += batch * lq * d * b          # input tokens
    resident += [lq * dqk, lq * dv]

    stages["scores"].macs += batch * h * lq * n * dqk
    stages["scores"].read_bytes += batch * w.cache_entries_read * h * dqk * b
    resident.append(lq * n)

    stages["context"].macs += batch * h * lq * n * dv
    stages["context"].read_bytes += batch * w.cache_entries_read * h * dv * b
    resident.append(lq * dv)
    if w.phase is Phase.PREFILL:
        # K and V for the whole prompt live on chip during prefill.
        resident += [n * dqk, n * dv]

    stages["out_proj"].macs += batch * h * lq * dv * d
    stages["out_proj"].read_bytes += h * dv * d * b
    stages["out_proj"].write_bytes += batch * lq * d * b

    entries = w.new_cache_entries
    if w.phase is Phase.PREFILL and not opts.include_prefill_cache_writes:
        entries = 0
    stages["cache_update"].write_bytes += batch * entries * h * (dqk + dv) * b
    return None, None  # no free chain orderings for plain attention


def _mla_cost(cfg, scheme, w, opts, stages, resident):
    h, d = cfg.n_heads, cfg.d_model
    dql, dkvl = cfg.d_q_latent, cfg.d_kv_latent
    dv = cfg.d_v
    b = w.bytes_per_element
    lq = w.queries_per_sequence
    n = w.attention_span
    batch = w.batch

    stages["down_proj"].macs += batch * lq * d * (dql + dkvl)
    stages["down_proj"].read_bytes += d * (dql + dkvl) * b  # down-projection weights
    stages["down_proj"].read_bytes += batch * lq * d * b    # input tokens
    resident += [lq * dql, lq * dkvl]
    if w.phase is Phase.PREFILL:
        resident.append(n * dkvl)  # latent rows for the whole prompt

    # Query/key route.
    recompute = scheme.tag is SchemeTag.MLA_RC
    if recompute:
        qk_dims = (lq, dql, cfg.d_qk, dkvl, n)
        qk_tree = scheme.qk_order if scheme.qk_order is not None else QK_ORDER_TREES["mid_first"]
        validate_order(qk_tree, 4)
        classify = classify_qk_node
    else:
        qk_dims = (lq, dql, dkvl, n)
        qk_tree = scheme.qk_order if scheme.qk_order is not None else RU_QK_TREE
        validate_order(qk_tree, 3)
        classify = classify_ru_qk_node

    saw_weight_only = False
    for product in tree_products(qk_dims, qk_tree):
        stage = classify(product)
        weight_only = stage == "absorb_recompute"
        saw_weight_only = saw_weight_only or weight_only
        mult = h if weight_only else h * batch
        stages[stage].macs += mult * product.macs
        resident.append(product.rows * product.cols)

    if recompute:
        # Factored up-projection weights are streamed either way; they are
        # billed to the recompute stage when the absorbed product is formed
        # on chip, otherwise to the query transform that consumes them.
        factor_bytes = h * (dql * cfg.d_qk + cfg.d_qk * dkvl) * b
        target = "absorb_recompute" if saw_weight_only else "q_transform"
        stages[target].read_bytes += factor_bytes
    else:
        stages["q_transform"].read_bytes += h * dql * dkvl * b  # absorbed, streamed

    stages["scores"].read_bytes += batch * w.cache_entries_read * dkvl * b

    # Output chain: attention weights * value source * value up-projection
    # * output projection, grouping chosen to minimize MACs unless pinned.
    out_dims = (lq, n, dkvl, dv, d)
    if scheme.out_order is not None:
        out_tree = scheme.out_order
        validate_order(out_tree, 4)
    else:
        out_tree, _ = optimal_order(ChainSpec(dims=out_dims))
    for product in tree_products(out_dims, out_tree):
        stage = classify_out_node(product)
        stages[stage].macs += h * batch * product.macs
        resident.append(product.rows * product.cols)

    # Weight traffic of the output side is grouping-independent.
    stages["up_v"].read_bytes += h * dkvl * dv * b
    stages["out_proj"].read_bytes += h * dv * d * b
    stages["out_proj"].write_bytes += batch * lq * d * b

    entries = w.new_cache_entries
    if w.phase is Phase.PREFILL and not opts.include_prefill_cache_writes:
        entries = 0
    stages["cache_update"].write_bytes += batch * entries * dkvl * b

    # The absorbed matrix occupies on-chip memory only when it is actually
    # formed there (an override may dodge the weight-only product).
    absorbed_per_head = dql * dkvl if saw_weight_only else 0
    return qk_tree, out_tree, absorbed_per_head


def layer_cost(
    cfg: AttentionConfig,
    scheme: SchemeId | SchemeTag,
    workload: Workload,
    opts: CountOptions | None = None,
) -> CostReport:
    """Assemble the full cost report for one layer invocation."""
    if isinstance(scheme, SchemeTag):
        scheme = SchemeId(tag=scheme)
    opts = opts or CountOptions()
    validate_scheme(scheme, cfg)

    stages = {name: StageCost() for name in STAGES}
    resident: list[int] = []
    absorbed_per_head = 0
    if cfg.is_mla:
        qk_tree, out_tree, absorbed_per_head = _mla_cost(
            cfg, scheme, workload, opts, stages, resident
        )
    else:
        qk_tree, out_tree = _mha_cost(cfg, scheme, workload, opts, stages, resident)

    n = workload.attention_span
    vector_ops = (
        opts.softmax_ops_per_element
        * workload.batch
        * cfg.n_heads
        * workload.queries_per_sequence
        * n
    )

    b = workload.bytes_per_element
    resident_bytes = [size * b for size in resident]
    if absorbed_per_head:
        resident_bytes.append(absorbed_per_head * b)
    return CostReport(
        scheme=scheme.tag,
        phase=workload.phase,
        length=workload.length,
        batch=workload.batch,
        bytes_per_element=b,
        macs=sum(s.macs for s in stages.values()),
        vector_ops=vector_ops,
        dram_read_bytes=sum(s.read_bytes for s in stages.values()),
        dram_write_bytes=sum(s.write_bytes for s in stages.values()),
        breakdown=stages,
        out_order=out_tree,
        qk_order=qk_tree,
        tokens_out=workload.tokens_out,
        max_resident_bytes=max(resident_bytes, default=0),
        whole_absorbed_bytes=absorbed_per_head * cfg.n_heads * b,
    )


def operational_intensity(report: CostReport, opts: CountOptions | None = None) -> OpIntensity:
    """Total operations over total DRAM bytes moved."""
    total_bytes = report.total_bytes
    if total_bytes <= 0:
        raise ValueError("operational intensity needs nonzero DRAM traffic")
    return OpIntensity(Fraction(report.ops(opts), total_bytes))


def qk_order_sweep(
    cfg: AttentionConfig,
    workload: Workload,
    exhaustive: bool = False,
) -> list[dict]:
    """MAC counts of the query/key chain under each named grouping.

    The chain is [batch*queries, d_q_latent, d_qk, d_kv_latent, span] with
    one copy per head; the batch is folded into the query rows, so the
    absorbed-product term is naturally amortized over the batch.  Adds the
    minimum-MAC grouping as an extra row, and optionally every grouping.
    """
    if not cfg.is_mla:
        raise ValueError("query/key order sweep requires an MLA config")
    dims = (
        workload.batch * workload.queries_per_sequence,
        cfg.d_q_latent,
        cfg.d_qk,
        cfg.d_kv_latent,
        workload.attention_span,
    )
    spec = ChainSpec(dims=dims, head_multiplicity=cfg.n_heads)
    rows = []

    def add_row(name, tree):
        rows.append(
            {
                "t_or_l": workload.length,
                "batch": workload.batch,
                "order": name,
                "macs": chain_macs(spec, tree),
                "tree": format_order(tree),
            }
        )

    for name in QK_ORDER_NAMES:
        add_row(name, QK_ORDER_TREES[name])
    best_tree, _ = optimal_order(spec)
    add_row("optimal", best_tree)
    if exhaustive:
        for i, tree in enumerate(enumerate_orders(4)):
            add_row(f"tree_{i}", tree)
    return rows
