"""Toy-scale numerical attention kernel with an instrumented MAC tally.

This kernel exists to validate the analytical model, not to be fast: every
matrix product is a naive triple loop over plain Python scalars.  Running
it with float weights checks that all chain groupings compute the same
function; running it with integer weights makes those checks exact; and
the MAC tally, incremented once per multiply-accumulate actually executed,
cross-validates the closed-form counts stage by stage.

Positional embeddings are deliberately absent, and prefill applies no
causal mask, matching the counting conventions of the analytical model.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .chains import NodeProduct, validate_order
from .config import AttentionConfig
from .layer_cost import classify_out_node

QK_ORDERS = ("l2r", "mid_first", "outer_first")


class DenseMatrix:
    """Row-major dense matrix over plain Python scalars."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data: list):
        if rows < 1 or cols < 1:
            raise ValueError("matrix dims must be positive")
        if len(data) != rows * cols:
            raise ValueError(
                f"data length {len(data)} does not match {rows}x{cols}"
            )
        self.rows = rows
        self.cols = cols
        self.data = list(data)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "DenseMatrix":
        return cls(rows, cols, [0] * (rows * cols))

    @classmethod
    def from_rows(cls, rows: list[list]) -> "DenseMatrix":
        if not rows:
            raise ValueError("need at least one row")
        width = len(rows[0])
        flat = []
        for r in rows:
            if len(r) != width:
                raise ValueError("ragged rows")
            flat.extend(r)
        return cls(len(rows), width, flat)

    def at(self, i: int, j: int):
        return self.data[i * self.cols + j]

    def row(self, i: int) -> list:
        return self.data[i * self.cols : (i + 1) * self.cols]

    def to_rows(self) -> list[list]:
        return [self.row(i) for i in range(self.rows)]

    def transpose(self) -> "DenseMatrix":
        out = [0] * (self.rows * self.cols)
        for i in range(self.rows):
            base = i * self.cols
            for j in range(self.cols):
                out[j * self.rows + i] = self.data[base + j]
        return DenseMatrix(self.cols, self.rows, out)


@dataclass
class MacTally:
    """Per-stage multiply-accumulate counts, incremented by actual loop
    iterations so the numbers are independent of any closed form."""

    stages: dict[str, int] = field(default_factory=dict)
    softmax_elements: int = 0

    def add(self, stage: str, count: int) -> None:
        self.stages[stage] = self.stages.get(stage, 0) + count

    @property
    def total(self) -> int:
        return sum(self.stages.values())


def matmul(a: DenseMatrix, b: DenseMatrix, tally: MacTally | None = None,
           stage: str = "") -> DenseMatrix:
    if a.cols != b.rows:
        raise ValueError(f"shape mismatch: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    inner, out_cols = a.cols, b.cols
    out = [0] * (a.rows * out_cols)
    done = 0
    for i in range(a.rows):
        arow = a.data[i * inner : (i + 1) * inner]
        for j in range(out_cols):
            acc = 0
            for k in range(inner):
                acc = acc + arow[k] * b.data[k * out_cols + j]
                done += 1
            out[i * out_cols + j] = acc
    if tally is not None:
        tally.add(stage, done)
    return DenseMatrix(a.rows, out_cols, out)


def mat_add(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ValueError("shape mismatch in addition")
    return DenseMatrix(a.rows, a.cols, [x + y for x, y in zip(a.data, b.data)])


def scale(a: DenseMatrix, factor) -> DenseMatrix:
    return DenseMatrix(a.rows, a.cols, [x * factor for x in a.data])


def softmax_row(values: list) -> list[float]:
    """Numerically safe softmax: subtract the max, exponentiate, normalize."""
    if not values:
        raise ValueError("softmax of an empty row")
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def softmax_rows(a: DenseMatrix, tally: MacTally | None = None) -> DenseMatrix:
    out = []
    for i in range(a.rows):
        out.extend(softmax_row(a.row(i)))
    if tally is not None:
        tally.softmax_elements += a.rows * a.cols
    return DenseMatrix(a.rows, a.cols, out)


@dataclass
class MhaWeights:
    """Per-head projection weights: wq/wk (d_model x d_qk), wv
    (d_model x d_v), wo (d_v x d_model)."""

    wq: list[DenseMatrix]
    wk: list[DenseMatrix]
    wv: list[DenseMatrix]
    wo: list[DenseMatrix]

    def validate(self, cfg: AttentionConfig) -> None:
        h = cfg.n_heads
        for name, mats, shape in (
            ("wq", self.wq, (cfg.d_model, cfg.d_qk)),
            ("wk", self.wk, (cfg.d_model, cfg.d_qk)),
            ("wv", self.wv, (cfg.d_model, cfg.d_v)),
            ("wo", self.wo, (cfg.d_v, cfg.d_model)),
        ):
            if len(mats) != h:
                raise ValueError(f"{name} needs {h} per-head matrices")
            for m in mats:
                if (m.rows, m.cols) != shape:
                    raise ValueError(
                        f"{name} head shape {m.rows}x{m.cols}, expected {shape}"
                    )


@dataclass
class MlaWeights:
    """Latent-attention weights; `absorbed` holds the per-head precomputed
    query/key product and is required only for the reuse scheme."""

    w_down_q: DenseMatrix
    w_down_kv: DenseMatrix
    w_up_q: list[DenseMatrix]
    w_up_k: list[DenseMatrix]
    w_up_v: list[DenseMatrix]
    wo: list[DenseMatrix]
    absorbed: list[DenseMatrix] | None = None

    def validate(self, cfg: AttentionConfig) -> None:
        if (self.w_down_q.rows, self.w_down_q.cols) != (cfg.d_model, cfg.d_q_latent):
            raise ValueError("w_down_q shape mismatch")
        if (self.w_down_kv.rows, self.w_down_kv.cols) != (cfg.d_model, cfg.d_kv_latent):
            raise ValueError("w_down_kv shape mismatch")
        h = cfg.n_heads
        for name, mats, shape in (
            ("w_up_q", self.w_up_q, (cfg.d_q_latent, cfg.d_qk)),
            ("w_up_k", self.w_up_k, (cfg.d_kv_latent, cfg.d_qk)),
            ("w_up_v", self.w_up_v, (cfg.d_kv_latent, cfg.d_v)),
            ("wo", self.wo, (cfg.d_v, cfg.d_model)),
        ):
            if len(mats) != h:
                raise ValueError(f"{name} needs {h} per-head matrices")
            for m in mats:
                if (m.rows, m.cols) != shape:
                    raise ValueError(
                        f"{name} head shape {m.rows}x{m.cols}, expected {shape}"
                    )
        if self.absorbed is not None:
            if len(self.absorbed) != h:
                raise ValueError(f"absorbed needs {h} per-head matrices")
            for m in self.absorbed:
                if (m.rows, m.cols) != (cfg.d_q_latent, cfg.d_kv_latent):
                    raise ValueError("absorbed head shape mismatch")


class MhaCache:
    """Per-head K/V history of one sequence."""

    def __init__(self, n_heads: int):
        self.k_rows: list[list[list]] = [[] for _ in range(n_heads)]
        self.v_rows: list[list[list]] = [[] for _ in range(n_heads)]

    @property
    def length(self) -> int:
        return len(self.k_rows[0])

    def append(self, head: int, k_row: list, v_row: list) -> None:
        self.k_rows[head].append(list(k_row))
        self.v_rows[head].append(list(v_row))


class MlaCache:
    """Latent history of one sequence, shared by all heads."""

    def __init__(self):
        self.rows: list[list] = []

    @property
    def length(self) -> int:
        return len(self.rows)

    def append(self, row: list) -> None:
        self.rows.append(list(row))

    def matrix(self) -> DenseMatrix:
        return DenseMatrix.from_rows(self.rows)


@dataclass
class KernelResult:
    outputs: list[DenseMatrix]
    mac_tally: int
    stage_tallies: dict[str, int]
    softmax_elements: int


def _rand_matrix(rng: random.Random, rows: int, cols: int) -> DenseMatrix:
    return DenseMatrix(rows, cols, [rng.uniform(-0.5, 0.5) for _ in range(rows * cols)])


def _int_matrix(rng: random.Random, rows: int, cols: int, lo: int, hi: int) -> DenseMatrix:
    return DenseMatrix(rows, cols, [rng.randint(lo, hi) for _ in range(rows * cols)])


def random_mha_weights(cfg: AttentionConfig, seed: int) -> MhaWeights:
    """Seeded uniform weights in [-0.5, 0.5]."""
    rng = random.Random(seed)
    h = cfg.n_heads
    return MhaWeights(
        wq=[_rand_matrix(rng, cfg.d_model, cfg.d_qk) for _ in range(h)],
        wk=[_rand_matrix(rng, cfg.d_model, cfg.d_qk) for _ in range(h)],
        wv=[_rand_matrix(rng, cfg.d_model, cfg.d_v) for _ in range(h)],
        wo=[_rand_matrix(rng, cfg.d_v, cfg.d_model) for _ in range(h)],
    )


def random_mla_weights(cfg: AttentionConfig, seed: int) -> MlaWeights:
    rng = random.Random(seed)
    h = cfg.n_heads
    return MlaWeights(
        w_down_q=_rand_matrix(rng, cfg.d_model, cfg.d_q_latent),
        w_down_kv=_rand_matrix(rng, cfg.d_model, cfg.d_kv_latent),
        w_up_q=[_rand_matrix(rng, cfg.d_q_latent, cfg.d_qk) for _ in range(h)],
        w_up_k=[_rand_matrix(rng, cfg.d_kv_latent, cfg.d_qk) for _ in range(h)],
        w_up_v=[_rand_matrix(rng, cfg.d_kv_latent, cfg.d_v) for _ in range(h)],
        wo=[_rand_matrix(rng, cfg.d_v, cfg.d_model) for _ in range(h)],
    )


def integer_mla_weights(cfg: AttentionConfig, seed: int, lo: int = -3, hi: int = 3) -> MlaWeights:
    """Small integer weights; all linear algebra on them is exact."""
    rng = random.Random(seed)
    h = cfg.n_heads
    return MlaWeights(
        w_down_q=_int_matrix(rng, cfg.d_model, cfg.d_q_latent, lo, hi),
        w_down_kv=_int_matrix(rng, cfg.d_model, cfg.d_kv_latent, lo, hi),
        w_up_q=[_int_matrix(rng, cfg.d_q_latent, cfg.d_qk, lo, hi) for _ in range(h)],
        w_up_k=[_int_matrix(rng, cfg.d_kv_latent, cfg.d_qk, lo, hi) for _ in range(h)],
        w_up_v=[_int_matrix(rng, cfg.d_kv_latent, cfg.d_v, lo, hi) for _ in range(h)],
        wo=[_int_matrix(rng, cfg.d_v, cfg.d_model, lo, hi) for _ in range(h)],
    )


def precompute_absorbed(weights: MlaWeights) -> list[DenseMatrix]:
    """Per-head absorbed query/key products (d_q_latent x d_kv_latent).

    This models an offline precomputation, so it is never tallied against
    a layer invocation."""
    return [
        matmul(wq, wk.transpose())
        for wq, wk in zip(weights.w_up_q, weights.w_up_k)
    ]


def run_mha(
    cfg: AttentionConfig,
    weights: MhaWeights,
    xs: list[DenseMatrix],
    caches: list[MhaCache],
    tally: MacTally | None = None,
) -> KernelResult:
    """One layer invocation over a batch of sequences.

    Each xs[i] holds the new token rows of sequence i (one row for decode,
    the prompt for prefill); caches[i] is extended in place."""
    weights.validate(cfg)
    if len(xs) != len(caches):
        raise ValueError("one cache per sequence required")
    tally = tally if tally is not None else MacTally()
    inv_scale = 1.0 / math.sqrt(cfg.d_qk)
    outputs = []
    for x, cache in zip(xs, caches):
        if x.cols != cfg.d_model:
            raise ValueError("input width must equal d_model")
        out = DenseMatrix.zeros(x.rows, cfg.d_model)
        for head in range(cfg.n_heads):
            q = matmul(x, weights.wq[head], tally, "down_proj")
            k_new = matmul(x, weights.wk[head], tally, "down_proj")
            v_new = matmul(x, weights.wv[head], tally, "down_proj")
            for r in range(k_new.rows):
                cache.append(head, k_new.row(r), v_new.row(r))
            k_all = DenseMatrix.from_rows(cache.k_rows[head])
            v_all = DenseMatrix.from_rows(cache.v_rows[head])
            z = matmul(q, k_all.transpose(), tally, "scores")
            s = softmax_rows(scale(z, inv_scale), tally)
            ctx = matmul(s, v_all, tally, "context")
            out = mat_add(out, matmul(ctx, weights.wo[head], tally, "out_proj"))
        outputs.append(out)
    return KernelResult(outputs, tally.total, dict(tally.stages), tally.softmax_elements)


def _qk_scores_rc(q_l, weights, head, cache_t, qk_order, tally, absorbed_now):
    if qk_order == "mid_first":
        return matmul(matmul(q_l, absorbed_now[head], tally, "q_transform"),
                      cache_t, tally, "scores")
    if qk_order == "l2r":
        t1 = matmul(q_l, weights.w_up_q[head], tally, "q_transform")
        t2 = matmul(t1, weights.w_up_k[head].transpose(), tally, "q_transform")
        return matmul(t2, cache_t, tally, "scores")
    if qk_order == "outer_first":
        t1 = matmul(q_l, weights.w_up_q[head], tally, "q_transform")
        k_t = matmul(weights.w_up_k[head].transpose(), cache_t, tally, "scores")
        return matmul(t1, k_t, tally, "scores")
    raise ValueError(f"unknown qk_order {qk_order!r}")


def _qk_scores_ru(q_l, absorbed, cache_t, qk_order, tally):
    if qk_order in ("l2r", "mid_first"):
        return matmul(matmul(q_l, absorbed, tally, "q_transform"),
                      cache_t, tally, "scores")
    if qk_order == "outer_first":
        return matmul(q_l, matmul(absorbed, cache_t, tally, "scores"),
                      tally, "scores")
    raise ValueError(f"unknown qk_order {qk_order!r}")


def _eval_output_chain(operands, tree, tally):
    """Evaluate the 4-operand output chain by an explicit grouping, tagging
    each product with the same stage names the analytical model uses."""
    validate_order(tree, 4)

    def walk(node):
        if isinstance(node, int):
            return operands[node], node, node
        left, right = node
        lm, l_lo, l_hi = walk(left)
        rm, _, r_hi = walk(right)
        product = NodeProduct(
            lo=l_lo, split=l_hi, hi=r_hi,
            rows=lm.rows, inner=lm.cols, cols=rm.cols,
        )
        stage = classify_out_node(product)
        return matmul(lm, rm, tally, stage), l_lo, r_hi

    result, _, _ = walk(tree)
    return result


def run_mla(
    cfg: AttentionConfig,
    weights: MlaWeights,
    xs: list[DenseMatrix],
    caches: list[MlaCache],
    qk_order: str = "mid_first",
    out_order=None,
    scheme: str = "rc",
    tally: MacTally | None = None,
) -> KernelResult:
    """One latent-attention layer invocation over a batch of sequences.

    scheme 'rc' recomputes the absorbed query/key product on chip (tallied
    once per invocation); 'ru' consumes weights.absorbed and fails without
    it.  out_order pins the output-chain grouping; None means left-to-right.
    All qk_order/scheme combinations compute the same function.
    """
    weights.validate(cfg)
    if not cfg.is_mla:
        raise ValueError("run_mla needs an MLA config")
    if len(xs) != len(caches):
        raise ValueError("one cache per sequence required")
    if scheme not in ("rc", "ru"):
        raise ValueError(f"scheme must be 'rc' or 'ru', got {scheme!r}")
    if qk_order not in QK_ORDERS:
        raise ValueError(f"unknown qk_order {qk_order!r}")
    if scheme == "ru" and weights.absorbed is None:
        raise ValueError("reuse scheme requires precomputed absorbed matrices")
    if out_order is None:
        out_order = (((0, 1), 2), 3)
    validate_order(out_order, 4)
    tally = tally if tally is not None else MacTally()
    inv_scale = 1.0 / math.sqrt(cfg.d_qk)

    absorbed_now = None
    if scheme == "rc" and qk_order == "mid_first":
        # Recomputed once per invocation, amortized over the whole batch.
        absorbed_now = [
            matmul(wq, wk.transpose(), tally, "absorb_recompute")
            for wq, wk in zip(weights.w_up_q, weights.w_up_k)
        ]

    outputs = []
    for x, cache in zip(xs, caches):
        if x.cols != cfg.d_model:
            raise ValueError("input width must equal d_model")
        q_l = matmul(x, weights.w_down_q, tally, "down_proj")
        c_new = matmul(x, weights.w_down_kv, tally, "down_proj")
        for r in range(c_new.rows):
            cache.append(c_new.row(r))
        c_all = cache.matrix()
        c_t = c_all.transpose()
        out = DenseMatrix.zeros(x.rows, cfg.d_model)
        for head in range(cfg.n_heads):
            if scheme == "rc":
                z = _qk_scores_rc(q_l, weights, head, c_t, qk_order, tally, absorbed_now)
            else:
                z = _qk_scores_ru(q_l, weights.absorbed[head], c_t, qk_order, tally)
            s = softmax_rows(scale(z, inv_scale), tally)
            y = _eval_output_chain(
                [s, c_all, weights.w_up_v[head], weights.wo[head]], out_order, tally
            )
            out = mat_add(out, y)
        outputs.append(out)
    return KernelResult(outputs, tally.total, dict(tally.stages), tally.softmax_elements)
