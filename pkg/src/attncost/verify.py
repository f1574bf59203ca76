"""Self-checks wiring the numerical kernel against the analytical model.

Two suites: functional equivalence of every chain grouping and scheme on
seeded toy instances, and exact agreement between instrumented MAC tallies
and the closed-form layer costs.  Both are cheap enough to run on demand
from the command line.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import kernel as rk
from .config import AttentionConfig, Phase, SchemeId, SchemeTag, Variant, Workload
from .layer_cost import QK_ORDER_TREES, CountOptions, layer_cost

# Small enough for a pure-Python kernel, large enough to exercise every
# dimension independently.
TOY_MLA = AttentionConfig(
    variant_kind=Variant.MLA, d_model=10, n_heads=2,
    d_qk=3, d_v=4, d_q_latent=5, d_kv_latent=6,
)
TOY_MHA = AttentionConfig(
    variant_kind=Variant.MHA, d_model=8, n_heads=2, d_qk=3, d_v=4,
)
# Equivalence checks use a slightly larger shape with more history so that
# float reassociation across groupings actually perturbs the last bits
# (tolerance 0 is then expected to fail on the float path).
EQUIV_MLA = AttentionConfig(
    variant_kind=Variant.MLA, d_model=24, n_heads=2,
    d_qk=6, d_v=5, d_q_latent=9, d_kv_latent=8,
)
EQUIV_HISTORY = 8
EQUIV_QUERY_ROWS = 2

DEFAULT_SEEDS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _max_abs(m: rk.DenseMatrix) -> float:
    return max(abs(v) for v in m.data)


def max_relative_deviation(a: rk.DenseMatrix, b: rk.DenseMatrix) -> float:
    """Largest elementwise difference relative to the larger magnitude of
    the two outputs (max norm)."""
    scale = max(_max_abs(a), _max_abs(b), 1e-30)
    return max(abs(x - y) for x, y in zip(a.data, b.data)) / scale


def _seeded_instance(seed: int, integer: bool):
    cfg = EQUIV_MLA
    if integer:
        weights = rk.integer_mla_weights(cfg, seed)
    else:
        weights = rk.random_mla_weights(cfg, seed)
    weights.absorbed = rk.precompute_absorbed(weights)
    rng = random.Random(seed + 1000)
    if integer:
        x = [rk._int_matrix(rng, EQUIV_QUERY_ROWS, cfg.d_model, -3, 3)]
    else:
        x = [rk._rand_matrix(rng, EQUIV_QUERY_ROWS, cfg.d_model)]

    def fresh_cache():
        cache = rk.MlaCache()
        cache_rng = random.Random(seed + 2000)
        for _ in range(EQUIV_HISTORY):
            if integer:
                cache.append([cache_rng.randint(-3, 3) for _ in range(cfg.d_kv_latent)])
            else:
                cache.append([cache_rng.uniform(-0.5, 0.5) for _ in range(cfg.d_kv_latent)])
        return cache

    return cfg, weights, x, fresh_cache


def ordering_equivalence_check(
    seeds=DEFAULT_SEEDS, tolerance: float = 1e-5, integer: bool = False
) -> list[CheckResult]:
    """Every qk grouping under both schemes must compute the same output
    on the same instance (exactly so for integer weights)."""
    results = []
    for seed in seeds:
        cfg, weights, x, fresh_cache = _seeded_instance(seed, integer)
        outputs = []
        for scheme in ("rc", "ru"):
            for order in rk.QK_ORDERS:
                result = rk.run_mla(
                    cfg, weights, x, [fresh_cache()],
                    qk_order=order, scheme=scheme,
                )
                outputs.append((f"{scheme}/{order}", result.outputs[0]))
        worst = 0.0
        worst_pair = ""
        ref_name, ref = outputs[0]
        for name, out in outputs[1:]:
            dev = max_relative_deviation(ref, out)
            if dev > worst:
                worst, worst_pair = dev, f"{ref_name} vs {name}"
        passed = worst <= tolerance
        kind = "integer" if integer else "float"
        results.append(
            CheckResult(
                name=f"equivalence[{kind}] seed={seed}",
                passed=passed,
                detail=f"max relative deviation {worst:.3e}"
                + (f" ({worst_pair})" if worst_pair else "")
                + f", tolerance {tolerance:g}",
            )
        )
    return results


def _toy_workloads():
    for t in (0, 1, 7):
        for batch in (1, 3):
            yield Workload(phase=Phase.DECODE, length=t, batch=batch)
    for length in (1, 3):
        for batch in (1, 3):
            yield Workload(phase=Phase.PREFILL, length=length, batch=batch)


def _kernel_counts_mla(cfg, workload, scheme_tag, report, qk_order=None):
    weights = rk.random_mla_weights(cfg, seed=7)
    weights.absorbed = rk.precompute_absorbed(weights)
    rng = random.Random(99)
    tally = rk.MacTally()
    xs, caches = [], []
    lq = workload.queries_per_sequence
    for _ in range(workload.batch):
        xs.append(rk._rand_matrix(rng, lq, cfg.d_model))
        cache = rk.MlaCache()
        for _ in range(workload.cache_entries_read):
            cache.append([rng.uniform(-0.5, 0.5) for _ in range(cfg.d_kv_latent)])
        caches.append(cache)
    scheme = "rc" if scheme_tag is SchemeTag.MLA_RC else "ru"
    if qk_order is None:
        qk_order = "mid_first" if scheme == "rc" else "l2r"
    rk.run_mla(
        cfg, weights, xs, caches, qk_order=qk_order,
        out_order=report.out_order, scheme=scheme, tally=tally,
    )
    return tally


def _kernel_counts_mha(cfg, workload):
    weights = rk.random_mha_weights(cfg, seed=7)
    rng = random.Random(99)
    tally = rk.MacTally()
    xs, caches = [], []
    lq = workload.queries_per_sequence
    for _ in range(workload.batch):
        xs.append(rk._rand_matrix(rng, lq, cfg.d_model))
        cache = rk.MhaCache(cfg.n_heads)
        for _ in range(workload.cache_entries_read):
            for head in range(cfg.n_heads):
                cache.append(
                    head,
                    [rng.uniform(-0.5, 0.5) for _ in range(cfg.d_qk)],
                    [rng.uniform(-0.5, 0.5) for _ in range(cfg.d_v)],
                )
        caches.append(cache)
    rk.run_mha(cfg, weights, xs, caches, tally=tally)
    return tally


def _random_toy_config(rng: random.Random, mla: bool) -> AttentionConfig:
    n_heads = rng.randint(1, 4)
    d_qk = rng.randint(2, 8)
    d_v = rng.randint(2, 8)
    if not mla:
        return AttentionConfig(
            variant_kind=Variant.MHA,
            d_model=rng.randint(4, 16), n_heads=n_heads, d_qk=d_qk, d_v=d_v,
        )
    cap = n_heads * (d_qk + d_v)
    return AttentionConfig(
        variant_kind=Variant.MLA,
        d_model=rng.randint(4, 16), n_heads=n_heads, d_qk=d_qk, d_v=d_v,
        d_q_latent=rng.randint(2, 10),
        d_kv_latent=rng.randint(2, min(10, cap - 1)),
    )


def _count_case(cfg, scheme, workload, opts, label, qk_order=None):
    report = layer_cost(cfg, scheme, workload, opts)
    if cfg.is_mla:
        tally = _kernel_counts_mla(cfg, workload, scheme.tag, report, qk_order)
    else:
        tally = _kernel_counts_mha(cfg, workload)
    mismatches = []
    for stage, cost in report.breakdown.items():
        counted = tally.stages.get(stage, 0)
        if counted != cost.macs:
            mismatches.append(f"{stage}: kernel {counted} vs model {cost.macs}")
    if tally.total != report.macs:
        mismatches.append(f"total: kernel {tally.total} vs model {report.macs}")
    expected_vec = opts.softmax_ops_per_element * tally.softmax_elements
    if expected_vec != report.vector_ops:
        mismatches.append(
            f"vector ops: kernel-derived {expected_vec} vs model {report.vector_ops}"
        )
    return CheckResult(
        name=label,
        passed=not mismatches,
        detail="; ".join(mismatches) if mismatches else "exact match",
    )


def count_match_check(opts: CountOptions | None = None) -> list[CheckResult]:
    """Instrumented kernel MAC tallies must equal the analytical stage
    counts exactly: both variants, both phases, a cache/batch grid, a
    spread of random layer shapes, and the alternative query/key
    groupings."""
    opts = opts or CountOptions()
    results = []
    for workload in _toy_workloads():
        for cfg, tag in (
            (TOY_MLA, SchemeTag.MLA_RC),
            (TOY_MLA, SchemeTag.MLA_RU),
            (TOY_MHA, SchemeTag.MHA_L),
        ):
            label = (
                f"count[{tag.value}] {workload.phase.value}"
                f" len={workload.length} batch={workload.batch}"
            )
            results.append(_count_case(cfg, SchemeId(tag=tag), workload, opts, label))

    # Distinct random layer shapes, one workload each.
    rng = random.Random(20240229)
    workload_pool = list(_toy_workloads())
    for i in range(10):
        for mla in (True, False):
            cfg = _random_toy_config(rng, mla)
            workload = rng.choice(workload_pool)
            tag = rng.choice((SchemeTag.MLA_RC, SchemeTag.MLA_RU)) if mla else SchemeTag.MHA_L
            label = (
                f"count[shape {i}/{tag.value}] {workload.phase.value}"
                f" len={workload.length} batch={workload.batch}"
            )
            results.append(_count_case(cfg, SchemeId(tag=tag), workload, opts, label))

    # Recompute scheme under the non-absorbed query/key groupings.
    for order in ("l2r", "outer_first"):
        scheme = SchemeId(tag=SchemeTag.MLA_RC, qk_order=QK_ORDER_TREES[order])
        workload = Workload(phase=Phase.DECODE, length=7, batch=2)
        label = f"count[mla_rc/{order}] decode len=7 batch=2"
        results.append(_count_case(TOY_MLA, scheme, workload, opts, label, qk_order=order))
    return results


def run_all(seeds=DEFAULT_SEEDS, tolerance: float = 1e-5) -> list[CheckResult]:
    results = []
    results += ordering_equivalence_check(seeds, tolerance, integer=False)
    results += ordering_equivalence_check(seeds, tolerance=0.0, integer=True)
    results += count_match_check()
    return results
