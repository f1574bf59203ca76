"""Layer cost tests against an independent closed-form oracle.

The oracle below recomputes every expected number with flat spreadsheet
arithmetic (and exhaustive enumeration for the output chain), sharing no
code path with the chain composition inside layer_cost.
"""

from fractions import Fraction

import pytest

from attncost import (
    AttentionConfig,
    ChainSpec,
    CountOptions,
    Phase,
    SchemeId,
    SchemeTag,
    Variant,
    Workload,
    builtin_config,
    chain_macs,
    enumerate_orders,
    layer_cost,
    operational_intensity,
    qk_order_sweep,
)
from attncost.layer_cost import STAGES

MLA = builtin_config("mla_v3")
MHA_L_CFG = builtin_config("mha_derived")
MHA_S_CFG = builtin_config("mha_scaled")

TOY_MLA = AttentionConfig(Variant.MLA, 10, 2, 3, 4, d_q_latent=5, d_kv_latent=6)
TOY_MHA = AttentionConfig(Variant.MHA, 8, 2, 3, 4)


def oracle_out_chain_macs(cfg, w):
    """Cheapest output-chain MACs by brute force over all five groupings."""
    dims = (w.queries_per_sequence, w.attention_span, cfg.d_kv_latent,
            cfg.d_v, cfg.d_model)
    spec = ChainSpec(dims=dims)
    per_copy = min(chain_macs(spec, t) for t in enumerate_orders(4))
    return cfg.n_heads * w.batch * per_copy


def oracle_mla_macs(cfg, w, recompute):
    lq, n, batch = w.queries_per_sequence, w.attention_span, w.batch
    h, d, dql, dkvl = cfg.n_heads, cfg.d_model, cfg.d_q_latent, cfg.d_kv_latent
    total = batch * lq * d * (dql + dkvl)              # down projections
    if recompute:
        total += h * dql * cfg.d_qk * dkvl             # absorbed product, once
    total += batch * h * lq * dql * dkvl               # query transform
    total += batch * h * lq * n * dkvl                 # scores in latent space
    total += oracle_out_chain_macs(cfg, w)
    return total


def oracle_mla_traffic(cfg, w, recompute, include_prefill_writes=True):
    lq, batch, b = w.queries_per_sequence, w.batch, w.bytes_per_element
    h, d, dql, dkvl = cfg.n_heads, cfg.d_model, cfg.d_q_latent, cfg.d_kv_latent
    reads = d * (dql + dkvl) * b                       # down weights
    reads += batch * lq * d * b                        # input tokens
    if recompute:
        reads += h * (dql * cfg.d_qk + cfg.d_qk * dkvl) * b
    else:
        reads += h * dql * dkvl * b                    # streamed absorbed
    reads += batch * w.cache_entries_read * dkvl * b   # latent cache, once
    reads += h * dkvl * cfg.d_v * b                    # value up-projection
    reads += h * cfg.d_v * d * b                       # output projection
    writes = batch * lq * d * b
    entries = w.new_cache_entries
    if w.phase is Phase.PREFILL and not include_prefill_writes:
        entries = 0
    writes += batch * entries * dkvl * b
    return reads, writes


def oracle_mha_macs(cfg, w):
    lq, n, batch = w.queries_per_sequence, w.attention_span, w.batch
    h, d, dqk, dv = cfg.n_heads, cfg.d_model, cfg.d_qk, cfg.d_v
    return (
        batch * lq * h * d * (2 * dqk + dv)
        + batch * h * lq * n * (dqk + dv)
        + batch * h * lq * dv * d
    )


def oracle_mha_traffic(cfg, w, include_prefill_writes=True):
    lq, batch, b = w.queries_per_sequence, w.batch, w.bytes_per_element
    h, d, dqk, dv = cfg.n_heads, cfg.d_model, cfg.d_qk, cfg.d_v
    reads = h * d * (2 * dqk + dv) * b + batch * lq * d * b
    reads += batch * w.cache_entries_read * h * (dqk + dv) * b
    reads += h * dv * d * b
    writes = batch * lq * d * b
    entries = w.new_cache_entries
    if w.phase is Phase.PREFILL and not include_prefill_writes:
        entries = 0
    writes += batch * entries * h * (dqk + dv) * b
    return reads, writes


def test_mha_decode_empty_cache_macs():
    report = layer_cost(MHA_L_CFG, SchemeTag.MHA_L, Workload(Phase.DECODE, 0))
    # Projections 469,762,048 plus one score and one context MAC row per head.
    assert report.macs == 469_794_816


def test_absorbed_recompute_stage_is_cache_independent():
    for t in (0, 1, 1024, 65536):
        report = layer_cost(MLA, SchemeTag.MLA_RC, Workload(Phase.DECODE, t))
        assert report.breakdown["absorb_recompute"].macs == 12_884_901_888


def test_single_token_prefill_equals_empty_decode():
    for cfg, tag in (
        (MLA, SchemeTag.MLA_RC),
        (MLA, SchemeTag.MLA_RU),
        (MHA_L_CFG, SchemeTag.MHA_L),
    ):
        prefill = layer_cost(cfg, tag, Workload(Phase.PREFILL, 1))
        decode = layer_cost(cfg, tag, Workload(Phase.DECODE, 0))
        for stage in STAGES:
            if stage == "cache_update":
                continue
            assert prefill.breakdown[stage].as_tuple() == decode.breakdown[stage].as_tuple(), stage
        # Both write exactly one cache entry here, so even that stage agrees.
        assert prefill.breakdown["cache_update"].as_tuple() == decode.breakdown["cache_update"].as_tuple()


@pytest.mark.parametrize("cfg,tag", [
    (TOY_MLA, SchemeTag.MLA_RC),
    (TOY_MLA, SchemeTag.MLA_RU),
    (MLA, SchemeTag.MLA_RC),
    (MLA, SchemeTag.MLA_RU),
])
@pytest.mark.parametrize("workload", [
    Workload(Phase.DECODE, 0),
    Workload(Phase.DECODE, 7, batch=3),
    Workload(Phase.DECODE, 4096, batch=2, bytes_per_element=1),
    Workload(Phase.PREFILL, 5, batch=2),
    Workload(Phase.PREFILL, 64, bytes_per_element=4),
])
def test_mla_totals_match_closed_forms(cfg, tag, workload):
    recompute = tag is SchemeTag.MLA_RC
    report = layer_cost(cfg, tag, workload)
    assert report.macs == oracle_mla_macs(cfg, workload, recompute)
    reads, writes = oracle_mla_traffic(cfg, workload, recompute)
    assert report.dram_read_bytes == reads
    assert report.dram_write_bytes == writes
    assert report.macs == sum(s.macs for s in report.breakdown.values())
    assert report.dram_read_bytes == sum(s.read_bytes for s in report.breakdown.values())
    assert report.dram_write_bytes == sum(s.write_bytes for s in report.breakdown.values())


@pytest.mark.parametrize("cfg,tag", [
    (TOY_MHA, SchemeTag.MHA_L),
    (MHA_L_CFG, SchemeTag.MHA_L),
    (MHA_S_CFG, SchemeTag.MHA_S),
])
@pytest.mark.parametrize("workload", [
    Workload(Phase.DECODE, 0),
    Workload(Phase.DECODE, 7, batch=3),
    Workload(Phase.DECODE, 8192),
    Workload(Phase.PREFILL, 5, batch=2),
])
def test_mha_totals_match_closed_forms(cfg, tag, workload):
    report = layer_cost(cfg, tag, workload)
    assert report.macs == oracle_mha_macs(cfg, workload)
    reads, writes = oracle_mha_traffic(cfg, workload)
    assert report.dram_read_bytes == reads
    assert report.dram_write_bytes == writes


def test_prefill_cache_write_flag():
    w = Workload(Phase.PREFILL, 16, batch=2)
    on = layer_cost(MLA, SchemeTag.MLA_RU, w)
    off = layer_cost(MLA, SchemeTag.MLA_RU, w,
                     CountOptions(include_prefill_cache_writes=False))
    assert on.dram_write_bytes - off.dram_write_bytes == 2 * 16 * 512 * 2
    assert off.breakdown["cache_update"].write_bytes == 0


def test_ru_rc_differ_only_in_absorb_and_q_transform():
    for workload in (
        Workload(Phase.DECODE, 0),
        Workload(Phase.DECODE, 8192, batch=4),
        Workload(Phase.PREFILL, 32, batch=2),
    ):
        rc = layer_cost(MLA, SchemeTag.MLA_RC, workload)
        ru = layer_cost(MLA, SchemeTag.MLA_RU, workload)
        for stage in STAGES:
            if stage in ("absorb_recompute", "q_transform"):
                continue
            assert rc.breakdown[stage].as_tuple() == ru.breakdown[stage].as_tuple(), stage
        assert ru.breakdown["absorb_recompute"].as_tuple() == (0, 0, 0)
        assert rc.breakdown["absorb_recompute"].macs == 12_884_901_888
        assert rc.breakdown["q_transform"].macs == ru.breakdown["q_transform"].macs
        assert rc.breakdown["q_transform"].read_bytes == 0
        assert ru.breakdown["q_transform"].read_bytes == 128 * 1536 * 512 * workload.bytes_per_element


def test_compute_vs_bandwidth_trade():
    # More on-chip recompute must always cost MACs and save reads here,
    # guarded by 1536*512 > 1536*128 + 128*512.
    assert 1536 * 512 > 1536 * 128 + 128 * 512
    for t in (0, 1024, 8192, 65536):
        for batch in (1, 8):
            w = Workload(Phase.DECODE, t, batch=batch)
            rc = layer_cost(MLA, SchemeTag.MLA_RC, w)
            ru = layer_cost(MLA, SchemeTag.MLA_RU, w)
            assert ru.macs < rc.macs
            assert ru.dram_read_bytes > rc.dram_read_bytes


def test_batch_scaling():
    base = layer_cost(MLA, SchemeTag.MLA_RC, Workload(Phase.DECODE, 100, batch=1))
    scaled = layer_cost(MLA, SchemeTag.MLA_RC, Workload(Phase.DECODE, 100, batch=5))
    absorb = base.breakdown["absorb_recompute"].macs
    # Activation-dependent MACs scale with batch; the recompute does not.
    assert scaled.macs - absorb == 5 * (base.macs - absorb)
    assert scaled.breakdown["absorb_recompute"].macs == absorb
    # Weight streaming is batch-invariant: read growth is cache+input only.
    weight_reads = (
        base.dram_read_bytes
        - base.breakdown["scores"].read_bytes
        - 1 * 1 * 7168 * 2
    )
    scaled_weight_reads = (
        scaled.dram_read_bytes
        - scaled.breakdown["scores"].read_bytes
        - 5 * 1 * 7168 * 2
    )
    assert weight_reads == scaled_weight_reads
    assert scaled.vector_ops == 5 * base.vector_ops


def test_vector_ops_convention():
    w = Workload(Phase.DECODE, 9, batch=3)
    report = layer_cost(MLA, SchemeTag.MLA_RU, w)
    assert report.vector_ops == 5 * 3 * 128 * 1 * 10
    custom = layer_cost(MLA, SchemeTag.MLA_RU, w, CountOptions(softmax_ops_per_element=7))
    assert custom.vector_ops == 7 * 3 * 128 * 1 * 10
    assert report.ops() == 2 * report.macs
    assert report.ops(CountOptions(include_softmax_in_ops=True)) == 2 * report.macs + report.vector_ops


def test_operational_intensity_definition():
    report = layer_cost(TOY_MLA, SchemeTag.MLA_RU, Workload(Phase.DECODE, 3))
    oi = operational_intensity(report)
    assert oi.value == Fraction(2 * report.macs, report.total_bytes)
    # 100 MACs over 400 total bytes is 0.5 ops per byte.
    assert Fraction(2 * 100, 400) == Fraction(1, 2)


def test_decode_intensity_limits():
    # Latent reuse: intensity climbs toward 4*n_heads/bytes_per_element as
    # cache terms dominate (two latent-width MAC rows per cached token
    # against one latent row fetched, shared by all heads).
    limit = Fraction(4 * 128, 2)
    previous = None
    for exponent in range(10, 21):
        report = layer_cost(MLA, SchemeTag.MLA_RU, Workload(Phase.DECODE, 2**exponent))
        oi = operational_intensity(report).value
        assert oi < limit
        if previous is not None:
            assert oi > previous
        previous = oi
    assert previous > limit / 2  # closes in on the asymptote

    # Full-width attention: intensity is pinned near 2/bytes_per_element at
    # every cache size because MAC and byte slopes cancel.
    values = []
    for t in (1024, 8192, 65536):
        report = layer_cost(MHA_L_CFG, SchemeTag.MHA_L, Workload(Phase.DECODE, t))
        values.append(operational_intensity(report).value)
    for v in values:
        assert abs(v - 1) < 0.001  # 2/bytes_per_element at 2 bytes
    assert max(values) / min(values) < Fraction(101, 100)


def test_out_order_reported_and_overridable():
    decode = layer_cost(MLA, SchemeTag.MLA_RC, Workload(Phase.DECODE, 4096))
    assert decode.out_order == (((0, 1), 2), 3)
    # With a single-position span the value-first grouping wins by 384 MACs.
    empty = layer_cost(MLA, SchemeTag.MLA_RC, Workload(Phase.DECODE, 0))
    assert empty.out_order == ((0, (1, 2)), 3)
    pinned = layer_cost(
        MLA,
        SchemeId(tag=SchemeTag.MLA_RC, out_order=(((0, 1), 2), 3)),
        Workload(Phase.DECODE, 0),
    )
    assert pinned.out_order == (((0, 1), 2), 3)
    assert pinned.macs - empty.macs == 128 * 384


def test_qk_order_override_changes_stage_layout():
    l2r = (((0, 1), 2), 3)
    report = layer_cost(
        MLA, SchemeId(tag=SchemeTag.MLA_RC, qk_order=l2r), Workload(Phase.DECODE, 100)
    )
    assert report.breakdown["absorb_recompute"].macs == 0
    # Factored weights are still streamed, now billed to the query transform.
    assert report.breakdown["q_transform"].read_bytes == 128 * (1536 * 128 + 128 * 512) * 2
    assert report.qk_order == l2r
    # No absorbed matrix is ever materialized under this grouping.
    assert report.whole_absorbed_bytes == 0


def test_scheme_config_mismatch_raises():
    with pytest.raises(ValueError):
        layer_cost(MLA, SchemeTag.MHA_L, Workload(Phase.DECODE, 1))
    with pytest.raises(ValueError):
        layer_cost(MHA_L_CFG, SchemeTag.MLA_RC, Workload(Phase.DECODE, 1))


def test_qk_order_sweep_matches_enumeration():
    w = Workload(Phase.DECODE, 4096, batch=2)
    rows = {r["order"]: r["macs"] for r in qk_order_sweep(MLA, w)}
    dims = (2, 1536, 128, 512, 4097)
    spec = ChainSpec(dims=dims, head_multiplicity=128)
    assert rows["l2r"] == chain_macs(spec, (((0, 1), 2), 3))
    assert rows["mid_first"] == chain_macs(spec, ((0, (1, 2)), 3))
    assert rows["outer_first"] == chain_macs(spec, ((0, 1), (2, 3)))
    assert rows["optimal"] == min(chain_macs(spec, t) for t in enumerate_orders(4))


def test_qk_order_sweep_exhaustive_lists_all_groupings():
    w = Workload(Phase.DECODE, 16)
    rows = qk_order_sweep(MLA, w, exhaustive=True)
    assert len(rows) == 3 + 1 + 5
    trees = {r["tree"] for r in rows}
    assert len(trees) == 5


def test_qk_order_sweep_slope_difference():
    # Per extra cached token, the cache-up-projecting order costs
    # n_heads*(d_qk*d_kv_latent + R*d_qk - R*d_kv_latent) MACs more than
    # left-to-right, with R the folded query rows.  Derived from the chain
    # closed forms; confirmed here between two adjacent grid points.
    for batch in (1, 4):
        deltas = []
        for t in (1000, 1001):
            rows = {r["order"]: r["macs"] for r in qk_order_sweep(
                MLA, Workload(Phase.DECODE, t, batch=batch))}
            deltas.append(rows["outer_first"] - rows["l2r"])
        r_rows = batch * 1
        expected_slope = 128 * (128 * 512 + r_rows * 128 - r_rows * 512)
        assert deltas[1] - deltas[0] == expected_slope


def test_qk_order_sweep_degenerate_symmetric_dims():
    # With d_qk == d_kv_latent the left-to-right order differs from the
    # absorbed order (minus the absorbed product itself) by exactly one
    # R*d_qk^2 transform term.
    cfg = AttentionConfig(Variant.MLA, 32, 4, 6, 6, d_q_latent=8, d_kv_latent=6)
    w = Workload(Phase.DECODE, 50, batch=3)
    rows = {r["order"]: r["macs"] for r in qk_order_sweep(cfg, w)}
    absorb = 4 * 8 * 6 * 6
    r_rows = 3
    assert rows["l2r"] - (rows["mid_first"] - absorb) == 4 * r_rows * 6 * 6


def test_qk_order_sweep_requires_mla():
    with pytest.raises(ValueError):
        qk_order_sweep(MHA_L_CFG, Workload(Phase.DECODE, 4))


def test_traffic_is_independent_of_output_grouping():
    # The grouping only redistributes compute; at the layer level every
    # read and write must be identical for all five output trees.
    w = Workload(Phase.DECODE, 100, batch=2)
    trees = enumerate_orders(4)
    reports = [
        layer_cost(MLA, SchemeId(tag=SchemeTag.MLA_RU, out_order=t), w)
        for t in trees
    ]
    reads = {r.dram_read_bytes for r in reports}
    writes = {r.dram_write_bytes for r in reports}
    assert len(reads) == 1 and len(writes) == 1
    macs = {r.macs for r in reports}
    assert len(macs) > 1  # compute does differ between groupings


def test_absorb_weight_streaming_matches_chain_traffic():
    # The recompute stage's weight reads are exactly the streamed factor
    # chain: one d_q_latent x d_qk and one d_qk x d_kv_latent matrix per head.
    from attncost import Residency, chain_traffic

    w = Workload(Phase.DECODE, 64)
    rc = layer_cost(MLA, SchemeTag.MLA_RC, w)
    factor_chain = ChainSpec(
        dims=(MLA.d_q_latent, MLA.d_qk, MLA.d_kv_latent),
        head_multiplicity=MLA.n_heads,
        residency=(Residency.STREAMED_WEIGHT, Residency.STREAMED_WEIGHT),
    )
    reads, _ = chain_traffic(factor_chain, (0, 1), w.bytes_per_element)
    assert rc.breakdown["absorb_recompute"].read_bytes == reads


def test_resident_footprint_tracks_absorbed_matrix():
    rc = layer_cost(MLA, SchemeTag.MLA_RC, Workload(Phase.DECODE, 4096))
    assert rc.max_resident_bytes == 1536 * 512 * 2  # one head's absorbed matrix
    assert rc.whole_absorbed_bytes == 128 * 1536 * 512 * 2
    ru = layer_cost(MLA, SchemeTag.MLA_RU, Workload(Phase.DECODE, 4096))
    assert ru.whole_absorbed_bytes == 0
    assert ru.max_resident_bytes < rc.max_resident_bytes
