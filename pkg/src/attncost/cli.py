"""Command-line front end emitting deterministic CSV.

Every output starts with a '#'-prefixed manifest block that echoes the
tool version, config hashes, and every resolved option (defaults
included), so a CSV file is self-describing.  The body below the block is
byte-identical across runs for identical inputs; only the trailing
generated_at line varies.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from datetime import datetime, timezone

from . import __version__, verify
from .chains import format_order
from .config import (
    Phase,
    SchemeId,
    SchemeTag,
    Workload,
    builtin_names,
    config_to_text,
    kv_cache_elements_per_token,
    load_config,
    param_count,
)
from .layer_cost import (
    STAGES,
    CountOptions,
    CostReport,
    layer_cost,
    operational_intensity,
    qk_order_sweep,
)
from .roofline import (
    DEFAULT_BW_BYTES_PER_S,
    DEFAULT_E_DRAM_BIT_PJ,
    DEFAULT_E_OP_PJ,
    DEFAULT_PEAK_OPS_PER_S,
    corner,
    crossover_compute_ratio,
    crossover_compute_ratio_bisect,
    efficiency_threshold_bisect,
    efficiency_threshold_tops_per_w,
    load_platform,
    sweep_compute_ratio,
    sweep_efficiency,
)

DEFAULT_T_GRID = (1024, 8192, 65536)
DEFAULT_OI_GRID = tuple(2**k for k in range(10, 17))
DEFAULT_RATIO_GRID_SPEC = "log:0.25:4096:15"
DEFAULT_TOPS_GRID_SPEC = "log:0.125:128:11"

# The canonical four-way comparison: each scheme with its matching config.
CANONICAL_PAIRS = (
    ("mla_v3", SchemeTag.MLA_RC),
    ("mla_v3", SchemeTag.MLA_RU),
    ("mha_derived", SchemeTag.MHA_L),
    ("mha_scaled", SchemeTag.MHA_S),
)


def fmt(value) -> str:
    """Fixed formatting: integers verbatim, floats at 9 significant digits."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def parse_grid(spec: str) -> list[float]:
    """Grid syntax: 'a,b,c' literal values, 'log:start:stop:n' geometric,
    'lin:start:stop:n' arithmetic (both inclusive)."""
    spec = spec.strip()
    if not spec:
        raise ValueError("grid spec must not be empty")
    if spec.startswith(("log:", "lin:")):
        kind, *parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid spec needs start:stop:count, got {spec!r}")
        start, stop = float(parts[0]), float(parts[1])
        count = int(parts[2])
        if count < 1:
            raise ValueError("grid count must be >= 1")
        if count == 1:
            return [start]
        if kind == "log":
            if start <= 0 or stop <= 0:
                raise ValueError("log grid endpoints must be positive")
            ratio = (stop / start) ** (1.0 / (count - 1))
            return [start * ratio**i for i in range(count)]
        step = (stop - start) / (count - 1)
        return [start + step * i for i in range(count)]
    values = [float(v) for v in spec.split(",") if v.strip()]
    if not values:
        raise ValueError("grid spec must contain at least one value")
    return values


def parse_int_list(spec: str) -> list[int]:
    values = [int(v) for v in spec.split(",") if v.strip()]
    if not values:
        raise ValueError("expected a comma-separated list of integers")
    return values


class CsvWriter:
    """Manifest block plus a plain CSV body with fixed formatting."""

    def __init__(self, command: str):
        self.manifest: list[tuple[str, str]] = [
            ("tool", f"attncost {__version__}"),
            ("command", command),
        ]
        self.header: list[str] = []
        self.rows: list[list[str]] = []

    def note(self, key: str, value) -> None:
        self.manifest.append((key, fmt(value)))

    def note_config(self, label: str, cfg) -> None:
        digest = hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:16]
        self.note("config", f"{label} sha256:{digest}")

    def set_header(self, columns: list[str]) -> None:
        self.header = list(columns)

    def add_row(self, values: list) -> None:
        self.rows.append([fmt(v) for v in values])

    def render(self, timestamp: bool = True) -> str:
        lines = [f"# {key} = {value}" for key, value in self.manifest]
        if timestamp:
            now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            lines.append(f"# generated_at = {now}")
        lines.append(",".join(self.header))
        lines.extend(",".join(row) for row in self.rows)
        return "\n".join(lines) + "\n"


def emit(writer: CsvWriter, out_path: str | None) -> None:
    text = writer.render()
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _count_options(args) -> CountOptions:
    return CountOptions(
        softmax_ops_per_element=args.softmax_ops_per_element,
        include_softmax_in_ops=args.include_softmax,
        include_prefill_cache_writes=not args.no_prefill_cache_writes,
    )


def _note_count_options(writer: CsvWriter, opts: CountOptions) -> None:
    writer.note("softmax_ops_per_element", opts.softmax_ops_per_element)
    writer.note("include_softmax_in_ops", opts.include_softmax_in_ops)
    writer.note("include_prefill_cache_writes", opts.include_prefill_cache_writes)


def _workload(args, length: int | None = None) -> Workload:
    phase = Phase(args.phase)
    if length is None:
        if phase is Phase.DECODE:
            if args.t is None:
                raise ValueError("decode needs --t (cached tokens)")
            length = args.t
        else:
            if args.l is None:
                raise ValueError("prefill needs --l (prompt length)")
            length = args.l
    return Workload(
        phase=phase,
        length=length,
        batch=args.batch,
        bytes_per_element=args.bytes_per_elem,
    )


COUNT_COLUMNS = [
    "scheme", "phase", "t_or_l", "batch",
    "macs", "vector_ops", "read_bytes", "write_bytes", "oi_ops_per_byte",
] + [f"macs_{stage}" for stage in STAGES]


def _report_row(report: CostReport, opts: CountOptions) -> list:
    oi = operational_intensity(report, opts)
    row = [
        report.scheme.value,
        report.phase.value,
        report.length,
        report.batch,
        report.macs,
        report.vector_ops,
        report.dram_read_bytes,
        report.dram_write_bytes,
        float(oi),
    ]
    row += [report.breakdown[stage].macs for stage in STAGES]
    return row


def cmd_params(args) -> int:
    writer = CsvWriter("params")
    label, cfg = load_config(args.config)
    writer.note_config(label, cfg)
    writer.note("include_absorbed", args.include_absorbed)
    writer.set_header(
        ["config", "variant", "d_model", "n_heads", "d_qk", "d_v",
         "d_q_latent", "d_kv_latent", "param_count", "kv_cache_elements_per_token"]
    )
    writer.add_row(
        [
            label,
            cfg.variant_kind.value,
            cfg.d_model,
            cfg.n_heads,
            cfg.d_qk,
            cfg.d_v,
            cfg.d_q_latent if cfg.d_q_latent is not None else 0,
            cfg.d_kv_latent if cfg.d_kv_latent is not None else 0,
            param_count(cfg, include_absorbed=args.include_absorbed),
            kv_cache_elements_per_token(cfg),
        ]
    )
    emit(writer, args.out)
    return 0


def cmd_count(args) -> int:
    writer = CsvWriter("count")
    label, cfg = load_config(args.config)
    writer.note_config(label, cfg)
    opts = _count_options(args)
    _note_count_options(writer, opts)
    scheme = SchemeId(tag=SchemeTag(args.scheme))
    workload = _workload(args)
    writer.note("bytes_per_element", workload.bytes_per_element)
    report = layer_cost(cfg, scheme, workload, opts)
    writer.note("qk_order", format_order(report.qk_order) if report.qk_order is not None else "fixed")
    writer.note("out_order", format_order(report.out_order) if report.out_order is not None else "fixed")
    writer.set_header(COUNT_COLUMNS)
    writer.add_row(_report_row(report, opts))
    emit(writer, args.out)
    return 0


def cmd_orders(args) -> int:
    writer = CsvWriter("orders")
    label, cfg = load_config(args.config)
    writer.note_config(label, cfg)
    t_grid = parse_int_list(args.t_grid)
    b_grid = parse_int_list(args.batch_grid)
    writer.note("t_grid", args.t_grid)
    writer.note("batch_grid", args.batch_grid)
    writer.note("exhaustive", args.exhaustive)
    writer.note("bytes_per_element", args.bytes_per_elem)
    writer.set_header(["t", "batch", "order", "macs", "tree"])
    for t in t_grid:
        for batch in b_grid:
            workload = Workload(
                phase=Phase.DECODE, length=t, batch=batch,
                bytes_per_element=args.bytes_per_elem,
            )
            for row in qk_order_sweep(cfg, workload, exhaustive=args.exhaustive):
                writer.add_row(
                    [row["t_or_l"], row["batch"], row["order"], row["macs"], row["tree"]]
                )
    emit(writer, args.out)
    return 0


def _resolve_pairs(args):
    pairs = []
    if args.pair:
        for item in args.pair:
            if ":" not in item:
                raise ValueError(f"--pair needs CONFIG:SCHEME, got {item!r}")
            cfg_name, scheme_name = item.rsplit(":", 1)
            label, cfg = load_config(cfg_name)
            pairs.append((label, cfg, SchemeTag(scheme_name)))
    else:
        for cfg_name, tag in CANONICAL_PAIRS:
            label, cfg = load_config(cfg_name)
            pairs.append((label, cfg, tag))
    return pairs


def _sweep_reports(pairs, t_values, args, opts):
    reports = []
    for t in t_values:
        for label, cfg, tag in pairs:
            workload = Workload(
                phase=Phase(args.phase), length=t, batch=args.batch,
                bytes_per_element=args.bytes_per_elem,
            )
            reports.append((label, layer_cost(cfg, SchemeId(tag=tag), workload, opts)))
    return reports


def cmd_sweep(args) -> int:
    writer = CsvWriter(f"sweep:{args.kind}")
    pairs = _resolve_pairs(args)
    for label, cfg, tag in pairs:
        writer.note_config(f"{label}:{tag.value}", cfg)
    opts = _count_options(args)
    _note_count_options(writer, opts)
    writer.note("phase", args.phase)
    writer.note("batch", args.batch)
    writer.note("bytes_per_element", args.bytes_per_elem)
    if args.platform:
        platform = load_platform(args.platform)
        writer.note("platform", platform.name)
        writer.note("platform_corner_ops_per_byte", corner(platform))

    if args.kind == "oi":
        grid = [int(round(v)) for v in parse_grid(args.grid or ",".join(map(str, DEFAULT_OI_GRID)))]
        writer.note("t_grid", ",".join(str(v) for v in grid))
        writer.set_header(COUNT_COLUMNS)
        for t in grid:
            for label, cfg, tag in pairs:
                workload = Workload(
                    phase=Phase(args.phase), length=t, batch=args.batch,
                    bytes_per_element=args.bytes_per_elem,
                )
                report = layer_cost(cfg, SchemeId(tag=tag), workload, opts)
                writer.add_row(_report_row(report, opts))
        emit(writer, args.out)
        return 0

    t_values = parse_int_list(args.t_grid or ",".join(map(str, DEFAULT_T_GRID)))
    writer.note("t_grid", ",".join(str(v) for v in t_values))
    flat = _sweep_reports(pairs, t_values, args, opts)
    reports = [report for _, report in flat]
    by_scheme_t = {(r.scheme, r.length): r for r in reports}

    if args.kind == "ratio":
        grid = parse_grid(args.grid or DEFAULT_RATIO_GRID_SPEC)
        writer.note("ratio_grid", args.grid or DEFAULT_RATIO_GRID_SPEC)
        writer.note("bw_bytes_per_s", args.bw)
        writer.note("e_op_pj", DEFAULT_E_OP_PJ)
        writer.note("e_dram_bit_pj", DEFAULT_E_DRAM_BIT_PJ)
        for t in t_values:
            rc = by_scheme_t.get((SchemeTag.MLA_RC, t))
            ru = by_scheme_t.get((SchemeTag.MLA_RU, t))
            if rc is not None and ru is not None:
                closed = crossover_compute_ratio(rc, ru)
                bisect = crossover_compute_ratio_bisect(rc, ru, args.bw)
                writer.note(f"crossover_ratio_t{t}_closed_form", closed)
                writer.note(f"crossover_ratio_t{t}_bisection", bisect)
        rows = sweep_compute_ratio(reports, grid, bw_bytes_per_s=args.bw)
        writer.set_header(
            ["ratio_ops_per_byte", "scheme", "t", "latency_s",
             "tokens_per_s", "energy_j", "bound"]
        )
        for row in rows:
            writer.add_row([row[c] for c in writer.header])
        emit(writer, args.out)
        return 0

    if args.kind == "energy":
        grid = parse_grid(args.grid or DEFAULT_TOPS_GRID_SPEC)
        writer.note("tops_per_w_grid", args.grid or DEFAULT_TOPS_GRID_SPEC)
        writer.note("e_dram_bit_pj", args.e_dram_bit)
        writer.note("latency_reference_peak_ops_per_s", DEFAULT_PEAK_OPS_PER_S)
        writer.note("latency_reference_bw_bytes_per_s", DEFAULT_BW_BYTES_PER_S)
        for t in t_values:
            rc = by_scheme_t.get((SchemeTag.MLA_RC, t))
            ru = by_scheme_t.get((SchemeTag.MLA_RU, t))
            if rc is not None and ru is not None:
                closed = efficiency_threshold_tops_per_w(rc, ru, args.e_dram_bit)
                bisect = efficiency_threshold_bisect(rc, ru, args.e_dram_bit)
                writer.note(f"energy_threshold_tops_t{t}_closed_form", closed)
                writer.note(f"energy_threshold_tops_t{t}_bisection", bisect)
        rows = sweep_efficiency(reports, grid, e_dram_bit_pj=args.e_dram_bit)
        writer.set_header(
            ["tops_per_w", "scheme", "t", "latency_s",
             "tokens_per_s", "energy_j", "bound"]
        )
        for row in rows:
            writer.add_row([row[c] for c in writer.header])
        emit(writer, args.out)
        return 0

    raise ValueError(f"unknown sweep kind {args.kind!r}")


def cmd_verify(args) -> int:
    seeds = parse_int_list(args.seed) if args.seed else list(verify.DEFAULT_SEEDS)
    results = []
    results += verify.ordering_equivalence_check(seeds, args.tolerance, integer=False)
    results += verify.ordering_equivalence_check(seeds, tolerance=0.0, integer=True)
    results += verify.count_match_check()
    failed = 0
    lines = []
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        failed += 0 if res.passed else 1
        lines.append(f"{status} {res.name}: {res.detail}")
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attncost",
        description="Analytical cost, roofline, and energy model for "
        "multi-head and latent attention inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_scheme=False):
        p.add_argument(
            "--config", default="mla_v3",
            help=f"builtin name ({', '.join(builtin_names())}) or config file path",
        )
        if needs_scheme:
            p.add_argument(
                "--scheme", required=True,
                choices=[t.value for t in SchemeTag],
            )
        p.add_argument("--bytes-per-elem", type=int, default=2, choices=(1, 2, 4))
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    def add_count_opts(p):
        p.add_argument("--include-softmax", action="store_true",
                       help="count softmax vector ops into the ops totals")
        p.add_argument("--softmax-ops-per-element", type=int, default=5)
        p.add_argument("--no-prefill-cache-writes", action="store_true",
                       help="exclude prefill cache writes from DRAM traffic")

    p = sub.add_parser("params", help="parameter and cache-footprint table")
    add_common(p)
    p.add_argument("--include-absorbed", action="store_true",
                   help="count the derived absorbed matrix as stored weights")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("count", help="cost report for one scheme and workload")
    add_common(p, needs_scheme=True)
    add_count_opts(p)
    p.add_argument("--phase", default="decode", choices=("prefill", "decode"))
    p.add_argument("--t", type=int, default=None, help="decode: cached tokens")
    p.add_argument("--l", type=int, default=None, help="prefill: prompt length")
    p.add_argument("--batch", type=int, default=1)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("orders", help="query/key chain grouping comparison")
    add_common(p)
    p.add_argument("--t-grid", default="1024,8192,65536",
                   help="comma-separated cached-token counts")
    p.add_argument("--batch-grid", default="1", help="comma-separated batch sizes")
    p.add_argument("--exhaustive", action="store_true",
                   help="also emit every grouping of the four-matrix chain")
    p.set_defaults(func=cmd_orders)

    p = sub.add_parser("sweep", help="oi / ratio / energy grid sweeps")
    p.add_argument("kind", choices=("oi", "ratio", "energy"))
    p.add_argument("--pair", action="append", default=None,
                   help="CONFIG:SCHEME, repeatable (default: the four canonical pairs)")
    p.add_argument("--grid", default=None,
                   help="x-axis grid: 'a,b,c' or 'log:start:stop:n' or 'lin:start:stop:n'")
    p.add_argument("--t-grid", default=None,
                   help="cache sizes for ratio/energy sweeps (default 1024,8192,65536)")
    p.add_argument("--phase", default="decode", choices=("prefill", "decode"))
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--bytes-per-elem", type=int, default=2, choices=(1, 2, 4))
    p.add_argument("--bw", type=float, default=DEFAULT_BW_BYTES_PER_S,
                   help="DRAM bandwidth in bytes/s for the ratio sweep")
    p.add_argument("--e-dram-bit", type=float, default=DEFAULT_E_DRAM_BIT_PJ,
                   help="DRAM energy per bit in pJ for the energy sweep")
    p.add_argument("--platform", default=None, help="platform file for corner metadata")
    p.add_argument("--out", default=None)
    add_count_opts(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="kernel equivalence and count-match suites")
    p.add_argument("--seed", default=None, help="comma-separated seed list")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
