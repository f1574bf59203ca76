"""Roofline latency, throughput, and energy estimates on parameterized
hardware platforms, plus the grid sweeps behind the throughput/energy
comparisons of the execution schemes.

The model is a pure roofline: latency is the larger of compute time
(ops / peak) and memory time (bytes / bandwidth).  Energy charges every
operation e_op_pj and every DRAM bit e_dram_bit_pj.  Only orderings and
crossover points are meaningful outputs; absolute numbers inherit all the
idealizations of the cost model.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .layer_cost import CostReport, CountOptions


class Bound(Enum):
    COMPUTE = "compute"
    MEMORY = "memory"


@dataclass(frozen=True)
class Platform:
    """Peak compute, DRAM bandwidth, energy constants, on-chip capacity."""

    name: str
    peak_ops_per_s: float
    dram_bw_bytes_per_s: float
    e_op_pj: float
    e_dram_bit_pj: float
    onchip_bytes: int

    def __post_init__(self):
        for name in ("peak_ops_per_s", "dram_bw_bytes_per_s", "e_op_pj", "e_dram_bit_pj"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.onchip_bytes < 1:
            raise ValueError("onchip_bytes must be positive")


@dataclass(frozen=True)
class EstimateOptions:
    include_softmax_in_ops: bool = False
    # Require the whole absorbed matrix on chip instead of one head's worth.
    whole_absorbed_matrix: bool = False


@dataclass(frozen=True)
class PerfEstimate:
    latency_s: float
    tokens_per_s: float
    energy_j: float
    bound: Bound
    onchip_ok: bool


def corner(platform: Platform) -> float:
    """Operational intensity at which the platform flips from memory-bound
    to compute-bound (peak ops/s over DRAM bytes/s)."""
    return platform.peak_ops_per_s / platform.dram_bw_bytes_per_s


def estimate(
    report: CostReport,
    platform: Platform,
    opts: EstimateOptions | None = None,
) -> PerfEstimate:
    """Roofline estimate of one layer invocation.

    The bound is decided by cross-multiplication (ops * bw vs bytes * peak)
    so it agrees exactly with comparing intensity against the corner; a tie
    counts as compute-bound.
    """
    opts = opts or EstimateOptions()
    count_opts = CountOptions(include_softmax_in_ops=opts.include_softmax_in_ops)
    ops = report.ops(count_opts)
    total_bytes = report.total_bytes
    if ops <= 0 or total_bytes <= 0:
        raise ValueError("estimate needs positive ops and bytes")
    compute_bound = ops * platform.dram_bw_bytes_per_s >= total_bytes * platform.peak_ops_per_s
    compute_time = ops / platform.peak_ops_per_s
    memory_time = total_bytes / platform.dram_bw_bytes_per_s
    latency = compute_time if compute_bound else memory_time
    energy = (
        ops * platform.e_op_pj * 1e-12
        + total_bytes * 8 * platform.e_dram_bit_pj * 1e-12
    )
    resident = report.max_resident_bytes
    if opts.whole_absorbed_matrix:
        resident = max(resident, report.whole_absorbed_bytes)
    return PerfEstimate(
        latency_s=latency,
        tokens_per_s=report.tokens_out / latency,
        energy_j=energy,
        bound=Bound.COMPUTE if compute_bound else Bound.MEMORY,
        onchip_ok=resident <= platform.onchip_bytes,
    )


DEFAULT_BW_BYTES_PER_S = 400e9
DEFAULT_E_DRAM_BIT_PJ = 8.0
DEFAULT_E_OP_PJ = 1.0
DEFAULT_PEAK_OPS_PER_S = 100e12
DEFAULT_ONCHIP_BYTES = 2**31  # 2 GiB: effectively unconstrained by default


def _ops_bytes(report: CostReport, opts: EstimateOptions) -> tuple[int, int]:
    count_opts = CountOptions(include_softmax_in_ops=opts.include_softmax_in_ops)
    return report.ops(count_opts), report.total_bytes


def crossover_compute_ratio(
    heavy: CostReport,
    light: CostReport,
    opts: EstimateOptions | None = None,
) -> float:
    """Compute-to-bandwidth ratio at which the scheme with more ops but
    fewer bytes (`heavy`) starts beating the other (`light`).

    Below the returned ratio the light scheme has lower latency; above it
    the heavy one does.  Closed form: with ops_h > ops_l and
    bytes_h < bytes_l, equality of rooflines happens where the heavy
    scheme's compute time meets the light scheme's memory time, i.e. at
    ops_h / bytes_l.  Independent of bandwidth.
    """
    opts = opts or EstimateOptions()
    ops_h, bytes_h = _ops_bytes(heavy, opts)
    ops_l, bytes_l = _ops_bytes(light, opts)
    if not (ops_h > ops_l and bytes_h < bytes_l):
        raise ValueError(
            "crossover requires the first report to trade more ops for fewer bytes"
        )
    return ops_h / bytes_l


def crossover_compute_ratio_bisect(
    heavy: CostReport,
    light: CostReport,
    bw_bytes_per_s: float = DEFAULT_BW_BYTES_PER_S,
    opts: EstimateOptions | None = None,
    rel_tol: float = 1e-12,
) -> float:
    """Same crossover, found numerically on the latency difference.  Kept
    deliberately independent of the closed form as a cross-check."""
    opts = opts or EstimateOptions()
    ops_h, bytes_h = _ops_bytes(heavy, opts)
    ops_l, bytes_l = _ops_bytes(light, opts)

    def diff(ratio: float) -> float:
        peak = ratio * bw_bytes_per_s
        lat_h = max(ops_h / peak, bytes_h / bw_bytes_per_s)
        lat_l = max(ops_l / peak, bytes_l / bw_bytes_per_s)
        return lat_h - lat_l

    lo, hi = 1e-9, 1.0
    while diff(hi) > 0:
        hi *= 2
        if hi > 1e18:
            raise ValueError("no crossover found while expanding the bracket")
    if diff(lo) <= 0:
        raise ValueError("latency difference does not change sign")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if diff(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * hi:
            break
    return 0.5 * (lo + hi)


def efficiency_threshold_tops_per_w(
    heavy: CostReport,
    light: CostReport,
    e_dram_bit_pj: float = DEFAULT_E_DRAM_BIT_PJ,
    opts: EstimateOptions | None = None,
) -> float:
    """On-chip efficiency (TOPS/W) above which the heavy scheme's energy
    drops below the light one's.

    With e_op_pj = 1 / tops_per_w, equal energies solve to
    (ops_h - ops_l) / (8 * e_dram_bit_pj * (bytes_l - bytes_h)).
    """
    opts = opts or EstimateOptions()
    ops_h, bytes_h = _ops_bytes(heavy, opts)
    ops_l, bytes_l = _ops_bytes(light, opts)
    if not (ops_h > ops_l and bytes_h < bytes_l):
        raise ValueError(
            "threshold requires the first report to trade more ops for fewer bytes"
        )
    return (ops_h - ops_l) / (8 * e_dram_bit_pj * (bytes_l - bytes_h))


def efficiency_threshold_bisect(
    heavy: CostReport,
    light: CostReport,
    e_dram_bit_pj: float = DEFAULT_E_DRAM_BIT_PJ,
    opts: EstimateOptions | None = None,
    rel_tol: float = 1e-12,
) -> float:
    """Numeric counterpart of efficiency_threshold_tops_per_w."""
    opts = opts or EstimateOptions()
    ops_h, bytes_h = _ops_bytes(heavy, opts)
    ops_l, bytes_l = _ops_bytes(light, opts)

    def diff(tops: float) -> float:
        e_op = 1.0 / tops
        e_h = ops_h * e_op + bytes_h * 8 * e_dram_bit_pj
        e_l = ops_l * e_op + bytes_l * 8 * e_dram_bit_pj
        return e_h - e_l

    lo, hi = 1e-9, 1.0
    while diff(hi) > 0:
        hi *= 2
        if hi > 1e18:
            raise ValueError("no threshold found while expanding the bracket")
    if diff(lo) <= 0:
        raise ValueError("energy difference does not change sign")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if diff(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * hi:
            break
    return 0.5 * (lo + hi)


def sweep_compute_ratio(
    reports: list[CostReport],
    ratio_grid: list[float],
    bw_bytes_per_s: float = DEFAULT_BW_BYTES_PER_S,
    e_op_pj: float = DEFAULT_E_OP_PJ,
    e_dram_bit_pj: float = DEFAULT_E_DRAM_BIT_PJ,
    onchip_bytes: int = DEFAULT_ONCHIP_BYTES,
    opts: EstimateOptions | None = None,
) -> list[dict]:
    """Throughput of each report across a compute-to-bandwidth ratio grid
    at fixed bandwidth.  Row order is grid-major then report order, so the
    output is deterministic."""
    if not ratio_grid:
        raise ValueError("ratio grid must not be empty")
    rows = []
    for ratio in ratio_grid:
        if ratio <= 0:
            raise ValueError("ratios must be positive")
        platform = Platform(
            name=f"ratio_{ratio:g}",
            peak_ops_per_s=ratio * bw_bytes_per_s,
            dram_bw_bytes_per_s=bw_bytes_per_s,
            e_op_pj=e_op_pj,
            e_dram_bit_pj=e_dram_bit_pj,
            onchip_bytes=onchip_bytes,
        )
        for report in reports:
            est = estimate(report, platform, opts)
            rows.append(
                {
                    "ratio_ops_per_byte": ratio,
                    "scheme": report.scheme.value,
                    "t": report.length,
                    "latency_s": est.latency_s,
                    "tokens_per_s": est.tokens_per_s,
                    "energy_j": est.energy_j,
                    "bound": est.bound.value,
                }
            )
    return rows


def sweep_efficiency(
    reports: list[CostReport],
    tops_per_w_grid: list[float],
    e_dram_bit_pj: float = DEFAULT_E_DRAM_BIT_PJ,
    peak_ops_per_s: float = DEFAULT_PEAK_OPS_PER_S,
    bw_bytes_per_s: float = DEFAULT_BW_BYTES_PER_S,
    onchip_bytes: int = DEFAULT_ONCHIP_BYTES,
    opts: EstimateOptions | None = None,
) -> list[dict]:
    """Energy of each report across an on-chip efficiency grid at fixed
    DRAM energy per bit.  e_op_pj is 1 / tops_per_w.  The latency columns
    use the fixed reference peak and bandwidth and do not vary with the
    grid."""
    if not tops_per_w_grid:
        raise ValueError("efficiency grid must not be empty")
    rows = []
    for tops in tops_per_w_grid:
        if tops <= 0:
            raise ValueError("efficiencies must be positive")
        platform = Platform(
            name=f"tops_{tops:g}",
            peak_ops_per_s=peak_ops_per_s,
            dram_bw_bytes_per_s=bw_bytes_per_s,
            e_op_pj=1.0 / tops,
            e_dram_bit_pj=e_dram_bit_pj,
            onchip_bytes=onchip_bytes,
        )
        for report in reports:
            est = estimate(report, platform, opts)
            rows.append(
                {
                    "tops_per_w": tops,
                    "scheme": report.scheme.value,
                    "t": report.length,
                    "latency_s": est.latency_s,
                    "tokens_per_s": est.tokens_per_s,
                    "energy_j": est.energy_j,
                    "bound": est.bound.value,
                }
            )
    return rows


_PLATFORM_KEYS = (
    "name",
    "peak_ops_per_s",
    "dram_bw_bytes_per_s",
    "e_op_pj",
    "e_dram_bit_pj",
    "onchip_bytes",
)


def parse_platform_text(text: str) -> Platform:
    """Parse the flat `key = value` platform format; '#' starts a comment."""
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PLATFORM_KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in fields:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = value
    missing = [k for k in _PLATFORM_KEYS if k not in fields]
    if missing:
        raise ValueError(f"missing platform keys: {', '.join(missing)}")
    try:
        return Platform(
            name=fields["name"],
            peak_ops_per_s=float(fields["peak_ops_per_s"]),
            dram_bw_bytes_per_s=float(fields["dram_bw_bytes_per_s"]),
            e_op_pj=float(fields["e_op_pj"]),
            e_dram_bit_pj=float(fields["e_dram_bit_pj"]),
            onchip_bytes=int(fields["onchip_bytes"]),
        )
    except ValueError as exc:
        raise ValueError(f"bad platform value: {exc}") from None


def load_platform(path: str) -> Platform:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_platform_text(fh.read())
