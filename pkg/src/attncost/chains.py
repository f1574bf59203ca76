"""Matrix-product chain costing.

A chain of n matrices is described by n+1 dimensions (matrix i has shape
dims[i] x dims[i+1]).  A parenthesization is a binary tree whose in-order
leaf sequence is 0..n-1 (matrix products do not commute, so only the
grouping is free).  MAC counts depend on the grouping; DRAM traffic does
not, because traffic is determined purely by operand residency.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

# A parenthesization: either a leaf (operand index) or a (left, right) pair.
OrderTree = Union[int, tuple]


class Residency(Enum):
    """DRAM behaviour of one chain operand during a single chain invocation."""

    STREAMED_WEIGHT = "streamed_weight"  # fetched from DRAM once per head copy
    RESIDENT = "resident"                # already on chip, zero traffic
    ACTIVATION_IN = "activation_in"      # fetched once, shared by all head copies
    CACHE_READ = "cache_read"            # fetched once, shared; size scales with history


@dataclass(frozen=True)
class ChainSpec:
    """An n-matrix product chain with per-operand residency tags.

    head_multiplicity is the number of independent per-head copies of the
    chain that execute.  Operands tagged ACTIVATION_IN or CACHE_READ are
    broadcast to all copies (fetched once); STREAMED_WEIGHT operands are
    distinct per copy.
    """

    dims: tuple[int, ...]
    head_multiplicity: int = 1
    residency: tuple[Residency, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 2:
            raise ValueError("chain needs at least one matrix (two dims)")
        if any(d < 1 for d in dims):
            raise ValueError(f"chain dims must be >= 1, got {dims}")
        if self.head_multiplicity < 1:
            raise ValueError("head_multiplicity must be >= 1")
        res = tuple(self.residency)
        if not res:
            res = (Residency.ACTIVATION_IN,) * self.n_matrices
        if len(res) != self.n_matrices:
            raise ValueError(
                f"residency needs {self.n_matrices} tags, got {len(res)}"
            )
        object.__setattr__(self, "residency", res)

    @property
    def n_matrices(self) -> int:
        return len(self.dims) - 1

    def operand_shape(self, i: int) -> tuple[int, int]:
        return (self.dims[i], self.dims[i + 1])


@dataclass(frozen=True)
class NodeProduct:
    """One internal node of a parenthesization: the product joining
    operands lo..split with operands split+1..hi."""

    lo: int
    split: int
    hi: int
    rows: int
    inner: int
    cols: int

    @property
    def macs(self) -> int:
        return self.rows * self.inner * self.cols


def tree_leaves(order) -> list[int]:
    if isinstance(order, int):
        return [order]
    if isinstance(order, tuple) and len(order) == 2:
        return tree_leaves(order[0]) + tree_leaves(order[1])
    raise ValueError(f"malformed order tree node: {order!r}")


def validate_order(order, n_matrices: int) -> None:
    """Reject trees whose in-order leaves are not exactly 0..n-1."""
    leaves = tree_leaves(order)
    if leaves != list(range(n_matrices)):
        raise ValueError(
            f"order tree leaves {leaves} do not match operands 0..{n_matrices - 1}"
        )


def tree_products(dims, order) -> list[NodeProduct]:
    """All internal-node products of `order`, in post-order."""
    products: list[NodeProduct] = []

    def walk(node) -> tuple[int, int]:
        if isinstance(node, int):
            return node, node
        left, right = node
        l_lo, l_hi = walk(left)
        r_lo, r_hi = walk(right)
        if r_lo != l_hi + 1:
            raise ValueError("order tree violates chain adjacency")
        products.append(
            NodeProduct(
                lo=l_lo,
                split=l_hi,
                hi=r_hi,
                rows=dims[l_lo],
                inner=dims[l_hi + 1],
                cols=dims[r_hi + 1],
            )
        )
        return l_lo, r_hi

    walk(order)
    return products


def chain_macs(spec: ChainSpec, order) -> int:
    """Exact MAC count of evaluating the chain with the given grouping,
    summed over all head copies."""
    validate_order(order, spec.n_matrices)
    per_copy = sum(p.macs for p in tree_products(spec.dims, order))
    return spec.head_multiplicity * per_copy


def enumerate_orders(n: int) -> list:
    """All parenthesizations of an n-matrix chain (Catalan(n-1) trees).

    Kept exhaustive on purpose: this is the brute-force reference that
    optimal_order is checked against.  Limited to n <= 8 (429 trees).
    """
    if not 1 <= n <= 8:
        raise ValueError(f"n must be in 1..8, got {n}")

    def build(lo: int, hi: int) -> list:
        if lo == hi:
            return [lo]
        trees = []
        for k in range(lo, hi):
            for left in build(lo, k):
                for right in build(k + 1, hi):
                    trees.append((left, right))
        return trees

    return build(0, n - 1)


def optimal_order(spec: ChainSpec) -> tuple:
    """Minimum-MAC parenthesization via the classic interval dynamic program.

    Ties are broken toward the smallest split index at every interval
    (outermost first), which makes the returned tree deterministic.
    Returns (tree, total MACs including head_multiplicity).
    """
    n = spec.n_matrices
    if n < 2:
        raise ValueError("optimal_order needs a chain of at least two matrices")
    dims = spec.dims
    cost = [[0] * n for _ in range(n)]
    split = [[0] * n for _ in range(n)]
    for span in range(1, n):
        for lo in range(n - span):
            hi = lo + span
            best = None
            best_k = lo
            for k in range(lo, hi):
                c = cost[lo][k] + cost[k + 1][hi] + dims[lo] * dims[k + 1] * dims[hi + 1]
                if best is None or c < best:
                    best = c
                    best_k = k
            cost[lo][hi] = best
            split[lo][hi] = best_k

    def build(lo: int, hi: int):
        if lo == hi:
            return lo
        k = split[lo][hi]
        return (build(lo, k), build(k + 1, hi))

    tree = build(0, n - 1)
    return tree, spec.head_multiplicity * cost[0][n - 1]


def chain_traffic(spec: ChainSpec, order, bytes_per_element: int) -> tuple[int, int]:
    """DRAM (read_bytes, write_bytes) for one chain invocation.

    Reads follow residency only: RESIDENT operands cost nothing,
    STREAMED_WEIGHT operands are fetched once per head copy, ACTIVATION_IN
    and CACHE_READ operands are fetched once regardless of multiplicity.
    Intermediates never touch DRAM (fused execution); the only write is
    the final per-copy result.  Reads are therefore independent of the
    grouping, which only redistributes compute.
    """
    validate_order(order, spec.n_matrices)
    reads = 0
    for i, tag in enumerate(spec.residency):
        r, c = spec.operand_shape(i)
        size = r * c
        if tag is Residency.RESIDENT:
            continue
        if tag is Residency.STREAMED_WEIGHT:
            reads += spec.head_multiplicity * size
        else:  # ACTIVATION_IN, CACHE_READ
            reads += size
    result_size = spec.dims[0] * spec.dims[-1]
    writes = spec.head_multiplicity * result_size
    return reads * bytes_per_element, writes * bytes_per_element


def format_order(order) -> str:
    """Compact text form of a tree, e.g. '((0.1).2)'."""
    if isinstance(order, int):
        return str(order)
    return f"({format_order(order[0])}.{format_order(order[1])})"


def parse_order(text: str):
    """Inverse of format_order."""
    pos = 0

    def parse():
        nonlocal pos
        if pos >= len(text):
            raise ValueError(f"truncated order tree: {text!r}")
        if text[pos] == "(":
            pos += 1
            left = parse()
            if pos >= len(text) or text[pos] != ".":
                raise ValueError(f"expected '.' in order tree: {text!r}")
            pos += 1
            right = parse()
            if pos >= len(text) or text[pos] != ")":
                raise ValueError(f"expected ')' in order tree: {text!r}")
            pos += 1
            return (left, right)
        start = pos
        while pos < len(text) and text[pos].isdigit():
            pos += 1
        if start == pos:
            raise ValueError(f"expected operand index in order tree: {text!r}")
        return int(text[start:pos])

    tree = parse()
    if pos != len(text):
        raise ValueError(f"trailing characters in order tree: {text!r}")
    return tree
