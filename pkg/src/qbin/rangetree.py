"""Range queries over a full binary tree of domain values.

Leaves are the sorted domain values (padded to a power of two with
sentinels that own no tuples). A node at level ``L`` covers ``2**L``
consecutive leaves. Additional nodes at level ``L`` straddle two adjacent
level-``L-1`` nodes that have different parents. Every level below the
root's children gets its own bin layout over node ids, built with the
sequential construction and full self-association (a node exists on both
the sensitive and the non-sensitive side).
"""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .binning import BinLayout, approx_sq_factors, fake_value, is_fake, sequential_layout
from .cloudstore import CloudStore
from .errors import BestMatchTooWide
from .owner import Owner, decrypt_all
from .partition import TupleRecord
from .retrieval import SelectionResult, canonical

SENTINEL_PREFIX = "\x00sentinel:"


@dataclass(frozen=True)
class TreeNode:
    level: int
    index: int
    lo: int          # first covered leaf position
    hi: int          # one past the last covered leaf
    additional: bool = False

    @property
    def name(self) -> str:
        return f"{'A' if self.additional else 'N'}{self.level}.{self.index}"

    @property
    def width(self) -> int:
        return self.hi - self.lo


@dataclass(frozen=True)
class LevelBins:
    level: int
    additional: bool
    layout: BinLayout
    nodes: Mapping[str, TreeNode]


@dataclass(frozen=True)
class BinFetch:
    level: int
    additional: bool
    side: str
    bin: int

    @property
    def key(self):
        return (self.level, self.additional, self.side, self.bin)


@dataclass(frozen=True)
class SubPlan:
    node: TreeNode
    nsb: int
    sb: int


@dataclass(frozen=True)
class RangePlan:
    alpha: str
    beta: str
    lo: int
    hi: int
    sub_plans: tuple[SubPlan, ...] = ()

    @property
    def fetches(self) -> list[BinFetch]:
        seen: dict = {}
        for sp in self.sub_plans:
            n = sp.node
            for f in (BinFetch(n.level, n.additional, "nonsensitive", sp.nsb),
                      BinFetch(n.level, n.additional, "sensitive", sp.sb)):
                seen.setdefault(f.key, f)
        return list(seen.values())

    @property
    def covered(self) -> tuple[int, int]:
        if not self.sub_plans:
            return (self.lo, self.lo)
        return (min(s.node.lo for s in self.sub_plans), max(s.node.hi for s in self.sub_plans))


@dataclass
class RangeTree:
    domain: tuple[str, ...]
    size: int
    height: int
    sensitive_values: frozenset[str]
    nonsensitive_values: frozenset[str]
    s_counts: Mapping[str, int]
    ns_counts: Mapping[str, int]
    levels: dict[int, tuple[TreeNode, ...]]
    additional_nodes: dict[int, tuple[TreeNode, ...]]
    per_level_bins: dict[tuple[int, bool], LevelBins]
    ordering_key: Callable[[str], object] = field(default=lambda v: v)

    @property
    def binned_levels(self) -> list[int]:
        return sorted({lv for lv, add in self.per_level_bins if not add})

    def leaf_value(self, pos: int) -> str:
        return self.domain[pos] if pos < len(self.domain) else f"{SENTINEL_PREFIX}{pos}"

    def position_range(self, a: str, b: str) -> tuple[int, int]:
        """Leaf positions [lo, hi) of domain values v with a <= v <= b."""
        keys = [self.ordering_key(v) for v in self.domain]
        lo = bisect.bisect_left(keys, self.ordering_key(a))
        hi = bisect.bisect_right(keys, self.ordering_key(b))
        return lo, hi

    def node_values(self, node: TreeNode, side: str) -> list[str]:
        pool = self.sensitive_values if side == "sensitive" else self.nonsensitive_values
        return [v for v in self.domain[node.lo:min(node.hi, len(self.domain))] if v in pool]

    def bins_of(self, level: int, additional: bool = False) -> LevelBins:
        return self.per_level_bins[(level, additional)]

    def bin_nodes(self, level: int, additional: bool, side: str, b: int) -> list[str]:
        lb = self.bins_of(level, additional)
        lay = lb.layout
        return list((lay.sensitive_bins if side == "sensitive" else lay.nonsensitive_bins)[b])

    def bin_values(self, f: BinFetch) -> list[str]:
        lb = self.bins_of(f.level, f.additional)
        out = []
        for name in self.bin_nodes(f.level, f.additional, f.side, f.bin):
            if not is_fake(name):
                out += self.node_values(lb.nodes[name], f.side)
        return out

    def fetch_cost(self, f: BinFetch) -> int:
        """Tuples a fetch returns; a fake node stands for ``width`` fake tuples."""
        lb = self.bins_of(f.level, f.additional)
        counts = self.s_counts if f.side == "sensitive" else self.ns_counts
        total = 0
        for name in self.bin_nodes(f.level, f.additional, f.side, f.bin):
            if is_fake(name):
                total += 2 ** f.level if f.level else 1
            else:
                total += sum(counts.get(v, 0) for v in self.node_values(lb.nodes[name], f.side))
        return total

    def plan_cost(self, plan: RangePlan) -> int:
        return sum(self.fetch_cost(f) for f in plan.fetches)

    def sub_plan(self, node: TreeNode) -> SubPlan:
        lb = self.bins_of(node.level, node.additional)
        sb, nsb = lb.layout.pair_for(node.name)
        return SubPlan(node, nsb, sb)


def _level_layout(nodes: Sequence[TreeNode], order: Sequence[int] | None, pad_to: int,
                  rng: random.Random | None, level: int, additional: bool) -> LevelBins:
    names = [n.name for n in nodes]
    if order is not None:
        if sorted(order) != list(range(len(nodes))):
            raise ValueError(f"node order for level {level} is not a permutation")
        names = [names[k] for k in order]
    elif rng is not None:
        rng.shuffle(names)
    names += [fake_value(f"node{level}", k) for k in range(pad_to - len(names))]
    x, _ = approx_sq_factors(len(names))
    lay = sequential_layout(names, names, {n: n for n in names}, x,
                            mode="additional" if additional else "range")
    return LevelBins(level, additional, lay, {n.name: n for n in nodes})


def build_range_tree(nonsensitive_values: Iterable[str], sensitive_values: Iterable[str],
                     key: Callable[[str], object] | None = None, seed: int | None = None,
                     node_orders: Mapping | None = None,
                     s_counts: Mapping[str, int] | None = None,
                     ns_counts: Mapping[str, int] | None = None) -> RangeTree:
    """Build the tree and per-level bins.

    ``node_orders`` maps ``level`` (regular nodes) or ``("A", level)``
    (additional nodes) to a permutation of node indices used as the
    fill order of that level. Without it the order is a seeded shuffle,
    or the natural order when ``seed`` is None.
    """
    key = key or (lambda v: v)
    NS, S = list(dict.fromkeys(nonsensitive_values)), list(dict.fromkeys(sensitive_values))
    domain = tuple(sorted(set(NS) | set(S), key=key))
    keys = [key(v) for v in domain]
    if any(keys[k] == keys[k + 1] for k in range(len(keys) - 1)):
        raise ValueError("ordering key maps two distinct values to the same position")
    if not domain:
        raise ValueError("empty domain")
    size = 1 << max(0, math.ceil(math.log2(len(domain))))
    height = size.bit_length() - 1
    node_orders = dict(node_orders or {})
    levels = {L: tuple(TreeNode(L, k, k << L, (k + 1) << L) for k in range(size >> L))
              for L in range(height + 1)}
    additional = {}
    for L in range(1, height - 1):
        half = 1 << (L - 1)
        additional[L] = tuple(TreeNode(L, m, (2 * m + 1) * half, (2 * m + 1) * half + (1 << L), True)
                              for m in range((size >> L) - 1))
    bins = {}

    def rng_for(tag):
        return None if seed is None else random.Random(f"{seed}:{tag}")

    for L in range(0, max(1, height - 1)):
        bins[(L, False)] = _level_layout(levels[L], node_orders.get(L), len(levels[L]),
                                         rng_for(L), L, False)
    for L, nodes in additional.items():
        bins[(L, True)] = _level_layout(nodes, node_orders.get(("A", L)), len(levels[L]),
                                        rng_for(f"A{L}"), L, True)
    sc = dict(s_counts) if s_counts is not None else {v: 1 for v in S}
    nc = dict(ns_counts) if ns_counts is not None else {v: 1 for v in NS}
    return RangeTree(domain, size, height, frozenset(S), frozenset(NS), sc, nc,
                     levels, additional, bins, key)


def range_tree_for(part, key=None, seed=None, node_orders=None) -> RangeTree:
    h = part.histogram()
    S, NS = h.sensitive_values(), h.nonsensitive_values()
    return build_range_tree(NS, S, key, seed, node_orders,
                            {v: h.sensitive(v) for v in S}, {v: h.nonsensitive(v) for v in NS})


# ---------------------------------------------------------------------------
# planning

def plan_range_best_match(tree: RangeTree, alpha: str, beta: str,
                          allow_full_scan: bool = False) -> RangePlan:
    """Smallest regular node covering the range, fetched with its whole bins."""
    lo, hi = tree.position_range(alpha, beta)
    if hi <= lo:
        return RangePlan(alpha, beta, lo, lo)
    if hi - lo == 1:
        return RangePlan(alpha, beta, lo, hi, (tree.sub_plan(tree.levels[0][lo]),))
    for L in tree.binned_levels:
        if L == 0:
            continue
        if (lo >> L) == ((hi - 1) >> L):
            return RangePlan(alpha, beta, lo, hi, (tree.sub_plan(tree.levels[L][lo >> L]),))
    if not allow_full_scan:
        raise BestMatchTooWide(
            f"[{alpha}, {beta}] is covered only above the binned levels; "
            "use least-match or allow a full scan")
    top = max(tree.binned_levels)
    return RangePlan(alpha, beta, lo, hi, tuple(tree.sub_plan(n) for n in tree.levels[top]))


def plan_range_least_match(tree: RangeTree, alpha: str, beta: str,
                           use_additional: bool = True) -> RangePlan:
    """Minimum number of nodes exactly covering the range.

    Dynamic programme over leaf positions. Candidates are leaves, regular
    nodes of binned levels and (optionally) additional nodes lying inside
    the range. Ties go to fewer fetched tuples, then to larger nodes.
    """
    lo, hi = tree.position_range(alpha, beta)
    if hi <= lo:
        return RangePlan(alpha, beta, lo, lo)
    cands: dict[int, list[TreeNode]] = {}
    for L in tree.binned_levels:
        pools = [tree.levels[L]]
        if use_additional and L in tree.additional_nodes:
            pools.append(tree.additional_nodes[L])
        for pool in pools:
            for n in pool:
                if lo <= n.lo and n.hi <= hi:
                    cands.setdefault(n.lo, []).append(n)
    cost_of: dict[str, int] = {}

    def cost(n: TreeNode) -> int:
        if n.name not in cost_of:
            sp = tree.sub_plan(n)
            cost_of[n.name] = (
                tree.fetch_cost(BinFetch(n.level, n.additional, "nonsensitive", sp.nsb))
                + tree.fetch_cost(BinFetch(n.level, n.additional, "sensitive", sp.sb)))
        return cost_of[n.name]

    INF = (math.inf, math.inf)
    best: list[tuple] = [INF] * (hi - lo + 1)
    back: list[TreeNode | None] = [None] * (hi - lo + 1)
    best[0] = (0, 0)
    for p in range(lo, hi):
        cur = best[p - lo]
        if cur == INF:
            continue
        for n in sorted(cands.get(p, ()), key=lambda n: -n.width):
            q = n.hi - lo
            cand = (cur[0] + 1, cur[1] + cost(n))
            if cand < best[q]:
                best[q], back[q] = cand, n
    nodes = []
    q = hi - lo
    while q > 0:
        n = back[q]
        nodes.append(n)
        q = n.lo - lo
    nodes.reverse()
    return RangePlan(alpha, beta, lo, hi, tuple(tree.sub_plan(n) for n in nodes))


# ---------------------------------------------------------------------------
# execution

def execute_range(plan: RangePlan, tree: RangeTree, store: CloudStore,
                  owner: Owner) -> SelectionResult:
    """Fetch every distinct bin of the plan in one round, then filter."""
    if not plan.sub_plans:
        return SelectionResult([])
    owner.check_version(store)
    dec: list[tuple[TupleRecord, bool]] = []
    clear: list[TupleRecord] = []
    with store.round("range") as rnd:
        for f in plan.fetches:
            vals = tree.bin_values(f)
            if f.side == "sensitive":
                dec += decrypt_all(owner, store.fetch_sensitive(owner.tokens_for(vals),
                                                                owner.table, rnd))
            else:
                clear += store.fetch_nonsensitive(vals, owner.table, rnd)
    wanted = set(tree.domain[plan.lo:plan.hi])
    attr = owner.attribute
    # bins of different levels can share values, so a tuple may arrive twice
    rows = {r.tuple_id: r for r, fake in dec if not fake and r.get(attr) in wanted}
    rows.update((r.tuple_id, r) for r in clear if r.get(attr) in wanted)
    return SelectionResult(canonical(rows.values()), len(dec), len(clear))

