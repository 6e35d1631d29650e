"""Adversary-side audits over the adversarial-view log.

Everything here works from what the cloud can observe. A sensitive bin is
known to the adversary only as the set of tokens it was asked for, and a
non-sensitive bin as the set of cleartext values requested together.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .binning import BinLayout
from .cloudstore import AVEntry
from .errors import MalformedLog


# ---------------------------------------------------------------------------
# surviving matches

@dataclass(frozen=True)
class SurvivingMatchGraph:
    left: tuple[frozenset, ...]
    right: tuple[frozenset, ...]
    edges: frozenset[tuple[int, int]]
    left_records: tuple[frozenset, ...] = ()
    right_records: tuple[frozenset, ...] = ()
    bin_counts: tuple[int, int] | None = None

    def value_graph(self) -> set[tuple[str, str]]:
        """Record-level matches implied by the bin edges: (encrypted id, cleartext value)."""
        out = set()
        for i, j in self.edges:
            for e in self.left_records[i]:
                for v in self.right[j]:
                    out.add((e, v))
        return out


def build_surviving_match_graph(av_log: Iterable[AVEntry],
                                bin_counts: tuple[int, int] | None = None) -> SurvivingMatchGraph:
    """One edge per co-retrieved (sensitive request, non-sensitive request) pair."""
    by_seq: dict[int, list[AVEntry]] = defaultdict(list)
    for e in av_log:
        if e.kind == "select":
            by_seq[e.query_seq].append(e)
    left: dict[frozenset, int] = {}
    right: dict[frozenset, int] = {}
    lrec: dict[int, set] = defaultdict(set)
    edges = set()
    for seq in sorted(by_seq):
        es = by_seq[seq]
        sides = Counter(e.side for e in es)
        if sides != Counter({"sensitive": 1, "nonsensitive": 1}):
            raise MalformedLog(f"query {seq} has entries {dict(sides)}")
        s = next(e for e in es if e.side == "sensitive")
        n = next(e for e in es if e.side == "nonsensitive")
        i = left.setdefault(frozenset(s.request), len(left))
        j = right.setdefault(frozenset(n.request), len(right))
        lrec[i].update(s.returned_ids)
        edges.add((i, j))
    L = tuple(sorted(left, key=left.get))
    R = tuple(sorted(right, key=right.get))
    return SurvivingMatchGraph(L, R, frozenset(edges), tuple(frozenset(lrec[i]) for i in range(len(L))),
                               (), bin_counts)


def check_full_bipartite(graph: SurvivingMatchGraph,
                         bin_counts: tuple[int, int] | None = None) -> tuple[bool, list]:
    """True iff every observed sensitive bin met every observed non-sensitive bin.

    With ``bin_counts`` = (number of SBs, number of NSBs) the check also
    fails when some bin was never observed; missing bins are reported as
    ``("unseen-sensitive", k)`` / ``("unseen-nonsensitive", k)``.
    """
    bin_counts = bin_counts or graph.bin_counts
    dropped: list = [(i, j) for i in range(len(graph.left)) for j in range(len(graph.right))
                     if (i, j) not in graph.edges]
    if bin_counts is not None:
        ns, nn = bin_counts
        dropped += [("unseen-sensitive", k) for k in range(len(graph.left), ns)]
        dropped += [("unseen-nonsensitive", k) for k in range(len(graph.right), nn)]
    return not dropped, dropped


def check_size_uniformity(av_log: Iterable[AVEntry]) -> bool:
    sizes = {len(e.returned_ids) for e in av_log if e.side == "sensitive" and e.kind == "select"}
    return len(sizes) <= 1


def sensitive_fetch_sizes(av_log: Iterable[AVEntry]) -> Counter:
    return Counter(len(e.returned_ids) for e in av_log
                   if e.side == "sensitive" and e.kind == "select")


# ---------------------------------------------------------------------------
# workload skew

@dataclass
class SkewReport:
    counts: dict[str, int]
    flagged: bool
    ratio: float
    hot_bins: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def check_frequency_exposure(av_log: Iterable[AVEntry], profile=None, ratio: float = 2.0,
                             expected_bins: int | None = None) -> SkewReport:
    """Count fetches per observed sensitive bin and flag concentration.

    Flags when the busiest bin is fetched more than ``ratio`` times as often
    as the least busy one, or when some expected bin is never fetched.
    ``profile`` (frequent keywords) only annotates the report; the
    adversary does not know it.
    """
    names: dict[frozenset, str] = {}
    counts: Counter = Counter()
    for e in av_log:
        if e.side == "sensitive" and e.kind == "select":
            key = frozenset(e.request)
            names.setdefault(key, f"sb#{len(names)}")
            counts[names[key]] += 1
    notes = []
    if profile is not None:
        freq = getattr(profile, "frequent_values", profile)
        notes.append(f"frequent keywords: {len(set(freq))}")
    if not counts:
        return SkewReport({}, False, 1.0, [], notes)
    hi, lo = max(counts.values()), min(counts.values())
    r = hi / lo
    flagged = r > ratio
    if expected_bins is not None and len(counts) < expected_bins:
        flagged = True
        notes.append(f"{expected_bins - len(counts)} sensitive bin(s) never fetched")
    hot = sorted(k for k, c in counts.items() if c == hi) if flagged else []
    return SkewReport(dict(counts), flagged, r, hot, notes)


# ---------------------------------------------------------------------------
# allocation counting

def _consistent_mask(perms: np.ndarray, queries) -> np.ndarray:
    ok = np.ones(len(perms), dtype=bool)
    for cipher, clear in queries:
        clear_mask = np.zeros(perms.shape[1], dtype=bool)
        clear_mask[list(clear)] = True
        hits = clear_mask[perms[:, list(cipher)]].sum(axis=1)
        ok &= hits == 1
    return ok


def _perms(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int8)


def allocation_count(n: int, queried_ciphertexts=(), queried_cleartexts=(),
                     fixed: tuple[int, int] = (0, 0), queries=None) -> tuple[int, int]:
    """Count plaintext allocations consistent with the observed queries.

    An allocation is a bijection ciphertext -> cleartext value. A QB query
    fetching ciphertexts C together with cleartexts V reveals that C and V
    share exactly one plaintext, so an allocation survives iff
    ``|f(C) ∩ V| == 1`` for every query. Returns ``(total, with_fixed)``
    where ``with_fixed`` also requires ``f(fixed[0]) == fixed[1]``.
    Indices are 0-based.
    """
    if n > 9:
        raise ValueError("exhaustive enumeration is limited to n <= 9; use allocation_sampled")
    qs = list(queries) if queries is not None else (
        [(tuple(queried_ciphertexts), tuple(queried_cleartexts))] if len(queried_ciphertexts) else [])
    perms = _perms(n)
    ok = _consistent_mask(perms, qs)
    e, v = fixed
    return int(ok.sum()), int((ok & (perms[:, e] == v)).sum())


def allocation_probability(n: int, queried_ciphertexts=(), queried_cleartexts=(),
                           fixed: tuple[int, int] = (0, 0), queries=None) -> Fraction:
    total, hit = allocation_count(n, queried_ciphertexts, queried_cleartexts, fixed, queries)
    return Fraction(hit, total)


def allocation_probability_table(n: int, queries) -> list[list[Fraction]]:
    """Pr[e_i = v_j] for all pairs, exhaustive."""
    perms = _perms(n)
    ok = _consistent_mask(perms, queries)
    good = perms[ok]
    total = len(good)
    return [[Fraction(int((good[:, i] == j).sum()), total) for j in range(n)] for i in range(n)]


@dataclass(frozen=True)
class SampledProbability:
    estimate: float
    low: float
    high: float
    accepted: int
    exhaustive: bool = False


def allocation_sampled(n: int, queries, fixed=(0, 0), samples: int = 200_000,
                       seed: int | None = None, z: float = 1.96) -> SampledProbability:
    """Monte Carlo estimate with a Wilson interval. Not exhaustive."""
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((samples, n)), axis=1)
    ok = _consistent_mask(perms, queries)
    k = int(ok.sum())
    if k == 0:
        return SampledProbability(float("nan"), 0.0, 1.0, 0)
    p = float((perms[ok][:, fixed[0]] == fixed[1]).mean())
    den = 1 + z * z / k
    centre = (p + z * z / (2 * k)) / den
    half = z * math.sqrt(p * (1 - p) / k + z * z / (4 * k * k)) / den
    return SampledProbability(p, max(0.0, centre - half), min(1.0, centre + half), k)


# ---------------------------------------------------------------------------
# traces

def sweep_values(layout: BinLayout) -> list[str]:
    """Every real value on either side, each once."""
    return list(dict.fromkeys(layout.sensitive_values() + layout.nonsensitive_values()))


def deviant_pair(layout: BinLayout, w: str, associated: set[str]) -> tuple[int, int] | None:
    """Example-4 style strategy that ignores R1/R2 for unassociated values.

    Associated values use the correct pair. An unassociated value pairs its
    own bin with an other-side bin that is already linked to it through an
    associated value, or with bin 0 when there is none.
    """
    if w in associated:
        return layout.pair_for(w)
    links_s: dict[int, list[int]] = defaultdict(list)
    links_n: dict[int, list[int]] = defaultdict(list)
    for v in associated:
        sb, nsb = layout.pair_for(v)
        links_s[sb].append(nsb)
        links_n[nsb].append(sb)
    if w in layout.s_index:
        i = layout.s_index[w][0]
        return i, min(links_s[i], default=0)
    if w in layout.ns_index:
        k = layout.ns_index[w][0]
        return min(links_n[k], default=0), k
    return None


# ---------------------------------------------------------------------------
# report

@dataclass
class AuditReport:
    full_bipartite: bool | None = None
    dropped_matches: list = field(default_factory=list)
    size_uniform: bool | None = None
    fetch_sizes: dict = field(default_factory=dict)
    skew_findings: dict | None = None
    allocation_probability: dict = field(default_factory=dict)
    checks: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok = True
        if "bipartite" in self.checks:
            ok &= bool(self.full_bipartite)
        if "size" in self.checks:
            ok &= bool(self.size_uniform)
        if "skew" in self.checks and self.skew_findings is not None:
            ok &= not self.skew_findings["flagged"]
        if "allocation" in self.checks:
            ok &= all(v["uniform"] for v in self.allocation_probability.values())
        return ok

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dropped_matches"] = [list(x) if isinstance(x, tuple) else x for x in self.dropped_matches]
        d["passed"] = self.passed
        return d


CHECKS = ("bipartite", "size", "skew", "allocation")


def run_audit(av_log: Sequence[AVEntry], checks: Sequence[str] = CHECKS,
              bin_counts: tuple[int, int] | None = None, profile=None,
              skew_ratio: float = 2.0, allocation_n: Sequence[int] = (4, 9)) -> AuditReport:
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}")
    rep = AuditReport(checks=list(checks))
    if "bipartite" in checks:
        g = build_surviving_match_graph(av_log, bin_counts)
        rep.full_bipartite, rep.dropped_matches = check_full_bipartite(g)
    if "size" in checks:
        rep.size_uniform = check_size_uniformity(av_log)
        rep.fetch_sizes = {str(k): v for k, v in sorted(sensitive_fetch_sizes(av_log).items())}
    if "skew" in checks:
        sk = check_frequency_exposure(av_log, profile, skew_ratio,
                                      bin_counts[0] if bin_counts else None)
        rep.skew_findings = asdict(sk)
    if "allocation" in checks:
        for n in allocation_n:
            r = math.isqrt(n)
            q = [(tuple(range(r)), tuple(range(r)))]
            table = allocation_probability_table(n, q)
            uniform = all(p == Fraction(1, n) for row in table for p in row)
            rep.allocation_probability[f"n={n}"] = {
                "probability": str(table[0][0]), "uniform": uniform, "exhaustive": True}
    return rep
