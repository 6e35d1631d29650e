"""Owner-side bin construction.

A layout splits the sensitive values into sensitive bins (SB) and the
non-sensitive values into non-sensitive bins (NSB). Every slot also records
a *partner* bin on the other side; a query for the value in that slot
fetches the slot's bin together with its partner. For freshly built layouts
the partner of ``SB_i[j]`` is ``NSB_j`` and the partner of ``NSB_i[j]`` is
``SB_j``, which is exactly rules R1/R2. Partners are stored explicitly so
that square-extended layouts and incremental inserts, where a bin may hold
more slots than there are bins on the other side, keep a well defined pair
for every value.

Hidden values (fake slots and per-bin padding keys) start with a NUL byte
and can never collide with ingested data.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .errors import (AssociationError, CapacityError, ConsistencyError,
                     IntegrityError, VersionMismatch)

FAKE_PREFIX = "\x00fake:"
PAD_PREFIX = "\x00pad:"
LAYOUT_FORMAT = "qbin-layout"
LAYOUT_SCHEMA_VERSION = 1


def is_fake(v: str) -> bool:
    return v.startswith(FAKE_PREFIX)


def is_hidden(v: str) -> bool:
    return v.startswith("\x00")


def pad_key(i: int) -> str:
    """Search key of the padding tuples of sensitive bin ``i``."""
    return f"{PAD_PREFIX}{i}"


def fake_value(side: str, n: int) -> str:
    return f"{FAKE_PREFIX}{side}:{n}"


# ---------------------------------------------------------------------------
# arithmetic helpers

def approx_sq_factors(n: int) -> tuple[int, int]:
    """Return ``(x, y)`` with ``x * y == n``, ``x >= y`` and ``x - y`` minimal."""
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    for y in range(math.isqrt(n), 0, -1):
        if n % y == 0:
            return n // y, y
    raise AssertionError("unreachable")


def closest_square(n: int) -> int:
    """Largest perfect square not exceeding ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.isqrt(n) ** 2


# ---------------------------------------------------------------------------
# layout type

@dataclass(frozen=True)
class BinLayout:
    x: int
    y: int
    sensitive_bins: tuple[tuple[str, ...], ...]
    nonsensitive_bins: tuple[tuple[str, ...], ...]
    s_partner: tuple[tuple[int, ...], ...]
    ns_partner: tuple[tuple[int, ...], ...]
    s_capacity: int
    ns_capacity: int
    seed: int | None = None
    mode: str = "base"
    factored: str = "nonsensitive"
    fake_counts: tuple[int, ...] = ()
    epoch: int = 0
    fake_serial: int = 0

    def __post_init__(self):
        if not self.fake_counts:
            object.__setattr__(self, "fake_counts", (0,) * len(self.sensitive_bins))

    # -- indexes -----------------------------------------------------------
    @cached_property
    def s_index(self) -> dict[str, tuple[int, int]]:
        return {v: (i, j) for i, b in enumerate(self.sensitive_bins) for j, v in enumerate(b)}

    @cached_property
    def ns_index(self) -> dict[str, tuple[int, int]]:
        return {v: (i, j) for i, b in enumerate(self.nonsensitive_bins) for j, v in enumerate(b)}

    @property
    def value_index(self) -> dict[tuple[str, str], tuple[int, int]]:
        out = {("sensitive", v): p for v, p in self.s_index.items()}
        out.update({("nonsensitive", v): p for v, p in self.ns_index.items()})
        return out

    @property
    def num_sb(self) -> int:
        return len(self.sensitive_bins)

    @property
    def num_nsb(self) -> int:
        return len(self.nonsensitive_bins)

    def sensitive_values(self, include_fake: bool = False) -> list[str]:
        return [v for b in self.sensitive_bins for v in b if include_fake or not is_fake(v)]

    def nonsensitive_values(self, include_fake: bool = False) -> list[str]:
        return [v for b in self.nonsensitive_bins for v in b if include_fake or not is_fake(v)]

    def fake_slot_count(self) -> int:
        return sum(1 for b in self.sensitive_bins for v in b if is_fake(v))

    def fake_tuple_total(self) -> int:
        """Encrypted fake tuples: padding plus one per fake sensitive slot."""
        return sum(self.fake_counts) + self.fake_slot_count()

    def pair_for(self, w: str) -> tuple[int, int] | None:
        """(SB id, NSB id) fetched for ``w`` by R1/R2, or None if unknown."""
        r1 = r2 = None
        if w in self.s_index:
            i, j = self.s_index[w]
            r1 = (i, self.s_partner[i][j])
        if w in self.ns_index:
            i, j = self.ns_index[w]
            r2 = (self.ns_partner[i][j], i)
        if r1 and r2 and r1 != r2:
            raise IntegrityError(f"R1/R2 disagree for {w!r}: {r1} vs {r2}")
        return r1 or r2

    # -- integrity -----------------------------------------------------------
    def validate(self) -> None:
        if len(self.s_partner) != self.num_sb or len(self.ns_partner) != self.num_nsb:
            raise IntegrityError("partner table shape mismatch")
        for bins, parts, other, cap, side in (
                (self.sensitive_bins, self.s_partner, self.num_nsb, self.s_capacity, "SB"),
                (self.nonsensitive_bins, self.ns_partner, self.num_sb, self.ns_capacity, "NSB")):
            seen = set()
            for i, (b, p) in enumerate(zip(bins, parts)):
                if len(b) != len(p):
                    raise IntegrityError(f"{side}_{i}: partner row length mismatch")
                if len(b) > cap:
                    raise IntegrityError(f"{side}_{i} exceeds capacity {cap}")
                for v, q in zip(b, p):
                    if v in seen:
                        raise IntegrityError(f"{v!r} appears twice on the {side} side")
                    seen.add(v)
                    if not 0 <= q < other:
                        raise IntegrityError(f"{side}_{i}: partner {q} out of range")
        if len(self.fake_counts) != self.num_sb or min(self.fake_counts, default=0) < 0:
            raise IntegrityError("bad fake counts")
        for v in set(self.s_index) & set(self.ns_index):
            self.pair_for(v)

    # -- persistence ---------------------------------------------------------
    def body(self) -> dict:
        return {
            "x": self.x, "y": self.y,
            "s_capacity": self.s_capacity, "ns_capacity": self.ns_capacity,
            "seed": self.seed, "mode": self.mode, "factored": self.factored,
            "epoch": self.epoch, "fake_serial": self.fake_serial,
            "sensitive_bins": [list(b) for b in self.sensitive_bins],
            "nonsensitive_bins": [list(b) for b in self.nonsensitive_bins],
            "s_partner": [list(p) for p in self.s_partner],
            "ns_partner": [list(p) for p in self.ns_partner],
            "fake_counts": list(self.fake_counts),
        }

    @cached_property
    def version(self) -> str:
        raw = json.dumps(self.body(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()[:16]

    def to_json(self) -> str:
        body = self.body()
        raw = json.dumps(body, sort_keys=True, separators=(",", ":"))
        doc = {"format": LAYOUT_FORMAT, "schema_version": LAYOUT_SCHEMA_VERSION,
               "layout_version": self.version,
               "checksum": hashlib.sha256(raw.encode()).hexdigest(), "layout": body}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BinLayout":
        doc = json.loads(text)
        if doc.get("format") != LAYOUT_FORMAT:
            raise IntegrityError("not a layout file")
        if doc.get("schema_version") != LAYOUT_SCHEMA_VERSION:
            raise VersionMismatch(f"layout schema {doc.get('schema_version')} unsupported")
        body = doc["layout"]
        raw = json.dumps(body, sort_keys=True, separators=(",", ":"))
        if hashlib.sha256(raw.encode()).hexdigest() != doc.get("checksum"):
            raise IntegrityError("layout checksum mismatch")
        lay = cls(
            x=body["x"], y=body["y"],
            sensitive_bins=tuple(tuple(b) for b in body["sensitive_bins"]),
            nonsensitive_bins=tuple(tuple(b) for b in body["nonsensitive_bins"]),
            s_partner=tuple(tuple(p) for p in body["s_partner"]),
            ns_partner=tuple(tuple(p) for p in body["ns_partner"]),
            s_capacity=body["s_capacity"], ns_capacity=body["ns_capacity"],
            seed=body["seed"], mode=body["mode"], factored=body["factored"],
            fake_counts=tuple(body["fake_counts"]), epoch=body["epoch"],
            fake_serial=body["fake_serial"])
        if lay.version != doc.get("layout_version"):
            raise IntegrityError("layout version hash mismatch")
        lay.validate()
        return lay


# ---------------------------------------------------------------------------
# construction internals

def _check_inputs(S: Sequence[str], NS: Sequence[str], assoc: Mapping[str, str]) -> None:
    for side, vals in (("sensitive", S), ("non-sensitive", NS)):
        if len(set(vals)) != len(vals):
            raise ValueError(f"duplicate {side} values")
        bad = [v for v in vals if is_hidden(v)]
        if bad:
            raise ValueError(f"reserved value prefix in {side} input: {bad[0]!r}")
    sset, nset = set(S), set(NS)
    for s, n in assoc.items():
        if s not in sset or n not in nset:
            raise AssociationError(f"association {s!r}->{n!r} refers to unknown values")
    if len(set(assoc.values())) != len(assoc):
        raise AssociationError(
            "association is not 1:1; build with create_bins_multiplicity instead")


def identity_association(S: Iterable[str], NS: Iterable[str]) -> dict[str, str]:
    nset = set(NS)
    return {s: s for s in S if s in nset}


def _permute(values: Sequence[str], seed: int | None) -> list[str]:
    out = list(values)
    if seed is not None:
        random.Random(seed).shuffle(out)
    return out


def _round_robin(primary: Sequence[str], x: int) -> list[list[str]]:
    bins: list[list[str]] = [[] for _ in range(x)]
    for i, v in enumerate(primary, start=1):
        bins[i % x].append(v)
    return bins


def _place_secondary(pbins, secondary, assoc, n_sec, cap):
    """Algorithm 1 lines 5-7 on arbitrary primary bins.

    Returns (secondary slot grid, overflow). ``grid[z][i]`` is the value whose
    partner is primary bin ``i``; None marks an empty slot.
    """
    grid: list[list[str | None]] = [[None] * cap for _ in range(n_sec)]
    placed = set()
    for i, b in enumerate(pbins):
        for j, v in enumerate(b):
            a = assoc.get(v)
            if a is not None:
                if j >= n_sec or i >= cap:
                    raise CapacityError("associated value has no slot")
                grid[j][i] = a
                placed.add(a)
    rest = iter([v for v in secondary if v not in placed])
    for row in grid:
        for k in range(cap):
            if row[k] is None:
                row[k] = next(rest, None)
    return grid, list(rest)


def _compress(grid):
    bins = [tuple(v for v in row if v is not None) for row in grid]
    parts = [tuple(k for k, v in enumerate(row) if v is not None) for row in grid]
    return bins, parts


def _fill_empty_primary(pbins, pparts, side_tag, serial):
    """Give every empty primary bin one fake value (partner: bin 0 of the other side)."""
    pbins, pparts = [list(b) for b in pbins], [list(p) for p in pparts]
    for i, b in enumerate(pbins):
        if not b:
            b.append(fake_value(side_tag, serial))
            pparts[i].append(0)
            serial += 1
    return pbins, pparts, serial


def _assemble(pbins, pparts, sbins, sparts, *, primary_is_sensitive, x, y,
              p_cap, s_cap, seed, mode, serial) -> BinLayout:
    tag = "s" if primary_is_sensitive else "ns"
    pbins, pparts, serial = _fill_empty_primary(pbins, pparts, tag, serial)
    T = lambda rows: tuple(tuple(r) for r in rows)  # noqa: E731
    if primary_is_sensitive:
        lay = BinLayout(x, y, T(pbins), T(sbins), T(pparts), T(sparts),
                        s_capacity=max(p_cap, max(map(len, pbins), default=0)),
                        ns_capacity=s_cap, seed=seed, mode=mode,
                        factored="nonsensitive", fake_serial=serial)
    else:
        lay = BinLayout(x, y, T(sbins), T(pbins), T(sparts), T(pparts),
                        s_capacity=s_cap,
                        ns_capacity=max(p_cap, max(map(len, pbins), default=0)),
                        seed=seed, mode=mode, factored="sensitive", fake_serial=serial)
    lay.validate()
    return lay


def _orient(S, NS, assoc):
    if len(S) <= len(NS):
        return True, list(S), list(NS), dict(assoc)
    return False, list(NS), list(S), {n: s for s, n in assoc.items()}


def _alg1(primary, secondary, assoc, x, y, *, primary_is_sensitive, seed, mode):
    n_sec = math.ceil(len(secondary) / x)
    pbins = _round_robin(_permute(primary, seed), x)
    grid, overflow = _place_secondary(pbins, secondary, assoc, n_sec, x)
    assert not overflow
    sbins, sparts = _compress(grid)
    pparts = [tuple(range(len(b))) for b in pbins]
    return _assemble(pbins, pparts, sbins, sparts, primary_is_sensitive=primary_is_sensitive,
                     x=x, y=y, p_cap=y, s_cap=x, seed=seed, mode=mode, serial=0)


# ---------------------------------------------------------------------------
# public constructors

def create_bins_base(sensitive_values: Sequence[str], nonsensitive_values: Sequence[str],
                     association: Mapping[str, str] | None = None,
                     seed: int | None = None) -> BinLayout:
    """Base-case bin creation.

    Parameters
    ----------
    sensitive_values, nonsensitive_values
        Distinct values of each side, in input order.
    association
        Partial 1:1 map from sensitive to non-sensitive values. Defaults to
        equality of plaintexts.
    seed
        Permutation seed for the sensitive values. ``None`` keeps input order.

    If there are more sensitive than non-sensitive values the construction
    is applied with the roles of the two sides swapped.
    """
    if association is None:
        association = identity_association(sensitive_values, nonsensitive_values)
    _check_inputs(sensitive_values, nonsensitive_values, association)
    if not nonsensitive_values and not sensitive_values:
        raise ValueError("nothing to bin")
    p_is_s, primary, secondary, assoc = _orient(sensitive_values, nonsensitive_values,
                                                association)
    x, y = approx_sq_factors(len(secondary))
    return _alg1(primary, secondary, assoc, x, y, primary_is_sensitive=p_is_s,
                 seed=seed, mode="base")


def extension_costs(n: int) -> dict:
    x, y = approx_sq_factors(n)
    z = closest_square(n)
    r = math.isqrt(z)
    extra = math.ceil((n - z) / r)
    return {"x": x, "y": y, "cost_d": x + y, "z": z, "root": r,
            "cost_sn": 2 * r, "extra": extra, "square_wins": 2 * r + extra < x + y}


def create_bins_extended(sensitive_values, nonsensitive_values, association=None,
                         seed=None) -> BinLayout:
    """Square-extension: bin a square core and spread the remainder."""
    if association is None:
        association = identity_association(sensitive_values, nonsensitive_values)
    _check_inputs(sensitive_values, nonsensitive_values, association)
    p_is_s, primary, secondary, assoc = _orient(sensitive_values, nonsensitive_values,
                                                association)
    c = extension_costs(len(secondary))
    if not c["square_wins"] or len(primary) > c["z"]:
        lay = _alg1(primary, secondary, assoc, c["x"], c["y"],
                    primary_is_sensitive=p_is_s, seed=seed, mode="extended")
        return lay
    r = c["root"]
    pbins = _round_robin(_permute(primary, seed), r)
    grid, overflow = _place_secondary(pbins, secondary, assoc, r, r)
    for k, v in enumerate(overflow):
        grid[k % r].append(v)
    sbins, sparts = _compress(grid)
    # slot positions >= r pair with primary bin (position mod r)
    sparts = [tuple(k % r for k in p) for p in sparts]
    pparts = [tuple(range(len(b))) for b in pbins]
    return _assemble(pbins, pparts, sbins, sparts, primary_is_sensitive=p_is_s,
                     x=r, y=r, p_cap=r, s_cap=r + c["extra"], seed=seed,
                     mode="extended", serial=0)


def sequential_layout(secondary_order: Sequence[str], primary_values: Sequence[str],
                      assoc_sec_to_prim: Mapping[str, str], x: int, *,
                      secondary_is_sensitive: bool = False, seed=None,
                      mode: str = "sequential") -> BinLayout:
    """Sequential ("reverse") placement used by workload and range bins.

    ``secondary_order`` fills bins of capacity ``x`` in order; the associate
    of ``B_z[k]`` goes to slot ``z`` of other-side bin ``k``; remaining
    primary values fill empty slots bin-major.
    """
    n_fill = math.ceil(len(secondary_order) / x)
    fbins = [list(secondary_order[z * x:(z + 1) * x]) for z in range(n_fill)]
    grid: list[list[str | None]] = [[None] * n_fill for _ in range(x)]
    placed = set()
    for z, b in enumerate(fbins):
        for k, v in enumerate(b):
            a = assoc_sec_to_prim.get(v)
            if a is not None:
                grid[k][z] = a
                placed.add(a)
    rest = iter([v for v in primary_values if v not in placed])
    for row in grid:
        for z in range(n_fill):
            if row[z] is None:
                row[z] = next(rest, None)
    left = list(rest)
    if left:
        raise CapacityError(f"{len(left)} values do not fit the sequential layout")
    obins, oparts = _compress(grid)
    fparts = [tuple(range(len(b))) for b in fbins]
    y = n_fill
    # the "other" side (obins) has x bins of capacity n_fill
    return _assemble(obins, oparts, fbins, fparts,
                     primary_is_sensitive=not secondary_is_sensitive,
                     x=x, y=y, p_cap=n_fill, s_cap=x, seed=seed, mode=mode, serial=0)


@dataclass(frozen=True)
class WorkloadProfile:
    frequent_values: frozenset[str] = frozenset()


def create_bins_workload(sensitive_values, nonsensitive_values, association=None,
                         profile: WorkloadProfile | Iterable[str] = (),
                         seed=None) -> BinLayout:
    """Workload-skew binning: frequent non-sensitive values are grouped x at a time.

    The associates of one group of x frequent values land in x distinct
    sensitive bins, so serving the frequent keywords touches every
    sensitive bin.
    """
    if association is None:
        association = identity_association(sensitive_values, nonsensitive_values)
    _check_inputs(sensitive_values, nonsensitive_values, association)
    if len(sensitive_values) > len(nonsensitive_values):
        raise CapacityError("workload binning needs |S| <= |NS|")
    freq = profile.frequent_values if isinstance(profile, WorkloadProfile) else frozenset(profile)
    unknown = set(freq) - set(nonsensitive_values)
    if unknown:
        raise ValueError(f"frequent values not in the non-sensitive domain: {sorted(unknown)}")
    front = [v for v in nonsensitive_values if v in freq]
    back = [v for v in nonsensitive_values if v not in freq]
    if seed is not None:
        rng = random.Random(seed)
        rng.shuffle(front)
        rng.shuffle(back)
    x, _ = approx_sq_factors(len(nonsensitive_values))
    inv = {n: s for s, n in association.items()}
    return sequential_layout(front + back, list(sensitive_values), inv, x,
                             secondary_is_sensitive=False, seed=seed, mode="workload")


# ---------------------------------------------------------------------------
# multiplicity

@dataclass(frozen=True)
class MultiplicityLayout:
    bins: tuple[tuple[str, ...], ...]
    real_totals: tuple[int, ...]
    per_bin_tuple_totals: tuple[int, ...]
    fake_counts: tuple[int, ...]
    layout: BinLayout | None = None

    @property
    def fake_tuples_added(self) -> int:
        return sum(self.fake_counts)


def _greedy(items, x, y):
    order = sorted(items, key=lambda vc: -vc[1])  # stable: input order on ties
    bins: list[list[str]] = [[] for _ in range(x)]
    tot = [0] * x
    for k, (v, c) in enumerate(order):
        if k < x:
            b = k
        else:
            b = min((i for i in range(x) if len(bins[i]) < y), key=lambda i: (tot[i], i))
        bins[b].append(v)
        tot[b] += c
    return bins, tot


def _exact(items, x, y):
    """Minimise the largest bin total by exhaustive search (bins interchangeable)."""
    order = sorted(items, key=lambda vc: -vc[1])
    best = [math.inf, None]
    bins: list[list[str]] = [[] for _ in range(x)]
    tot = [0] * x

    def rec(k):
        if max(tot) >= best[0]:
            return
        if k == len(order):
            best[0], best[1] = max(tot), [list(b) for b in bins]
            return
        v, c = order[k]
        tried_empty = False
        for i in range(x):
            if len(bins[i]) >= y:
                continue
            if not bins[i]:
                if tried_empty:
                    continue
                tried_empty = True
            bins[i].append(v)
            tot[i] += c
            rec(k + 1)
            tot[i] -= c
            bins[i].pop()

    rec(0)
    counts = dict(items)
    out = best[1]
    return out, [sum(counts[v] for v in b) for b in out]


def assign_multiplicity(values_with_counts: Sequence[tuple[str, int]], bin_count: int,
                        capacity: int, exact: bool = False) -> MultiplicityLayout:
    """Place sensitive values so bins carry similar tuple totals, then pad.

    Greedy: sort by count descending, seed the ``bin_count`` largest one per
    bin, then put each next value into the non-full bin holding the fewest
    tuples (lowest index on ties). ``exact=True`` searches all assignments
    instead and is limited to 12 values.
    """
    items = [(str(v), int(c)) for v, c in values_with_counts]
    if any(c < 0 for _, c in items):
        raise ValueError("negative tuple count")
    if len(items) > bin_count * capacity:
        raise CapacityError(f"{len(items)} values exceed {bin_count}x{capacity} slots")
    if exact:
        if len(items) > 12:
            raise CapacityError("exact mode is limited to 12 values")
        bins, tot = _exact(items, bin_count, capacity)
    else:
        bins, tot = _greedy(items, bin_count, capacity)
    top = max(tot, default=0)
    return MultiplicityLayout(tuple(tuple(b) for b in bins), tuple(tot),
                              (top,) * bin_count, tuple(top - t for t in tot))


def bin_tuple_totals(layout: BinLayout, sensitive_counts: Mapping[str, int]) -> list[int]:
    """Real tuples per SB; fake slot values count one tuple each."""
    return [sum(1 if is_fake(v) else sensitive_counts.get(v, 0) for v in b)
            for b in layout.sensitive_bins]


def pad_layout(layout: BinLayout, sensitive_counts: Mapping[str, int]) -> BinLayout:
    """Set fake_counts so every sensitive bin holds the same number of tuples."""
    tot = bin_tuple_totals(layout, sensitive_counts)
    top = max(tot, default=0)
    return replace(layout, fake_counts=tuple(top - t for t in tot))


def create_bins_multiplicity(sensitive_counts: Mapping[str, int] | Sequence[tuple[str, int]],
                             nonsensitive_values: Sequence[str],
                             association: Mapping[str, str] | None = None,
                             seed: int | None = None, exact: bool = False) -> BinLayout:
    """Multiplicity-aware layout with padding counts filled in."""
    counts = dict(sensitive_counts)
    S = list(counts)
    if association is None:
        association = identity_association(S, nonsensitive_values)
    _check_inputs(S, nonsensitive_values, association)
    if len(S) > len(nonsensitive_values) or not S:
        return pad_layout(replace(create_bins_base(S, nonsensitive_values, association, seed),
                                  mode="multiplicity"), counts)
    x, y = approx_sq_factors(len(nonsensitive_values))
    m = assign_multiplicity(list(counts.items()), x, y, exact=exact)
    pbins = [list(b) for b in m.bins]
    n_sec = math.ceil(len(nonsensitive_values) / x)
    grid, overflow = _place_secondary(pbins, list(nonsensitive_values), association, n_sec, x)
    assert not overflow
    sbins, sparts = _compress(grid)
    pparts = [tuple(range(len(b))) for b in pbins]
    lay = _assemble(pbins, pparts, sbins, sparts, primary_is_sensitive=True, x=x, y=y,
                    p_cap=y, s_cap=x, seed=seed, mode="multiplicity", serial=0)
    return pad_layout(lay, counts)


# ---------------------------------------------------------------------------
# inserts

@dataclass(frozen=True)
class Placement:
    side: str
    value: str
    bin: int
    slot: int
    partner: int
    reason: str


@dataclass(frozen=True)
class InsertPlan:
    rounds: int
    placements: tuple[Placement, ...] = ()
    old_sensitive: tuple[str, ...] = ()
    old_nonsensitive: tuple[str, ...] = ()

    @property
    def layout_changed(self) -> bool:
        return self.rounds > 0

    @property
    def fake_values(self) -> list[str]:
        return [p.value for p in self.placements if is_fake(p.value)]


def insert_batch(layout: BinLayout, new_sensitive: Sequence[str] = (),
                 new_nonsensitive: Sequence[str] = (),
                 association: Mapping[str, str] | None = None
                 ) -> tuple[BinLayout, InsertPlan]:
    """Add a batch of values without moving any existing value.

    New values are placed in rounds; a round appends exactly one slot to
    every sensitive and every non-sensitive bin, completing the round with
    fake values. A new value whose associate is already binned is forced
    into the associate's partner bin so R1 and R2 keep agreeing.
    """
    S, NS = list(dict.fromkeys(new_sensitive)), list(dict.fromkeys(new_nonsensitive))
    if len(S) != len(new_sensitive) or len(NS) != len(new_nonsensitive):
        raise ConsistencyError("value listed twice in one batch")
    if any(is_hidden(v) for v in S + NS):
        raise ValueError("reserved value prefix in batch")
    if association is None:
        all_ns = set(NS) | set(layout.ns_index)
        association = {s: s for s in S if s in all_ns}
        association.update({n: n for n in NS if n in layout.s_index})
    if len(set(association.values())) != len(association):
        raise AssociationError("batch association is not 1:1")
    inv = {n: s for s, n in association.items()}
    old_s = [v for v in S if v in layout.s_index]
    old_ns = [v for v in NS if v in layout.ns_index]
    new_s = [v for v in S if v not in layout.s_index]
    new_ns = [v for v in NS if v not in layout.ns_index]

    for s in new_s:
        n = association.get(s)
        if n is not None and n in layout.ns_index and inv.get(n) != s:
            raise ConsistencyError(f"{n!r} is already associated")
    rng = random.Random(f"{layout.seed}:{layout.epoch}")
    n_sb, n_nsb = layout.num_sb, layout.num_nsb
    sb_rounds: list[list[tuple[str, int, str] | None]] = []
    nsb_rounds: list[list[tuple[str, int, str] | None]] = []

    def new_round():
        sb_rounds.append([None] * n_sb)
        nsb_rounds.append([None] * n_nsb)

    def slot_on(rounds, b):
        for r, row in enumerate(rounds):
            if row[b] is None:
                return r
        new_round()
        return len(rounds) - 1

    def free_pair():
        for r in range(len(sb_rounds)):
            fs = [i for i, e in enumerate(sb_rounds[r]) if e is None]
            fn = [k for k, e in enumerate(nsb_rounds[r]) if e is None]
            if fs and fn:
                return r, rng.choice(fs), rng.choice(fn)
        new_round()
        return len(sb_rounds) - 1, rng.randrange(n_sb), rng.randrange(n_nsb)

    def free_any(rounds, n):
        for r, row in enumerate(rounds):
            free = [i for i, e in enumerate(row) if e is None]
            if free:
                return r, rng.choice(free)
        new_round()
        return len(rounds) - 1, rng.randrange(n)

    new_s_set, new_ns_set = set(new_s), set(new_ns)
    # forced: new ns whose associate is an old sensitive value
    for n in new_ns:
        s = inv.get(n)
        if s is not None and s in layout.s_index:
            i, j = layout.s_index[s]
            p = layout.s_partner[i][j]
            r = slot_on(nsb_rounds, p)
            nsb_rounds[r][p] = (n, i, "forced")
    for s in new_s:
        n = association.get(s)
        if n is not None and n in layout.ns_index:
            k, j = layout.ns_index[n]
            q = layout.ns_partner[k][j]
            r = slot_on(sb_rounds, q)
            sb_rounds[r][q] = (s, k, "forced")
    for s in new_s:
        n = association.get(s)
        if n is not None and n in new_ns_set:
            r, i, k = free_pair()
            sb_rounds[r][i] = (s, k, "pair")
            nsb_rounds[r][k] = (n, i, "pair")
    for s in new_s:
        n = association.get(s)
        if n is None or (n not in new_ns_set and n not in layout.ns_index):
            r, i = free_any(sb_rounds, n_sb)
            sb_rounds[r][i] = (s, rng.randrange(n_nsb), "free")
    for n in new_ns:
        s = inv.get(n)
        if s is None or (s not in new_s_set and s not in layout.s_index):
            r, k = free_any(nsb_rounds, n_nsb)
            nsb_rounds[r][k] = (n, rng.randrange(n_sb), "free")

    serial = layout.fake_serial
    sbins = [list(b) for b in layout.sensitive_bins]
    nbins = [list(b) for b in layout.nonsensitive_bins]
    sp = [list(p) for p in layout.s_partner]
    npart = [list(p) for p in layout.ns_partner]
    placements = []
    for r in range(len(sb_rounds)):
        for side, row, bins, parts, other in (("sensitive", sb_rounds[r], sbins, sp, n_nsb),
                                              ("nonsensitive", nsb_rounds[r], nbins, npart, n_sb)):
            for b, e in enumerate(row):
                if e is None:
                    e = (fake_value("s" if side == "sensitive" else "ns", serial),
                         rng.randrange(other), "fake")
                    serial += 1
                v, partner, why = e
                placements.append(Placement(side, v, b, len(bins[b]), partner, why))
                bins[b].append(v)
                parts[b].append(partner)
    rounds = len(sb_rounds)
    T = lambda rows: tuple(tuple(r) for r in rows)  # noqa: E731
    out = replace(layout, sensitive_bins=T(sbins), nonsensitive_bins=T(nbins),
                  s_partner=T(sp), ns_partner=T(npart),
                  s_capacity=layout.s_capacity + rounds,
                  ns_capacity=layout.ns_capacity + rounds,
                  epoch=layout.epoch + 1, fake_serial=serial)
    out.validate()
    return out, InsertPlan(rounds, tuple(placements), tuple(old_s), tuple(old_ns))


def should_rebin(query_overhead_history: Sequence[float], threshold: float,
                 baseline: float | None = None) -> bool:
    """True when mean overhead / baseline exceeds ``threshold``.

    Without an explicit baseline the first history entry is the baseline.
    """
    if threshold <= 1:
        raise ValueError("threshold must be > 1")
    if not query_overhead_history:
        return False
    base = baseline if baseline is not None else query_overhead_history[0]
    if base <= 0:
        raise ValueError("baseline must be positive")
    mean = sum(query_overhead_history) / len(query_overhead_history)
    return mean / base > threshold


# ---------------------------------------------------------------------------
# relation-level convenience

MODES = ("base", "extended", "multiplicity", "workload")


def bin_relation(part, mode: str = "base", seed: int | None = None,
                 frequent: Iterable[str] = (), pad: bool = True,
                 exact: bool = False) -> BinLayout:
    """Build a layout for a PartitionedRelation on its search attribute."""
    h = part.histogram()
    S = h.sensitive_values()
    NS = h.nonsensitive_values()
    counts = {v: h.sensitive(v) for v in S}
    assoc = identity_association(S, NS)
    if not S and not NS:
        raise ValueError("empty relation")
    if mode == "base":
        lay = create_bins_base(S, NS, assoc, seed)
    elif mode == "extended":
        lay = create_bins_extended(S, NS, assoc, seed)
    elif mode == "workload":
        lay = create_bins_workload(S, NS, assoc, frequent, seed)
    elif mode == "multiplicity":
        return create_bins_multiplicity(counts, NS, assoc, seed, exact=exact)
    else:
        raise ValueError(f"unknown mode {mode!r}; pick one of {MODES}")
    return pad_layout(lay, counts) if pad else lay



def query_cost(layout: BinLayout, w: str, sensitive_counts: Mapping[str, int],
               nonsensitive_counts: Mapping[str, int]) -> int:
    """Tuples the cloud returns for ``w`` (padding and fake slots included)."""
    pair = layout.pair_for(w)
    if pair is None:
        return 0
    sb, nsb = pair
    s = bin_tuple_totals(layout, sensitive_counts)[sb] + layout.fake_counts[sb]
    return s + sum(nonsensitive_counts.get(v, 0) for v in layout.nonsensitive_bins[nsb])


def mean_query_cost(layout: BinLayout, sensitive_counts: Mapping[str, int],
                    nonsensitive_counts: Mapping[str, int]) -> float:
    """Average of ``query_cost`` over every real value of the layout."""
    s_tot = [t + f for t, f in zip(bin_tuple_totals(layout, sensitive_counts), layout.fake_counts)]
    n_tot = [sum(nonsensitive_counts.get(v, 0) for v in b) for b in layout.nonsensitive_bins]
    vals = list(dict.fromkeys(layout.sensitive_values() + layout.nonsensitive_values()))
    if not vals:
        return 0.0
    total = 0
    for v in vals:
        sb, nsb = layout.pair_for(v)
        total += s_tot[sb] + n_tot[nsb]
    return total / len(vals)
