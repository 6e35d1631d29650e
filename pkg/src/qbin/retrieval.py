"""Selection queries: rewrite one value into a two-bin fetch and merge."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from .binning import BinLayout, pad_key
from .cloudstore import CloudStore
from .owner import Owner, decrypt_all
from .partition import TupleRecord


@dataclass(frozen=True)
class QueryPlan:
    """Bins to fetch for one query value.

    ``target_value`` and the value lists stay with the owner; the cloud
    only ever sees the tokens of ``sensitive_values`` and the full
    ``nonsensitive_values`` list.
    """
    target_value: str
    sensitive_bin_id: int | None
    nonsensitive_bin_id: int | None
    sensitive_values: tuple[str, ...] = ()
    nonsensitive_values: tuple[str, ...] = ()
    layout_version: str = ""

    @property
    def is_empty(self) -> bool:
        return self.sensitive_bin_id is None


def plan_bins(layout: BinLayout, target: str, sb: int, nsb: int) -> QueryPlan:
    return QueryPlan(target, sb, nsb,
                     tuple(layout.sensitive_bins[sb]) + (pad_key(sb),),
                     tuple(layout.nonsensitive_bins[nsb]), layout.version)


def plan_query(layout: BinLayout, w: str) -> QueryPlan:
    pair = layout.pair_for(w)
    if pair is None:
        return QueryPlan(w, None, None, layout_version=layout.version)
    return plan_bins(layout, w, *pair)


@dataclass
class SelectionResult:
    rows: list[TupleRecord]
    sensitive_fetched: int = 0
    nonsensitive_fetched: int = 0

    @property
    def fetched(self) -> int:
        return self.sensitive_fetched + self.nonsensitive_fetched

    def __iter__(self) -> Iterator[TupleRecord]:
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def ids(self) -> set[str]:
        return {r.tuple_id for r in self.rows}


def filter_results(fetched: Iterable[TupleRecord | tuple[TupleRecord, bool]], w: str,
                   attribute: str) -> list[TupleRecord]:
    """Keep tuples whose ``attribute`` equals ``w``; drop fakes.

    Items are records or ``(record, is_fake)`` pairs as produced by
    decryption.
    """
    out = []
    for item in fetched:
        rec, fake = item if isinstance(item, tuple) else (item, False)
        if not fake and rec.get(attribute) == w:
            out.append(rec)
    return out


def canonical(rows: Iterable[TupleRecord]) -> list[TupleRecord]:
    return sorted(rows, key=lambda r: (r.tuple_id, r.sensitive))


def execute_plan(plan: QueryPlan, store: CloudStore, owner: Owner, kind: str = "select"):
    """Fetch both bins of a plan (sensitive side first) inside one round."""
    if plan.is_empty:
        return [], []
    owner.check_version(store)
    tokens = owner.tokens_for(plan.sensitive_values)
    with store.round(kind) as rnd:
        enc = store.fetch_sensitive(tokens, owner.table, rnd)
        clear = store.fetch_nonsensitive(list(plan.nonsensitive_values), owner.table, rnd)
    return decrypt_all(owner, enc), clear


def execute_selection(plan: QueryPlan, store: CloudStore, owner: Owner) -> SelectionResult:
    dec, clear = execute_plan(plan, store, owner)
    rows = filter_results(dec, plan.target_value, owner.attribute)
    rows += filter_results(clear, plan.target_value, owner.attribute)
    return SelectionResult(canonical(rows), len(dec), len(clear))


def select(owner: Owner, store: CloudStore, w: str) -> SelectionResult:
    return execute_selection(plan_query(owner.layout, w), store, owner)


def execute_unbinned(store: CloudStore, owner: Owner, w: str) -> SelectionResult:
    """Fetch exactly ``w`` on both sides with no binning (the leaky baseline)."""
    with store.round("select") as rnd:
        enc = store.fetch_sensitive(owner.tokens_for([w]), owner.table, rnd)
        clear = store.fetch_nonsensitive([w], owner.table, rnd)
    dec = decrypt_all(owner, enc)
    rows = filter_results(dec, w, owner.attribute) + filter_results(clear, w, owner.attribute)
    return SelectionResult(canonical(rows), len(dec), len(clear))
