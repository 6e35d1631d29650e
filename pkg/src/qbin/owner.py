"""Owner-side state: key, layout, occurrence histogram, and outsourcing."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .binning import (BinLayout, InsertPlan, bin_tuple_totals, insert_batch, is_fake,
                      is_hidden, pad_key)
from .cloudstore import DEFAULT_TABLE, CloudStore, EncryptedTuple
from .crypto import OwnerKey
from .errors import IntegrityError, TamperError, VersionMismatch
from .partition import PartitionedRelation, TupleRecord

_sysrand = random.SystemRandom()


@dataclass
class Owner:
    key: OwnerKey
    layout: BinLayout
    attribute: str
    schema: tuple[str, ...]
    table: str = DEFAULT_TABLE
    occurrences: Counter = field(default_factory=Counter)
    real_counts: Counter = field(default_factory=Counter)
    padded: bool = True
    fake_serial: int = 0
    overhead_history: list[float] = field(default_factory=list)
    baseline: float | None = None

    # -- crypto helpers ------------------------------------------------------
    def tokens_for(self, values: Iterable[str]) -> list[bytes]:
        return [self.key.token(self.attribute, v, i)
                for v in values for i in range(1, self.occurrences[v] + 1)]

    def seal(self, rec: TupleRecord, fake: bool) -> bytes:
        body = {"id": rec.tuple_id, "attrs": [list(a) for a in rec.attrs], "fake": fake}
        return self.key.encrypt(json.dumps(body, separators=(",", ":")).encode(),
                                self.table.encode())

    def open(self, blob: bytes) -> tuple[TupleRecord, bool]:
        d = json.loads(self.key.decrypt(blob, self.table.encode()))
        return TupleRecord(d["id"], tuple(tuple(a) for a in d["attrs"]), True), d["fake"]

    def _fake_record(self, value: str) -> TupleRecord:
        self.fake_serial += 1
        attrs = [(a, value if a == self.attribute else "") for a in self.schema]
        return TupleRecord.make(f"\x00fake-{self.fake_serial}", attrs, True)

    def _encrypt(self, items: Sequence[tuple[TupleRecord, bool]]) -> list[EncryptedTuple]:
        out = []
        for rec, fake in items:
            v = rec.get(self.attribute)
            self.occurrences[v] += 1
            tok = self.key.token(self.attribute, v, self.occurrences[v])
            out.append(EncryptedTuple(self.seal(rec, fake), (tok,)))
        _sysrand.shuffle(out)
        return out

    def check_version(self, store: CloudStore) -> None:
        if store.layout_version != self.layout.version:
            raise VersionMismatch(
                f"store holds layout {store.layout_version or '<none>'}, owner has "
                f"{self.layout.version}; re-outsource or reload matching metadata")

    def fake_tuple_total(self) -> int:
        return sum(c for v, c in self.occurrences.items() if is_hidden(v))

    # -- inserts ---------------------------------------------------------------
    def insert_rows(self, store: CloudStore, rows: Sequence[TupleRecord]) -> InsertPlan:
        """Outsource new rows, growing the layout when they carry new values."""
        self.check_version(store)
        sens = [r for r in rows if r.sensitive]
        ns = [r for r in rows if not r.sensitive]
        s_vals = list(dict.fromkeys(r.get(self.attribute) for r in sens))
        n_vals = list(dict.fromkeys(r.get(self.attribute) for r in ns))
        new_layout, plan = insert_batch(self.layout, s_vals, n_vals)
        items = [(r, False) for r in sens]
        for p in plan.placements:
            if p.side == "sensitive" and is_fake(p.value):
                items.append((self._fake_record(p.value), True))
        for r in sens:
            self.real_counts[r.get(self.attribute)] += 1
        fake_counts = tuple(new_layout.fake_counts)
        if self.padded:
            real = bin_tuple_totals(new_layout, self.real_counts)
            top = max(r + p for r, p in zip(real, fake_counts))
            new_pad = [max(p, top - r) for r, p in zip(real, fake_counts)]
            for i, (old, new) in enumerate(zip(fake_counts, new_pad)):
                items += [(self._fake_record(pad_key(i)), True) for _ in range(new - old)]
            fake_counts = tuple(new_pad)
        self.layout = replace(new_layout, fake_counts=fake_counts)
        store.put_sensitive(self._encrypt(items), self.table)
        store.put_nonsensitive(ns, self.attribute, self.table)
        store.layout_version = self.layout.version
        store.bin_counts = (self.layout.num_sb, self.layout.num_nsb)
        return plan

    # -- persistence -------------------------------------------------------------
    def state(self) -> dict:
        return {"attribute": self.attribute, "schema": list(self.schema), "table": self.table,
                "occurrences": dict(self.occurrences), "real_counts": dict(self.real_counts),
                "padded": self.padded, "fake_serial": self.fake_serial,
                "overhead_history": list(self.overhead_history), "baseline": self.baseline,
                "layout_version": self.layout.version}

    @classmethod
    def from_state(cls, key: OwnerKey, layout: BinLayout, d: dict) -> "Owner":
        if d["layout_version"] != layout.version:
            raise VersionMismatch("owner state and layout file disagree")
        return cls(key, layout, d["attribute"], tuple(d["schema"]), d["table"],
                   Counter(d["occurrences"]), Counter(d["real_counts"]), d["padded"],
                   d["fake_serial"], list(d["overhead_history"]), d["baseline"])


def outsource(layout: BinLayout, part: PartitionedRelation, owner_key: OwnerKey,
              store: CloudStore | None = None, table: str = DEFAULT_TABLE,
              padded: bool = True) -> tuple[CloudStore, Owner]:
    """Encrypt and index the sensitive half, upload the cleartext half.

    Fake sensitive slots receive one fake tuple each and sensitive bin ``i``
    receives ``layout.fake_counts[i]`` padding tuples under ``pad_key(i)``.
    """
    store = store if store is not None else CloudStore()
    owner_key.bind(store.store_id)
    attr = part.search_attribute
    h = part.histogram()
    missing = [v for v in h.sensitive_values() if v not in layout.s_index]
    missing += [v for v in h.nonsensitive_values() if v not in layout.ns_index]
    if missing:
        raise IntegrityError(f"layout does not cover {len(missing)} value(s), e.g. {missing[0]!r}")
    owner = Owner(owner_key, layout, attr, part.schema, table, padded=padded)
    items = [(r, False) for r in part.sensitive_tuples]
    for v in layout.sensitive_values(include_fake=True):
        if is_fake(v):
            items.append((owner._fake_record(v), True))
    for i, c in enumerate(layout.fake_counts):
        items += [(owner._fake_record(pad_key(i)), True) for _ in range(c)]
    owner.real_counts.update({v: h.sensitive(v) for v in h.sensitive_values()})
    store.put_sensitive(owner._encrypt(items), table)
    store.put_nonsensitive(part.nonsensitive_tuples, attr, table)
    if table == DEFAULT_TABLE or not store.layout_version:
        store.layout_version = layout.version
        store.bin_counts = (layout.num_sb, layout.num_nsb)
    return store, owner


def decrypt_all(owner: Owner, fetched: Iterable[tuple[int, bytes]]) -> list[tuple[TupleRecord, bool]]:
    out = []
    for rid, blob in fetched:
        try:
            out.append(owner.open(blob))
        except TamperError as e:
            raise TamperError(f"record {rid}: {e}") from e
    return out
