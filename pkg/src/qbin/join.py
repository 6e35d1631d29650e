"""Parent/child joins across the sensitive/non-sensitive split.

The join is computed as ``(R_ns ⋈ S_ns) ∪ (R_ps ⋈ S_s)``. ``R_ps`` holds the
sensitive parents plus encrypted copies of every non-sensitive parent that
joins some sensitive child (pseudo-sensitive tuples), so the cloud never
learns which cleartext parent meets an encrypted child.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .cloudstore import CloudStore, EncryptedTuple
from .crypto import OwnerKey
from .errors import ConstraintError, SchemaError
from .partition import PartitionedRelation, TupleRecord

T_RPS, T_RNS, T_SS, T_SNS = "R_ps", "R_ns", "S_s", "S_ns"


def _keys(rows: Iterable[TupleRecord], attr: str) -> set[str]:
    try:
        return {r.get(attr) for r in rows}
    except SchemaError as e:
        raise SchemaError(f"missing join attribute {attr!r}") from e


def compute_pseudo_sensitive_keys(R_ns: Sequence[TupleRecord], S_s: Sequence[TupleRecord],
                                  key_attr: str, child_key_attr: str | None = None) -> frozenset[str]:
    return frozenset(_keys(R_ns, key_attr) & _keys(S_s, child_key_attr or key_attr))


@dataclass(frozen=True)
class JoinPartition:
    key_attr: str
    child_key_attr: str
    R_s: tuple[TupleRecord, ...]
    R_ns: tuple[TupleRecord, ...]
    S_s: tuple[TupleRecord, ...]
    S_ns: tuple[TupleRecord, ...]
    pseudo_keys: frozenset[str]
    R_ps: tuple[TupleRecord, ...]
    S_ps: tuple[TupleRecord, ...] = ()
    non_fk: bool = False

    @property
    def pseudo_ids(self) -> frozenset[str]:
        return frozenset(r.tuple_id for r in self.R_ps if not r.sensitive) | \
            frozenset(t.tuple_id for t in self.S_ps)


def build_join_relations(R: PartitionedRelation, S: PartitionedRelation, key_attr: str,
                         child_key_attr: str | None = None, non_fk: bool = False) -> JoinPartition:
    """Split both relations and derive the pseudo-sensitive parents.

    In the default (foreign-key) mode no sensitive parent may join a
    non-sensitive child. ``non_fk=True`` lifts that restriction by also
    encrypting such children, marked as pseudo-sensitive.
    """
    ck = child_key_attr or key_attr
    R_s, R_ns = R.sensitive_tuples, R.nonsensitive_tuples
    S_s, S_ns = S.sensitive_tuples, S.nonsensitive_tuples
    clash = _keys(R_s, key_attr) & _keys(S_ns, ck)
    S_ps: tuple[TupleRecord, ...] = ()
    if clash and not non_fk:
        raise ConstraintError(
            f"sensitive parents join non-sensitive children on keys {sorted(clash)}")
    if non_fk:
        S_ps = tuple(t for t in S_ns if t.get(ck) in clash)
    pk = compute_pseudo_sensitive_keys(R_ns, tuple(S_s) + S_ps, key_attr, ck)
    R_ps = tuple(R_s) + tuple(r for r in R_ns if r.get(key_attr) in pk)
    return JoinPartition(key_attr, ck, tuple(R_s), tuple(R_ns), tuple(S_s), tuple(S_ns),
                         pk, R_ps, S_ps, non_fk)


@dataclass(frozen=True)
class JoinedTuple:
    parent: TupleRecord
    child: TupleRecord
    source: str

    @property
    def ids(self) -> tuple[str, str]:
        return (self.parent.tuple_id, self.child.tuple_id)


@dataclass
class JoinOwner:
    key: OwnerKey
    part: JoinPartition
    pseudo: frozenset[str] = field(default_factory=frozenset)

    def seal(self, rec: TupleRecord, pseudo: bool, table: str) -> bytes:
        body = {"id": rec.tuple_id, "attrs": [list(a) for a in rec.attrs],
                "sensitive": rec.sensitive, "pseudo": pseudo}
        return self.key.encrypt(json.dumps(body, separators=(",", ":")).encode(), table.encode())

    def open(self, blob: bytes, table: str) -> tuple[TupleRecord, bool]:
        d = json.loads(self.key.decrypt(blob, table.encode()))
        return TupleRecord(d["id"], tuple(tuple(a) for a in d["attrs"]), d["sensitive"]), d["pseudo"]


def outsource_join(part: JoinPartition, key: OwnerKey,
                   store: CloudStore | None = None) -> tuple[CloudStore, JoinOwner]:
    store = store if store is not None else CloudStore()
    key.bind(store.store_id)
    owner = JoinOwner(key, part)
    store.put_sensitive([EncryptedTuple(owner.seal(r, not r.sensitive, T_RPS)) for r in part.R_ps],
                        T_RPS)
    store.put_sensitive([EncryptedTuple(owner.seal(t, False, T_SS)) for t in part.S_s]
                        + [EncryptedTuple(owner.seal(t, True, T_SS)) for t in part.S_ps], T_SS)
    store.put_nonsensitive(part.R_ns, part.key_attr, T_RNS)
    store.put_nonsensitive(part.S_ns, part.child_key_attr, T_SNS)
    return store, owner


def _hash_join(parents, children, pk, ck, source, skip=None):
    index: dict[str, list] = {}
    for p in parents:
        index.setdefault(p[0].get(pk), []).append(p)
    out = []
    for c in children:
        for p in index.get(c[0].get(ck), ()):
            if skip and skip(p, c):
                continue
            out.append(JoinedTuple(p[0], c[0], source))
    return out


def execute_join(part: JoinPartition, store: CloudStore, owner: JoinOwner,
                 select: str | None = None) -> list[JoinedTuple]:
    """Clear-side join plus owner-side hash join of the decrypted side.

    ``select`` keeps only joined tuples whose join key equals the value.
    """
    pk, ck = part.key_attr, part.child_key_attr
    with store.round("join") as rnd:
        rns = store.scan_nonsensitive(T_RNS, rnd)
        sns = store.scan_nonsensitive(T_SNS, rnd)
        rps = store.scan_sensitive(T_RPS, rnd)
        ss = store.scan_sensitive(T_SS, rnd)
    clear = _hash_join([(r, False) for r in rns], [(t, False) for t in sns], pk, ck, "clear")
    dec_r = [owner.open(b, T_RPS) for _, b in rps]
    dec_s = [owner.open(b, T_SS) for _, b in ss]
    enc = _hash_join(dec_r, dec_s, pk, ck, "encrypted", skip=lambda p, c: p[1] and c[1])
    out = clear + enc
    if select is not None:
        out = [j for j in out if j.parent.get(pk) == select]
    return sorted(out, key=lambda j: (j.parent.get(pk), j.parent.tuple_id, j.child.tuple_id))
