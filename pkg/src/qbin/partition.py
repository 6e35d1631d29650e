"""Row-level partitioning of a relation into sensitive and non-sensitive halves.

Values are opaque strings. A relation is split by a per-row flag; the
sensitive half is later encrypted and the other half stays in cleartext.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ConfigError, IngestionError, SchemaError

SENSITIVITY_HEADER = "__sensitive__"


@dataclass(frozen=True)
class TupleRecord:
    tuple_id: str
    attrs: tuple[tuple[str, str], ...]
    sensitive: bool = False

    @classmethod
    def make(cls, tuple_id, attrs: Mapping[str, object] | Iterable, sensitive=False):
        items = attrs.items() if isinstance(attrs, Mapping) else attrs
        return cls(str(tuple_id), tuple((str(k), str(v)) for k, v in items), bool(sensitive))

    def get(self, name: str) -> str:
        for k, v in self.attrs:
            if k == name:
                return v
        raise SchemaError(f"tuple {self.tuple_id} has no attribute {name!r}")

    def as_dict(self) -> dict[str, str]:
        return dict(self.attrs)

    @property
    def schema(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.attrs)


@dataclass(frozen=True)
class ValueHistogram:
    entries: Mapping[str, tuple[int, int]]

    def sensitive(self, v: str) -> int:
        return self.entries.get(v, (0, 0))[0]

    def nonsensitive(self, v: str) -> int:
        return self.entries.get(v, (0, 0))[1]

    def __getitem__(self, v: str) -> tuple[int, int]:
        return self.entries.get(v, (0, 0))

    def __len__(self) -> int:
        return len(self.entries)

    def sensitive_values(self) -> list[str]:
        return [v for v, (s, _) in self.entries.items() if s > 0]

    def nonsensitive_values(self) -> list[str]:
        return [v for v, (_, n) in self.entries.items() if n > 0]


@dataclass(frozen=True)
class PartitionedRelation:
    schema: tuple[str, ...]
    sensitive_tuples: tuple[TupleRecord, ...]
    nonsensitive_tuples: tuple[TupleRecord, ...]
    search_attribute: str
    _hist: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.schema and self.search_attribute not in self.schema:
            raise SchemaError(f"search attribute {self.search_attribute!r} not in schema")

    @property
    def rows(self) -> list[TupleRecord]:
        return list(self.sensitive_tuples) + list(self.nonsensitive_tuples)

    def histogram(self, attribute: str | None = None) -> ValueHistogram:
        attribute = attribute or self.search_attribute
        if attribute not in self._hist:
            self._hist[attribute] = value_histogram(self, attribute)
        return self._hist[attribute]

    def select(self, value: str, attribute: str | None = None) -> list[TupleRecord]:
        """Plain selection on the unpartitioned relation (the oracle)."""
        attribute = attribute or self.search_attribute
        return [t for t in self.rows if t.get(attribute) == value]


def _schema_of(rows: Sequence[TupleRecord]) -> tuple[str, ...]:
    if not rows:
        return ()
    schema = rows[0].schema
    for r in rows:
        if set(r.schema) != set(schema):
            raise SchemaError(f"tuple {r.tuple_id} does not match schema {schema}")
    return schema


def partition_relation(rows: Sequence[TupleRecord], attribute: str) -> PartitionedRelation:
    schema = _schema_of(rows)
    if rows and attribute not in schema:
        raise SchemaError(f"unknown attribute {attribute!r}")
    seen: set[str] = set()
    for r in rows:
        if r.tuple_id in seen:
            raise IngestionError(f"duplicate tuple_id {r.tuple_id!r}")
        seen.add(r.tuple_id)
    sens = tuple(r for r in rows if r.sensitive)
    ns = tuple(r for r in rows if not r.sensitive)
    return PartitionedRelation(schema or (attribute,), sens, ns, attribute)


def value_histogram(part: PartitionedRelation, attribute: str) -> ValueHistogram:
    if attribute not in part.schema:
        raise SchemaError(f"unknown attribute {attribute!r}")
    s = Counter(t.get(attribute) for t in part.sensitive_tuples)
    n = Counter(t.get(attribute) for t in part.nonsensitive_tuples)
    # insertion order: first appearance in the relation
    order = dict.fromkeys([t.get(attribute) for t in part.sensitive_tuples]
                          + [t.get(attribute) for t in part.nonsensitive_tuples])
    return ValueHistogram({v: (s[v], n[v]) for v in order})


# ---------------------------------------------------------------------------
# CSV dialect: UTF-8, header row, comma separator, RFC 4180 quoting.

def _flag(text: str, line: int) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "y", "t"):
        return True
    if t in ("0", "false", "no", "n", "f", ""):
        return False
    raise IngestionError(f"line {line}: bad sensitivity flag {text!r}")


def parse_csv(text: str, schema: Sequence[str] | None = None,
              sensitivity: str | Callable[[dict], bool] | None = None,
              id_column: str | None = None) -> list[TupleRecord]:
    """Parse CSV text. ``sensitivity`` is a column name or a row predicate.

    The id column defaults to ``tuple_id`` when present, else the row number.
    """
    if sensitivity is None:
        raise ConfigError("no sensitivity column or predicate given")
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        return []
    if isinstance(sensitivity, str) and sensitivity not in header:
        raise ConfigError(f"sensitivity column {sensitivity!r} missing from header")
    if id_column is None and "tuple_id" in header:
        id_column = "tuple_id"
    meta = {c for c in (id_column, sensitivity if isinstance(sensitivity, str) else None) if c}
    cols = [c for c in header if c not in meta]
    if schema is not None:
        missing = [c for c in schema if c not in header]
        if missing:
            raise SchemaError(f"columns missing from header: {missing}")
        cols = [c for c in schema if c not in meta]
    out = []
    for n, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestionError(f"line {n}: expected {len(header)} fields, got {len(row)}")
        d = dict(zip(header, row))
        if isinstance(sensitivity, str):
            flag = _flag(d[sensitivity], n)
        else:
            try:
                flag = bool(sensitivity(d))
            except Exception as e:  # predicate bugs surface with a line number
                raise IngestionError(f"line {n}: predicate failed: {e}") from e
        tid = d[id_column] if id_column else str(n - 1)
        out.append(TupleRecord.make(tid, [(c, d[c]) for c in cols], flag))
    return out


def ingest_csv(path, schema=None, sensitivity=None, id_column=None) -> list[TupleRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read(), schema, sensitivity, id_column)


def _id_key(tid: str):
    return (0, int(tid), "") if tid.isdigit() else (1, 0, tid)


def to_csv(rows: Sequence[TupleRecord]) -> str:
    """Canonical emission: sorted by tuple_id, id and flag columns included."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    schema = _schema_of(rows)
    w.writerow(["tuple_id", *schema, SENSITIVITY_HEADER])
    for r in sorted(rows, key=lambda r: _id_key(r.tuple_id)):
        d = r.as_dict()
        w.writerow([r.tuple_id, *(d[c] for c in schema), "1" if r.sensitive else "0"])
    return buf.getvalue()


def from_csv(text: str) -> list[TupleRecord]:
    return parse_csv(text, sensitivity=SENSITIVITY_HEADER, id_column="tuple_id")


def write_csv(path, rows: Sequence[TupleRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv(rows))
