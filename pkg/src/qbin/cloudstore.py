"""Simulated honest-but-curious cloud.

The store keeps encrypted sensitive tuples behind an occurrence-token index
and cleartext non-sensitive tuples behind a value index. Every round trip
is appended to the adversarial-view (AV) log: what the cloud was asked and
which tuples it sent back. The cloud never holds keys.

On disk a store is a directory::

    sensitive.bin      length-prefixed ciphertext records
    tokens.idx         32-byte token + 4-byte record number, repeated
    nonsensitive.csv   canonical CSV of the cleartext half
    av.log             length-prefixed JSON entries, append-only
    manifest           JSON: store id, layout version, scheme ids, bin counts

Tables other than the default ``R`` use ``<name>.<table>.<ext>`` files.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import uuid
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Sequence

from .crypto import SCHEME, TOKEN_LEN
from .errors import IntegrityError, ProtocolError
from .partition import TupleRecord, from_csv, to_csv

DEFAULT_TABLE = "R"
MANIFEST_FORMAT = "qbin-store"


@dataclass(frozen=True)
class EncryptedTuple:
    ciphertext: bytes
    search_tokens: tuple[bytes, ...] = ()


@dataclass(frozen=True)
class AVEntry:
    query_seq: int
    side: str
    request: tuple[str, ...]
    returned_ids: tuple[str, ...]
    table: str = DEFAULT_TABLE
    kind: str = "select"

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "AVEntry":
        d = json.loads(text)
        d["request"] = tuple(d["request"])
        d["returned_ids"] = tuple(d["returned_ids"])
        return cls(**d)


@dataclass
class Round:
    """Entries of one logical query, committed to the log together."""
    seq: int
    kind: str
    entries: list[AVEntry] = field(default_factory=list)


@dataclass
class _Table:
    attribute: str = ""
    records: list[bytes] = field(default_factory=list)
    tokens: dict[bytes, int] = field(default_factory=dict)
    rows: list[TupleRecord] = field(default_factory=list)
    vindex: dict[str, list[int]] = field(default_factory=dict)


class CloudStore:
    def __init__(self, store_id: str | None = None):
        self.store_id = store_id or uuid.uuid4().hex
        self.layout_version = ""
        self.bin_counts: tuple[int, int] = (0, 0)
        self._tables: dict[str, _Table] = {}
        self._av: list[AVEntry] = []
        self._persisted = 0
        self._seq = 0
        self._lock = threading.Lock()

    # -- owner-facing writes ----------------------------------------------
    def _table(self, name: str) -> _Table:
        return self._tables.setdefault(name, _Table())

    def tables(self) -> list[str]:
        return list(self._tables)

    def put_sensitive(self, records: Iterable[EncryptedTuple], table: str = DEFAULT_TABLE) -> None:
        t = self._table(table)
        with self._lock:
            for rec in records:
                rid = len(t.records)
                t.records.append(rec.ciphertext)
                for tok in rec.search_tokens:
                    if tok in t.tokens:
                        raise IntegrityError("duplicate search token")
                    t.tokens[tok] = rid

    def put_nonsensitive(self, rows: Iterable[TupleRecord], attribute: str,
                         table: str = DEFAULT_TABLE) -> None:
        t = self._table(table)
        if t.attribute and t.attribute != attribute:
            raise IntegrityError(f"table {table} is indexed on {t.attribute}")
        t.attribute = attribute
        with self._lock:
            for r in rows:
                t.vindex.setdefault(r.get(attribute), []).append(len(t.rows))
                t.rows.append(r)

    def sensitive_count(self, table: str = DEFAULT_TABLE) -> int:
        return len(self._tables[table].records) if table in self._tables else 0

    def nonsensitive_count(self, table: str = DEFAULT_TABLE) -> int:
        return len(self._tables[table].rows) if table in self._tables else 0

    def raw_record(self, rid: int, table: str = DEFAULT_TABLE) -> bytes:
        return self._tables[table].records[rid]

    def corrupt_record(self, rid: int, bit: int, table: str = DEFAULT_TABLE) -> None:
        """Flip one bit of a stored ciphertext (fault injection for tests)."""
        rec = bytearray(self._tables[table].records[rid])
        rec[bit // 8] ^= 1 << (bit % 8)
        self._tables[table].records[rid] = bytes(rec)

    # -- query rounds -------------------------------------------------------
    @contextmanager
    def round(self, kind: str = "select") -> Iterator[Round]:
        with self._lock:
            self._seq += 1
            rnd = Round(self._seq, kind)
        yield rnd
        with self._lock:
            self._av.extend(rnd.entries)

    def _log(self, rnd: Round | None, entry: AVEntry) -> None:
        if rnd is not None:
            rnd.entries.append(entry)
            return
        with self._lock:
            self._av.append(entry)

    def _seq_for(self, rnd: Round | None) -> int:
        if rnd is not None:
            return rnd.seq
        with self._lock:
            self._seq += 1
            return self._seq

    def fetch_sensitive(self, tokens: Sequence[bytes], table: str = DEFAULT_TABLE,
                        rnd: Round | None = None) -> list[tuple[int, bytes]]:
        seq = self._seq_for(rnd)
        kind = rnd.kind if rnd else "select"
        bad = [tok for tok in tokens if not isinstance(tok, (bytes, bytearray)) or len(tok) != TOKEN_LEN]
        if bad:
            self._log(rnd, AVEntry(seq, "sensitive", (), (), table, "rejected"))
            raise ProtocolError(f"{len(bad)} malformed token(s)")
        t = self._tables.get(table) or _Table()
        hits = sorted({t.tokens[tok] for tok in tokens if tok in t.tokens})
        self._log(rnd, AVEntry(seq, "sensitive", tuple(tok.hex() for tok in tokens),
                               tuple(str(h) for h in hits), table, kind))
        return [(h, t.records[h]) for h in hits]

    def fetch_nonsensitive(self, values: Sequence[str], table: str = DEFAULT_TABLE,
                           rnd: Round | None = None) -> list[TupleRecord]:
        seq = self._seq_for(rnd)
        kind = rnd.kind if rnd else "select"
        t = self._tables.get(table) or _Table()
        idx = sorted({i for v in values for i in t.vindex.get(v, ())})
        rows = [t.rows[i] for i in idx]
        self._log(rnd, AVEntry(seq, "nonsensitive", tuple(values),
                               tuple(r.tuple_id for r in rows), table, kind))
        return rows

    def scan_sensitive(self, table: str = DEFAULT_TABLE,
                       rnd: Round | None = None) -> list[tuple[int, bytes]]:
        seq = self._seq_for(rnd)
        t = self._tables.get(table) or _Table()
        self._log(rnd, AVEntry(seq, "sensitive", ("*",), tuple(map(str, range(len(t.records)))),
                               table, "scan"))
        return list(enumerate(t.records))

    def scan_nonsensitive(self, table: str = DEFAULT_TABLE,
                          rnd: Round | None = None) -> list[TupleRecord]:
        seq = self._seq_for(rnd)
        t = self._tables.get(table) or _Table()
        self._log(rnd, AVEntry(seq, "nonsensitive", ("*",), tuple(r.tuple_id for r in t.rows),
                               table, "scan"))
        return list(t.rows)

    def adversarial_view_log(self) -> list[AVEntry]:
        with self._lock:
            return list(self._av)

    # -- persistence ----------------------------------------------------------
    @staticmethod
    def _name(base: str, ext: str, table: str) -> str:
        return f"{base}.{ext}" if table == DEFAULT_TABLE else f"{base}.{table}.{ext}"

    def manifest(self) -> dict:
        return {"format": MANIFEST_FORMAT, "store_id": self.store_id,
                "layout_version": self.layout_version, "scheme": SCHEME,
                "bin_counts": list(self.bin_counts), "next_seq": self._seq,
                "tables": {n: {"attribute": t.attribute, "sensitive": len(t.records),
                               "nonsensitive": len(t.rows)} for n, t in self._tables.items()}}

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)

        def atomic(name, data: bytes):
            path = os.path.join(directory, name)
            with open(path + ".tmp", "wb") as fh:
                fh.write(data)
            os.replace(path + ".tmp", path)

        with self._lock:
            for name, t in self._tables.items():
                atomic(self._name("sensitive", "bin", name),
                       b"".join(struct.pack(">I", len(r)) + r for r in t.records))
                atomic(self._name("tokens", "idx", name),
                       b"".join(tok + struct.pack(">I", rid) for tok, rid in t.tokens.items()))
                atomic(self._name("nonsensitive", "csv", name), to_csv(t.rows).encode())
            pending = self._av[self._persisted:]
            with open(os.path.join(directory, "av.log"), "ab") as fh:
                for e in pending:
                    b = e.to_json().encode()
                    fh.write(struct.pack(">I", len(b)) + b)
            self._persisted = len(self._av)
            atomic("manifest", json.dumps(self.manifest(), indent=1).encode())

    @classmethod
    def load(cls, directory) -> "CloudStore":
        with open(os.path.join(directory, "manifest")) as fh:
            man = json.load(fh)
        if man.get("format") != MANIFEST_FORMAT:
            raise IntegrityError("not a store manifest")
        st = cls(man["store_id"])
        st.layout_version = man["layout_version"]
        st.bin_counts = tuple(man["bin_counts"])
        st._seq = man["next_seq"]
        for name, meta in man["tables"].items():
            t = st._table(name)
            t.attribute = meta["attribute"]
            with open(os.path.join(directory, cls._name("sensitive", "bin", name)), "rb") as fh:
                t.records = list(_read_frames(fh.read()))
            with open(os.path.join(directory, cls._name("tokens", "idx", name)), "rb") as fh:
                raw = fh.read()
            step = TOKEN_LEN + 4
            if len(raw) % step:
                raise IntegrityError("truncated token index")
            for k in range(0, len(raw), step):
                t.tokens[raw[k:k + TOKEN_LEN]] = struct.unpack(">I", raw[k + TOKEN_LEN:k + step])[0]
            with open(os.path.join(directory, cls._name("nonsensitive", "csv", name)),
                      encoding="utf-8", newline="") as fh:
                rows = from_csv(fh.read())
            for r in rows:
                t.vindex.setdefault(r.get(t.attribute), []).append(len(t.rows))
                t.rows.append(r)
            if len(t.records) != meta["sensitive"] or len(t.rows) != meta["nonsensitive"]:
                raise IntegrityError(f"table {name} does not match its manifest")
        log = os.path.join(directory, "av.log")
        if os.path.exists(log):
            with open(log, "rb") as fh:
                st._av = [AVEntry.from_json(b.decode()) for b in _read_frames(fh.read())]
        st._persisted = len(st._av)
        return st


def _read_frames(data: bytes) -> Iterator[bytes]:
    k = 0
    while k < len(data):
        if k + 4 > len(data):
            raise IntegrityError("truncated length prefix")
        (n,) = struct.unpack(">I", data[k:k + 4])
        if k + 4 + n > len(data):
            raise IntegrityError("truncated record")
        yield data[k + 4:k + 4 + n]
        k += 4 + n


def read_av_log(path) -> list[AVEntry]:
    with open(path, "rb") as fh:
        return [AVEntry.from_json(b.decode()) for b in _read_frames(fh.read())]
