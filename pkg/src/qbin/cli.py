"""Command-line front end.

Owner metadata lives in a directory (``--meta``)::

    config.json    search attribute, range settings
    relation.csv   canonical copy of the ingested relation (owner side)
    layout.json    versioned, checksummed bin layout (never holds keys)
    owner.json     occurrence histogram, pad counts, query-overhead history
    lock           present while a command runs

The key file is referenced by path and never copied into metadata.
Exit codes: 0 ok, 1 usage, 2 integrity or constraint failure, 3 audit failure.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import shutil
import sys
from contextlib import contextmanager

from . import auditor, binning, rangetree, retrieval
from .binning import BinLayout
from .cloudstore import CloudStore
from .crypto import OwnerKey
from .errors import (ConfigError, ConstraintError, IntegrityError, KeyReuseError, QBinError,
                     SchemaError, BestMatchTooWide)
from .join import build_join_relations, execute_join, outsource_join
from .owner import Owner, outsource
from .partition import (PartitionedRelation, from_csv, ingest_csv, partition_relation,
                        to_csv)
from .synth import lineitem, orders

EXIT_OK, EXIT_USAGE, EXIT_INTEGRITY, EXIT_AUDIT = 0, 1, 2, 3


class UsageError(QBinError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# metadata helpers

def write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@contextmanager
def locked(meta: str):
    os.makedirs(meta, exist_ok=True)
    path = os.path.join(meta, "lock")
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{meta} is locked by another command (remove {path} if stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        os.unlink(path)


def _p(meta, name):
    return os.path.join(meta, name)


def load_config(meta: str) -> dict:
    try:
        with open(_p(meta, "config.json")) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{meta} has no config.json; run ingest first")


def load_relation(meta: str) -> PartitionedRelation:
    cfg = load_config(meta)
    with open(_p(meta, "relation.csv"), encoding="utf-8", newline="") as fh:
        rows = from_csv(fh.read())
    return partition_relation(rows, cfg["attribute"])


def load_layout(meta: str) -> BinLayout:
    try:
        with open(_p(meta, "layout.json")) as fh:
            return BinLayout.from_json(fh.read())
    except FileNotFoundError:
        raise UsageError(f"{meta} has no layout.json; run bin first")


def load_owner(meta: str, key_path: str) -> Owner:
    layout = load_layout(meta)
    try:
        with open(_p(meta, "owner.json")) as fh:
            state = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{meta} has no owner.json; run outsource first")
    return Owner.from_state(OwnerKey.load(key_path), layout, state)


def save_owner(meta: str, owner: Owner) -> None:
    write_atomic(_p(meta, "layout.json"), owner.layout.to_json())
    write_atomic(_p(meta, "owner.json"), json.dumps(owner.state(), indent=1, sort_keys=True))


def load_store(path: str) -> CloudStore:
    if not os.path.exists(os.path.join(path, "manifest")):
        raise UsageError(f"{path} is not a store directory")
    return CloudStore.load(path)


def _parse_pred(text: str):
    col, sep, val = text.partition("=")
    if not sep:
        raise ConfigError("predicate must look like COLUMN=VALUE")
    return lambda row: row.get(col) == val


def _read_rows(path, sens_col, sens_pred):
    if sens_col:
        return ingest_csv(path, sensitivity=sens_col)
    if sens_pred:
        return ingest_csv(path, sensitivity=_parse_pred(sens_pred))
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
    if "__sensitive__" in header:
        return ingest_csv(path, sensitivity="__sensitive__", id_column="tuple_id")
    raise ConfigError("give --sens-col or --sens-pred")


def _print_rows(rows, out=None):
    out = out or sys.stdout
    for r in rows:
        out.write(json.dumps({"tuple_id": r.tuple_id, **r.as_dict()}) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_gen(a):
    rows = (lineitem if a.table == "lineitem" else orders)(a.rows, a.sensitivity / 100, a.seed)
    text = to_csv(rows)
    if a.out == "-":
        sys.stdout.write(text)
    else:
        write_atomic(a.out, text)
        print(f"wrote {len(rows)} rows to {a.out}")


def cmd_ingest(a):
    rows = _read_rows(a.csv, a.sens_col, a.sens_pred)
    part = partition_relation(rows, a.attr)
    with locked(a.meta):
        write_atomic(_p(a.meta, "relation.csv"), to_csv(rows))
        write_atomic(_p(a.meta, "config.json"), json.dumps({"attribute": a.attr}, indent=1))
    h = part.histogram()
    print(f"ingested {len(rows)} rows: {len(part.sensitive_tuples)} sensitive, "
          f"{len(part.nonsensitive_tuples)} non-sensitive, {len(h)} distinct values")


def _bin(meta, mode, seed, frequent, pad, exact) -> BinLayout:
    part = load_relation(meta)
    return binning.bin_relation(part, mode=mode, seed=seed, frequent=frequent, pad=pad,
                                exact=exact)


def _outsource(meta, layout, store_dir, key_path, new_key) -> tuple[CloudStore, Owner]:
    part = load_relation(meta)
    if new_key or not os.path.exists(key_path):
        OwnerKey().save(key_path)
    key = OwnerKey.load(key_path)
    store = CloudStore()
    store, owner = outsource(layout, part, key, store)
    h = part.histogram()
    owner.baseline = binning.mean_query_cost(
        layout, dict(owner.real_counts), {v: h.nonsensitive(v) for v in h.nonsensitive_values()})
    if os.path.exists(store_dir):
        shutil.rmtree(store_dir)
    store.save(store_dir)
    key.save(key_path)
    save_owner(meta, owner)
    return store, owner


def cmd_bin(a):
    seed = None if a.identity else (a.seed if a.seed is not None else secrets.randbits(63))
    frequent = [v for v in (a.frequent or "").split(",") if v]
    with locked(a.meta):
        layout = _bin(a.meta, a.mode, seed, frequent, not a.no_pad, a.exact)
        cfg = load_config(a.meta)
        cfg["mode"], cfg["frequent"] = a.mode, frequent
        write_atomic(_p(a.meta, "config.json"), json.dumps(cfg, indent=1))
        if a.rebin:
            if not (a.store and a.key):
                raise UsageError("--rebin needs --store and --key")
            _outsource(a.meta, layout, a.store, a.key, new_key=True)
            print("re-binned and re-outsourced with a fresh key")
        else:
            write_atomic(_p(a.meta, "layout.json"), layout.to_json())
    print(f"layout {layout.version}: {layout.num_sb} sensitive bins (<= {layout.s_capacity}), "
          f"{layout.num_nsb} non-sensitive bins (<= {layout.ns_capacity}), "
          f"{layout.fake_tuple_total()} fake tuples")


def cmd_outsource(a):
    with locked(a.meta):
        layout = load_layout(a.meta)
        store, owner = _outsource(a.meta, layout, a.store, a.key, a.new_key)
    print(f"store {store.store_id}: {store.sensitive_count()} encrypted, "
          f"{store.nonsensitive_count()} cleartext tuples")


def _check_attr(meta, attr):
    cfg = load_config(meta)
    if attr and attr != cfg["attribute"]:
        raise UsageError(f"layout is built on {cfg['attribute']!r}, not {attr!r}")


def cmd_query(a):
    with locked(a.meta):
        _check_attr(a.meta, a.attr)
        owner = load_owner(a.meta, a.key)
        store = load_store(a.store)
        before = len(store.adversarial_view_log())
        res = retrieval.select(owner, store, a.value)
        if res.fetched:
            owner.overhead_history.append(res.fetched)
        store.save(a.store)
        save_owner(a.meta, owner)
    _print_rows(res.rows)
    print(f"# {len(res.rows)} rows; fetched {res.sensitive_fetched} encrypted + "
          f"{res.nonsensitive_fetched} cleartext tuples", file=sys.stderr)
    if a.show_av:
        for e in store.adversarial_view_log()[before:]:
            print("# AV " + e.to_json(), file=sys.stderr)


def _range_tree(meta, part, numeric):
    cfg = load_config(meta)
    key = (lambda v: float(v)) if numeric else None
    return rangetree.range_tree_for(part, key=key, seed=cfg.get("range_seed"))


def cmd_range(a):
    with locked(a.meta):
        _check_attr(a.meta, a.attr)
        cfg = load_config(a.meta)
        if "range_seed" not in cfg:
            cfg["range_seed"] = secrets.randbits(63)
            write_atomic(_p(a.meta, "config.json"), json.dumps(cfg, indent=1))
        part = load_relation(a.meta)
        tree = _range_tree(a.meta, part, a.numeric)
        owner = load_owner(a.meta, a.key)
        store = load_store(a.store)
        if a.strategy == "best":
            plan = rangetree.plan_range_best_match(tree, a.lo, a.hi, a.allow_full_scan)
        else:
            plan = rangetree.plan_range_least_match(tree, a.lo, a.hi)
        res = rangetree.execute_range(plan, tree, store, owner)
        store.save(a.store)
    _print_rows(res.rows)
    print(f"# {len(res.rows)} rows; {len(plan.sub_plans)} node(s), {len(plan.fetches)} bin "
          f"fetches, {res.fetched} tuples retrieved", file=sys.stderr)


def cmd_join(a):
    pk, _, ck = a.key.partition(":")
    R = partition_relation(_read_rows(a.parent, a.sens_col, a.sens_pred), pk)
    S = partition_relation(_read_rows(a.child, a.sens_col, a.sens_pred), ck or pk)
    jp = build_join_relations(R, S, pk, ck or None, non_fk=a.non_fk)
    store, owner = outsource_join(jp, OwnerKey())
    out = execute_join(jp, store, owner, a.select)
    for j in out:
        print(json.dumps({"parent": j.parent.tuple_id, "child": j.child.tuple_id,
                          "source": j.source, **{f"p.{k}": v for k, v in j.parent.attrs},
                          **{f"c.{k}": v for k, v in j.child.attrs}}))
    print(f"# {len(out)} joined tuples; pseudo-sensitive keys: {sorted(jp.pseudo_keys)}",
          file=sys.stderr)


def cmd_insert(a):
    rows = _read_rows(a.csv, a.sens_col, a.sens_pred)
    with locked(a.meta):
        part = load_relation(a.meta)
        clash = {r.tuple_id for r in part.rows} & {r.tuple_id for r in rows}
        if clash:
            raise IntegrityError(f"{len(clash)} tuple id(s) already exist, e.g. {min(clash)}")
        owner = load_owner(a.meta, a.key)
        store = load_store(a.store)
        plan = owner.insert_rows(store, rows)
        store.save(a.store)
        write_atomic(_p(a.meta, "relation.csv"), to_csv(part.rows + list(rows)))
        save_owner(a.meta, owner)
    print(f"inserted {len(rows)} rows; layout grew by {plan.rounds} round(s), "
          f"{len(plan.fake_values)} fake value(s)")


def cmd_audit(a):
    store = load_store(a.store)
    log = store.adversarial_view_log()
    checks = [c for c in a.checks.split(",") if c]
    profile = [v for v in (a.frequent or "").split(",") if v] or None
    rep = auditor.run_audit(log, checks, tuple(store.bin_counts) or None, profile, a.skew_ratio)
    text = json.dumps(rep.to_dict(), indent=1, default=str)
    report = a.report or os.path.join(a.store, "audit-report.json")
    write_atomic(report, text)
    print(f"audit {'PASSED' if rep.passed else 'FAILED'} ({', '.join(checks)}); report: {report}")
    return EXIT_OK if rep.passed else EXIT_AUDIT


def cmd_stats(a):
    owner = load_owner(a.meta, a.key)
    part = load_relation(a.meta)
    h = part.histogram()
    ns_counts = {v: h.nonsensitive(v) for v in h.nonsensitive_values()}
    current = binning.mean_query_cost(owner.layout, dict(owner.real_counts), ns_counts)
    hist = owner.overhead_history
    base = owner.baseline or current
    stats = {
        "layout_version": owner.layout.version,
        "sensitive_bins": owner.layout.num_sb, "nonsensitive_bins": owner.layout.num_nsb,
        "fake_tuples": owner.layout.fake_tuple_total(),
        "expected_tuples_per_query": round(current, 3),
        "baseline_tuples_per_query": round(base, 3),
        "queries_recorded": len(hist),
        "mean_retrieved_per_query": round(sum(hist) / len(hist), 3) if hist else None,
        "rebin_recommended": binning.should_rebin([current], a.threshold, base),
    }
    if a.store:
        store = load_store(a.store)
        stats["store_layout_version"] = store.layout_version
        stats["encrypted_tuples"] = store.sensitive_count()
        stats["av_entries"] = len(store.adversarial_view_log())
    print(json.dumps(stats, indent=1))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qbin", description="Query binning over partitioned relations")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def meta(sp, store=False, key=False):
        sp.add_argument("--meta", required=True, help="owner metadata directory")
        if store:
            sp.add_argument("--store", required=True, help="store directory")
        if key:
            sp.add_argument("--key", required=True, help="owner key file")

    def sens(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--sens-col", help="0/1 column holding the sensitivity flag")
        g.add_argument("--sens-pred", help="COLUMN=VALUE marks matching rows sensitive")

    s = sub.add_parser("gen", help="write a synthetic TPC-H-like table")
    s.add_argument("--table", choices=("lineitem", "orders"), default="lineitem")
    s.add_argument("--rows", type=int, default=1000)
    s.add_argument("--sensitivity", type=float, default=20.0, help="percent of sensitive rows")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="-")
    s.set_defaults(fn=cmd_gen)

    s = sub.add_parser("ingest", help="load a CSV relation into the metadata directory")
    meta(s)
    s.add_argument("--csv", required=True)
    s.add_argument("--attr", required=True, help="search attribute")
    sens(s)
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("bin", help="build the bin layout")
    meta(s)
    s.add_argument("--mode", choices=binning.MODES, default="base")
    s.add_argument("--seed", type=int)
    s.add_argument("--identity", action="store_true", help="keep input order (no permutation)")
    s.add_argument("--frequent", help="comma-separated frequent values (workload mode)")
    s.add_argument("--no-pad", action="store_true", help="skip fake-tuple padding")
    s.add_argument("--exact", action="store_true", help="exhaustive multiplicity assignment")
    s.add_argument("--rebin", action="store_true", help="re-bin and re-outsource")
    s.add_argument("--store")
    s.add_argument("--key")
    s.set_defaults(fn=cmd_bin)

    s = sub.add_parser("outsource", help="encrypt and upload to a store directory")
    meta(s, store=True, key=True)
    s.add_argument("--new-key", action="store_true")
    s.set_defaults(fn=cmd_outsource)

    s = sub.add_parser("query", help="binned selection A = value")
    meta(s, store=True, key=True)
    s.add_argument("--attr")
    s.add_argument("--value", required=True)
    s.add_argument("--show-av", action="store_true")
    s.set_defaults(fn=cmd_query)

    s = sub.add_parser("range", help="binned range selection")
    meta(s, store=True, key=True)
    s.add_argument("--attr")
    s.add_argument("--from", dest="lo", required=True)
    s.add_argument("--to", dest="hi", required=True)
    s.add_argument("--strategy", choices=("best", "least"), default="least")
    s.add_argument("--allow-full-scan", action="store_true")
    s.add_argument("--numeric", action="store_true", help="order values numerically")
    s.set_defaults(fn=cmd_range)

    s = sub.add_parser("join", help="parent/child join of two CSV relations")
    s.add_argument("--parent", required=True)
    s.add_argument("--child", required=True)
    s.add_argument("--key", required=True, help="KEY or PARENTKEY:CHILDKEY")
    s.add_argument("--select")
    s.add_argument("--non-fk", action="store_true")
    sens(s)
    s.set_defaults(fn=cmd_join)

    s = sub.add_parser("insert", help="outsource new rows")
    meta(s, store=True, key=True)
    s.add_argument("--csv", required=True)
    sens(s)
    s.set_defaults(fn=cmd_insert)

    s = sub.add_parser("audit", help="audit the adversarial view of a store")
    s.add_argument("--store", required=True)
    s.add_argument("--checks", default=",".join(auditor.CHECKS))
    s.add_argument("--frequent")
    s.add_argument("--skew-ratio", type=float, default=2.0)
    s.add_argument("--report")
    s.set_defaults(fn=cmd_audit)

    s = sub.add_parser("stats", help="cost, padding and re-binning summary")
    meta(s, key=True)
    s.add_argument("--store")
    s.add_argument("--threshold", type=float, default=1.2)
    s.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        rc = a.fn(a)
        return rc or EXIT_OK
    except (UsageError, ConfigError, SchemaError, BestMatchTooWide, FileNotFoundError) as e:
        print(f"qbin: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrityError, ConstraintError, KeyReuseError) as e:
        print(f"qbin: integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except QBinError as e:
        print(f"qbin: {e}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
