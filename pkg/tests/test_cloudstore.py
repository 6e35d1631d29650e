import os
import stat

import pytest

from conftest import employee_sets
from qbin.binning import create_bins_base
from qbin.cloudstore import AVEntry, CloudStore, EncryptedTuple, read_av_log
from qbin.crypto import OwnerKey
from qbin.errors import IntegrityError, KeyReuseError, ProtocolError, TamperError
from qbin.owner import outsource
from qbin.retrieval import select


@pytest.fixture
def key():
    return OwnerKey()


def test_reencryption_is_randomized(key):
    blobs = {key.encrypt(b"t1,E101,Adam", b"R") for _ in range(1000)}
    assert len(blobs) == 1000


def test_every_bit_flip_is_detected(key):
    blob = key.encrypt(b"payload", b"R")
    for bit in range(len(blob) * 8):
        bad = bytearray(blob)
        bad[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(TamperError):
            key.decrypt(bytes(bad), b"R")


def test_wrong_table_binding_detected(key):
    with pytest.raises(TamperError):
        key.decrypt(key.encrypt(b"x", b"R"), b"S")


def test_short_ciphertext(key):
    with pytest.raises(TamperError):
        key.decrypt(b"abc")


def test_tokens(key):
    a = key.token("EId", "E152", 1)
    assert a == key.token("EId", "E152", 1)
    assert a != key.token("EId", "E152", 2)
    assert a != OwnerKey().token("EId", "E152", 1)
    # length framing keeps field boundaries apart
    assert key.token("ab", "c", 1) != key.token("a", "bc", 1)


def test_key_bound_to_one_store(key):
    key.bind("one")
    key.bind("one")
    with pytest.raises(KeyReuseError):
        key.bind("two")


def test_key_file_round_trip(tmp_path, key):
    p = tmp_path / "k.key"
    key.bind("st")
    key.save(p)
    assert stat.S_IMODE(os.stat(p).st_mode) == 0o600
    again = OwnerKey.load(p)
    assert again.fingerprint == key.fingerprint and again.bound_store == "st"
    assert again.decrypt(key.encrypt(b"m")) == b"m"


def employee_store(employee, key):
    S, NS = employee_sets()
    return outsource(create_bins_base(S, NS), employee, key)


def test_employee_ciphertexts_distinct(employee, key):
    store, owner = employee_store(employee, key)
    blobs = [store.raw_record(i) for i in range(store.sensitive_count())]
    assert len(blobs) == 4 and len(set(blobs)) == 4
    assert owner.occurrences["E152"] == 1
    toks = owner.tokens_for(["E152"])
    assert len(toks) == 1


def test_repeated_value_gets_distinct_tokens(key):
    from qbin.partition import TupleRecord, partition_relation
    rows = [TupleRecord.make(i, {"A": "E152"}, True) for i in range(2)]
    rows.append(TupleRecord.make(9, {"A": "x"}, False))
    part = partition_relation(rows, "A")
    _, owner = outsource(create_bins_base(["E152"], ["x"], {}), part, key)
    a, b = owner.tokens_for(["E152"])
    assert a != b


def test_stored_record_corruption_surfaces(employee, key):
    store, owner = employee_store(employee, key)
    for rid in range(store.sensitive_count()):
        store.corrupt_record(rid, 100)
    with pytest.raises(TamperError):
        select(owner, store, "E259")


def test_malformed_token_rejected_and_logged():
    store = CloudStore()
    with pytest.raises(ProtocolError):
        store.fetch_sensitive([b"short"])
    (e,) = store.adversarial_view_log()
    assert e.kind == "rejected" and e.returned_ids == ()


def test_round_commits_atomically():
    store = CloudStore()
    store.put_sensitive([EncryptedTuple(b"c" * 40, (b"t" * 32,))])
    with store.round() as rnd:
        store.fetch_sensitive([b"t" * 32], rnd=rnd)
        assert store.adversarial_view_log() == []
        store.fetch_nonsensitive(["v"], rnd=rnd)
    log = store.adversarial_view_log()
    assert [e.side for e in log] == ["sensitive", "nonsensitive"]
    assert {e.query_seq for e in log} == {1}
    assert log[0].returned_ids == ("0",)


def test_duplicate_token_rejected():
    store = CloudStore()
    tok = b"t" * 32
    with pytest.raises(IntegrityError):
        store.put_sensitive([EncryptedTuple(b"a", (tok,)), EncryptedTuple(b"b", (tok,))])


def test_save_load_round_trip(tmp_path, employee, key):
    store, owner = employee_store(employee, key)
    select(owner, store, "E259")
    store.save(tmp_path)
    select(owner, store, "E101")
    store.save(tmp_path)
    again = CloudStore.load(tmp_path)
    assert again.store_id == store.store_id
    assert again.layout_version == store.layout_version
    assert again.adversarial_view_log() == store.adversarial_view_log()
    assert read_av_log(tmp_path / "av.log") == store.adversarial_view_log()
    assert select(owner, again, "E259").ids() == {"t2", "t4"}
    # the key never reaches the store directory
    master = key._master.hex()
    for f in os.listdir(tmp_path):
        assert master.encode() not in (tmp_path / f).read_bytes()


def test_truncated_log_detected(tmp_path, employee, key):
    store, owner = employee_store(employee, key)
    select(owner, store, "E259")
    store.save(tmp_path)
    p = tmp_path / "av.log"
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(IntegrityError):
        CloudStore.load(tmp_path)


def test_manifest_count_mismatch(tmp_path, employee, key):
    store, _ = employee_store(employee, key)
    store.save(tmp_path)
    p = tmp_path / "sensitive.bin"
    data = p.read_bytes()
    n = int.from_bytes(data[:4], "big")
    p.write_bytes(data[4 + n:])
    with pytest.raises(IntegrityError):
        CloudStore.load(tmp_path)


def test_av_entry_json():
    e = AVEntry(3, "sensitive", ("ab",), ("1", "2"), "R", "range")
    assert AVEntry.from_json(e.to_json()) == e
