import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import nested_loop_join
from qbin.crypto import OwnerKey
from qbin.errors import ConstraintError
from qbin.join import (build_join_relations, compute_pseudo_sensitive_keys, execute_join,
                       outsource_join)
from qbin.partition import TupleRecord, partition_relation


def employee_project():
    R = [TupleRecord.make("r1", {"EID": "E101", "Name": "Adam"}, True),
         TupleRecord.make("r2", {"EID": "E102", "Name": "Bob"}, False),
         TupleRecord.make("r3", {"EID": "E103", "Name": "John"}, False)]
    S = [TupleRecord.make("t1", {"EeID": "E101", "Project": "Security"}, True),
         TupleRecord.make("t2", {"EeID": "E102", "Project": "Design"}, True),
         TupleRecord.make("t3", {"EeID": "E103", "Project": "Code"}, False),
         TupleRecord.make("t4", {"EeID": "E103", "Project": "Sale"}, False),
         TupleRecord.make("t5", {"EeID": "E102", "Project": "Sale"}, False)]
    return R, S


def split(R, S, **kw):
    return build_join_relations(partition_relation(R, "EID"), partition_relation(S, "EeID"),
                                "EID", "EeID", **kw)


def run_join(part, select=None):
    store, owner = outsource_join(part, OwnerKey())
    return execute_join(part, store, owner, select), store


def test_pseudo_keys():
    part = split(*employee_project())
    assert part.pseudo_keys == {"E102"}
    assert sorted(r.tuple_id for r in part.R_ps) == ["r1", "r2"]
    assert sorted(r.tuple_id for r in part.R_ns) == ["r2", "r3"]
    assert sorted(t.tuple_id for t in part.S_s) == ["t1", "t2"]
    assert sorted(t.tuple_id for t in part.S_ns) == ["t3", "t4", "t5"]


def test_compute_keys_trivial():
    R, S = employee_project()
    assert compute_pseudo_sensitive_keys(R[1:], [], "EID", "EeID") == frozenset()
    assert compute_pseudo_sensitive_keys(R[1:2], S[2:4], "EID", "EeID") == frozenset()


def test_worked_join_matches_oracle():
    R, S = employee_project()
    out, _ = run_join(split(R, S))
    assert [j.ids for j in out] == [("r1", "t1"), ("r2", "t2"), ("r2", "t5"),
                                    ("r3", "t3"), ("r3", "t4")]
    assert sorted(j.ids for j in out) == nested_loop_join(R, S, "EID", "EeID")
    src = {j.ids: j.source for j in out}
    assert src[("r1", "t1")] == src[("r2", "t2")] == "encrypted"
    assert {src[k] for k in [("r2", "t5"), ("r3", "t3"), ("r3", "t4")]} == {"clear"}


def test_join_then_select():
    out, _ = run_join(split(*employee_project()), select="E103")
    assert [j.ids for j in out] == [("r3", "t3"), ("r3", "t4")]


def test_empty_child():
    R, _ = employee_project()
    out, _ = run_join(split(R, []))
    assert out == []


def test_all_cleartext():
    R, S = employee_project()
    R = [replace(r, sensitive=False) for r in R]
    S = [replace(t, sensitive=False) for t in S]
    part = split(R, S)
    assert part.R_ps == ()
    out, store = run_join(part)
    assert sorted(j.ids for j in out) == nested_loop_join(R, S, "EID", "EeID")
    assert {j.source for j in out} == {"clear"}


def test_constraint_violation_names_keys():
    R, S = employee_project()
    S[0] = replace(S[0], sensitive=False)
    with pytest.raises(ConstraintError, match="E101"):
        split(R, S)


def test_non_fk_mode_handles_violation():
    R, S = employee_project()
    S[0] = replace(S[0], sensitive=False)
    part = split(R, S, non_fk=True)
    assert {t.tuple_id for t in part.S_ps} == {"t1"}
    out, _ = run_join(part)
    assert sorted(j.ids for j in out) == nested_loop_join(R, S, "EID", "EeID")


def fk_instance(rng, n_parent=None):
    n = n_parent or rng.randint(1, 30)
    R = [TupleRecord.make(f"r{k}", {"K": f"k{k}", "x": k}, rng.random() < 0.3) for k in range(n)]
    S = []
    for k in range(rng.randint(0, 60)):
        p = rng.choice(R)
        sens = True if p.sensitive else rng.random() < 0.3
        S.append(TupleRecord.make(f"c{k}", {"K": p.get("K"), "y": k}, sens))
    # a few dangling children
    for k in range(rng.randint(0, 3)):
        S.append(TupleRecord.make(f"d{k}", {"K": f"zz{k}", "y": k}, rng.random() < 0.5))
    return R, S


def join_ids(R, S, **kw):
    part = build_join_relations(partition_relation(R, "K"), partition_relation(S, "K"), "K", **kw)
    out, _ = run_join(part)
    return part, out


def test_fk_join_equivalence_seeded():
    rng = random.Random(3)
    for _ in range(25):
        R, S = fk_instance(rng)
        _, out = join_ids(R, S)
        assert sorted(j.ids for j in out) == nested_loop_join(R, S, "K", "K")
        assert len(out) == len({j.ids for j in out})


@given(st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_non_fk_join_equivalence(seed):
    rng = random.Random(seed)
    keys = [f"k{k}" for k in range(rng.randint(1, 6))]
    R = [TupleRecord.make(f"r{i}", {"K": rng.choice(keys)}, rng.random() < 0.4)
         for i in range(rng.randint(0, 10))]
    S = [TupleRecord.make(f"c{i}", {"K": rng.choice(keys)}, rng.random() < 0.4)
         for i in range(rng.randint(0, 10))]
    _, out = join_ids(R, S, non_fk=True)
    assert sorted(j.ids for j in out) == nested_loop_join(R, S, "K", "K")


def test_removing_a_pseudo_key_breaks_equivalence():
    rng = random.Random(5)
    checked = 0
    for _ in range(30):
        R, S = fk_instance(rng)
        part = build_join_relations(partition_relation(R, "K"), partition_relation(S, "K"), "K")
        truth = nested_loop_join(R, S, "K", "K")
        for k in part.pseudo_keys:
            broken = replace(part, pseudo_keys=part.pseudo_keys - {k},
                             R_ps=tuple(r for r in part.R_ps if r.sensitive or r.get("K") != k))
            out, _ = run_join(broken)
            assert sorted(j.ids for j in out) != truth
            checked += 1
    assert checked > 0


def test_join_av_is_scans_only():
    _, store = run_join(split(*employee_project()))
    log = store.adversarial_view_log()
    assert {e.kind for e in log} == {"scan"} and len({e.query_seq for e in log}) == 1
