"""
Selecting over a partitioned relation
=====================================

A small employee table is split into an encrypted part and a cleartext part,
binned, and queried. Each query fetches one sensitive bin and one
non-sensitive bin, no matter which value is asked for.
"""

from qbin.binning import create_bins_base
from qbin.crypto import OwnerKey
from qbin.owner import outsource
from qbin.partition import TupleRecord, partition_relation
from qbin.retrieval import select

schema = ("EId", "FirstName", "Department")
raw = [
    ("t1", "E101", "Adam", "Defense"),
    ("t2", "E259", "John", "Design"),
    ("t3", "E199", "Eve", "Design"),
    ("t4", "E259", "John", "Defense"),
    ("t5", "E152", "Clark", "Defense"),
    ("t6", "E254", "David", "Design"),
    ("t7", "E159", "Lisa", "Defense"),
    ("t8", "E152", "Clark", "Design"),
]
rows = [TupleRecord.make(t, zip(schema, rest), rest[-1] == "Defense") for t, *rest in raw]
part = partition_relation(rows, "EId")
print("sensitive:", [r.tuple_id for r in part.sensitive_tuples])
print("cleartext:", [r.tuple_id for r in part.nonsensitive_tuples])

# build the bins from the distinct values of each side
h = part.histogram()
layout = create_bins_base(h.sensitive_values(), h.nonsensitive_values(), seed=7)
print("sensitive bins:    ", layout.sensitive_bins)
print("non-sensitive bins:", layout.nonsensitive_bins)

store, owner = outsource(layout, part, OwnerKey())

for w in ("E259", "E101", "E199"):
    res = select(owner, store, w)
    print(f"{w}: {sorted(res.ids())}  fetched {res.sensitive_fetched} encrypted, "
          f"{res.nonsensitive_fetched} clear")

# what the cloud saw: request sets, never plaintext sensitive values
for e in store.adversarial_view_log():
    print(e.query_seq, e.side, len(e.request), "requested ->", len(e.returned_ids), "returned")
