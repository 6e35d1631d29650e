"""
Auditing what the cloud observed
================================

After every value has been queried once, the auditor rebuilds the graph of
which encrypted bins were seen together with which cleartext bins. A correct
strategy links every pair; a strategy that follows associations too closely
leaves gaps.
"""

from qbin.auditor import (allocation_probability, build_surviving_match_graph,
                          check_full_bipartite, deviant_pair, sweep_values)
from qbin.binning import bin_relation
from qbin.crypto import OwnerKey
from qbin.owner import outsource
from qbin.partition import TupleRecord, partition_relation
from qbin.retrieval import execute_plan, plan_bins, select

S = [f"v{k}" for k in range(1, 11)]
NS = [f"v{k}" for k in (1, 2, 3, 5, 6, 11, 12, 13, 14, 15)]
rows = [TupleRecord.make(f"s{i}", {"A": v}, True) for i, v in enumerate(S)]
rows += [TupleRecord.make(f"n{i}", {"A": v}, False) for i, v in enumerate(NS)]
part = partition_relation(rows, "A")


def audit(store, layout):
    g = build_surviving_match_graph(store.adversarial_view_log())
    return check_full_bipartite(g, (layout.num_sb, layout.num_nsb))


store, owner = outsource(bin_relation(part, pad=False), part, OwnerKey())
for w in sweep_values(owner.layout):
    select(owner, store, w)
print("correct strategy:", audit(store, owner.layout))

store, owner = outsource(bin_relation(part, pad=False), part, OwnerKey())
shared = set(S) & set(NS)
for w in sweep_values(owner.layout):
    sb, nsb = deviant_pair(owner.layout, w, shared)
    execute_plan(plan_bins(owner.layout, w, sb, nsb), store, owner)
ok, dropped = audit(store, owner.layout)
print("deviant strategy:", ok, "missing links:", dropped)

# with four values per side, one query over two bins leaves each guess at 1/4
print("P(E1 -> v1) =", allocation_probability(4, (0, 2), (0, 1)))
