"""
Range queries over a binned tree
================================

Sixteen values are arranged as leaves of a binary tree. Lower levels are
binned, and additional nodes straddle sibling boundaries so that a range can
often be answered with fewer fetched tuples.
"""

from qbin.binning import bin_relation
from qbin.crypto import OwnerKey
from qbin.owner import outsource
from qbin.partition import TupleRecord, partition_relation
from qbin.rangetree import execute_range, plan_range_least_match, range_tree_for

rows = [TupleRecord.make(f"s{k}", {"A": f"v{k:02d}"}, True) for k in range(1, 17)]
rows += [TupleRecord.make(f"n{k}", {"A": f"v{k:02d}"}, False) for k in range(1, 17)]
part = partition_relation(rows, "A")
store, owner = outsource(bin_relation(part, seed=3), part, OwnerKey())
tree = range_tree_for(part, seed=3)
print("height", tree.height, "binned levels", tree.binned_levels)

for use_add in (True, False):
    plan = plan_range_least_match(tree, "v04", "v07", use_additional=use_add)
    names = [s.node.name for s in plan.sub_plans]
    print(f"additional nodes={use_add}: {names}, {tree.plan_cost(plan)} tuples fetched")

res = execute_range(plan_range_least_match(tree, "v04", "v07"), tree, store, owner)
print("answer:", sorted(res.ids()))
