"""
Joining a parent and a child table
==================================

Parent keys that occur both in encrypted and cleartext children are copied
into the encrypted side, so the join splits cleanly into an encrypted half
and a cleartext half.
"""

from qbin.crypto import OwnerKey
from qbin.join import build_join_relations, execute_join, outsource_join
from qbin.partition import TupleRecord, partition_relation

R = [TupleRecord.make("r1", {"EID": "E101", "Name": "Adam"}, True),
     TupleRecord.make("r2", {"EID": "E102", "Name": "Bob"}, False),
     TupleRecord.make("r3", {"EID": "E103", "Name": "John"}, False)]
S = [TupleRecord.make("t1", {"EID": "E101", "Project": "Security"}, True),
     TupleRecord.make("t2", {"EID": "E102", "Project": "Design"}, True),
     TupleRecord.make("t3", {"EID": "E103", "Project": "Code"}, False),
     TupleRecord.make("t4", {"EID": "E103", "Project": "Sale"}, False),
     TupleRecord.make("t5", {"EID": "E102", "Project": "Sale"}, False)]

part = build_join_relations(partition_relation(R, "EID"), partition_relation(S, "EID"), "EID")
print("keys copied to the encrypted side:", sorted(part.pseudo_keys))

store, owner = outsource_join(part, OwnerKey())
for j in execute_join(part, store, owner):
    print(j.ids, j.source)
