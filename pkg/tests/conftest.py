from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qbin.partition import TupleRecord, partition_relation  # noqa: E402

EMPLOYEE_SCHEMA = ("EId", "FirstName", "LastName", "Office", "Department")
EMPLOYEE = [
    ("t1", "E101", "Adam", "Smith", "1", "Defense"),
    ("t2", "E259", "John", "Williams", "2", "Design"),
    ("t3", "E199", "Eve", "Smith", "2", "Design"),
    ("t4", "E259", "John", "Williams", "6", "Defense"),
    ("t5", "E152", "Clark", "Cook", "1", "Defense"),
    ("t6", "E254", "David", "Watts", "4", "Design"),
    ("t7", "E159", "Lisa", "Ross", "2", "Defense"),
    ("t8", "E152", "Clark", "Cook", "3", "Design"),
]

# Sensitive bins of the 10 + 10 layout as listed, slot order preserved.
FIG_SB = [("s5", "s10"), ("s1", "s6"), ("s2", "s7"), ("s3", "s8"), ("s4", "s9")]
FIG_NSB = [("ns5", "ns1", "ns2", "ns3", "ns11"), ("ns12", "ns6", "ns13", "ns14", "ns15")]

ACCEPTANCE: list[tuple[str, bool, str]] = []


def employee_rows():
    return [TupleRecord.make(t, zip(EMPLOYEE_SCHEMA, rest), rest[-1] == "Defense")
            for t, *rest in EMPLOYEE]


def employee_sets():
    """Value lists in the order that reproduces the worked bins."""
    return ["E259", "E159", "E101", "E152"], ["E259", "E152", "E254", "E199"]


def records(triples, attr="A"):
    return [TupleRecord.make(t, {attr: v, "payload": f"p{t}"}, s) for t, v, s in triples]


def ten_by_ten():
    """Ten values per side; s1-s3, s5 and s6 have cleartext associates."""
    S = [f"s{k}" for k in range(1, 11)]
    NS = ["ns1", "ns2", "ns3", "ns5", "ns6"] + [f"ns{k}" for k in range(11, 16)]
    assoc = {f"s{k}": f"ns{k}" for k in (1, 2, 3, 5, 6)}
    return S, NS, assoc


def ten_by_ten_relation(attr="A"):
    """The same instance as a relation: one tuple per value, shared names."""
    S = [f"v{k}" for k in range(1, 11)]
    NS = [f"v{k}" for k in (1, 2, 3, 5, 6, 11, 12, 13, 14, 15)]
    triples = [(str(i), v, True) for i, v in enumerate(S, 1)]
    triples += [(str(i), v, False) for i, v in enumerate(NS, 11)]
    return partition_relation(records(triples, attr), attr)


@pytest.fixture
def employee():
    return partition_relation(employee_rows(), "EId")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
