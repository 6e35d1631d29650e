"""Synthetic TPC-H-like tables at desk scale."""

from __future__ import annotations

import random

from .partition import TupleRecord

LINEITEM_SCHEMA = ("l_orderkey", "l_partkey", "l_suppkey", "l_linenumber", "l_quantity",
                   "l_extendedprice", "l_discount", "l_shipmode")
ORDERS_SCHEMA = ("o_orderkey", "o_custkey", "o_orderstatus", "o_totalprice", "o_orderpriority")
_MODES = ("AIR", "FOB", "MAIL", "RAIL", "REG AIR", "SHIP", "TRUCK")


def lineitem(rows: int, sensitivity: float = 0.2, seed: int = 0) -> list[TupleRecord]:
    """LineItem-shaped rows; each row is sensitive with probability ``sensitivity``.

    Orders carry 1 to 7 line items, as in TPC-H.
    """
    if not 0 <= sensitivity <= 1:
        raise ValueError("sensitivity must be in [0, 1]")
    rng = random.Random(seed)
    out: list[TupleRecord] = []
    order = 0
    while len(out) < rows:
        order += 1
        for line in range(1, rng.randint(1, 7) + 1):
            if len(out) >= rows:
                break
            qty = rng.randint(1, 50)
            out.append(TupleRecord.make(len(out) + 1, zip(LINEITEM_SCHEMA, (
                order, rng.randint(1, 20000), rng.randint(1, 1000), line, qty,
                f"{qty * rng.uniform(900, 2000):.2f}", f"{rng.randint(0, 10) / 100:.2f}",
                rng.choice(_MODES))), rng.random() < sensitivity))
    return out


def orders(rows: int, sensitivity: float = 0.2, seed: int = 0) -> list[TupleRecord]:
    rng = random.Random(seed)
    return [TupleRecord.make(k, zip(ORDERS_SCHEMA, (
        k, rng.randint(1, 15000), rng.choice("FOP"), f"{rng.uniform(1000, 500000):.2f}",
        rng.choice(("1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW")))),
        rng.random() < sensitivity) for k in range(1, rows + 1)]
