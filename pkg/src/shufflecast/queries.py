"""The supported query suite: Q1, Q3, Q6, Q12, Q14, Q19.

Each query is a single plan function written against the executor context
(`q`), which supplies partitioned base tables, local relational
primitives, and the exchange operators.  The same function runs
distributed (real exchanges, instrumentation) and as the single-context
reference (exchanges degenerate to identity), so any divergence between
the two is a bug in the exchange machinery, not in the plan.

The subset covers the interesting plan shapes: exchange-free aggregation
(Q1, Q6), broadcast joins (Q3, Q19), a shuffle join (Q14), and a
co-partitioned local join with alternative plans Pa (shuffle both sides)
and Pb (broadcast the filtered side) for Q12.
"""

from __future__ import annotations

import numpy as np

from .table import ColumnTable, date_to_days, dict_col, float64_col, int64_col


def _codes_where(table: ColumnTable, name: str, pred) -> np.ndarray:
    """Mask of rows whose dict value satisfies a string predicate."""
    col = table.column(name)
    wanted = np.asarray(
        [i for i, s in enumerate(col.dictionary) if pred(s)], dtype=np.int32
    )
    return np.isin(col.values, wanted)


def q1(q) -> ColumnTable | None:
    """Pricing summary: per (returnflag, linestatus) sums and averages.

    No exchange: the group domain is the fixed returnflag x linestatus
    grid, so partial sums reduce with a single all-reduce.
    """
    li = q.table("lineitem")
    f = q.filter(li, li["l_shipdate"] <= date_to_days("1998-09-02"))
    rf = f.column("l_returnflag")
    ls = f.column("l_linestatus")
    n_cells = len(rf.dictionary) * len(ls.dictionary)
    cell = rf.values.astype(np.int64) * len(ls.dictionary) + ls.values

    disc_price = f["l_extendedprice"] * (1.0 - f["l_discount"])
    charge = disc_price * (1.0 + f["l_tax"])
    measures = [
        f["l_quantity"].astype(np.float64), f["l_extendedprice"], disc_price,
        charge, f["l_discount"], np.ones(f.row_count),
    ]
    grid = np.zeros((len(measures), n_cells))
    for i, vals in enumerate(measures):
        np.add.at(grid[i], cell, vals)
    total = q.all_reduce_sum(grid.ravel()).reshape(grid.shape)

    count = total[5]
    live = np.flatnonzero(count > 0)
    result = ColumnTable({
        "l_returnflag": dict_col((live // len(ls.dictionary)).astype(np.int32), rf.dictionary),
        "l_linestatus": dict_col((live % len(ls.dictionary)).astype(np.int32), ls.dictionary),
        "sum_qty": float64_col(total[0][live]),
        "sum_base_price": float64_col(total[1][live]),
        "sum_disc_price": float64_col(total[2][live]),
        "sum_charge": float64_col(total[3][live]),
        "avg_qty": float64_col(total[0][live] / count[live]),
        "avg_price": float64_col(total[1][live] / count[live]),
        "avg_disc": float64_col(total[4][live] / count[live]),
        "count_order": int64_col(count[live].astype(np.int64)),
    }).sort_by(["l_returnflag", "l_linestatus"])
    return result if q.is_root else None


def q3(q) -> ColumnTable | None:
    """Shipping priority: top 10 undelivered orders by revenue.

    One broadcast (the filtered customer keys); the orders-lineitem join
    is co-partitioned on orderkey, and so is the grouping.
    """
    cust = q.table("customer")
    cf = q.filter(cust, cust.isin("c_mktsegment", ["BUILDING"]))
    ckeys = q.broadcast(cf.select(["c_custkey"]))

    orders = q.table("orders")
    of = q.filter(orders, orders["o_orderdate"] < date_to_days("1995-03-15"))
    oj = q.join(of, ckeys, on=[("o_custkey", "c_custkey")], how="semi")

    li = q.table("lineitem")
    lf = q.filter(li, li["l_shipdate"] > date_to_days("1995-03-15"))
    j = q.join(
        lf.select(["l_orderkey", "l_extendedprice", "l_discount"]),
        oj.select(["o_orderkey", "o_orderdate", "o_shippriority"]),
        on=[("l_orderkey", "o_orderkey")],
    )
    j = q.add_column(j, "revenue", float64_col(j["l_extendedprice"] * (1.0 - j["l_discount"])))
    g = q.group(
        j, ["l_orderkey", "o_orderdate", "o_shippriority"], {"revenue": ("sum", "revenue")}
    )
    full = q.gather(g)  # orderkey groups are worker-disjoint: partials are final
    if full is None:
        return None
    top = full.sort_by(["revenue", "o_orderdate"], descending={"revenue"}).head(10)
    return top.select(["l_orderkey", "revenue", "o_orderdate", "o_shippriority"])


def q6(q) -> ColumnTable | None:
    """Forecast revenue change: one filtered scalar sum, no exchange."""
    li = q.table("lineitem")
    sd = li["l_shipdate"]
    disc = li["l_discount"]
    mask = (
        (sd >= date_to_days("1994-01-01")) & (sd < date_to_days("1995-01-01"))
        & (disc >= 0.05) & (disc <= 0.07) & (li["l_quantity"] < 24)
    )
    f = q.filter(li, mask)
    revenue = float((f["l_extendedprice"] * f["l_discount"]).sum())
    total = q.all_reduce_sum(np.asarray([revenue]))
    if not q.is_root:
        return None
    return ColumnTable({"revenue": float64_col([total[0]])})


def q12(q) -> ColumnTable | None:
    """Shipping modes vs order priority over a receipt-year window.

    default: lineitem and orders are co-partitioned on orderkey -> local
    join with no exchange.  Pa: shuffle both sides on the join key.
    Pb: broadcast the filtered lineitem side.
    """
    li = q.table("lineitem")
    sd, cd, rd = li["l_shipdate"], li["l_commitdate"], li["l_receiptdate"]
    mask = (
        li.isin("l_shipmode", ["MAIL", "SHIP"])
        & (cd < rd) & (sd < cd)
        & (rd >= date_to_days("1994-01-01")) & (rd < date_to_days("1995-01-01"))
    )
    lf = q.filter(li, mask).select(["l_orderkey", "l_shipmode"])
    orders = q.table("orders").select(["o_orderkey", "o_orderpriority"])

    if q.variant == "default":
        q.require_co_partitioned("lineitem", "orders")
        left, right = lf, orders
    elif q.variant == "pa":
        left = q.shuffle(lf, ["l_orderkey"])
        right = q.shuffle(orders, ["o_orderkey"])
    elif q.variant == "pb":
        left = q.broadcast(lf)
        right = orders
    else:
        raise ValueError(f"q12 has no variant {q.variant!r}")

    j = q.join(left, right, on=[("l_orderkey", "o_orderkey")])
    high = _codes_where(j, "o_orderpriority", lambda s: s in ("1-URGENT", "2-HIGH"))
    j = q.add_column(j, "high", int64_col(high.astype(np.int64)))
    j = q.add_column(j, "low", int64_col((~high).astype(np.int64)))
    g = q.group(
        j, ["l_shipmode"],
        {"high_line_count": ("sum", "high"), "low_line_count": ("sum", "low")},
    )
    full = q.gather(g)  # shipmode groups overlap across workers: re-aggregate
    if full is None:
        return None
    return q.group(
        full, ["l_shipmode"],
        {"high_line_count": ("sum", "high_line_count"),
         "low_line_count": ("sum", "low_line_count")},
    )


def q14(q) -> ColumnTable | None:
    """Promotion effect: shuffle the filtered lineitem onto the part key."""
    li = q.table("lineitem")
    sd = li["l_shipdate"]
    mask = (sd >= date_to_days("1995-09-01")) & (sd < date_to_days("1995-10-01"))
    lf = q.filter(li, mask).select(["l_partkey", "l_extendedprice", "l_discount"])
    ls = q.shuffle(lf, ["l_partkey"])  # part is already partitioned on p_partkey

    part = q.table("part").select(["p_partkey", "p_type"])
    j = q.join(ls, part, on=[("l_partkey", "p_partkey")])
    disc_price = j["l_extendedprice"] * (1.0 - j["l_discount"])
    promo = np.where(_codes_where(j, "p_type", lambda s: s.startswith("PROMO")), disc_price, 0.0)
    partial = ColumnTable({
        "promo": float64_col([promo.sum()]),
        "total": float64_col([disc_price.sum()]),
    })
    full = q.gather(partial)
    if full is None:
        return None
    total = float(full["total"].sum())
    promo_sum = float(full["promo"].sum())
    value = 100.0 * promo_sum / total if total else 0.0
    return ColumnTable({"promo_revenue": float64_col([value])})


_Q19_BRANCHES = (
    ("Brand#12", ("SM CASE", "SM BOX", "SM PACK", "SM PKG"), 1, 11, 1, 5),
    ("Brand#23", ("MED BAG", "MED BOX", "MED PKG", "MED PACK"), 10, 20, 1, 10),
    ("Brand#34", ("LG CASE", "LG BOX", "LG PACK", "LG PKG"), 20, 30, 1, 15),
)


def q19(q) -> ColumnTable | None:
    """Discounted revenue over three brand/container/quantity branches.

    The filtered part table is small, so it is broadcast and the join runs
    locally against each lineitem partition.
    """
    part = q.table("part")
    brands = [b for b, *_ in _Q19_BRANCHES]
    pf = q.filter(
        part,
        part.isin("p_brand", brands) & (part["p_size"] >= 1) & (part["p_size"] <= 15),
    )
    pb = q.broadcast(pf.select(["p_partkey", "p_brand", "p_size", "p_container"]))

    li = q.table("lineitem")
    lf = q.filter(
        li,
        li.isin("l_shipmode", ["AIR", "AIR REG"])
        & li.isin("l_shipinstruct", ["DELIVER IN PERSON"]),
    ).select(["l_partkey", "l_quantity", "l_extendedprice", "l_discount"])

    j = q.join(lf, pb, on=[("l_partkey", "p_partkey")])
    qty = j["l_quantity"]
    size = j["p_size"]
    keep = np.zeros(j.row_count, dtype=bool)
    for brand, containers, q_lo, q_hi, s_lo, s_hi in _Q19_BRANCHES:
        keep |= (
            j.isin("p_brand", [brand])
            & j.isin("p_container", list(containers))
            & (qty >= q_lo) & (qty <= q_hi)
            & (size >= s_lo) & (size <= s_hi)
        )
    matched = q.filter(j, keep)
    revenue = float((matched["l_extendedprice"] * (1.0 - matched["l_discount"])).sum())
    full = q.gather(ColumnTable({"revenue": float64_col([revenue])}))
    if full is None:
        return None
    return ColumnTable({"revenue": float64_col([float(full["revenue"].sum())])})


PLAN_FUNCTIONS = {
    "Q1": q1, "Q3": q3, "Q6": q6, "Q12": q12, "Q14": q14, "Q19": q19,
}

SUPPORTED_QUERIES = tuple(PLAN_FUNCTIONS)
