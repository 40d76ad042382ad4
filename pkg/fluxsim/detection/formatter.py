from typing import Any, Dict, Iterable, List, Optional, Sequence


def format_quantity(value) -> str:
    """Integral values without a fraction, others with at most 4 decimals."""
    value = float(value)
    if value == int(value):
        return str(int(value))
    return f"{value:.4f}".rstrip("0").rstrip(".")


def format_score(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.4f}"


def format_percent(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def format_cost_table(costs: Sequence) -> str:
    """Render LookupCost rows as an aligned text table."""
    header = ("mode", "accesses", "bytes", "size", "time")
    rows = [header]
    for cost in costs:
        rows.append((
            cost.mode.value,
            format_quantity(cost.accesses),
            format_quantity(cost.bytes),
            f"{cost.kilobytes} KB",
            f"{format_quantity(cost.seconds)} s",
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def format_summary_markdown(name: str, summary: Dict[str, Any], outcomes: Iterable = (), cost_table: str = "") -> str:
    lines: List[str] = [f"# Run summary: {name}", "", "| metric | value |", "|---|---|"]
    for key in sorted(summary):
        value = summary[key]
        shown = format_quantity(value) if isinstance(value, (int, float)) and not isinstance(value, bool) else str(value)
        lines.append(f"| {key} | {shown} |")

    outcomes = list(outcomes)
    if outcomes:
        lines += ["", "## Assertions", ""]
        for o in outcomes:
            mark = "PASS" if o.passed else "FAIL"
            lines.append(f"- {mark}: {o.metric} {o.op} {format_quantity(o.expected)} (actual: {o.actual})")

    if cost_table:
        lines += ["", "## Lookup cost model", "", "```", cost_table, "```"]
    return "\n".join(lines) + "\n"
