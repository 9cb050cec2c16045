"""
人类可读的报告表格
"""

from typing import List, Optional, Sequence

import pandas as pd

from src.harness.ablation import AblationReport
from src.harness.pareto import ConfigPoint, pareto_frontier
from src.harness.suite import SuiteReport


def _percent(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value * 100:.1f}%"


def suite_table(report: SuiteReport) -> pd.DataFrame:
    rows = []
    for o in report.outcomes:
        tokens = sum(u.get("input_tokens", 0) + u.get("output_tokens", 0) for u in o.usage.values())
        rows.append({
            "task": o.task_id, "tags": ",".join(o.tags), "success": o.success, "cycles": o.cycles_used,
            "stop": o.stop_reason, "error": o.error or "", "tokens": tokens,
        })
    return pd.DataFrame(rows, columns=["task", "tags", "success", "cycles", "stop", "error", "tokens"])


def render_suite(report: SuiteReport) -> str:
    header = (f"[{report.label}] seed={report.seed} faults={report.fault_profile} "
              f"tasks={report.task_count} SR={_percent(report.success_rate)}")
    if not report.outcomes:
        return f"{header}\n(zero tasks)"
    return f"{header}\n{suite_table(report).to_string(index=False)}"


def ablation_table(report: AblationReport) -> pd.DataFrame:
    return pd.DataFrame(report.rows(), columns=["configuration", "success_rate", "delta_sr"])


def render_ablation(report: AblationReport) -> str:
    table = ablation_table(report).to_string(index=False, float_format=lambda v: f"{v:.1f}")
    matrix = pd.DataFrame.from_dict(report.matrix(), orient="index")
    return f"{table}\n\n{matrix.to_string()}" if not matrix.empty else table


def points_table(points: Sequence[ConfigPoint]) -> pd.DataFrame:
    frontier = {p.name for p in pareto_frontier(points)}
    rows = [{
        "configuration": p.name,
        "success_rate": round(p.success_rate * 100, 1),
        "cost_usd": p.cost,
        "pareto": p.name in frontier,
    } for p in points]
    return pd.DataFrame(rows, columns=["configuration", "success_rate", "cost_usd", "pareto"])


def render_frontier(points: Sequence[ConfigPoint]) -> str:
    frontier: List[ConfigPoint] = pareto_frontier(points)
    lines = [points_table(points).to_string(index=False, na_rep="-"), "", "Pareto frontier:"]
    lines.extend(f"  * {p.name} ({p.success_rate * 100:.1f}%, ${p.cost:.2f})" for p in frontier)
    return "\n".join(lines)
