"""
分支、汇合与路由
"""

from dataclasses import dataclass
from typing import Any, FrozenSet, Mapping, Optional

from src.core.errors import BranchPanic
from src.core.models import CortexOutput, Plan, SubgoalStatus
from src.graph.state import Branch, RouteDecision, RouteKind

DEFAULT_STALL_THRESHOLD = 3


def branch_after_cortex(out: CortexOutput) -> FrozenSet[Branch]:
    """完成信号走 Orchestrator 分支，动作走 Executor 分支，两者都没有就是停滞"""
    branches = set()
    if out.completions:
        branches.add(Branch.ORCHESTRATOR)
    if out.actions:
        branches.add(Branch.EXECUTOR)
    if not branches:
        branches.add(Branch.STALL)
    return frozenset(branches)


@dataclass(frozen=True)
class BranchOutcome:
    """分支的返回：正常结束时 value 为分支产物，异常结束时 error 非空"""
    branch: Branch
    value: Any = None
    error: Optional[BaseException] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def converge(results: Mapping[Branch, BranchOutcome]) -> None:
    """汇合屏障：只检查分支是否正常结束，不做任何路由"""
    for branch in (Branch.ORCHESTRATOR, Branch.EXECUTOR, Branch.STALL):
        outcome = results.get(branch)
        if outcome is not None and not outcome.ok:
            raise BranchPanic(f"{branch.value} 异常终止: {outcome.error!r}") from outcome.error


def route_after_convergence(plan: Plan, stall_count: int, budget_left: int,
                            stall_threshold: int = DEFAULT_STALL_THRESHOLD) -> RouteDecision:
    """
    每个周期汇合后调用一次

    优先级: 失败 → 重规划；全部完成 → 成功终止；预算用尽 → 失败终止；连续停滞 → 标记失败并重规划；否则继续
    """
    failed = [sg.id for sg in plan.subgoals if sg.status == SubgoalStatus.FAILED]
    if failed:
        return RouteDecision(RouteKind.REPLAN, reason=f"subgoal failed: {', '.join(failed)}")
    if plan.all_completed():
        return RouteDecision(RouteKind.TERMINATE, success=True, reason="all subgoals completed")
    if budget_left <= 0:
        return RouteDecision(RouteKind.TERMINATE, success=False, reason="step budget exhausted")
    if stall_count >= stall_threshold:
        active = plan.active()
        return RouteDecision(RouteKind.REPLAN, reason=f"stalled {stall_count} cycles",
                             failed_subgoal=active.id if active else None)
    return RouteDecision(RouteKind.CONTINUE)
