"""
子目标生命周期状态机与计划校验
"""

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from src.core.errors import IllegalTransition, PreconditionViolation
from src.core.models import LifecycleEvent, Plan, Subgoal, SubgoalStatus

S = SubgoalStatus
E = LifecycleEvent

TRANSITIONS: Dict[Tuple[SubgoalStatus, LifecycleEvent], SubgoalStatus] = {
    (S.PENDING, E.START): S.IN_PROGRESS,
    (S.IN_PROGRESS, E.CONFIRM_COMPLETE): S.COMPLETED,
    (S.IN_PROGRESS, E.MARK_FAILED): S.FAILED,
    (S.PENDING, E.RESET_ON_REPLAN): S.PENDING,
    (S.IN_PROGRESS, E.RESET_ON_REPLAN): S.PENDING,
}


def transition_subgoal(current: SubgoalStatus, event: LifecycleEvent) -> SubgoalStatus:
    """
    按固定转换表计算下一个状态

    Args:
        current: 当前状态
        event: 生命周期事件

    Returns:
        下一个状态；表中不存在的组合抛出 IllegalTransition
    """
    if not isinstance(event, LifecycleEvent):
        raise PreconditionViolation(f"未知生命周期事件: {event}")
    try:
        return TRANSITIONS[(current, event)]
    except KeyError:
        raise IllegalTransition(current, event) from None


def apply_event(plan: Plan, subgoal_id: str, event: LifecycleEvent) -> Plan:
    """对计划中的某个子目标施加事件，返回新计划"""
    subgoal = plan.get(subgoal_id)
    if subgoal is None:
        raise PreconditionViolation(f"子目标不存在: {subgoal_id}")
    new_status = transition_subgoal(subgoal.status, event)
    logging.debug(f"子目标 {subgoal_id}: {subgoal.status.value} -> {new_status.value}")
    return plan.with_status(subgoal_id, new_status)


def start_next(plan: Plan) -> Plan:
    """没有进行中的子目标时，启动第一个待处理子目标"""
    if plan.active() is not None:
        return plan
    pending = plan.next_pending()
    if pending is None:
        return plan
    return apply_event(plan, pending.id, E.START)


@dataclass(frozen=True)
class PlanIssue:
    kind: str  # DuplicateId / EmptyDescription / MultipleActive
    subgoal_id: Optional[str] = None

    def __str__(self):
        return f"{self.kind}({self.subgoal_id})" if self.subgoal_id else self.kind


@dataclass
class ValidationReport:
    issues: List[PlanIssue] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.issues


def validate_plan(plan: Plan) -> ValidationReport:
    """只报告问题，不抛异常"""
    report = ValidationReport()
    counts = Counter(sg.id for sg in plan.subgoals)
    for subgoal_id, count in counts.items():
        if count > 1:
            report.issues.append(PlanIssue("DuplicateId", subgoal_id))
    for sg in plan.subgoals:
        if not sg.description or not sg.description.strip():
            report.issues.append(PlanIssue("EmptyDescription", sg.id))
    if sum(1 for sg in plan.subgoals if sg.status == S.IN_PROGRESS) > 1:
        report.issues.append(PlanIssue("MultipleActive"))
    return report


def build_plan(subgoals: Iterable[Subgoal], revision: int = 0) -> Plan:
    """构造计划并强制 id 唯一"""
    plan = Plan(subgoals=tuple(subgoals), revision=revision)
    duplicates = [issue for issue in validate_plan(plan).issues if issue.kind == "DuplicateId"]
    if duplicates:
        raise PreconditionViolation(f"子目标 id 重复: {', '.join(str(d) for d in duplicates)}")
    return plan


def merge_replan(old: Plan, proposed: Sequence[Subgoal]) -> Plan:
    """
    重规划合并：保留已完成的子目标，其余由新提案替换

    与已完成子目标同 id 的提案被忽略；仍处于 Pending/InProgress 的旧子目标
    经 ResetOnReplan 回到 Pending；失败的子目标只能以新实例重新出现。
    """
    completed = [sg for sg in old.subgoals if sg.status == S.COMPLETED]
    completed_ids = {sg.id for sg in completed}
    carried: List[Subgoal] = []
    for sg in proposed:
        if sg.id in completed_ids:
            continue
        previous = old.get(sg.id)
        if previous is not None and previous.status in (S.PENDING, S.IN_PROGRESS):
            status = transition_subgoal(previous.status, E.RESET_ON_REPLAN)
        else:
            status = S.PENDING
        carried.append(replace(sg, status=status))
    return build_plan(completed + carried, revision=old.revision + 1)
