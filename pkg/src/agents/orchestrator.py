"""
Orchestrator：审核 Cortex 提交的完成信号并维护子目标生命周期
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

from src.agents import prompts
from src.agents.schemas import VerdictOut, call_structured, schema_text
from src.core.errors import MalformedVerdict, PreconditionViolation
from src.core.lifecycle import apply_event, start_next
from src.core.models import AgentMessage, AgentRole, LifecycleEvent, Plan, SubgoalStatus


@dataclass(frozen=True)
class OrchestratorVerdict:
    confirmed: FrozenSet[str] = frozenset()
    rejected: Mapping[str, str] = field(default_factory=dict)  # id -> 原因
    advance_to: Optional[str] = None

    def __post_init__(self):
        overlap = self.confirmed & set(self.rejected)
        if overlap:
            raise PreconditionViolation(f"同一子目标既确认又拒绝: {', '.join(sorted(overlap))}")

    @property
    def is_empty(self) -> bool:
        return not self.confirmed and not self.rejected and self.advance_to is None

    def describe(self) -> str:
        rejected = {k: self.rejected[k] for k in sorted(self.rejected)}
        return (f"confirmed={sorted(self.confirmed)} rejected={json.dumps(rejected, ensure_ascii=False)} "
                f"advance_to={self.advance_to}")


def history_view(history: Sequence[AgentMessage]) -> List[Dict[str, Any]]:
    """历史消息的结构化镜像，与渲染进提示词的内容一一对应"""
    return [{"role": m.role.value, "content": m.content, "cycle": m.cycle_index, "meta": dict(m.meta)}
            for m in history]


def render_history(history: Sequence[AgentMessage]) -> str:
    return "\n".join(m.render() for m in history) if history else "(empty)"


def plan_view(plan: Plan) -> List[Dict[str, str]]:
    return [{"id": sg.id, "description": sg.description, "status": sg.status.value} for sg in plan.subgoals]


def orchestrate(plan: Plan, completions: FrozenSet[str], history: Sequence[AgentMessage], backend,
                goal_text: str = "", retries: int = 2, timestamp: str = "") -> OrchestratorVerdict:
    """
    审核完成信号

    Args:
        plan: 当前计划
        completions: Cortex 标记完成的子目标 id，必须都在计划中
        history: 对话历史（证据）
        backend: LLM 后端

    Returns:
        OrchestratorVerdict；没有完成信号时返回空裁决且不调用后端
    """
    unknown = set(completions) - set(plan.ids())
    if unknown:
        raise PreconditionViolation(f"完成信号引用了不存在的子目标: {', '.join(sorted(unknown))}")
    if not completions:
        return OrchestratorVerdict()

    claims = sorted(completions)
    prompt = prompts.render(
        "orchestrator",
        goal=goal_text,
        subgoal=plan.render(),
        completions=", ".join(claims),
        history=render_history(history),
        schema=schema_text(VerdictOut),
        timestamp=timestamp,
    )
    context = {"goal": goal_text, "plan": plan_view(plan), "completions": claims, "history": history_view(history)}
    out = call_structured(backend, "orchestrator", prompt, VerdictOut, context, retries)
    if out is None:
        raise MalformedVerdict(f"编排裁决在 {retries + 1} 次尝试后仍不合法")

    confirmed = frozenset(c for c in out.confirmed if c in completions)
    rejected: Dict[str, str] = {}
    for item in out.rejected:
        if item.id in completions and item.id not in confirmed:
            rejected[item.id] = item.reason or "rejected"
    for claim in claims:
        if claim not in confirmed and claim not in rejected:
            rejected[claim] = "not confirmed"
    advance_to = out.advance_to if out.advance_to in plan.ids() else None
    return OrchestratorVerdict(confirmed=confirmed, rejected=rejected, advance_to=advance_to)


def apply_verdict(plan: Plan, verdict: OrchestratorVerdict, cycle_index: int = 0) -> Tuple[Plan, List[AgentMessage]]:
    """通过生命周期转换应用裁决，返回新计划与需要追加的消息"""
    for subgoal_id in sorted(verdict.confirmed):
        status = plan.get(subgoal_id).status
        if status == SubgoalStatus.PENDING:
            plan = apply_event(plan, subgoal_id, LifecycleEvent.START)
            status = SubgoalStatus.IN_PROGRESS
        if status == SubgoalStatus.IN_PROGRESS:
            plan = apply_event(plan, subgoal_id, LifecycleEvent.CONFIRM_COMPLETE)
        else:
            logging.info(f"子目标 {subgoal_id} 已是 {status.value}，忽略确认")

    if plan.active() is None:
        target = plan.get(verdict.advance_to) if verdict.advance_to else None
        if target is not None and target.status == SubgoalStatus.PENDING:
            plan = apply_event(plan, target.id, LifecycleEvent.START)
        else:
            plan = start_next(plan)

    messages: List[AgentMessage] = []
    if not verdict.is_empty:
        active = plan.active()
        messages.append(AgentMessage(
            AgentRole.ORCHESTRATOR,
            f"{verdict.describe()} active={active.id if active else None}",
            cycle_index=cycle_index,
            meta={"confirmed": sorted(verdict.confirmed), "rejected": dict(verdict.rejected),
                  "advance_to": verdict.advance_to, "active": active.id if active else None},
        ))
    for subgoal_id in sorted(verdict.rejected):
        messages.append(AgentMessage(
            AgentRole.ORCHESTRATOR,
            f"rejected completion of {subgoal_id}: {verdict.rejected[subgoal_id]}",
            cycle_index=cycle_index,
            meta={"rejected": subgoal_id, "reason": verdict.rejected[subgoal_id]},
        ))
    return plan, messages
