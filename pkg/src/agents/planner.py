"""
Planner：把目标分解为有序子目标；重规划时带上失败上下文并保留已完成的子目标
"""

import logging
from typing import Optional

from src.agents import prompts
from src.agents.schemas import PlanOut, call_structured, schema_text
from src.core.errors import MalformedPlan, PreconditionViolation
from src.core.lifecycle import build_plan, merge_replan
from src.core.models import Plan, Subgoal, SubgoalStatus, TaskGoal
from src.llm.base import LlmBackend


def _completed_lines(plan: Optional[Plan]) -> str:
    if plan is None:
        return "(none)"
    done = [f"- {sg.id}: {sg.description}" for sg in plan.subgoals if sg.status == SubgoalStatus.COMPLETED]
    return "\n".join(done) if done else "(none)"


def plan(goal: TaskGoal, failure_context: Optional[str], backend: LlmBackend,
         completed_plan: Optional[Plan] = None, retries: int = 2, timestamp: str = "") -> Plan:
    """
    生成或修订计划

    Args:
        goal: 任务目标
        failure_context: 重规划原因；首次规划为 None
        backend: LLM 后端
        completed_plan: 重规划时的旧计划，其中已完成的子目标原样保留
        retries: 结构化输出重试次数
        timestamp: 提示词中的时间戳行

    Returns:
        新计划；首次规划全部为 Pending
    """
    if goal is None or not goal.text.strip():
        raise PreconditionViolation("任务目标不能为空")

    completed_ids = [sg.id for sg in completed_plan.subgoals
                     if sg.status == SubgoalStatus.COMPLETED] if completed_plan else []
    prompt = prompts.render(
        "planner",
        goal=goal.text,
        completed=_completed_lines(completed_plan),
        failure_context=f"The previous attempt failed: {failure_context}" if failure_context else "",
        schema=schema_text(PlanOut),
        timestamp=timestamp,
    )
    context = {"goal": goal.text, "failure_context": failure_context, "completed": completed_ids}
    out = call_structured(backend, "planner", prompt, PlanOut, context, retries)
    if out is None:
        raise MalformedPlan(f"规划输出在 {retries + 1} 次尝试后仍不合法")

    subgoals = [Subgoal(s.id, s.description) for s in out.subgoals]
    try:
        if completed_plan is None:
            new_plan = build_plan(subgoals)
        else:
            new_plan = merge_replan(completed_plan, subgoals)
    except PreconditionViolation as e:
        raise MalformedPlan(f"规划输出无效: {e}") from None
    if new_plan.next_pending() is None and new_plan.active() is None:
        raise MalformedPlan("规划没有剩余的子目标")
    logging.info(f"计划 r{new_plan.revision}: {', '.join(new_plan.ids())}")
    return new_plan
