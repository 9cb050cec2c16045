"""
Cortex：核心决策智能体
提示词按消融开关组装：混合感知、数据保真指令、元认知报告、便笺内容
"""

import logging
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence

from src.agents import prompts
from src.agents.orchestrator import history_view, render_history
from src.agents.schemas import DecisionOut, call_structured, schema_text
from src.core.errors import PreconditionViolation
from src.core.models import AgentMessage, AgentRole, CortexOutput, DeviceState, Subgoal, SubgoalStatus
from src.device.hierarchy import serialize_hierarchy, visible_texts
from src.graph.state import AblationFlags
from src.llm.base import LlmBackend
from src.metacog.analyzer import MetacogReport

SINGLE_AGENT_SUBGOAL = "task"


def _subgoal_line(subgoal: Optional[Subgoal]) -> str:
    return f"{subgoal.id}: {subgoal.description}" if subgoal else "(none)"


def _subgoal_view(subgoal: Optional[Subgoal]) -> Optional[Dict[str, str]]:
    return {"id": subgoal.id, "description": subgoal.description} if subgoal else None


def _notes_text(notes: Mapping[str, str]) -> str:
    body = "\n".join(f"- {k}: {v}" for k, v in notes.items()) if notes else "(no notes)"
    return f"Scratchpad notes:\n{body}"


def screen_view(state: DeviceState) -> Dict[str, Any]:
    """层级的结构化镜像"""
    nodes = [{"node_id": n.node_id, "resource_id": n.resource_id, "text": n.text, "editable": n.editable,
              "bounds": [n.bounds.left, n.bounds.top, n.bounds.right, n.bounds.bottom]}
             for n in state.hierarchy.iter()]
    return {
        "package": state.focused_package,
        "screen": state.screen,
        "texts": visible_texts(state.hierarchy),
        "rids": {n["resource_id"]: n["text"] for n in nodes if n["resource_id"]},
        "nodes": nodes,
    }


def _assemble(subgoal: Subgoal, next_subgoal: Optional[Subgoal], state: DeviceState,
              history: Sequence[AgentMessage], notes: Optional[Mapping[str, str]],
              metacog_report: Optional[MetacogReport], flags: AblationFlags, goal_text: str, timestamp: str):
    # Planner 的推理不进入 Cortex 上下文
    visible = [m for m in history if m.role != AgentRole.PLANNER]
    screenshot = state.screenshot_digest if flags.hybrid_perception else None
    perception = (prompts.render("perception_hybrid", screenshot_digest=screenshot) if screenshot
                  else prompts.render("perception_structural"))
    use_notes = flags.scratchpad and notes is not None
    use_metacog = flags.metacog and metacog_report is not None
    values = dict(
        goal=goal_text,
        subgoal=_subgoal_line(subgoal),
        next_subgoal=_subgoal_line(next_subgoal),
        perception=perception,
        hierarchy=serialize_hierarchy(state.hierarchy),
        fidelity=prompts.render("data_fidelity") if flags.data_fidelity_prompt else "",
        notes=_notes_text(notes) if use_notes else "",
        metacog=f"Meta-cognition report:\n{metacog_report.render()}" if use_metacog else "",
        history=render_history(visible),
        schema=schema_text(DecisionOut),
        timestamp=timestamp,
    )
    context: Dict[str, Any] = {
        "goal": goal_text,
        "subgoal": _subgoal_view(subgoal),
        "next_subgoal": _subgoal_view(next_subgoal),
        "screenshot": screenshot,
        "history": history_view(visible),
        "notes": dict(notes) if use_notes else None,
        "metacog": metacog_report.to_dict() if use_metacog else None,
        "data_fidelity": flags.data_fidelity_prompt,
    }
    context.update(screen_view(state))
    return values, context


def _to_output(out: Optional[DecisionOut], plan_ids: Optional[Iterable[str]]) -> CortexOutput:
    if out is None:
        logging.warning("Cortex 输出在重试后仍不合法，按空输出处理")
        return CortexOutput()
    completions = set(out.completions)
    if plan_ids is not None:
        unknown = completions - set(plan_ids)
        if unknown:
            logging.warning(f"Cortex 标记了不存在的子目标，已忽略: {', '.join(sorted(unknown))}")
            completions -= unknown
    return CortexOutput(
        actions=tuple(a.to_decision() for a in out.actions),
        completions=frozenset(completions),
        pivot=out.pivot or None,
    )


def decide(subgoal: Subgoal, state: DeviceState, history: Sequence[AgentMessage],
           notes: Optional[Mapping[str, str]], metacog_report: Optional[MetacogReport], backend: LlmBackend,
           flags: AblationFlags, *, goal_text: str = "", next_subgoal: Optional[Subgoal] = None,
           plan_ids: Optional[Iterable[str]] = None, retries: int = 2, timestamp: str = "") -> CortexOutput:
    """
    为当前子目标做出决策

    Args:
        subgoal: 进行中的子目标
        state: Contextor 提供的最新设备状态
        history: 对话历史
        notes: 便笺内容
        metacog_report: 元认知报告
        backend: LLM 后端
        flags: 消融开关

    Returns:
        CortexOutput；重试用尽时为空输出（视为停滞）
    """
    if subgoal.status != SubgoalStatus.IN_PROGRESS:
        raise PreconditionViolation(f"子目标 {subgoal.id} 不在进行中: {subgoal.status.value}")
    values, context = _assemble(subgoal, next_subgoal, state, history, notes, metacog_report, flags,
                                goal_text, timestamp)
    prompt = prompts.render("cortex", **values)
    out = call_structured(backend, "cortex", prompt, DecisionOut, context, retries)
    return _to_output(out, plan_ids)


def decide_single(goal_text: str, state: DeviceState, history: Sequence[AgentMessage],
                  notes: Optional[Mapping[str, str]], metacog_report: Optional[MetacogReport],
                  backend: LlmBackend, flags: AblationFlags, retries: int = 2, timestamp: str = "") -> CortexOutput:
    """单智能体模式：规划、决策、执行三个模板拼成一个提示词"""
    task = Subgoal(SINGLE_AGENT_SUBGOAL, goal_text, SubgoalStatus.IN_PROGRESS)
    values, context = _assemble(task, None, state, history, notes, metacog_report, flags, goal_text, timestamp)
    prompt = "\n".join([
        prompts.render("planner", goal=goal_text, completed="(none)", timestamp=timestamp),
        prompts.render("cortex", **values),
        prompts.render("executor", actions="(the decisions above)", timestamp=timestamp),
    ])
    context["single_agent"] = True
    out = call_structured(backend, "agent", prompt, DecisionOut, context, retries)
    return _to_output(out, [SINGLE_AGENT_SUBGOAL])
