"""
Executor：把 Cortex 的动作决策一一翻译为工具调用
"""

import json
import logging
from typing import List, Sequence

from src.agents import prompts
from src.agents.schemas import ActionOut, ToolCallsOut, call_structured, schema_text
from src.core.errors import PreconditionViolation, UnknownActionKind
from src.core.models import ActionDecision, ActionKind, ToolCall
from src.llm.base import LlmBackend


def direct_mapping(actions: Sequence[ActionDecision]) -> List[ToolCall]:
    """不经过 LLM 的确定性映射"""
    return [ToolCall(a.kind, a.target, a.payload, a.reasoning) for a in actions]


def _check_kinds(actions: Sequence[ActionDecision]):
    for action in actions:
        if not isinstance(action.kind, ActionKind):
            raise UnknownActionKind(action.kind)


def execute_decision(actions: Sequence[ActionDecision], backend: LlmBackend, retries: int = 2,
                     timestamp: str = "") -> List[ToolCall]:
    """
    翻译动作决策

    Args:
        actions: 非空的有序动作决策
        backend: LLM 后端

    Returns:
        与 actions 一一对应、顺序一致的 ToolCall
    """
    if not actions:
        raise PreconditionViolation("动作列表不能为空")
    _check_kinds(actions)

    views = [ActionOut.from_decision(a).model_dump(exclude_none=True) for a in actions]
    prompt = prompts.render("executor", actions=json.dumps(views, ensure_ascii=False, sort_keys=True),
                            schema=schema_text(ToolCallsOut), timestamp=timestamp)
    out = call_structured(backend, "executor", prompt, ToolCallsOut, {"actions": views}, retries)

    expected = direct_mapping(actions)
    if out is None or len(out.tool_calls) != len(actions):
        logging.warning("Executor 输出与决策不一一对应，改用直接映射")
        return expected
    calls = [c.to_tool_call() for c in out.tool_calls]
    if [c.name for c in calls] != [c.name for c in expected]:
        logging.warning("Executor 改变了动作类型或顺序，改用直接映射")
        return expected
    return calls
