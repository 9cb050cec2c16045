"""
执行器工具节点
按顺序执行工具调用；第一个失败之后的调用全部标记为 Aborted
"""

import json
import logging
from typing import List, Optional, Sequence

from src.agents.utility import analyze_video, hopper
from src.core.errors import ElementNotFound, FieldNotEditable
from src.core.models import ActionKind, ActionResult, ToolCall
from src.device.controller import DeviceController
from src.execution.text_input import DEFAULT_RETRY_BUDGET, input_text_verified
from src.graph.state import AblationFlags
from src.llm.base import LlmBackend
from src.memory.scratchpad import Scratchpad


def _note_call(call: ToolCall, scratchpad: Scratchpad, cycle_index: int) -> ActionResult:
    if call.name == ActionKind.SAVE_NOTE:
        key, sep, value = (call.payload or "").partition("=")
        if not sep or not key.strip():
            return ActionResult.failure("InvalidPayload", "SaveNote 的 payload 格式为 key=value")
        scratchpad.save_note(key.strip(), value, cycle_index)
        return ActionResult.success(f"saved note {key.strip()}")
    if call.name == ActionKind.READ_NOTE:
        value = scratchpad.read_note((call.payload or "").strip())
        return ActionResult.success(f"note {call.payload} = {json.dumps(value, ensure_ascii=False)}", data=value)
    keys = scratchpad.list_notes()
    return ActionResult.success(f"notes: {', '.join(keys) if keys else '(none)'}", data=keys)


def _stop_recording(call: ToolCall, device: DeviceController, backend: Optional[LlmBackend]) -> ActionResult:
    result, frame_log = device.stop_recording()
    if not result.ok:
        return result
    summary = analyze_video(frame_log)
    extraction = ""
    if call.payload and backend is not None:
        extraction = hopper(summary, call.payload, backend)
    detail = f"frames={len(frame_log.frames)} extraction={json.dumps(extraction, ensure_ascii=False)}"
    return ActionResult.success(detail, data={"extraction": extraction, "summary": summary})


def execute_call(call: ToolCall, device: DeviceController, flags: AblationFlags,
                 scratchpad: Optional[Scratchpad] = None, cycle_index: int = 0,
                 backend: Optional[LlmBackend] = None, retry_budget: int = DEFAULT_RETRY_BUDGET) -> ActionResult:
    """执行单个工具调用；元素与工具问题作为失败结果返回"""
    kind = call.name
    if kind == ActionKind.TYPE_TEXT:
        if call.selector is None or not call.payload:
            return ActionResult.failure("InvalidPayload", "TypeText 需要选择器和文本")
        try:
            feedback = input_text_verified(call.selector, call.payload, device,
                                           post_validation=flags.post_validation, retry_budget=retry_budget)
        except ElementNotFound as e:
            return ActionResult.failure("ElementNotFound", str(e))
        except FieldNotEditable as e:
            return ActionResult.failure("FieldNotEditable", str(e))
        if feedback.verified:
            return ActionResult.success(feedback.describe(), feedback=feedback)
        return ActionResult.failure("VerificationFailed", feedback.describe(), feedback=feedback)

    if kind in (ActionKind.SAVE_NOTE, ActionKind.READ_NOTE, ActionKind.LIST_NOTES):
        if not flags.scratchpad or scratchpad is None:
            return ActionResult.failure("ToolUnavailable", "便笺工具未启用")
        return _note_call(call, scratchpad, cycle_index)

    if kind in (ActionKind.START_RECORDING, ActionKind.STOP_RECORDING):
        if not flags.video:
            return ActionResult.failure("ToolUnavailable", "录屏工具未启用")
        if kind == ActionKind.START_RECORDING:
            return device.start_recording()
        return _stop_recording(call, device, backend)

    return device.apply_action(call)


def execute_sequential(calls: Sequence[ToolCall], device: DeviceController, flags: AblationFlags,
                       scratchpad: Optional[Scratchpad] = None, cycle_index: int = 0,
                       backend: Optional[LlmBackend] = None,
                       retry_budget: int = DEFAULT_RETRY_BUDGET) -> List[ActionResult]:
    """
    顺序执行工具调用

    Args:
        calls: 有序工具调用
        device: 设备控制器
        flags: 消融开关；sequential_exec 关闭时失败后继续执行
        scratchpad: 本任务的便笺
        cycle_index: 当前决策周期
        backend: 录屏提取使用的 LLM 后端

    Returns:
        与 calls 一一对应的 ActionResult
    """
    results: List[ActionResult] = []
    aborted = False
    for index, call in enumerate(calls):
        if aborted:
            results.append(ActionResult.aborted())
            continue
        result = execute_call(call, device, flags, scratchpad, cycle_index, backend, retry_budget)
        results.append(result)
        if not result.ok:
            logging.info(f"工具调用失败 [{index + 1}/{len(calls)}] {call.describe()}: {result.error}")
            if flags.sequential_exec:
                aborted = True
    return results
