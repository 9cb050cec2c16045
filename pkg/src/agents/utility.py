"""
辅助智能体：Outputter（结构化结果）、Hopper（数据提取）与录屏分析
"""

import json
import logging
from typing import Any, Dict, Mapping, Optional

from pydantic import create_model

from src.agents import prompts
from src.agents.schemas import ExtractionOut, call_structured, schema_text
from src.core.errors import PreconditionViolation, SchemaMismatch
from src.core.models import DeviceState
from src.device.controller import FrameLog
from src.device.hierarchy import serialize_hierarchy, visible_texts
from src.llm.base import LlmBackend

FIELD_TYPES = {"text": str, "number": float, "boolean": bool}


def output_model(schema: Mapping[str, str]):
    """把 {字段: 类型名} 转换为 pydantic 模型"""
    if not schema:
        raise PreconditionViolation("输出 schema 不能为空")
    fields = {}
    for name, type_name in schema.items():
        if type_name not in FIELD_TYPES:
            raise SchemaMismatch(f"未知字段类型 {name}: {type_name}（可选: {', '.join(FIELD_TYPES)}）")
        fields[name] = (FIELD_TYPES[type_name], ...)
    return create_model("TaskOutput", **fields)


def outputter(final_state: DeviceState, notes: Mapping[str, str], schema: Mapping[str, str], backend: LlmBackend,
              goal_text: str = "", retries: int = 2, timestamp: str = "") -> Dict[str, Any]:
    """
    生成结构化任务结果

    Returns:
        符合 schema 的字典；重试用尽抛出 SchemaMismatch
    """
    model = output_model(schema)
    notes_text = "\n".join(f"- {k}: {v}" for k, v in notes.items()) if notes else "(no notes)"
    prompt = prompts.render(
        "outputter",
        goal=goal_text,
        hierarchy=serialize_hierarchy(final_state.hierarchy),
        notes=f"Scratchpad notes:\n{notes_text}",
        schema=schema_text(model),
        timestamp=timestamp,
    )
    context = {"goal": goal_text, "schema": dict(schema), "notes": dict(notes),
               "texts": visible_texts(final_state.hierarchy)}
    out = call_structured(backend, "outputter", prompt, model, context, retries)
    if out is None:
        raise SchemaMismatch(f"结构化输出在 {retries + 1} 次尝试后仍不符合 schema")
    return out.model_dump()


def hopper(content: str, extraction_prompt: str, backend: LlmBackend, retries: int = 2) -> str:
    """从内容中提取指令要求的数据；内容为空时直接返回空串"""
    if not extraction_prompt or not extraction_prompt.strip():
        raise PreconditionViolation("提取指令不能为空")
    if not content:
        return ""
    prompt = prompts.render("hopper", content=content, instruction=extraction_prompt,
                            schema=schema_text(ExtractionOut))
    out = call_structured(backend, "hopper", prompt, ExtractionOut,
                          {"content": content, "instruction": extraction_prompt}, retries)
    if out is None:
        logging.warning(f"Hopper 提取失败: {extraction_prompt}")
        return ""
    return out.extraction


def analyze_video(frame_log: FrameLog) -> str:
    """录屏分析桩：逐帧文本描述，不调用视觉模型"""
    header = f"video: {len(frame_log.frames)} frames"
    body = frame_log.render()
    return f"{header}\n{body}" if body else header


def describe_output(output: Optional[Dict[str, Any]]) -> str:
    return json.dumps(output, ensure_ascii=False, sort_keys=True) if output is not None else "null"
