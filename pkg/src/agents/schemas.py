"""
智能体结构化输出模型与解析
响应文本先去掉代码围栏并截取第一个 JSON 对象，再交给 pydantic 校验
"""

import json
import logging
import re
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, Field, ValidationError, model_validator

from src.core.models import ActionDecision, SelectorBundle, ToolCall
from src.llm.base import CompletionRequest, LlmBackend

T = TypeVar("T", bound=BaseModel)


class SubgoalOut(BaseModel):
    id: str = Field(min_length=1)
    description: str


class PlanOut(BaseModel):
    subgoals: List[SubgoalOut] = Field(min_length=1)


class RejectionOut(BaseModel):
    id: str
    reason: str = ""


class VerdictOut(BaseModel):
    confirmed: List[str] = Field(default_factory=list)
    rejected: List[RejectionOut] = Field(default_factory=list)
    advance_to: Optional[str] = None


class ActionOut(BaseModel):
    kind: str
    resource_id: Optional[str] = None
    coordinates: Optional[Tuple[int, int]] = None
    text_match: Optional[str] = None
    payload: Optional[str] = None
    reasoning: str = ""

    @model_validator(mode="after")
    def _check_decision(self) -> "ActionOut":
        # TypeText/LaunchApp 的必填字段在这里就拒绝，触发重试
        self.to_decision()
        return self

    def selector(self) -> Optional[SelectorBundle]:
        if self.resource_id is None and self.coordinates is None and self.text_match is None:
            return None
        return SelectorBundle(self.resource_id, self.coordinates, self.text_match)

    def to_decision(self) -> ActionDecision:
        return ActionDecision(self.kind, self.selector(), self.payload, self.reasoning)

    def to_tool_call(self) -> ToolCall:
        return ToolCall(self.kind, self.selector(), self.payload, self.reasoning)

    @classmethod
    def from_decision(cls, decision: ActionDecision) -> "ActionOut":
        data = decision.to_dict()
        target = data.pop("target", {})
        return cls(**data, **target)


class DecisionOut(BaseModel):
    actions: List[ActionOut] = Field(default_factory=list)
    completions: List[str] = Field(default_factory=list)
    pivot: Optional[str] = None


class ToolCallsOut(BaseModel):
    tool_calls: List[ActionOut] = Field(default_factory=list)


class ExtractionOut(BaseModel):
    extraction: str = ""


def strip_fences(text: str) -> str:
    text = (text or "").strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z0-9_-]*\s*", "", text)
        text = re.sub(r"\s*```$", "", text)
    return text.strip()


def extract_json_object(text: str) -> str:
    """取第一个 '{' 到最后一个 '}' 之间的内容"""
    text = strip_fences(text)
    if text.startswith("{") and text.endswith("}"):
        return text
    i, j = text.find("{"), text.rfind("}")
    if i != -1 and j > i:
        return text[i:j + 1]
    return text


def parse_structured(text: str, model: Type[T]) -> T:
    """解析失败抛出 ValueError（含 pydantic ValidationError）"""
    try:
        data = json.loads(extract_json_object(text))
    except json.JSONDecodeError as e:
        raise ValueError(f"不是合法 JSON: {e}") from None
    return model.model_validate(data)


def schema_of(model: Type[BaseModel]) -> Dict[str, Any]:
    return model.model_json_schema()


def schema_text(model: Type[BaseModel]) -> str:
    return json.dumps(schema_of(model), sort_keys=True, ensure_ascii=False)


def call_structured(backend: LlmBackend, role: str, prompt: str, model: Type[T],
                    context: Optional[Mapping[str, Any]] = None, retries: int = 2) -> Optional[T]:
    """
    调用后端并校验结构化输出

    Args:
        backend: LLM 后端
        role: 角色名（脚本库与计费的键）
        prompt: 完整提示词
        model: 输出模型
        context: 提示词的结构化镜像
        retries: 校验失败后的重试次数

    Returns:
        解析后的模型；重试用尽返回 None。后端异常直接向上抛出
    """
    schema = schema_of(model)
    attempt_prompt = prompt
    for attempt in range(retries + 1):
        req = CompletionRequest(role, attempt_prompt, output_schema=schema, context=dict(context or {}))
        text, _ = backend.complete(req)
        try:
            return parse_structured(text, model)
        except (ValueError, ValidationError) as e:
            logging.warning(f"{role} 输出校验失败（第 {attempt + 1}/{retries + 1} 次）: {str(e)[:200]}")
            attempt_prompt = (f"{prompt}\nAttempt {attempt + 2}: the previous reply did not match the schema. "
                              f"Reply with one JSON object only.\n")
    return None

