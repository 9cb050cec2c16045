"""
LLM 后端接口
所有后端对同一个 CompletionRequest 返回 (文本, TokenUsage)；请求指纹用于脚本库查找与回放
"""

import hashlib
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from src.core.errors import PreconditionViolation

ROLES = ("planner", "orchestrator", "cortex", "executor", "contextor", "outputter", "hopper", "agent")

# Platform Default 方案；单智能体模式沿用 Cortex 的模型
DEFAULT_MODELS: Dict[str, str] = {
    "planner": "Llama 4 Scout",
    "orchestrator": "GPT-OSS 120B",
    "cortex": "Gemini 3 Pro",
    "executor": "Llama 3.1 70B",
    "contextor": "Llama 3.1 8B",
    "outputter": "GPT-5 Nano",
    "hopper": "GPT-5 Nano",
    "agent": "Gemini 3 Pro",
}

_TIMESTAMP_LINE = re.compile(r"^[ \t]*Timestamp:.*$", re.MULTILINE)
_WHITESPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class CompletionRequest:
    """
    一次补全请求

    context 是提示词内容的结构化镜像，只有规则型后端会读取；不参与相等比较与指纹
    """
    agent_role: str
    prompt: str
    output_schema: Optional[Mapping[str, Any]] = None
    temperature: float = 0.0
    context: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.prompt or not self.prompt.strip():
            raise PreconditionViolation("prompt 不能为空")

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.prompt)


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int
    output_tokens: int
    model_name: str

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise PreconditionViolation(f"token 数不能为负: {self.input_tokens}/{self.output_tokens}")

    def to_dict(self) -> Dict[str, Any]:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens, "model_name": self.model_name}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TokenUsage":
        return cls(int(data["input_tokens"]), int(data["output_tokens"]), data["model_name"])


def estimate_tokens(text: str) -> int:
    """按每 4 个字符 1 个 token 估算"""
    return math.ceil(len(text) / 4)


def normalize_prompt(prompt: str) -> str:
    """去掉 Timestamp 行并压缩空白，使回放与墙钟无关"""
    return _WHITESPACE.sub(" ", _TIMESTAMP_LINE.sub("", prompt)).strip()


def fingerprint(prompt: str) -> str:
    return hashlib.sha256(normalize_prompt(prompt).encode("utf-8")).hexdigest()[:16]


def estimated_usage(prompt: str, text: str, model_name: str) -> TokenUsage:
    return TokenUsage(estimate_tokens(prompt), estimate_tokens(text), model_name)


class LlmBackend(ABC):
    """补全后端；实现必须可以被并行分支同时调用"""

    def __init__(self, models: Optional[Mapping[str, str]] = None):
        self.models: Dict[str, str] = dict(DEFAULT_MODELS)
        if models:
            self.models.update(models)

    def model_for(self, role: str) -> str:
        return self.models.get(role, self.models["cortex"])

    @abstractmethod
    def complete(self, req: CompletionRequest) -> Tuple[str, TokenUsage]:
        """返回响应文本与 token 用量"""
