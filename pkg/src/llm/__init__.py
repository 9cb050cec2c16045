"""
LLM 后端：脚本回放、规则预言机与在线 chat-completion 客户端
"""

from .base import CompletionRequest, LlmBackend, TokenUsage, fingerprint
from .scripted import RecordingBackend, ScriptBook, ScriptedBackend

__all__ = [
    'CompletionRequest', 'LlmBackend', 'TokenUsage', 'fingerprint',
    'RecordingBackend', 'ScriptBook', 'ScriptedBackend',
]
