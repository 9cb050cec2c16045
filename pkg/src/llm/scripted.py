"""
脚本化后端
ScriptBook 以 (角色, 请求指纹) 为键保存固定响应；缺失条目是错误而不是回退
"""

import logging
import os
import threading
from typing import Dict, Iterator, Mapping, Optional, Tuple

from src.core.errors import ConfigError, MissingScriptEntry
from src.llm.base import CompletionRequest, LlmBackend, TokenUsage, estimated_usage

_SUFFIX = ".txt"


class ScriptBook:
    """(role, fingerprint) → 响应文本；目录形式为每条一个 <role>__<fingerprint>.txt 文件"""

    def __init__(self, entries: Optional[Mapping[Tuple[str, str], str]] = None):
        self._entries: Dict[Tuple[str, str], str] = dict(entries or {})
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[Tuple[str, str]]:
        return iter(sorted(self._entries))

    def add(self, role: str, fp: str, text: str) -> None:
        """同一键出现不同响应时保留先写入的，并记录警告"""
        with self._lock:
            existing = self._entries.get((role, fp))
            if existing is not None and existing != text:
                logging.warning(f"脚本条目冲突，保留首次响应: role={role} fingerprint={fp}")
                return
            self._entries[(role, fp)] = text

    def lookup(self, role: str, fp: str) -> Optional[str]:
        with self._lock:
            return self._entries.get((role, fp))

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        with self._lock:
            items = sorted(self._entries.items())
        for (role, fp), text in items:
            with open(os.path.join(directory, f"{role}__{fp}{_SUFFIX}"), "w", encoding="utf-8") as f:
                f.write(text)

    @classmethod
    def load(cls, directory: str) -> "ScriptBook":
        if not os.path.isdir(directory):
            raise ConfigError(f"脚本库目录不存在: {directory}")
        book = cls()
        for name in sorted(os.listdir(directory)):
            if not name.endswith(_SUFFIX) or "__" not in name:
                continue
            role, fp = name[:-len(_SUFFIX)].split("__", 1)
            with open(os.path.join(directory, name), "r", encoding="utf-8") as f:
                book.add(role, fp, f.read())
        logging.info(f"加载脚本库 {len(book)} 条: {directory}")
        return book


class ScriptedBackend(LlmBackend):
    """严格回放；用量按长度估算"""

    def __init__(self, book: ScriptBook, models: Optional[Mapping[str, str]] = None):
        super().__init__(models)
        self.book = book

    def complete(self, req: CompletionRequest) -> Tuple[str, TokenUsage]:
        fp = req.fingerprint
        text = self.book.lookup(req.agent_role, fp)
        if text is None:
            raise MissingScriptEntry(req.agent_role, fp)
        return text, estimated_usage(req.prompt, text, self.model_for(req.agent_role))


class RecordingBackend(LlmBackend):
    """包装任意后端，把每次响应写入 ScriptBook 以便严格回放"""

    def __init__(self, inner: LlmBackend, book: Optional[ScriptBook] = None):
        super().__init__(inner.models)
        self.inner = inner
        self.book = book if book is not None else ScriptBook()

    def complete(self, req: CompletionRequest) -> Tuple[str, TokenUsage]:
        text, usage = self.inner.complete(req)
        self.book.add(req.agent_role, req.fingerprint, text)
        return text, usage
