"""
提示词模板加载与渲染
模板是纯文本文件，占位符必须来自固定集合；以 "## " 开头的行是注释，"## pinned: true" 标记常驻消息
"""

import logging
import os
import re
import threading
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

from src.config.config_manager import PROJECT_ROOT
from src.core.errors import ConfigError

PLACEHOLDERS = frozenset({
    "goal", "subgoal", "next_subgoal", "hierarchy", "screenshot_digest", "history", "notes", "metacog",
    "failure_context", "completed", "completions", "actions", "schema", "content", "instruction",
    "perception", "fidelity", "timestamp",
})
DEFAULT_PROMPTS_DIR = os.path.join(PROJECT_ROOT, "fixtures", "prompts")

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_BLANK_RUNS = re.compile(r"\n{3,}")


@dataclass(frozen=True)
class PromptFixture:
    name: str
    template: str
    pinned: bool = False

    @property
    def placeholders(self) -> frozenset:
        return frozenset(_PLACEHOLDER_RE.findall(self.template))

    def render(self, **values: str) -> str:
        """替换占位符；未提供的占位符渲染为空，多余空行合并"""
        text = _PLACEHOLDER_RE.sub(lambda m: str(values.get(m.group(1), "") or ""), self.template)
        return _BLANK_RUNS.sub("\n\n", text).strip() + "\n"


def parse_fixture(name: str, raw: str) -> PromptFixture:
    pinned = False
    lines = []
    for line in raw.splitlines():
        if line.startswith("## "):
            if line[3:].strip().lower() == "pinned: true":
                pinned = True
            continue
        lines.append(line)
    fixture = PromptFixture(name=name, template="\n".join(lines).strip() + "\n", pinned=pinned)
    unknown = fixture.placeholders - PLACEHOLDERS
    if unknown:
        raise ConfigError(f"提示词 {name} 含未登记的占位符: {', '.join(sorted(unknown))}")
    return fixture


class PromptLibrary:
    """按名称访问提示词模板"""

    def __init__(self, fixtures: Mapping[str, PromptFixture]):
        self._fixtures = dict(fixtures)

    def __contains__(self, name: str) -> bool:
        return name in self._fixtures

    def get(self, name: str) -> PromptFixture:
        try:
            return self._fixtures[name]
        except KeyError:
            raise ConfigError(f"提示词模板不存在: {name}") from None

    def names(self):
        return sorted(self._fixtures)

    @classmethod
    def load(cls, directory: str = DEFAULT_PROMPTS_DIR) -> "PromptLibrary":
        if not os.path.isdir(directory):
            raise ConfigError(f"提示词目录不存在: {directory}")
        fixtures = {}
        for filename in sorted(os.listdir(directory)):
            if not filename.endswith(".txt"):
                continue
            name = filename[:-4]
            with open(os.path.join(directory, filename), "r", encoding="utf-8") as f:
                fixtures[name] = parse_fixture(name, f.read())
        logging.info(f"加载提示词模板 {len(fixtures)} 个")
        return cls(fixtures)


_default_library: Optional[PromptLibrary] = None
_library_lock = threading.Lock()


def get_library() -> PromptLibrary:
    """全局模板库，首次使用时从 fixtures/prompts 加载"""
    global _default_library
    with _library_lock:
        if _default_library is None:
            _default_library = PromptLibrary.load()
        return _default_library


def render(name: str, **values: str) -> str:
    return get_library().get(name).render(**values)
