"""
任务级键值便笺
笔记在重规划与历史摘要之后依然保留，任务之间不共享
"""

import logging
import threading
from typing import Dict, List, Optional

from src.core.errors import PreconditionViolation
from src.core.models import Note


class Scratchpad:
    """save_note / read_note / list_notes 三个工具的后端"""

    def __init__(self):
        self._notes: Dict[str, Note] = {}
        self._lock = threading.Lock()

    def save_note(self, key: str, value: str, cycle_index: int = 0) -> None:
        """
        保存笔记；同名覆盖时保留首次写入的顺序

        Args:
            key: 非空键
            value: 内容
            cycle_index: 写入时的决策周期
        """
        if not key:
            raise PreconditionViolation("笔记键不能为空")
        with self._lock:
            self._notes[key] = Note(key=key, value=value, written_at_cycle=cycle_index)
        logging.debug(f"保存笔记 {key} (周期 {cycle_index})")

    def read_note(self, key: str) -> Optional[str]:
        with self._lock:
            note = self._notes.get(key)
        return note.value if note else None

    def list_notes(self) -> List[str]:
        with self._lock:
            return list(self._notes)

    def get(self, key: str) -> Optional[Note]:
        with self._lock:
            return self._notes.get(key)

    def as_dict(self) -> Dict[str, str]:
        with self._lock:
            return {key: note.value for key, note in self._notes.items()}

    def render(self) -> str:
        notes = self.as_dict()
        if not notes:
            return "(no notes)"
        return "\n".join(f"- {key}: {value}" for key, value in notes.items())

    def clear(self) -> None:
        with self._lock:
            self._notes.clear()
