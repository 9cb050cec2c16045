"""
执行轨迹记录
每个节点进入/退出产生一条 TraceRecord；文件格式为每行一条 JSON 的追加式日志，格式见 docs/TRACE_FORMAT.md
"""

import hashlib
import json
import os
import threading
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from src.core.errors import PreconditionViolation
from src.core.models import short_digest
from src.llm.base import TokenUsage


@dataclass(frozen=True)
class TraceRecord:
    run_id: str
    cycle_index: int
    node: str
    start: int
    end: int
    input_digest: str
    output_digest: str
    usage: Optional[TokenUsage] = None
    status: str = "ok"
    seq: Optional[int] = None  # 节点观察到或留下的设备 seq

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id, "cycle_index": self.cycle_index, "node": self.node,
            "start": self.start, "end": self.end,
            "input_digest": self.input_digest, "output_digest": self.output_digest,
            "usage": self.usage.to_dict() if self.usage else None,
            "status": self.status, "seq": self.seq,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TraceRecord":
        usage = data.get("usage")
        return cls(
            run_id=data["run_id"], cycle_index=int(data["cycle_index"]), node=data["node"],
            start=int(data["start"]), end=int(data["end"]),
            input_digest=data["input_digest"], output_digest=data["output_digest"],
            usage=TokenUsage.from_dict(usage) if usage else None,
            status=data.get("status", "ok"), seq=data.get("seq"),
        )


def digest(value: Any) -> str:
    """任意值的稳定摘要"""
    if isinstance(value, str):
        return short_digest(value)
    return short_digest(json.dumps(value, sort_keys=True, ensure_ascii=False, default=str))


class TraceWriter:
    """追加式 JSONL 写入器"""

    def __init__(self, path: str):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.path = path
        self._lock = threading.Lock()
        open(path, "w", encoding="utf-8").close()

    def append(self, record: TraceRecord) -> None:
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(record.to_line() + "\n")


class TraceRecorder:
    """
    单次运行的记录器

    start/end 是单调递增的序号而不是墙钟时间，因此同样的输入得到逐字节相同的轨迹
    """

    def __init__(self, run_id: str, sink: Optional[TraceWriter] = None):
        self.run_id = run_id
        self.records: List[TraceRecord] = []
        self._next = 0
        self._sink = sink
        self._lock = threading.Lock()

    def start(self) -> int:
        with self._lock:
            ordinal = self._next
            self._next += 1
            return ordinal

    def record(self, cycle_index: int, node: str, start: int, input_value: Any, output_value: Any,
               usage: Optional[TokenUsage] = None, status: str = "ok", seq: Optional[int] = None) -> TraceRecord:
        with self._lock:
            end = self._next
            self._next += 1
            rec = TraceRecord(self.run_id, cycle_index, node, start, end, digest(input_value), digest(output_value),
                              usage, status, seq)
            self._append(rec)
        return rec

    def add(self, cycle_index: int, node: str, input_value: Any, output_value: Any, **kwargs) -> TraceRecord:
        """开始与结束之间没有其他记录的节点"""
        return self.record(cycle_index, node, self.start(), input_value, output_value, **kwargs)

    def _append(self, rec: TraceRecord):
        self.records.append(rec)
        if self._sink is not None:
            self._sink.append(rec)

    def branch(self) -> "TraceRecorder":
        """并行分支使用的独立记录器，汇合时再按固定顺序合并"""
        return TraceRecorder(self.run_id)

    def merge(self, branch: "TraceRecorder") -> None:
        """把分支记录的序号平移到当前计数之后"""
        with self._lock:
            offset = self._next
            for rec in sorted(branch.records, key=lambda r: r.start):
                self._append(replace(rec, start=rec.start + offset, end=rec.end + offset))
            self._next += branch._next


def write_trace(path: str, records: Iterable[TraceRecord]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(rec.to_line() + "\n")


def read_lines(path: str) -> List[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def read_trace(path: str) -> List[TraceRecord]:
    records = []
    for lineno, line in enumerate(read_lines(path), start=1):
        try:
            records.append(TraceRecord.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as e:
            raise PreconditionViolation(f"轨迹第 {lineno} 行无法解析: {e}") from None
    return records


def trace_hash(records: Sequence[TraceRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(rec.to_line().encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def compare_lines(expected: Sequence[str], actual: Sequence[str]) -> Optional[int]:
    """返回第一条不一致记录的序号（从 1 开始）；完全一致返回 None"""
    for index, (a, b) in enumerate(zip(expected, actual), start=1):
        if a != b:
            return index
    if len(expected) != len(actual):
        return min(len(expected), len(actual)) + 1
    return None


def compare_traces(expected: Sequence[TraceRecord], actual: Sequence[TraceRecord]) -> Optional[int]:
    return compare_lines([r.to_line() for r in expected], [r.to_line() for r in actual])
