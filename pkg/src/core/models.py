"""
共享领域类型
所有类型都是不可变值；计划只通过 lifecycle 中的状态转换产生新版本
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterator, Mapping, Optional, Tuple, Union

from src.core.errors import PreconditionViolation


class SubgoalStatus(Enum):
    PENDING = "Pending"
    IN_PROGRESS = "InProgress"
    COMPLETED = "Completed"
    FAILED = "Failed"


class LifecycleEvent(Enum):
    START = "Start"
    CONFIRM_COMPLETE = "ConfirmComplete"
    MARK_FAILED = "MarkFailed"
    RESET_ON_REPLAN = "ResetOnReplan"


class ActionKind(Enum):
    TAP = "Tap"
    SWIPE = "Swipe"
    TYPE_TEXT = "TypeText"
    BACK = "Back"
    LAUNCH_APP = "LaunchApp"
    SAVE_NOTE = "SaveNote"
    READ_NOTE = "ReadNote"
    LIST_NOTES = "ListNotes"
    START_RECORDING = "StartRecording"
    STOP_RECORDING = "StopRecording"
    WAIT = "Wait"

    @classmethod
    def parse(cls, value: Union[str, "ActionKind"]) -> Union[str, "ActionKind"]:
        """已知名称转为枚举，未知名称原样返回，由执行器拒绝"""
        if isinstance(value, ActionKind):
            return value
        try:
            return cls(value)
        except ValueError:
            return value


class AgentRole(Enum):
    SYSTEM = "System"
    PLANNER = "Planner"
    ORCHESTRATOR = "Orchestrator"
    CONTEXTOR = "Contextor"
    CORTEX = "Cortex"
    EXECUTOR = "Executor"
    TOOL = "Tool"


class SelectorTier(Enum):
    RESOURCE_ID = "resource_id"
    COORDINATES = "coordinates"
    TEXT = "text"


class ActionStatus(Enum):
    OK = "Ok"
    FAILED = "Failed"
    ABORTED = "Aborted"


def short_digest(text: str) -> str:
    """16 位十六进制摘要"""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class TaskGoal:
    """自然语言任务目标"""
    id: str
    text: str
    output_schema: Optional[Mapping[str, str]] = None
    step_budget: int = 30
    app_lock: Optional[str] = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise PreconditionViolation("任务目标文本不能为空")
        if self.step_budget < 1:
            raise PreconditionViolation(f"step_budget 必须 ≥ 1: {self.step_budget}")


@dataclass(frozen=True)
class Subgoal:
    id: str
    description: str
    status: SubgoalStatus = SubgoalStatus.PENDING


@dataclass(frozen=True)
class Plan:
    """有序子目标序列"""
    subgoals: Tuple[Subgoal, ...]
    revision: int = 0

    def ids(self) -> Tuple[str, ...]:
        return tuple(sg.id for sg in self.subgoals)

    def get(self, subgoal_id: str) -> Optional[Subgoal]:
        for sg in self.subgoals:
            if sg.id == subgoal_id:
                return sg
        return None

    def active(self) -> Optional[Subgoal]:
        for sg in self.subgoals:
            if sg.status == SubgoalStatus.IN_PROGRESS:
                return sg
        return None

    def next_pending(self) -> Optional[Subgoal]:
        for sg in self.subgoals:
            if sg.status == SubgoalStatus.PENDING:
                return sg
        return None

    def with_status(self, subgoal_id: str, status: SubgoalStatus) -> "Plan":
        subgoals = tuple(replace(sg, status=status) if sg.id == subgoal_id else sg for sg in self.subgoals)
        return replace(self, subgoals=subgoals)

    def all_completed(self) -> bool:
        return bool(self.subgoals) and all(sg.status == SubgoalStatus.COMPLETED for sg in self.subgoals)

    def any_failed(self) -> bool:
        return any(sg.status == SubgoalStatus.FAILED for sg in self.subgoals)

    def render(self) -> str:
        return "\n".join(f"- [{sg.status.value}] {sg.id}: {sg.description}" for sg in self.subgoals)


@dataclass(frozen=True)
class Rect:
    """屏幕像素矩形，右下边界不含"""
    left: int
    top: int
    right: int
    bottom: int

    def contains(self, x: int, y: int) -> bool:
        return self.left <= x < self.right and self.top <= y < self.bottom

    def contains_rect(self, other: "Rect") -> bool:
        return (self.left <= other.left and self.top <= other.top
                and other.right <= self.right and other.bottom <= self.bottom)

    @property
    def area(self) -> int:
        return max(0, self.right - self.left) * max(0, self.bottom - self.top)

    @property
    def center(self) -> Tuple[int, int]:
        return ((self.left + self.right) // 2, (self.top + self.bottom) // 2)


@dataclass(frozen=True)
class UiNode:
    """无障碍层级中的一个节点"""
    node_id: str
    bounds: Rect
    resource_id: Optional[str] = None
    text: Optional[str] = None
    content_desc: Optional[str] = None
    focusable: bool = False
    focused: bool = False
    editable: bool = False
    children: Tuple["UiNode", ...] = ()

    def iter(self) -> Iterator["UiNode"]:
        """先序遍历（文档顺序）"""
        yield self
        for child in self.children:
            yield from child.iter()

    def find(self, node_id: str) -> Optional["UiNode"]:
        for node in self.iter():
            if node.node_id == node_id:
                return node
        return None


@dataclass(frozen=True)
class DeviceState:
    screenshot_digest: str
    hierarchy: UiNode
    focused_package: str
    timestamp: datetime
    seq: int

    @property
    def screen(self) -> str:
        """根节点 id 形如 package/screen"""
        return self.hierarchy.node_id


@dataclass(frozen=True)
class SelectorBundle:
    """元素定位信息：资源 id、坐标、文本三层"""
    resource_id: Optional[str] = None
    coordinates: Optional[Tuple[int, int]] = None
    text_match: Optional[str] = None

    def __post_init__(self):
        if self.resource_id is None and self.coordinates is None and self.text_match is None:
            raise PreconditionViolation("SelectorBundle 至少需要一个选择器")
        if self.coordinates is not None:
            object.__setattr__(self, "coordinates", (int(self.coordinates[0]), int(self.coordinates[1])))

    def canonical(self) -> str:
        parts = []
        if self.resource_id is not None:
            parts.append(f"rid={self.resource_id}")
        if self.coordinates is not None:
            parts.append(f"xy={self.coordinates[0]},{self.coordinates[1]}")
        if self.text_match is not None:
            parts.append(f"text={json.dumps(self.text_match, ensure_ascii=False)}")
        return " ".join(parts)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        if self.resource_id is not None:
            data["resource_id"] = self.resource_id
        if self.coordinates is not None:
            data["coordinates"] = list(self.coordinates)
        if self.text_match is not None:
            data["text_match"] = self.text_match
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SelectorBundle":
        coords = data.get("coordinates")
        return cls(
            resource_id=data.get("resource_id"),
            coordinates=tuple(coords) if coords is not None else None,
            text_match=data.get("text_match"),
        )


def _kind_value(kind: Union[str, ActionKind]) -> str:
    return kind.value if isinstance(kind, ActionKind) else str(kind)


@dataclass(frozen=True)
class ActionDecision:
    """Cortex 给出的单个动作决策"""
    kind: Union[ActionKind, str]
    target: Optional[SelectorBundle] = None
    payload: Optional[str] = None
    reasoning: str = ""

    def __post_init__(self):
        kind = ActionKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == ActionKind.TYPE_TEXT and (self.target is None or not self.payload):
            raise PreconditionViolation("TypeText 需要 target 和 payload")
        if kind == ActionKind.LAUNCH_APP and not self.payload:
            raise PreconditionViolation("LaunchApp 需要 payload（包名）")

    def fingerprint(self) -> str:
        selector = self.target.canonical() if self.target else ""
        return short_digest(f"{_kind_value(self.kind)}|{selector}|{self.payload or ''}")

    def describe(self) -> str:
        parts = [_kind_value(self.kind)]
        if self.target is not None:
            parts.append(self.target.canonical())
        if self.payload is not None:
            parts.append(json.dumps(self.payload, ensure_ascii=False))
        return " ".join(parts)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": _kind_value(self.kind), "reasoning": self.reasoning}
        if self.target is not None:
            data["target"] = self.target.to_dict()
        if self.payload is not None:
            data["payload"] = self.payload
        return data


@dataclass(frozen=True)
class CortexOutput:
    """双输出：动作与完成信号可以同时出现"""
    actions: Tuple[ActionDecision, ...] = ()
    completions: FrozenSet[str] = frozenset()
    pivot: Optional[str] = None

    @property
    def is_empty(self) -> bool:
        return not self.actions and not self.completions


@dataclass(frozen=True)
class AgentMessage:
    """对话历史中的一条消息；meta 是 content 的结构化镜像"""
    role: AgentRole
    content: str
    pinned: bool = False
    cycle_index: int = 0
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def render(self) -> str:
        return f"[{self.cycle_index}] {self.role.value}: {self.content}"


@dataclass(frozen=True)
class ToolCall:
    """执行器产生的工具调用"""
    name: Union[ActionKind, str]
    selector: Optional[SelectorBundle] = None
    payload: Optional[str] = None
    reasoning: str = ""

    def __post_init__(self):
        object.__setattr__(self, "name", ActionKind.parse(self.name))

    def describe(self) -> str:
        parts = [_kind_value(self.name)]
        if self.selector is not None:
            parts.append(self.selector.canonical())
        if self.payload is not None:
            parts.append(json.dumps(self.payload, ensure_ascii=False))
        return " ".join(parts)


@dataclass(frozen=True)
class VerificationFeedback:
    verified: bool
    expected: str
    actual: str
    tier_used: Optional[SelectorTier]
    attempts: int

    def describe(self) -> str:
        tier = self.tier_used.value if self.tier_used else "-"
        return (f"verified={str(self.verified).lower()} expected={json.dumps(self.expected, ensure_ascii=False)} "
                f"actual={json.dumps(self.actual, ensure_ascii=False)} attempts={self.attempts} tier={tier}")


@dataclass(frozen=True)
class ActionResult:
    status: ActionStatus
    detail: str = ""
    error: Optional[str] = None
    feedback: Optional[VerificationFeedback] = None
    data: Optional[Any] = field(default=None, compare=False)

    @property
    def ok(self) -> bool:
        return self.status == ActionStatus.OK

    @classmethod
    def success(cls, detail: str = "", **kwargs) -> "ActionResult":
        return cls(ActionStatus.OK, detail, **kwargs)

    @classmethod
    def failure(cls, error: str, detail: str = "", **kwargs) -> "ActionResult":
        return cls(ActionStatus.FAILED, detail, error=error, **kwargs)

    @classmethod
    def aborted(cls) -> "ActionResult":
        return cls(ActionStatus.ABORTED, "前序调用失败，已中止")


@dataclass(frozen=True)
class FaultProfile:
    """模拟设备的故障注入参数"""
    char_drop_prob: float = 0.0
    focus_steal_prob: float = 0.0
    latency_ticks: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("char_drop_prob", "focus_steal_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise PreconditionViolation(f"{name} 必须在 [0,1] 内: {value}")
        if self.latency_ticks < 0:
            raise PreconditionViolation(f"latency_ticks 不能为负: {self.latency_ticks}")

    def with_seed(self, seed: int) -> "FaultProfile":
        return replace(self, rng_seed=seed)


@dataclass(frozen=True)
class Note:
    key: str
    value: str
    written_at_cycle: int = 0
