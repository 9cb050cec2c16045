"""
执行图携带的状态与路由结果类型
"""

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional

from src.core.errors import PreconditionViolation
from src.core.models import AgentMessage, DeviceState, Plan, TaskGoal


@dataclass(frozen=True)
class AblationFlags:
    """各架构组件的开关，默认全部启用"""
    multi_agent: bool = True
    post_validation: bool = True
    sequential_exec: bool = True
    hybrid_perception: bool = True
    metacog: bool = True
    scratchpad: bool = True
    data_fidelity_prompt: bool = True
    video: bool = True

    @classmethod
    def components(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def disabled(cls, names: Iterable[str]) -> "AblationFlags":
        """按组件名关闭若干开关"""
        flags = cls()
        for name in names:
            if name not in cls.components():
                raise PreconditionViolation(f"未知组件: {name}（可选: {', '.join(cls.components())}）")
            flags = replace(flags, **{name: False})
        return flags

    def without(self, name: str) -> "AblationFlags":
        if name not in self.components():
            raise PreconditionViolation(f"未知组件: {name}")
        return replace(self, **{name: False})

    def disabled_names(self) -> List[str]:
        return [name for name in self.components() if not getattr(self, name)]

    def label(self) -> str:
        off = self.disabled_names()
        return "full" if not off else "-" + ",-".join(off)


class Branch(Enum):
    ORCHESTRATOR = "orchestrator_path"
    EXECUTOR = "executor_path"
    STALL = "stall_path"


class RouteKind(Enum):
    CONTINUE = "Continue"
    REPLAN = "Replan"
    TERMINATE = "Terminate"


@dataclass(frozen=True)
class RouteDecision:
    kind: RouteKind
    success: Optional[bool] = None
    reason: str = ""
    failed_subgoal: Optional[str] = None  # 停滞判定时需要标记失败的子目标

    def __str__(self):
        if self.kind == RouteKind.TERMINATE:
            return f"Terminate(success={str(self.success).lower()})"
        return self.kind.value


@dataclass
class RunState:
    """执行循环携带的状态，只在单个任务运行内使用"""
    goal: TaskGoal
    plan: Plan
    flags: AblationFlags
    history: List[AgentMessage] = field(default_factory=list)
    last_device_state: Optional[DeviceState] = None
    cycle_index: int = 0
    stall_count: int = 0
    last_exec_seq: int = 0
    replans: int = 0
    history_peak: int = 0  # 摘要之后历史长度的最大值


@dataclass
class RunResult:
    """单次任务运行的结果"""
    task_id: str
    success: bool
    cycles_used: int
    stop_reason: str
    trace: List[Any] = field(default_factory=list)
    ledger: Any = None
    notes: Dict[str, str] = field(default_factory=dict)
    output: Optional[Dict[str, Any]] = None
    plan: Optional[Plan] = None
    replans: int = 0
    error: Optional[str] = None
    history_peak: int = 0

    @property
    def cost_ledger(self):
        return self.ledger

    def summary(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "success": self.success,
            "cycles_used": self.cycles_used,
            "stop_reason": self.stop_reason,
            "replans": self.replans,
            "notes": self.notes,
            "output": self.output,
            "error": self.error,
        }
