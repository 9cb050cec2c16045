"""
元认知分析
每次 Cortex 决策前分析动作历史：循环检测、策略停滞评估、已完成动作证据累积
"""

from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

from src.core.errors import PreconditionViolation
from src.core.models import ActionDecision, DeviceState, Plan, SubgoalStatus, short_digest

DEFAULT_WINDOW = 8
DEFAULT_STAGNATION_K = 4


def state_fingerprint(state: DeviceState) -> str:
    """只取画面摘要与前台包名；时间戳和 seq 不参与"""
    return short_digest(f"{state.screenshot_digest}|{state.focused_package}")


def action_fingerprint(decision: ActionDecision) -> str:
    return decision.fingerprint()


@dataclass(frozen=True)
class HistoryEntry:
    """每个已执行的动作决策对应一条"""
    cycle_index: int
    state_fingerprint: str
    action_fingerprint: str
    subgoal_id: str
    ok: Optional[bool] = None

    @property
    def key(self) -> Tuple[str, str]:
        return (self.state_fingerprint, self.action_fingerprint)


@dataclass(frozen=True)
class CycleFinding:
    period: int
    occurrences: int
    span: Tuple[int, int]  # 在完整历史中的下标区间（闭区间）

    def to_dict(self) -> Dict[str, Any]:
        return {"period": self.period, "occurrences": self.occurrences, "span": list(self.span)}


@dataclass(frozen=True)
class MetacogReport:
    cycle: Optional[CycleFinding] = None
    stagnant: bool = False
    completed_evidence: FrozenSet[str] = field(default_factory=frozenset)

    @property
    def needs_pivot(self) -> bool:
        return self.cycle is not None or self.stagnant

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cycle": self.cycle.to_dict() if self.cycle else None,
            "stagnant": self.stagnant,
            "completed_evidence": sorted(self.completed_evidence),
        }

    def render(self) -> str:
        lines = []
        if self.cycle:
            lines.append(f"CYCLE DETECTED: period={self.cycle.period} occurrences={self.cycle.occurrences} "
                         f"span={self.cycle.span[0]}..{self.cycle.span[1]} -- the last actions repeat without progress")
        else:
            lines.append("cycle: none")
        lines.append(f"stagnant: {'yes' if self.stagnant else 'no'}")
        if self.completed_evidence:
            lines.append(f"already completed actions: {', '.join(sorted(self.completed_evidence))}")
        return "\n".join(lines)


def detect_cycle(entries: Sequence[HistoryEntry], window: int = DEFAULT_WINDOW) -> Optional[CycleFinding]:
    """
    在最近 window 条记录中寻找最小周期

    周期 p 成立的条件: 末尾 2p 条记录是同一 (状态, 动作) 序列的两次重复。
    occurrences 为窗口内从末尾向前连续重复的完整次数。
    """
    if window < 2:
        raise PreconditionViolation(f"window 必须 ≥ 2: {window}")
    keys = [entry.key for entry in entries[-window:]]
    n = len(keys)
    offset = len(entries) - n
    for period in range(1, n // 2 + 1):
        block = keys[n - period:]
        if keys[n - 2 * period:n - period] != block:
            continue
        occurrences = 2
        while (occurrences + 1) * period <= n and \
                keys[n - (occurrences + 1) * period:n - occurrences * period] == block:
            occurrences += 1
        start = offset + n - occurrences * period
        return CycleFinding(period=period, occurrences=occurrences, span=(start, len(entries) - 1))
    return None


def _is_stagnant(entries: Sequence[HistoryEntry], active_id: Optional[str], k: int) -> bool:
    if active_id is None or len(entries) < k:
        return False
    tail = entries[-k:]
    return all(e.subgoal_id == active_id for e in tail) and \
        len({e.state_fingerprint for e in tail}) == 1


def evaluate(entries: Sequence[HistoryEntry], plan: Plan, window: int = DEFAULT_WINDOW,
             stagnation_k: int = DEFAULT_STAGNATION_K) -> MetacogReport:
    """生成元认知报告；只作为提示注入 Cortex，不直接改变控制流"""
    if not entries:
        return MetacogReport()
    active = plan.active()
    completed = {sg.id for sg in plan.subgoals if sg.status == SubgoalStatus.COMPLETED}
    evidence = frozenset(e.action_fingerprint for e in entries if e.ok and e.subgoal_id in completed)
    return MetacogReport(
        cycle=detect_cycle(entries, window),
        stagnant=_is_stagnant(entries, active.id if active else None, stagnation_k),
        completed_evidence=evidence,
    )


def entries_from(decisions: Sequence[ActionDecision], state: DeviceState, cycle_index: int, subgoal_id: str,
                 oks: Sequence[Optional[bool]]) -> List[HistoryEntry]:
    """把本周期执行过的决策转换为历史记录（Aborted 的不算已执行）"""
    fp = state_fingerprint(state)
    return [HistoryEntry(cycle_index, fp, action_fingerprint(d), subgoal_id, ok)
            for d, ok in zip(decisions, oks) if ok is not None]
