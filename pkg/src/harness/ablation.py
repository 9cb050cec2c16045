"""
消融扫描
完整系统跑一次，每个组件单独关闭再各跑一次，比较成功率
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from src.config.config_manager import EngineConfig
from src.core.errors import PreconditionViolation
from src.core.models import FaultProfile
from src.graph.state import AblationFlags
from src.harness.suite import BackendFactory, Fixtures, SuiteReport, TaskSpec, run_suite
from src.llm.base import LlmBackend

FULL = "full"


@dataclass
class AblationReport:
    reports: Dict[str, SuiteReport] = field(default_factory=dict)  # 配置名 → 报告，完整系统在前

    @property
    def full(self) -> SuiteReport:
        return self.reports[FULL]

    def delta(self, name: str) -> Optional[float]:
        """相对完整系统的成功率变化（百分点）"""
        base, other = self.full.success_rate, self.reports[name].success_rate
        if base is None or other is None:
            return None
        return round((other - base) * 100.0, 6)

    def rows(self) -> List[Dict[str, Any]]:
        rows = []
        for name, report in self.reports.items():
            sr = report.success_rate
            rows.append({
                "configuration": name,
                "success_rate": None if sr is None else round(sr * 100.0, 6),
                "delta_sr": 0.0 if name == FULL else self.delta(name),
            })
        return rows

    def matrix(self) -> Dict[str, Dict[str, bool]]:
        """任务 → 配置 → 是否成功"""
        table: Dict[str, Dict[str, bool]] = {}
        for name, report in self.reports.items():
            for outcome in report.outcomes:
                table.setdefault(outcome.task_id, {})[name] = outcome.success
        return table

    def new_failures(self, name: str) -> List[str]:
        """完整系统成功而该配置失败的任务"""
        return [task for task, row in self.matrix().items() if row.get(FULL) and not row.get(name)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": self.rows(),
            "matrix": self.matrix(),
            "reports": {name: r.to_dict() for name, r in self.reports.items()},
        }

    def save(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n")


def ablation_sweep(suite: Sequence[TaskSpec], components: Sequence[str], backend: Union[LlmBackend, BackendFactory],
                   seed: int, fixtures: Fixtures, faults: Optional[FaultProfile] = None, fault_name: str = "none",
                   max_workers: int = 1, config: Optional[EngineConfig] = None,
                   base_flags: Optional[AblationFlags] = None) -> AblationReport:
    """
    对每个组件做一次单项关闭的任务集运行

    Raises:
        PreconditionViolation: 组件名不是 AblationFlags 的字段
    """
    unknown = [c for c in components if c not in AblationFlags.components()]
    if unknown:
        raise PreconditionViolation(f"未知组件: {', '.join(unknown)}（可选: {', '.join(AblationFlags.components())}）")
    base = base_flags or AblationFlags()
    report = AblationReport()
    report.reports[FULL] = run_suite(suite, base, backend, seed, fixtures, faults, fault_name, max_workers, config)
    for component in components:
        flags = base.without(component)
        logging.info(f"消融: 关闭 {component}")
        report.reports[f"-{component}"] = run_suite(suite, flags, backend, seed, fixtures, faults, fault_name,
                                                    max_workers, config)
    return report
