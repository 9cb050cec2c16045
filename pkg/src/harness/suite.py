"""
任务集运行器
每个任务使用独立的模拟设备与运行 id；单个任务出错只记录在报告中，不中断整个任务集
"""

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from src.config.config_manager import EngineConfig
from src.core.errors import AgentLoomError, ConfigError, UnknownTask
from src.core.models import FaultProfile, TaskGoal
from src.device.sim_app import SimApp, load_apps, load_scenarios
from src.device.simulator import SimDevice
from src.graph.engine import run_task
from src.graph.state import AblationFlags, RunResult
from src.harness.cost import CostLedger
from src.harness.predicates import SuccessContext, check_success, validate_predicate
from src.harness.trace import TraceWriter, trace_hash
from src.llm.base import LlmBackend
from src.llm.oracle import OracleBackend, OracleScript, Perturbation, load_scripts

BackendFactory = Callable[["TaskSpec"], LlmBackend]


@dataclass(frozen=True)
class TaskSpec:
    id: str
    goal: str
    snapshot: str
    predicate: str
    params: Mapping[str, Any] = field(default_factory=dict)
    tags: Tuple[str, ...] = ()
    step_budget: int = 30
    app_lock: Optional[str] = None
    output_schema: Optional[Mapping[str, str]] = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskSpec":
        try:
            predicate = data["predicate"]
            spec = cls(
                id=data["id"],
                goal=data["goal"],
                snapshot=data.get("snapshot", "home"),
                predicate=predicate["name"],
                params=predicate.get("params", {}),
                tags=tuple(data.get("tags") or ()),
                step_budget=int(data.get("step_budget", 30)),
                app_lock=data.get("app_lock"),
                output_schema=data.get("output_schema"),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"任务定义缺少字段 {e}: {data.get('id', '?')}") from None
        validate_predicate(spec.predicate, spec.params)
        return spec

    def to_goal(self) -> TaskGoal:
        return TaskGoal(self.id, self.goal, output_schema=self.output_schema, step_budget=self.step_budget,
                        app_lock=self.app_lock)


def load_suite(path: str) -> List[TaskSpec]:
    """加载 JSONL 任务集，每行一个任务"""
    if not os.path.exists(path):
        raise ConfigError(f"任务集文件不存在: {path}")
    tasks = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                tasks.append(TaskSpec.from_dict(json.loads(line)))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}:{lineno} 不是合法 JSON: {e}") from None
    ids = [t.id for t in tasks]
    if len(ids) != len(set(ids)):
        raise ConfigError(f"任务 id 重复: {path}")
    return tasks


def select_tasks(suite: Sequence[TaskSpec], task_ids: Sequence[str]) -> List[TaskSpec]:
    by_id = {t.id: t for t in suite}
    missing = [tid for tid in task_ids if tid not in by_id]
    if missing:
        raise UnknownTask(f"任务不存在: {', '.join(missing)}")
    return [by_id[tid] for tid in task_ids]


@dataclass(frozen=True)
class Fixtures:
    """模拟应用、初始场景与预言机脚本"""
    apps: Mapping[str, SimApp]
    scenarios: Mapping[str, Mapping[str, Any]]
    scripts: Mapping[str, OracleScript]

    def device(self, task: TaskSpec, faults: FaultProfile) -> SimDevice:
        scenario = self.scenarios.get(task.snapshot)
        if scenario is None:
            raise ConfigError(f"任务 {task.id} 引用了不存在的场景: {task.snapshot}")
        return SimDevice(self.apps, faults, scenario)

    def oracle(self, models: Optional[Mapping[str, str]] = None,
               perturbation: Optional[Perturbation] = None) -> OracleBackend:
        return OracleBackend(self.scripts, models, perturbation)


def load_fixtures(directory: str) -> Fixtures:
    if not os.path.isdir(directory):
        raise ConfigError(f"fixtures 目录不存在: {directory}")
    return Fixtures(
        apps=load_apps(os.path.join(directory, "apps")),
        scenarios=load_scenarios(os.path.join(directory, "scenarios.yaml")),
        scripts=load_scripts(os.path.join(directory, "scripts")),
    )


def task_seed(seed: int, task_id: str) -> int:
    """由任务集种子与任务 id 派生设备随机种子"""
    digest = hashlib.sha256(f"{seed}:{task_id}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


@dataclass
class TaskOutcome:
    task_id: str
    tags: Tuple[str, ...]
    success: bool
    cycles_used: int
    stop_reason: str
    error: Optional[str]
    usage: Dict[str, Dict[str, int]]
    trace_hash: str
    ledger: CostLedger = field(default_factory=CostLedger, repr=False)
    result: Optional[RunResult] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id, "tags": list(self.tags), "success": self.success,
            "cycles_used": self.cycles_used, "stop_reason": self.stop_reason, "error": self.error,
            "usage": self.usage, "trace_hash": self.trace_hash,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskOutcome":
        ledger = CostLedger()
        return cls(data["task_id"], tuple(data.get("tags") or ()), bool(data["success"]), int(data["cycles_used"]),
                   data["stop_reason"], data.get("error"), dict(data.get("usage") or {}), data["trace_hash"], ledger)


@dataclass
class SuiteReport:
    label: str
    seed: int
    fault_profile: str
    outcomes: List[TaskOutcome] = field(default_factory=list)

    @property
    def task_count(self) -> int:
        return len(self.outcomes)

    @property
    def success_rate(self) -> Optional[float]:
        """任务集为空时没有成功率"""
        if not self.outcomes:
            return None
        return sum(1 for o in self.outcomes if o.success) / len(self.outcomes)

    def ledger(self) -> CostLedger:
        return CostLedger.combine(o.ledger for o in self.outcomes)

    def token_totals(self) -> Dict[str, int]:
        totals = {"input_tokens": 0, "output_tokens": 0, "calls": 0}
        for outcome in self.outcomes:
            for usage in outcome.usage.values():
                for key in totals:
                    totals[key] += int(usage.get(key, 0))
        return totals

    def outcome(self, task_id: str) -> TaskOutcome:
        for o in self.outcomes:
            if o.task_id == task_id:
                return o
        raise UnknownTask(f"报告中没有任务: {task_id}")

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "label": self.label, "seed": self.seed, "fault_profile": self.fault_profile,
            "task_count": self.task_count, "success_rate": self.success_rate,
            "token_totals": self.token_totals(),
            "tasks": [o.to_dict() for o in self.outcomes],
        }
        if not self.outcomes:
            data["note"] = "zero tasks"
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)

    def save(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SuiteReport":
        return cls(data["label"], int(data["seed"]), data["fault_profile"],
                   [TaskOutcome.from_dict(t) for t in data.get("tasks") or []])

    @classmethod
    def load(cls, path: str) -> "SuiteReport":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _outcome(task: TaskSpec, result: Optional[RunResult], error: Optional[str]) -> TaskOutcome:
    if result is None:
        return TaskOutcome(task.id, task.tags, False, 0, "error", error, {}, "")
    ledger = result.ledger or CostLedger.from_trace(result.trace)
    return TaskOutcome(
        task_id=task.id, tags=task.tags, success=result.success, cycles_used=result.cycles_used,
        stop_reason=result.stop_reason, error=error or result.error,
        usage={role: usage.to_dict() for role, usage in ledger.by_role().items()},
        trace_hash=trace_hash(result.trace), ledger=ledger, result=result,
    )


def run_one(task: TaskSpec, fixtures: Fixtures, backend: LlmBackend, flags: AblationFlags, seed: int,
            faults: FaultProfile, config: Optional[EngineConfig] = None,
            trace_dir: Optional[str] = None) -> TaskOutcome:
    """运行单个任务并捕获所有错误"""
    try:
        device = fixtures.device(task, faults.with_seed(task_seed(seed, task.id)))
    except AgentLoomError as e:
        logging.error(f"任务 {task.id} 初始化失败: {e}")
        return _outcome(task, None, f"{type(e).__name__}: {e}")

    def success_check(dev, notes):
        return check_success(task.predicate, task.params, SuccessContext(dev, notes))

    sink = TraceWriter(os.path.join(trace_dir, f"{task.id}.trace.jsonl")) if trace_dir else None
    try:
        result = run_task(task.to_goal(), device, backend, flags, config=config, success_check=success_check,
                          trace_sink=sink)
        return _outcome(task, result, None)
    except AgentLoomError as e:
        logging.info(f"任务 {task.id} 结束: {type(e).__name__}")
        return _outcome(task, e.result, type(e).__name__ if e.result is not None else f"{type(e).__name__}: {e}")
    except Exception as e:
        logging.error(f"任务 {task.id} 运行失败: {e}")
        return _outcome(task, None, f"{type(e).__name__}: {e}")


def run_suite(suite: Sequence[TaskSpec], flags: AblationFlags, backend: Union[LlmBackend, BackendFactory],
              seed: int, fixtures: Fixtures, faults: Optional[FaultProfile] = None, fault_name: str = "none",
              max_workers: int = 1, config: Optional[EngineConfig] = None,
              trace_dir: Optional[str] = None) -> SuiteReport:
    """
    运行任务集

    Args:
        suite: 任务列表
        flags: 消融开关
        backend: 共享后端，或按任务创建后端的工厂
        seed: 任务集种子，每个任务的设备种子由它派生
        fixtures: 模拟应用与场景
        faults: 故障注入参数（种子会被替换）
        fault_name: 报告中记录的故障预设名
        max_workers: 并行任务数
        config: 引擎配置
        trace_dir: 非空时为每个任务写出轨迹文件

    Returns:
        SuiteReport，任务顺序与输入一致
    """
    faults = faults or FaultProfile()
    factory: BackendFactory = backend if callable(backend) and not isinstance(backend, LlmBackend) \
        else (lambda _task: backend)
    report = SuiteReport(flags.label(), seed, fault_name)
    if not suite:
        logging.info("任务集为空")
        return report

    def job(task: TaskSpec) -> TaskOutcome:
        return run_one(task, fixtures, factory(task), flags, seed, faults, config, trace_dir)

    with ThreadPoolExecutor(max_workers=max(1, max_workers), thread_name_prefix="suite") as pool:
        report.outcomes = list(pool.map(job, suite))

    passed = sum(1 for o in report.outcomes if o.success)
    logging.info(f"任务集 [{report.label}] 完成: {passed}/{report.task_count}")
    return report
