"""
AgentLoom 命令行
子命令: run / bench / ablate / replay / analyze
退出码: 0 成功；1 任务失败或回放不一致；2 配置错误
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Mapping, Optional

from src.config.config_manager import get_fault_profile, get_harness_config, get_llm_config
from src.core.errors import AgentLoomError, BudgetExhausted, ConfigError, HarnessError, PreconditionViolation
from src.core.models import FaultProfile
from src.graph.engine import run_task
from src.graph.state import AblationFlags, RunResult
from src.harness import report as reports
from src.harness.ablation import ablation_sweep
from src.harness.cost import CostLedger, RoleUsage, cost_table, load_pricing, load_profiles
from src.harness.pareto import ConfigPoint, load_points
from src.harness.predicates import SuccessContext, check_success
from src.harness.suite import (
    Fixtures, SuiteReport, TaskSpec, load_fixtures, load_suite, run_suite, select_tasks, task_seed,
)
from src.harness.trace import TraceWriter, compare_lines, read_lines, trace_hash
from src.llm.base import LlmBackend
from src.llm.scripted import RecordingBackend, ScriptBook, ScriptedBackend

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
TRACE_SUFFIX = ".trace.jsonl"


def build_parser() -> argparse.ArgumentParser:
    harness = get_harness_config()
    parser = argparse.ArgumentParser(prog="agentloom", description="AgentLoom 多智能体移动端自动化")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--backend", choices=["scripted", "live"], default="scripted", help="LLM 后端")
        p.add_argument("--fixtures", default=harness.resolve(harness.fixtures_dir), help="fixtures 目录")
        p.add_argument("--suite", default=harness.resolve(harness.suite_file), help="任务集文件")
        p.add_argument("--seed", type=int, default=harness.seed, help="随机种子")
        p.add_argument("--disable", action="append", default=[], metavar="COMPONENT",
                       help=f"关闭组件，可重复: {', '.join(AblationFlags.components())}")
        p.add_argument("--fault", default="none", help="故障预设")
        p.add_argument("--profile", default=None, help="模型方案名")
        p.add_argument("--out", default=harness.resolve(harness.output_dir), help="输出目录")

    run = sub.add_parser("run", help="运行单个任务")
    common(run)
    target = run.add_mutually_exclusive_group(required=True)
    target.add_argument("--task", help="任务集中的任务 id")
    target.add_argument("--goal", help="自然语言目标（使用 --snapshot 指定起始场景）")
    run.add_argument("--snapshot", default="home", help="--goal 模式的起始场景")
    run.add_argument("--budget", type=int, default=None, help="覆盖决策周期预算")

    bench = sub.add_parser("bench", help="运行任务集")
    common(bench)
    bench.add_argument("--workers", type=int, default=harness.max_workers, help="并行任务数")

    ablate = sub.add_parser("ablate", help="消融扫描")
    common(ablate)
    ablate.add_argument("--component", action="append", default=None, help="参与扫描的组件，缺省为全部")
    ablate.add_argument("--workers", type=int, default=harness.max_workers, help="并行任务数")

    replay = sub.add_parser("replay", help="用脚本库严格回放并校验轨迹")
    replay.add_argument("trace", help=f"<task>{TRACE_SUFFIX} 文件")

    analyze = sub.add_parser("analyze", help="成本表与 Pareto 前沿")
    analyze.add_argument("--points", default=harness.resolve(os.path.join(harness.fixtures_dir, "reference_points.yaml")),
                         help="配置点文件")
    analyze.add_argument("--report", default=None, help="bench 输出的报告，按各模型方案重新定价")
    analyze.add_argument("--pricing", default=harness.resolve(harness.pricing_file), help="价格表")
    analyze.add_argument("--profiles", default=harness.resolve(harness.profiles_file), help="模型方案")
    return parser


# ---- 组装 ----

def _models(profile: Optional[str]) -> Optional[Dict[str, str]]:
    name = profile or get_llm_config().profile
    harness = get_harness_config()
    path = harness.resolve(harness.profiles_file)
    if not os.path.exists(path):
        return None
    profiles = load_profiles(path)
    if name not in profiles:
        raise ConfigError(f"未知模型方案: {name}（可选: {', '.join(profiles)}）")
    return profiles[name]


def _backend(args, fixtures: Fixtures, models: Optional[Mapping[str, str]]) -> LlmBackend:
    if args.backend == "live":
        from src.llm.live import LiveBackend
        return LiveBackend(get_llm_config(), models)
    return fixtures.oracle(models)


def _fixtures(path: str) -> Fixtures:
    if not os.path.isdir(path):
        raise ConfigError(f"scripted 后端需要 fixtures 目录: {path}")
    return load_fixtures(path)


def _flags(disabled: List[str]) -> AblationFlags:
    try:
        return AblationFlags.disabled(disabled)
    except PreconditionViolation as e:
        raise ConfigError(str(e)) from None


def _faults(name: str) -> FaultProfile:
    return get_fault_profile(name)


def _task_for(args) -> TaskSpec:
    if args.task:
        task = select_tasks(load_suite(args.suite), [args.task])[0]
    else:
        task = TaskSpec.from_dict({
            "id": "adhoc", "goal": args.goal, "snapshot": args.snapshot,
            "predicate": {"name": "all_of", "params": {"predicates": []}},
        })
    if args.budget is not None:
        data = _task_dict(task)
        data["step_budget"] = args.budget
        task = TaskSpec.from_dict(data)
    return task


def _task_dict(task: TaskSpec) -> Dict[str, Any]:
    return {
        "id": task.id, "goal": task.goal, "snapshot": task.snapshot,
        "predicate": {"name": task.predicate, "params": dict(task.params)},
        "tags": list(task.tags), "step_budget": task.step_budget, "app_lock": task.app_lock,
        "output_schema": dict(task.output_schema) if task.output_schema else None,
    }


def _run(task: TaskSpec, fixtures: Fixtures, backend: LlmBackend, flags: AblationFlags, faults: FaultProfile,
         run_id: Optional[str] = None, sink: Optional[TraceWriter] = None) -> RunResult:
    device = fixtures.device(task, faults)

    def success_check(dev, notes):
        return check_success(task.predicate, task.params, SuccessContext(dev, notes))

    try:
        return run_task(task.to_goal(), device, backend, flags, success_check=success_check, run_id=run_id,
                        trace_sink=sink)
    except AgentLoomError as e:
        if e.result is None:
            raise
        return e.result


def _print_result(result: RunResult):
    print(json.dumps(result.summary(), ensure_ascii=False, sort_keys=True, indent=2))
    print(f"trace_hash: {trace_hash(result.trace)}")


# ---- 子命令 ----

def cmd_run(args) -> int:
    fixtures = _fixtures(args.fixtures)
    task = _task_for(args)
    flags = _flags(args.disable)
    models = _models(args.profile)
    faults = _faults(args.fault).with_seed(task_seed(args.seed, task.id))
    recording = RecordingBackend(_backend(args, fixtures, models))

    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, task.id)
    sink = TraceWriter(base + TRACE_SUFFIX)
    result = _run(task, fixtures, recording, flags, faults, sink=sink)

    recording.book.save(base + ".book")
    manifest = {
        "run_id": task.id,
        "task": _task_dict(task),
        "fixtures": os.path.abspath(args.fixtures),
        "faults": {"char_drop_prob": faults.char_drop_prob, "focus_steal_prob": faults.focus_steal_prob,
                   "latency_ticks": faults.latency_ticks, "rng_seed": faults.rng_seed},
        "disabled": flags.disabled_names(),
        "models": recording.models,
        "trace_hash": trace_hash(result.trace),
    }
    with open(base + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, sort_keys=True, indent=2)
    _print_result(result)
    return EXIT_OK if result.success else EXIT_FAILED


def cmd_bench(args) -> int:
    fixtures = _fixtures(args.fixtures)
    suite = load_suite(args.suite)
    backend = _backend(args, fixtures, _models(args.profile))
    report = run_suite(suite, _flags(args.disable), backend, args.seed, fixtures, _faults(args.fault), args.fault,
                       args.workers)
    path = os.path.join(args.out, "report.json")
    report.save(path)
    print(reports.render_suite(report))
    print(f"report: {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    fixtures = _fixtures(args.fixtures)
    suite = load_suite(args.suite)
    components = args.component if args.component is not None else AblationFlags.components()
    backend = _backend(args, fixtures, _models(args.profile))
    try:
        ablation = ablation_sweep(suite, components, backend, args.seed, fixtures, _faults(args.fault), args.fault,
                                  args.workers, base_flags=_flags(args.disable))
    except PreconditionViolation as e:
        raise ConfigError(str(e)) from None
    path = os.path.join(args.out, "ablation.json")
    ablation.save(path)
    print(reports.render_ablation(ablation))
    print(f"report: {path}")
    return EXIT_OK


def cmd_replay(args) -> int:
    if not args.trace.endswith(TRACE_SUFFIX) or not os.path.exists(args.trace):
        raise ConfigError(f"轨迹文件不存在或命名不符: {args.trace}")
    base = args.trace[:-len(TRACE_SUFFIX)]
    try:
        with open(base + ".manifest.json", "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError as e:
        raise ConfigError(f"缺少运行清单: {e}") from None
    task = TaskSpec.from_dict(manifest["task"])
    fixtures = _fixtures(manifest["fixtures"])
    backend = ScriptedBackend(ScriptBook.load(base + ".book"), manifest.get("models"))
    result = _run(task, fixtures, backend, AblationFlags.disabled(manifest.get("disabled", [])),
                  FaultProfile(**manifest["faults"]), run_id=manifest["run_id"])

    expected = read_lines(args.trace)
    mismatch = compare_lines(expected, [r.to_line() for r in result.trace])
    if mismatch is None:
        print("MATCH")
        return EXIT_OK
    print(f"MISMATCH at record {mismatch}")
    return EXIT_FAILED


def cmd_analyze(args) -> int:
    points: List[ConfigPoint] = load_points(args.points) if args.points and os.path.exists(args.points) else []
    if args.report:
        report = SuiteReport.load(args.report)
        pricing = load_pricing(args.pricing)
        profiles = load_profiles(args.profiles)
        ledger = _ledger_from_report(report)
        table = cost_table(ledger, report.task_count, profiles, pricing)
        print(table.to_string(index=False, float_format=lambda v: f"{v:.6f}"))
        print()
    if not points and not args.report:
        raise ConfigError("analyze 需要 --points 或 --report")
    if points:
        print(reports.render_frontier(points))
    return EXIT_OK


def _ledger_from_report(report: SuiteReport) -> CostLedger:
    """报告只保存按角色汇总的用量，重新定价时模型由方案决定"""
    ledger = CostLedger()
    for outcome in report.outcomes:
        for role, usage in outcome.usage.items():
            ledger.entries.setdefault((role, ""), RoleUsage()).add(
                int(usage["input_tokens"]), int(usage["output_tokens"]), int(usage.get("calls", 0)))
    return ledger


COMMANDS = {
    "run": cmd_run,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "replay": cmd_replay,
    "analyze": cmd_analyze,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, HarnessError) as e:
        logging.error(f"配置错误: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExhausted as e:
        if e.result is not None:
            _print_result(e.result)
        return EXIT_FAILED
    except AgentLoomError as e:
        logging.error(f"运行失败: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILED
