"""
执行图引擎
初始化 (Planner → Orchestrator)，之后循环 Contextor → 元认知 → Cortex → {Orchestrator ∥ Executor} → 汇合 → Summarizer → 路由
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from src.agents import planner, prompts
from src.agents.contextor import gather_context
from src.agents.cortex import SINGLE_AGENT_SUBGOAL, decide, decide_single
from src.agents.executor import direct_mapping, execute_decision
from src.agents.orchestrator import OrchestratorVerdict, apply_verdict, orchestrate
from src.agents.summarizer import summarize
from src.agents.utility import describe_output, outputter
from src.config.config_manager import EngineConfig, get_engine_config
from src.core.errors import (
    AgentLoomError, BackendError, BranchPanic, BudgetExhausted, EngineError, MalformedPlan, MalformedVerdict,
    SchemaMismatch, UnknownActionKind,
)
from src.core.lifecycle import apply_event, build_plan, merge_replan, start_next
from src.core.models import (
    ActionDecision, ActionResult, AgentMessage, AgentRole, CortexOutput, DeviceState, LifecycleEvent, Plan,
    Subgoal, TaskGoal, ToolCall,
)
from src.device.controller import DeviceController
from src.execution.tool_node import execute_sequential
from src.graph.routing import BranchOutcome, branch_after_cortex, converge, route_after_convergence
from src.graph.state import AblationFlags, Branch, RouteKind, RunResult, RunState
from src.harness.cost import CostLedger
from src.harness.trace import TraceRecorder, TraceWriter
from src.llm.base import CompletionRequest, LlmBackend, TokenUsage
from src.memory.scratchpad import Scratchpad
from src.metacog.analyzer import HistoryEntry, entries_from, evaluate

SuccessCheck = Callable[[DeviceController, Mapping[str, str]], bool]


class MeteredBackend(LlmBackend):
    """为每次后端调用写一条 llm.<role> 轨迹记录"""

    def __init__(self, inner: LlmBackend, recorder: TraceRecorder, cycle_index: int):
        super().__init__(inner.models)
        self.inner = inner
        self.recorder = recorder
        self.cycle_index = cycle_index

    def complete(self, req: CompletionRequest) -> Tuple[str, TokenUsage]:
        node = f"llm.{req.agent_role}"
        start = self.recorder.start()
        try:
            text, usage = self.inner.complete(req)
        except BackendError as e:
            self.recorder.record(self.cycle_index, node, start, req.fingerprint, type(e).__name__, status="error")
            raise
        self.recorder.record(self.cycle_index, node, start, req.fingerprint, text, usage=usage)
        return text, usage


def _tool_message(call: ToolCall, decision: ActionDecision, result: ActionResult, subgoal_id: str,
                  cycle_index: int) -> AgentMessage:
    extraction = result.data.get("extraction") if isinstance(result.data, dict) else None
    meta = {
        "kind": call.name.value if hasattr(call.name, "value") else str(call.name),
        "selector": call.selector.to_dict() if call.selector else None,
        "payload": call.payload,
        "status": result.status.value,
        "error": result.error,
        "subgoal_id": subgoal_id,
        "verified": result.feedback.verified if result.feedback else None,
        "actual": result.feedback.actual if result.feedback else None,
        "extraction": extraction,
        "action_key": decision.fingerprint(),
    }
    content = f"{call.describe()} -> {json.dumps(meta, ensure_ascii=False, sort_keys=True)}"
    return AgentMessage(AgentRole.TOOL, content, cycle_index=cycle_index, meta=meta)


def _cortex_message(out: CortexOutput, cycle_index: int) -> AgentMessage:
    meta = {
        "actions": [d.to_dict() for d in out.actions],
        "completions": sorted(out.completions),
        "pivot": out.pivot,
    }
    content = (f"actions={json.dumps([d.describe() for d in out.actions], ensure_ascii=False)} "
               f"completions={sorted(out.completions)} pivot={out.pivot or '-'}")
    return AgentMessage(AgentRole.CORTEX, content, cycle_index=cycle_index, meta=meta)


class TaskRunner:
    """
    单个任务的执行循环

    并行约定: 设备只由 Executor 分支访问，计划只由 Orchestrator 分支修改，
    两个分支的结果在汇合之后按固定顺序合并
    """

    def __init__(self, goal: TaskGoal, device: DeviceController, backend: LlmBackend,
                 flags: Optional[AblationFlags] = None, config: Optional[EngineConfig] = None,
                 success_check: Optional[SuccessCheck] = None, run_id: Optional[str] = None,
                 trace_sink: Optional[TraceWriter] = None):
        """
        初始化执行循环

        Args:
            goal: 任务目标
            device: 已处于初始快照的设备
            backend: LLM 后端
            flags: 消融开关，默认全部启用
            config: 引擎配置，默认读取全局配置
            success_check: 基于最终设备状态的成功判定
            run_id: 轨迹中的运行 id，默认取任务 id
            trace_sink: 追加式轨迹文件
        """
        self.goal = goal
        self.device = device
        self.backend = backend
        self.flags = flags or AblationFlags()
        self.config = config or get_engine_config()
        self.success_check = success_check
        self.recorder = TraceRecorder(run_id or goal.id, trace_sink)
        self.scratchpad = Scratchpad()
        self.entries: List[HistoryEntry] = []
        self.state = RunState(goal=goal, plan=Plan(()), flags=self.flags)

    # ---- 公共入口 ----

    def run(self) -> RunResult:
        try:
            return self._run()
        except BackendError as e:
            logging.error(f"任务 {self.goal.id} 后端调用失败: {e}")
            e.result = self._result(False, "backend_error", error=str(e))
            raise

    def get_status(self) -> Dict[str, Any]:
        active = self.state.plan.active()
        return {
            "task_id": self.goal.id,
            "cycle_index": self.state.cycle_index,
            "step_budget": self.goal.step_budget,
            "active_subgoal": active.id if active else None,
            "plan_revision": self.state.plan.revision,
            "stall_count": self.state.stall_count,
            "replans": self.state.replans,
            "history_size": len(self.state.history),
            "trace_records": len(self.recorder.records),
        }

    # ---- 初始化 ----

    def _llm(self, recorder: TraceRecorder, cycle_index: int) -> MeteredBackend:
        return MeteredBackend(self.backend, recorder, cycle_index)

    def _initial_plan(self) -> Plan:
        timestamp = self.device.get_state().timestamp.isoformat()
        start = self.recorder.start()
        if self.flags.multi_agent:
            plan = planner.plan(self.goal, None, self._llm(self.recorder, 0), retries=self.config.schema_retries,
                                timestamp=timestamp)
        else:
            plan = build_plan([Subgoal(SINGLE_AGENT_SUBGOAL, self.goal.text)])
        self.recorder.record(0, "planner", start, self.goal.text, plan.render())
        start = self.recorder.start()
        started = start_next(plan)
        self.recorder.record(0, "orchestrator", start, plan.render(), started.render())
        return started

    # ---- 主循环 ----

    def _run(self) -> RunResult:
        st = self.state
        system = prompts.get_library().get("system_goal")
        st.history.append(AgentMessage(AgentRole.SYSTEM, system.render(goal=self.goal.text).strip(),
                                       pinned=system.pinned, cycle_index=0))
        try:
            st.plan = self._initial_plan()
        except MalformedPlan as e:
            logging.error(f"任务 {self.goal.id} 规划失败: {e}")
            return self._result(False, "malformed_plan", error=str(e))
        st.history.append(AgentMessage(AgentRole.PLANNER, st.plan.render(), cycle_index=0))

        stop_reason, success = "budget_exhausted", False
        with ThreadPoolExecutor(max_workers=max(2, self.config.branch_workers),
                                thread_name_prefix=f"branch-{self.goal.id}") as pool:
            while st.cycle_index < self.goal.step_budget:
                cycle = st.cycle_index + 1
                decision = self._cycle(cycle, pool)
                st.cycle_index = cycle
                if decision.kind == RouteKind.CONTINUE:
                    continue
                if decision.kind == RouteKind.TERMINATE:
                    success = bool(decision.success)
                    stop_reason = "completed" if success else "budget_exhausted"
                    break
                if not self._replan(cycle, decision):
                    stop_reason = "replan_failed"
                    break

        if stop_reason == "budget_exhausted":
            result = self._result(False, stop_reason)
            logging.info(f"任务 {self.goal.id} 用尽 {self.goal.step_budget} 个决策周期")
            raise BudgetExhausted(f"任务 {self.goal.id} 用尽决策周期 {self.goal.step_budget}", result=result)
        if not success:
            return self._result(False, stop_reason)
        return self._finish()

    def _cycle(self, cycle: int, pool: ThreadPoolExecutor):
        st = self.state
        cfg = self.config

        start = self.recorder.start()
        device_state = gather_context(self.device, self.goal)
        if device_state.seq < st.last_exec_seq:
            raise EngineError(f"设备状态过期: seq {device_state.seq} < {st.last_exec_seq}")
        st.last_device_state = device_state
        self.recorder.record(cycle, "contextor", start, self.goal.app_lock, device_state.screenshot_digest,
                             seq=device_state.seq)
        timestamp = device_state.timestamp.isoformat()

        report = evaluate(self.entries, st.plan, cfg.metacog_window, cfg.stagnation_k) if self.flags.metacog else None
        self.recorder.add(cycle, "metacog", len(self.entries), report.to_dict() if report else None)

        if st.plan.active() is None:
            st.plan = start_next(st.plan)
        active = st.plan.active()
        start = self.recorder.start()
        llm = self._llm(self.recorder, cycle)
        notes = self.scratchpad.as_dict()
        if self.flags.multi_agent:
            out = decide(active, device_state, st.history, notes, report, llm, self.flags,
                         goal_text=self.goal.text, next_subgoal=st.plan.next_pending(), plan_ids=st.plan.ids(),
                         retries=cfg.schema_retries, timestamp=timestamp)
        else:
            out = decide_single(self.goal.text, device_state, st.history, notes, report, llm, self.flags,
                                retries=cfg.schema_retries, timestamp=timestamp)
        self.recorder.record(cycle, "cortex", start, device_state.screenshot_digest,
                             {"actions": [d.describe() for d in out.actions], "completions": sorted(out.completions),
                              "pivot": out.pivot}, seq=device_state.seq)
        st.history.append(_cortex_message(out, cycle))

        branches = branch_after_cortex(out)
        outcomes = self._run_branches(cycle, branches, out, pool, timestamp)
        self._merge_branches(cycle, branches, out, outcomes, device_state, active)

        start = self.recorder.start()
        before = len(st.history)
        st.history = summarize(st.history, cfg.summarizer_threshold, cfg.keep_recent)
        st.history_peak = max(st.history_peak, len(st.history))
        self.recorder.record(cycle, "summarizer", start, before, len(st.history))

        decision = route_after_convergence(st.plan, st.stall_count, self.goal.step_budget - cycle,
                                           cfg.stall_threshold)
        self.recorder.add(cycle, "router", {"plan": st.plan.render(), "stall": st.stall_count}, str(decision))
        logging.debug(f"[{self.goal.id}] 周期 {cycle}: {decision}")
        return decision

    # ---- 并行分支 ----

    def _orchestrator_path(self, recorder: TraceRecorder, cycle: int, plan: Plan, completions,
                           history: List[AgentMessage], timestamp: str):
        start = recorder.start()
        if self.flags.multi_agent:
            try:
                verdict = orchestrate(plan, completions, history, self._llm(recorder, cycle), self.goal.text,
                                      self.config.schema_retries, timestamp)
            except MalformedVerdict as e:
                logging.warning(f"编排裁决无效，本周期不确认: {e}")
                verdict = OrchestratorVerdict(rejected={c: "malformed verdict" for c in completions})
        else:
            verdict = OrchestratorVerdict(confirmed=frozenset(completions))
        new_plan, messages = apply_verdict(plan, verdict, cycle)
        recorder.record(cycle, "orchestrator", start, sorted(completions), verdict.describe())
        return new_plan, messages

    def _executor_path(self, recorder: TraceRecorder, cycle: int, actions, timestamp: str):
        llm = self._llm(recorder, cycle)
        start = recorder.start()
        try:
            if self.flags.multi_agent:
                calls = execute_decision(actions, llm, self.config.schema_retries, timestamp)
            else:
                calls = direct_mapping(actions)
        except UnknownActionKind as e:
            recorder.record(cycle, "executor", start, [a.describe() for a in actions], str(e), status="failed")
            calls = direct_mapping(actions)
            results = [ActionResult.failure("UnknownActionKind", str(e))] + \
                [ActionResult.aborted() for _ in calls[1:]]
            return calls, results, self.device.get_state().seq
        recorder.record(cycle, "executor", start, [a.describe() for a in actions], [c.describe() for c in calls])

        start = recorder.start()
        results = execute_sequential(calls, self.device, self.flags, self.scratchpad, cycle, llm,
                                     self.config.text_retry_budget)
        seq = self.device.get_state().seq
        recorder.record(cycle, "tool_node", start, [c.describe() for c in calls],
                        [f"{r.status.value}:{r.error or ''}:{r.detail}" for r in results], seq=seq)
        return calls, results, seq

    def _run_branches(self, cycle: int, branches, out: CortexOutput, pool: ThreadPoolExecutor,
                      timestamp: str) -> Dict[Branch, Tuple[TraceRecorder, BranchOutcome]]:
        st = self.state
        futures = {}
        if Branch.ORCHESTRATOR in branches:
            rec = self.recorder.branch()
            futures[Branch.ORCHESTRATOR] = (rec, pool.submit(self._orchestrator_path, rec, cycle, st.plan,
                                                             out.completions, list(st.history), timestamp))
        if Branch.EXECUTOR in branches:
            rec = self.recorder.branch()
            futures[Branch.EXECUTOR] = (rec, pool.submit(self._executor_path, rec, cycle, out.actions, timestamp))

        outcomes: Dict[Branch, Tuple[TraceRecorder, BranchOutcome]] = {}
        for branch, (rec, future) in futures.items():
            try:
                outcomes[branch] = (rec, BranchOutcome(branch, value=future.result()))
            except Exception as e:  # 分支异常在汇合处统一处理
                outcomes[branch] = (rec, BranchOutcome(branch, error=e))
        if Branch.STALL in branches:
            outcomes[Branch.STALL] = (self.recorder.branch(), BranchOutcome(Branch.STALL))
        return outcomes

    def _merge_branches(self, cycle: int, branches, out: CortexOutput,
                        outcomes: Dict[Branch, Tuple[TraceRecorder, BranchOutcome]], device_state: DeviceState,
                        active_before: Subgoal):
        st = self.state
        for branch in (Branch.ORCHESTRATOR, Branch.EXECUTOR):
            if branch in outcomes:
                self.recorder.merge(outcomes[branch][0])

        results = {branch: outcome for branch, (_, outcome) in outcomes.items()}
        for outcome in results.values():
            if isinstance(outcome.error, AgentLoomError) and not isinstance(outcome.error, EngineError):
                if isinstance(outcome.error, BackendError):
                    raise outcome.error
        start = self.recorder.start()
        try:
            converge(results)
        except BranchPanic:
            self.recorder.record(cycle, "convergence", start, sorted(b.value for b in branches), "panic",
                                 status="panic")
            raise
        self.recorder.record(cycle, "convergence", start, sorted(b.value for b in branches), "ok")

        if Branch.ORCHESTRATOR in results:
            st.plan, messages = results[Branch.ORCHESTRATOR].value
            st.history.extend(messages)

        if Branch.STALL in results:
            st.stall_count += 1
        else:
            st.stall_count = 0

        if Branch.EXECUTOR in results:
            calls, action_results, seq = results[Branch.EXECUTOR].value
            st.last_exec_seq = seq
            tagged = st.plan.active() or active_before
            for call, decision, result in zip(calls, out.actions, action_results):
                st.history.append(_tool_message(call, decision, result, tagged.id, cycle))
            oks = [None if r.status.value == "Aborted" else r.ok for r in action_results]
            self.entries.extend(entries_from(out.actions, device_state, cycle, tagged.id, oks))

    # ---- 重规划与结束 ----

    def _replan(self, cycle: int, decision) -> bool:
        st = self.state
        if decision.failed_subgoal:
            st.plan = apply_event(st.plan, decision.failed_subgoal, LifecycleEvent.MARK_FAILED)
        failed = [f"{sg.id} ({sg.description})" for sg in st.plan.subgoals if sg.status.value == "Failed"]
        failure_context = f"{decision.reason}; failed: {', '.join(failed)}"
        st.replans += 1
        start = self.recorder.start()
        try:
            if self.flags.multi_agent:
                timestamp = self.device.get_state().timestamp.isoformat()
                new_plan = planner.plan(self.goal, failure_context, self._llm(self.recorder, cycle), st.plan,
                                        self.config.schema_retries, timestamp)
            else:
                new_plan = merge_replan(st.plan, [Subgoal(SINGLE_AGENT_SUBGOAL, self.goal.text)])
        except MalformedPlan as e:
            self.recorder.record(cycle, "planner", start, failure_context, str(e), status="failed")
            logging.error(f"任务 {self.goal.id} 重规划失败: {e}")
            return False
        st.plan = start_next(new_plan)
        self.recorder.record(cycle, "planner", start, failure_context, st.plan.render())
        st.history.append(AgentMessage(AgentRole.PLANNER, f"replan r{st.plan.revision}: {failure_context}\n"
                                       f"{st.plan.render()}", cycle_index=cycle))
        st.stall_count = 0
        logging.info(f"任务 {self.goal.id} 第 {st.replans} 次重规划: {failure_context}")
        return True

    def _finish(self) -> RunResult:
        success = True
        error = None
        if self.success_check is not None:
            success = bool(self.success_check(self.device, self.scratchpad.as_dict()))
        output = None
        if self.goal.output_schema:
            final_state = self.device.get_state()
            start = self.recorder.start()
            try:
                output = outputter(final_state, self.scratchpad.as_dict(), self.goal.output_schema,
                                   self._llm(self.recorder, self.state.cycle_index), self.goal.text,
                                   self.config.schema_retries, final_state.timestamp.isoformat())
                self.recorder.record(self.state.cycle_index, "outputter", start, self.goal.output_schema,
                                     describe_output(output))
            except SchemaMismatch as e:
                self.recorder.record(self.state.cycle_index, "outputter", start, self.goal.output_schema, str(e),
                                     status="failed")
                success, error = False, str(e)
        return self._result(success, "completed", output=output, error=error)

    def _result(self, success: bool, stop_reason: str, output: Optional[Dict[str, Any]] = None,
                error: Optional[str] = None) -> RunResult:
        records = list(self.recorder.records)
        return RunResult(
            task_id=self.goal.id,
            success=success,
            cycles_used=self.state.cycle_index,
            stop_reason=stop_reason,
            trace=records,
            ledger=CostLedger.from_trace(records),
            notes=self.scratchpad.as_dict(),
            output=output,
            plan=self.state.plan,
            replans=self.state.replans,
            error=error,
            history_peak=self.state.history_peak,
        )


def run_task(goal: TaskGoal, device: DeviceController, backend: LlmBackend, flags: Optional[AblationFlags] = None,
             *, config: Optional[EngineConfig] = None, success_check: Optional[SuccessCheck] = None,
             run_id: Optional[str] = None, trace_sink: Optional[TraceWriter] = None) -> RunResult:
    """
    运行单个任务

    Returns:
        RunResult；决策周期用尽抛出 BudgetExhausted，后端错误原样抛出，两者都在 .result 上携带部分结果
    """
    runner = TaskRunner(goal, device, backend, flags, config, success_check, run_id, trace_sink)
    return runner.run()
