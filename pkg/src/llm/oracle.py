"""
规则预言机后端
按任务脚本（fixtures/scripts/*.yaml）回答各智能体角色，只读取请求的结构化上下文；
上下文与提示词内容一一对应，因此消融开关去掉的信息预言机同样看不到
"""

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from src.core.errors import ConfigError, MissingScriptEntry, PreconditionViolation
from src.core.models import ActionDecision, ActionKind, SelectorBundle
from src.llm.base import CompletionRequest, LlmBackend, TokenUsage, estimated_usage

MALFORMED_REPLY = '{"oops": '
TOOL_ROLE = "Tool"


@dataclass(frozen=True)
class StepScript:
    """某个屏幕上要执行的一批动作"""
    actions: Tuple[Mapping[str, Any], ...]
    screen: Optional[str] = None  # "<包名>/<屏幕>" 守卫，None 表示任意屏幕
    once: bool = False
    needs_vision: bool = False


@dataclass(frozen=True)
class SubgoalScript:
    id: str
    description: str
    steps: Tuple[StepScript, ...] = ()
    pivot: Tuple[StepScript, ...] = ()
    done: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class OracleScript:
    task_id: str
    goal: str
    plan: Tuple[SubgoalScript, ...]
    replan: Tuple[SubgoalScript, ...] = ()
    outputs: Mapping[str, Any] = field(default_factory=dict)

    def subgoal(self, subgoal_id: str) -> Optional[SubgoalScript]:
        for sg in self.plan + self.replan:
            if sg.id == subgoal_id:
                return sg
        return None


@dataclass(frozen=True)
class Perturbation:
    """按请求指纹播种的扰动，用于模糊测试"""
    seed: int = 0
    malformed: float = 0.0
    stall: float = 0.0
    reject: float = 0.0

    def draw(self, role: str, fp: str) -> float:
        digest = hashlib.sha256(f"{self.seed}|{role}|{fp}".encode("utf-8")).hexdigest()
        return float(np.random.default_rng(int(digest[:16], 16)).random())


STEP_KEYS = frozenset({"do", "screen", "once", "needs_vision"})


def _parse_step(data: Mapping[str, Any]) -> StepScript:
    """解析一个步骤；键必须是已知字符串（YAML 1.1 会把裸 on/off/yes 读成布尔值）"""
    unknown = [k for k in data if not isinstance(k, str) or k not in STEP_KEYS]
    if unknown:
        raise ConfigError(f"预言机脚本步骤含未知键: {unknown!r}")
    screen = data.get("screen")
    if screen is not None and not isinstance(screen, str):
        raise ConfigError(f"预言机脚本步骤的 screen 必须是字符串: {screen!r}")
    return StepScript(actions=tuple(data.get("do") or ()), screen=screen, once=bool(data.get("once", False)),
                      needs_vision=bool(data.get("needs_vision", False)))


def _parse_subgoal(data: Mapping[str, Any]) -> SubgoalScript:
    return SubgoalScript(
        id=str(data["id"]),
        description=data["description"],
        steps=tuple(_parse_step(s) for s in data.get("steps") or ()),
        pivot=tuple(_parse_step(s) for s in data.get("pivot") or ()),
        done=data.get("done") or {},
    )


def parse_script(data: Mapping[str, Any]) -> OracleScript:
    try:
        return OracleScript(
            task_id=data["task_id"],
            goal=data["goal"],
            plan=tuple(_parse_subgoal(s) for s in data["plan"]),
            replan=tuple(_parse_subgoal(s) for s in data.get("replan") or ()),
            outputs=data.get("outputs") or {},
        )
    except KeyError as e:
        raise ConfigError(f"预言机脚本缺少字段 {e}") from None


def load_scripts(directory: str) -> Dict[str, OracleScript]:
    """加载目录下全部脚本，以目标文本为键"""
    if not os.path.isdir(directory):
        raise ConfigError(f"预言机脚本目录不存在: {directory}")
    scripts: Dict[str, OracleScript] = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith((".yaml", ".yml")):
            continue
        with open(os.path.join(directory, name), "r", encoding="utf-8") as f:
            script = parse_script(yaml.safe_load(f) or {})
        scripts[script.goal] = script
    logging.info(f"加载预言机脚本 {len(scripts)} 个")
    return scripts


class _View:
    """对请求上下文的只读查询"""

    def __init__(self, ctx: Mapping[str, Any]):
        self.ctx = ctx
        self.texts: List[str] = list(ctx.get("texts") or [])
        self.rids: Dict[str, Optional[str]] = dict(ctx.get("rids") or {})
        self.notes: Optional[Dict[str, str]] = ctx.get("notes")
        self.metacog: Optional[Dict[str, Any]] = ctx.get("metacog")
        self.history: List[Mapping[str, Any]] = list(ctx.get("history") or [])

    @property
    def screen(self) -> Optional[str]:
        return self.ctx.get("screen")

    @property
    def wants_pivot(self) -> bool:
        return bool(self.metacog) and (self.metacog.get("cycle") is not None or bool(self.metacog.get("stagnant")))

    def tool_messages(self, subgoal_id: Optional[str]) -> List[Mapping[str, Any]]:
        metas = [m.get("meta") or {} for m in self.history if m.get("role") == TOOL_ROLE]
        if subgoal_id is None:
            return metas
        return [m for m in metas if m.get("subgoal_id") == subgoal_id]


def _targets(meta: Mapping[str, Any], name: str) -> bool:
    selector = meta.get("selector") or {}
    return selector.get("resource_id") == name or selector.get("text_match") == name


def is_done(sg: SubgoalScript, view: _View, scope: Optional[str]) -> bool:
    """完成条件全部满足才算完成；scope 为 None 时在全部历史中查找证据"""
    if not sg.done:
        return False
    tools = view.tool_messages(scope)
    for kind, arg in sg.done.items():
        if kind == "screen":
            ok = view.screen == arg
        elif kind == "verified":
            typed = [m for m in tools if m.get("kind") == ActionKind.TYPE_TEXT.value and _targets(m, arg)]
            ok = bool(typed) and bool(typed[-1].get("verified"))
        elif kind == "tapped":
            ok = any(m.get("kind") == ActionKind.TAP.value and m.get("status") == "Ok" and _targets(m, arg)
                     for m in tools)
        elif kind == "note":
            ok = view.notes is not None and arg in view.notes
        elif kind == "present":
            ok = arg in view.texts
        elif kind == "text_of":
            ok = all(view.rids.get(rid) == value for rid, value in arg.items())
        elif kind == "tool_ok":
            ok = any(m.get("kind") == arg and m.get("status") == "Ok" for m in tools)
        else:
            raise ConfigError(f"未知完成条件: {kind}")
        if not ok:
            return False
    return True


def _resolve_value(action: Mapping[str, Any], view: _View, scope: Optional[str]) -> Optional[str]:
    if "value_from_text" in action:
        prefix = action["value_from_text"]
        for text in view.texts:
            if text and text.startswith(prefix):
                return text[len(prefix):].strip()
        return None
    if action.get("value_from_extraction"):
        for meta in reversed(view.tool_messages(scope)):
            if meta.get("extraction"):
                return meta["extraction"]
        return None
    return None if action.get("value") is None else str(action["value"])


def resolve_action(action: Mapping[str, Any], view: _View, scope: Optional[str]) -> Optional[ActionDecision]:
    """把脚本动作翻译为 ActionDecision；所需信息不在上下文里时返回 None"""
    kind = ActionKind.parse(action["kind"])
    selector = None
    if any(k in action for k in ("rid", "xy", "text")):
        xy = action.get("xy")
        selector = SelectorBundle(action.get("rid"), tuple(xy) if xy else None, action.get("text"))

    payload = action.get("payload")
    if not view.ctx.get("data_fidelity", True) and "helpful" in action:
        # 没有保真指令时，模型会“好心”改写内容
        payload = action["helpful"]
    if "payload_from_note" in action:
        if view.notes is None or action["payload_from_note"] not in view.notes:
            return None
        payload = view.notes[action["payload_from_note"]]
    if kind == ActionKind.SAVE_NOTE:
        if view.notes is None:
            return None
        value = _resolve_value(action, view, scope)
        if value is None:
            return None
        payload = f"{action['note']}={value}"
    return ActionDecision(kind, selector, payload, action.get("why", ""))


class OracleBackend(LlmBackend):
    """按脚本应答的确定性后端；用量与脚本化后端使用同一估算规则"""

    def __init__(self, scripts: Mapping[str, OracleScript], models: Optional[Mapping[str, str]] = None,
                 perturbation: Optional[Perturbation] = None):
        super().__init__(models)
        self.scripts = dict(scripts)
        self.perturbation = perturbation

    # ---- 入口 ----

    def complete(self, req: CompletionRequest) -> Tuple[str, TokenUsage]:
        text = self._respond(req)
        return text, estimated_usage(req.prompt, text, self.model_for(req.agent_role))

    def _respond(self, req: CompletionRequest) -> str:
        role, ctx = req.agent_role, req.context
        p = self.perturbation
        draw = p.draw(role, req.fingerprint) if p else 1.0
        if p and draw < p.malformed:
            return MALFORMED_REPLY

        if role == "executor":
            return self._dump({"tool_calls": list(ctx.get("actions") or [])})
        if role == "hopper":
            return self._dump({"extraction": extract(ctx.get("content", ""), ctx.get("instruction", ""))})

        script = self.scripts.get(ctx.get("goal", ""))
        if script is None:
            raise MissingScriptEntry(role, req.fingerprint)
        if role == "planner":
            return self._plan(script, ctx)
        if role == "orchestrator":
            reject = p is not None and draw < p.malformed + p.reject
            return self._orchestrate(ctx, reject)
        if role == "cortex":
            if p is not None and draw < p.malformed + p.stall:
                return self._dump({"actions": [], "completions": []})
            return self._decide(script, _View(ctx))
        if role == "agent":
            return self._decide_single(script, _View(ctx))
        if role == "outputter":
            return self._output(script, ctx)
        raise MissingScriptEntry(role, req.fingerprint)

    @staticmethod
    def _dump(obj: Any) -> str:
        return json.dumps(obj, ensure_ascii=False, sort_keys=True)

    # ---- 角色 ----

    def _plan(self, script: OracleScript, ctx: Mapping[str, Any]) -> str:
        completed = set(ctx.get("completed") or ())
        source = script.replan if ctx.get("failure_context") and script.replan else script.plan
        subgoals = [{"id": sg.id, "description": sg.description} for sg in source if sg.id not in completed]
        return self._dump({"subgoals": subgoals})

    def _orchestrate(self, ctx: Mapping[str, Any], reject: bool) -> str:
        claims = list(ctx.get("completions") or ())
        if reject:
            return self._dump({"confirmed": [], "rejected": [{"id": c, "reason": "no evidence yet"} for c in claims]})
        advance_to = None
        for sg in ctx.get("plan") or ():
            if sg["id"] not in claims and sg["status"] in ("Pending", "InProgress"):
                advance_to = sg["id"]
                break
        return self._dump({"confirmed": claims, "rejected": [], "advance_to": advance_to})

    def _step_actions(self, sg: SubgoalScript, step: StepScript, view: _View,
                      scope: Optional[str]) -> Optional[List[ActionDecision]]:
        if step.screen is not None and step.screen != view.screen:
            return None
        if step.needs_vision and not view.ctx.get("screenshot"):
            return None
        decisions = []
        for action in step.actions:
            decision = resolve_action(action, view, scope)
            if decision is None:
                return None
            decisions.append(decision)
        if not decisions:
            return None
        if step.once:
            key = decisions[0].fingerprint()
            if any(m.get("action_key") == key for m in view.tool_messages(scope)):
                return None
        return decisions

    def _choose(self, sg: SubgoalScript, view: _View, scope: Optional[str]) -> Tuple[List[ActionDecision], Optional[str]]:
        ordered: List[Tuple[StepScript, bool]] = []
        if view.wants_pivot:
            ordered += [(s, True) for s in sg.pivot]
        ordered += [(s, False) for s in sg.steps]
        ordered += [(s, True) for s in sg.pivot]
        for step, is_pivot in ordered:
            decisions = self._step_actions(sg, step, view, scope)
            if decisions is not None:
                pivot = "switch strategy: the previous actions were not making progress" if is_pivot and \
                    view.wants_pivot else None
                return decisions, pivot
        return [], None

    def _decision_reply(self, decisions: Sequence[ActionDecision], completions: Sequence[str],
                        pivot: Optional[str]) -> str:
        actions = []
        for d in decisions:
            item = {"kind": d.kind.value if isinstance(d.kind, ActionKind) else d.kind, "reasoning": d.reasoning}
            if d.target is not None:
                item.update(d.target.to_dict())
            if d.payload is not None:
                item["payload"] = d.payload
            actions.append(item)
        reply: Dict[str, Any] = {"actions": actions, "completions": list(completions)}
        if pivot:
            reply["pivot"] = pivot
        return self._dump(reply)

    def _decide(self, script: OracleScript, view: _View) -> str:
        current = view.ctx.get("subgoal") or {}
        sg = script.subgoal(current.get("id", ""))
        if sg is None:
            return self._decision_reply([], [], None)
        if is_done(sg, view, sg.id):
            # 双输出：完成当前子目标的同时开始下一个
            decisions: List[ActionDecision] = []
            nxt = view.ctx.get("next_subgoal")
            nxt_sg = script.subgoal(nxt["id"]) if nxt else None
            if nxt_sg is not None and not is_done(nxt_sg, view, nxt_sg.id):
                decisions, _ = self._choose(nxt_sg, view, nxt_sg.id)
            return self._decision_reply(decisions, [sg.id], None)
        decisions, pivot = self._choose(sg, view, sg.id)
        return self._decision_reply(decisions, [], pivot)

    def _decide_single(self, script: OracleScript, view: _View) -> str:
        """单智能体：没有子目标边界，证据在整段历史中查找"""
        task_id = (view.ctx.get("subgoal") or {}).get("id", "task")
        if script.plan and is_done(script.plan[-1], view, None):
            return self._decision_reply([], [task_id], None)
        for sg in script.plan:
            if is_done(sg, view, None):
                continue
            decisions, pivot = self._choose(sg, view, None)
            if decisions:
                return self._decision_reply(decisions, [], pivot)
        return self._decision_reply([], [], None)

    def _output(self, script: OracleScript, ctx: Mapping[str, Any]) -> str:
        notes = ctx.get("notes") or {}
        out: Dict[str, Any] = {}
        for name, type_name in (ctx.get("schema") or {}).items():
            value = notes.get(name, script.outputs.get(name))
            if type_name == "number" and value is not None:
                value = float(value)
            elif type_name == "boolean" and value is not None:
                value = str(value).lower() in ("true", "1", "yes", "on")
            out[name] = value
        return self._dump(out)


def extract(content: str, instruction: str) -> str:
    """从指令中取出关键词，返回内容里紧跟关键词的值"""
    if not instruction.strip():
        raise PreconditionViolation("提取指令不能为空")
    keywords = re.sub(r"^\s*(extract|find|get|read)\s+(the\s+)?", "", instruction.strip(), flags=re.IGNORECASE)
    if not content or not keywords:
        return ""
    match = re.search(rf"{re.escape(keywords)}\W*([\w.]+)", content, re.IGNORECASE)
    return match.group(1) if match else ""
