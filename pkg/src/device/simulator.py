"""
模拟设备
DeviceController 的参考实现：确定性的应用状态机、可注入故障的键盘、虚拟时钟与录屏帧日志
"""

import copy
import logging
import threading
from datetime import datetime, timedelta, timezone
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.core.errors import ElementNotFound, PreconditionViolation, UnknownSnapshot
from src.core.models import (
    ActionKind, ActionResult, DeviceState, FaultProfile, Rect, SelectorBundle, ToolCall, UiNode, short_digest,
)
from src.device.controller import DeviceController, Frame, FrameLog
from src.device.hierarchy import resolve_selector, serialize_hierarchy, visible_texts
from src.device.sim_app import EXIT, TEMPLATE_RE, ElementSpec, ScreenSpec, SimApp, Transition

SCREEN_WIDTH = 1080
SCREEN_HEIGHT = 2400
HOME_PACKAGE = "home"
BASE_TIME = datetime(2026, 1, 1, tzinfo=timezone.utc)
TICK = timedelta(milliseconds=100)


class SimDevice(DeviceController):
    """
    单个逻辑 actor：所有公开操作在同一把锁下串行执行
    """

    def __init__(self, apps: Mapping[str, SimApp], faults: Optional[FaultProfile] = None,
                 scenario: Optional[Mapping[str, Any]] = None):
        """
        初始化模拟设备

        Args:
            apps: 包名到应用定义的映射，必须包含 home
            faults: 故障注入参数，默认无故障
            scenario: 初始场景（前台应用、屏幕、数据覆盖）
        """
        if HOME_PACKAGE not in apps:
            raise PreconditionViolation("模拟设备需要 home 启动器应用")
        self.apps = dict(apps)
        self.faults = faults or FaultProfile()
        self._lock = threading.RLock()
        self._rng = np.random.default_rng(self.faults.rng_seed)
        self._seq = 0
        self._ticks = 0
        self._data: Dict[str, Dict[str, Any]] = {pkg: app.initial_data() for pkg, app in self.apps.items()}
        self._screen: Dict[str, str] = {HOME_PACKAGE: self.apps[HOME_PACKAGE].initial_screen}
        self._form: Dict[str, Dict[str, str]] = {}
        self._selected: Dict[str, Tuple[str, int]] = {}
        self._scroll: Dict[str, int] = {}
        self._foreground = HOME_PACKAGE
        self._focused: Optional[Tuple[str, str, str]] = None  # (package, screen, field_key)
        self._recording = False
        self._frames: List[Frame] = []
        self._snapshots: Dict[str, Dict[str, Any]] = {}
        if scenario:
            self.load_scenario(scenario)

    # ---- 场景 ----

    def load_scenario(self, scenario: Mapping[str, Any]):
        """应用初始场景：数据覆盖、已打开的屏幕与前台应用"""
        with self._lock:
            for package, stores in (scenario.get("data") or {}).items():
                self._require_app(package)
                for store, value in stores.items():
                    self._data[package][store] = copy.deepcopy(value)
            for package, screen in (scenario.get("screens") or {}).items():
                app = self._require_app(package)
                if screen not in app.screens:
                    raise PreconditionViolation(f"场景引用了不存在的屏幕: {package}/{screen}")
                self._screen[package] = screen
            foreground = scenario.get("foreground", HOME_PACKAGE)
            app = self._require_app(foreground)
            self._screen.setdefault(foreground, app.initial_screen)
            self._foreground = foreground

    def _require_app(self, package: str) -> SimApp:
        app = self.apps.get(package)
        if app is None:
            raise PreconditionViolation(f"未安装的应用: {package}")
        return app

    # ---- 渲染 ----

    def _current_screen(self) -> ScreenSpec:
        app = self.apps[self._foreground]
        return app.screens[self._screen[self._foreground]]

    def _render(self, template: Optional[str], package: str) -> Optional[str]:
        if template is None:
            return None
        return TEMPLATE_RE.sub(lambda m: self._eval(m.group(1).strip(), package), template)

    def _eval(self, expr: str, package: str) -> str:
        data = self._data[package]
        parts = expr.split(".")
        head = parts[0]
        if head == "form" and len(parts) == 2:
            return self._form.get(package, {}).get(parts[1], "")
        if head == "selected" and len(parts) == 2:
            record = self._selected_record(package)
            return str(record.get(parts[1], "")) if record else ""
        if head == "sum" and len(parts) == 3:
            total = sum(float(r.get(parts[2], 0) or 0) for r in data.get(parts[1], []))
            return f"{total:.2f}"
        if head == "count" and len(parts) == 2:
            return str(len(data.get(parts[1], [])))
        if len(parts) == 2 and isinstance(data.get(head), dict):
            return str(data[head].get(parts[1], ""))
        logging.warning(f"无法解析模板表达式: {package}:{expr}")
        return ""

    def _selected_record(self, package: str) -> Optional[Dict[str, Any]]:
        selected = self._selected.get(package)
        if selected is None:
            return None
        store, index = selected
        records = self._data[package].get(store, [])
        return records[index] if 0 <= index < len(records) else None

    def _scroll_key(self) -> str:
        return f"{self._foreground}/{self._screen[self._foreground]}"

    def _build_hierarchy(self) -> UiNode:
        package = self._foreground
        screen = self._current_screen()
        form = self._form.get(package, {})
        children: List[UiNode] = []
        for element in screen.elements:
            if element.editable:
                text = form.get(element.field_key, "")
            else:
                text = self._render(element.text, package)
            focused = self._focused == (package, screen.name, element.field_key)
            children.append(UiNode(
                node_id=element.id, bounds=element.bounds, resource_id=element.resource_id, text=text,
                content_desc=element.content_desc, focusable=element.interactive, focused=focused,
                editable=element.editable,
            ))
        if screen.list is not None:
            spec = screen.list
            records = self._data[package].get(spec.store, [])
            offset = self._scroll.get(self._scroll_key(), 0)
            for row, index in enumerate(range(offset, min(len(records), offset + spec.page_size))):
                top = spec.top + row * spec.row_height
                children.append(UiNode(
                    node_id=f"{spec.id}_{index}", bounds=Rect(spec.left, top, spec.right, top + spec.row_height),
                    text=str(records[index].get(spec.label, "")), focusable=True,
                ))
        return UiNode(node_id=f"{package}/{screen.name}", bounds=Rect(0, 0, SCREEN_WIDTH, SCREEN_HEIGHT),
                      children=tuple(children))

    def get_state(self) -> DeviceState:
        """读取当前状态；不改变 seq"""
        with self._lock:
            hierarchy = self._build_hierarchy()
            return DeviceState(
                screenshot_digest=short_digest(serialize_hierarchy(hierarchy)),
                hierarchy=hierarchy,
                focused_package=self._foreground,
                timestamp=BASE_TIME + TICK * self._ticks,
                seq=self._seq,
            )

    # ---- 变更辅助 ----

    def _mutated(self):
        """每次变更: seq+1，推进虚拟时间，录屏时追加一帧"""
        self._seq += 1
        self._ticks += self.faults.latency_ticks
        if self._recording:
            self._capture_frame()

    def _capture_frame(self):
        hierarchy = self._build_hierarchy()
        self._frames.append(Frame(
            seq=self._seq,
            screenshot_digest=short_digest(serialize_hierarchy(hierarchy)),
            screen=hierarchy.node_id,
            texts=tuple(visible_texts(hierarchy)),
        ))

    def _goto(self, package: str, screen: Optional[str]):
        if screen is None:
            return
        if screen == EXIT:
            self._exit_app(package)
            return
        self._screen[package] = screen
        self._focused = None

    def _exit_app(self, package: str):
        app = self.apps[package]
        self._screen[package] = app.initial_screen
        self._scroll = {k: v for k, v in self._scroll.items() if not k.startswith(f"{package}/")}
        self._foreground = HOME_PACKAGE
        self._screen.setdefault(HOME_PACKAGE, self.apps[HOME_PACKAGE].initial_screen)
        self._focused = None

    def _apply_effect(self, package: str, effect: Mapping[str, Any]):
        op = effect["op"]
        data = self._data[package]
        if op == "reset_form":
            self._form[package] = {}
        elif op == "load_form":
            record = self._selected_record(package) or {}
            self._form[package] = {field: str(record.get(src, "")) for field, src in effect.get("fields", {}).items()}
        elif op == "append":
            record = {k: self._render(str(v), package) for k, v in effect.get("fields", {}).items()}
            data.setdefault(effect["store"], []).append(record)
            self._form[package] = {}
        elif op == "update_selected":
            record = self._selected_record(package)
            if record is not None:
                record.update({k: self._render(str(v), package) for k, v in effect.get("fields", {}).items()})
            self._form[package] = {}
        elif op == "delete_selected":
            selected = self._selected.pop(package, None)
            if selected is not None:
                store, index = selected
                records = data.get(store, [])
                if 0 <= index < len(records):
                    del records[index]
        elif op == "set":
            data.setdefault(effect["store"], {})[effect["key"]] = self._render(str(effect["value"]), package)
        elif op == "toggle":
            values = data.setdefault(effect["store"], {})
            values[effect["key"]] = "off" if values.get(effect["key"]) == "on" else "on"
        elif op == "launch":
            self._launch(effect["package"])

    def _fire(self, package: str, transition: Optional[Transition]):
        if transition is None:
            return
        for effect in transition.effects:
            self._apply_effect(package, effect)
        if self._foreground == package:
            self._goto(package, transition.goto)

    def _launch(self, package: str):
        app = self.apps[package]
        self._screen.setdefault(package, app.initial_screen)
        self._foreground = package
        self._focused = None

    def _locate(self, selector: SelectorBundle):
        """解析选择器，返回 (节点, 层级, 元素定义或列表行号)"""
        hierarchy = self._build_hierarchy()
        node, tier = resolve_selector(selector, hierarchy)
        screen = self._current_screen()
        element = screen.element(node.node_id)
        row = None
        if element is None and screen.list is not None and node.node_id.startswith(f"{screen.list.id}_"):
            row = int(node.node_id[len(screen.list.id) + 1:])
        return node, tier, element, row

    # ---- DeviceController ----

    def tap(self, selector: SelectorBundle) -> ActionResult:
        with self._lock:
            try:
                node, tier, element, row = self._locate(selector)
            except ElementNotFound as e:
                return ActionResult.failure("ElementNotFound", str(e))
            package = self._foreground
            screen = self._current_screen()
            if element is not None:
                if element.editable:
                    self._focused = (package, screen.name, element.field_key)
                self._fire(package, element.on_tap)
            elif row is not None:
                self._selected[package] = (screen.list.store, row)
                self._fire(package, screen.list.on_tap)
            self._mutated()
            return ActionResult.success(f"tap {node.node_id} tier={tier.value}", data=tier)

    def swipe(self, direction: str, amount: int = 1) -> ActionResult:
        with self._lock:
            if direction not in ("up", "down"):
                return ActionResult.failure("InvalidDirection", f"不支持的滑动方向: {direction}")
            screen = self._current_screen()
            if screen.list is not None:
                records = self._data[self._foreground].get(screen.list.store, [])
                key = self._scroll_key()
                offset = self._scroll.get(key, 0)
                step = screen.list.page_size * max(1, amount)
                max_offset = max(0, len(records) - screen.list.page_size)
                offset = min(offset + step, max_offset) if direction == "up" else max(0, offset - step)
                self._scroll[key] = offset
            self._mutated()
            return ActionResult.success(f"swipe {direction}")

    def _focused_field(self) -> Optional[str]:
        if self._focused is None:
            return None
        package, screen, field_key = self._focused
        if package != self._foreground or screen != self._screen[package]:
            return None
        return field_key

    def type_text(self, raw: str) -> ActionResult:
        """在获得焦点的字段末尾追加字符，每个字符按 char_drop_prob 独立丢弃"""
        with self._lock:
            field_key = self._focused_field()
            if field_key is None:
                return ActionResult.failure("NoFocusedField", "没有获得焦点的可编辑字段")
            p = self.faults.char_drop_prob
            kept = "".join(ch for ch in raw if not (p > 0 and self._rng.random() < p))
            form = self._form.setdefault(self._foreground, {})
            form[field_key] = form.get(field_key, "") + kept
            self._mutated()
            return ActionResult.success(f"typed {len(kept)}/{len(raw)}", data=len(kept))

    def backspace(self, selector: SelectorBundle, count: int) -> ActionResult:
        with self._lock:
            try:
                node, _, element, _ = self._locate(selector)
            except ElementNotFound as e:
                return ActionResult.failure("ElementNotFound", str(e))
            if element is None or not element.editable:
                return ActionResult.failure("FieldNotEditable", f"{node.node_id} 不可编辑")
            form = self._form.setdefault(self._foreground, {})
            current = form.get(element.field_key, "")
            form[element.field_key] = current[:max(0, len(current) - count)]
            self._mutated()
            return ActionResult.success(f"deleted {min(count, len(current))}")

    def press_back(self) -> ActionResult:
        with self._lock:
            package = self._foreground
            back = self._current_screen().back
            if package != HOME_PACKAGE:
                self._goto(package, back or EXIT)
            self._mutated()
            return ActionResult.success("back")

    def launch_app(self, package: str) -> ActionResult:
        with self._lock:
            if package not in self.apps:
                return ActionResult.failure("AppNotFound", f"未安装的应用: {package}")
            self._launch(package)
            self._mutated()
            return ActionResult.success(f"launched {package}")

    def focus(self, selector: SelectorBundle) -> ActionResult:
        """聚焦可编辑字段；focus_steal 故障时静默失败"""
        with self._lock:
            try:
                node, tier, element, _ = self._locate(selector)
            except ElementNotFound as e:
                return ActionResult.failure("ElementNotFound", str(e))
            if element is None or not element.editable:
                return ActionResult.failure("FieldNotEditable", f"{node.node_id} 不可编辑")
            p = self.faults.focus_steal_prob
            if not (p > 0 and self._rng.random() < p):
                self._focused = (self._foreground, self._screen[self._foreground], element.field_key)
            self._mutated()
            return ActionResult.success(f"focus {node.node_id} tier={tier.value}", data=tier)

    def set_cursor_end(self, selector: SelectorBundle) -> ActionResult:
        # 模拟器的光标始终停在内容末尾
        with self._lock:
            try:
                node, _, _, _ = self._locate(selector)
            except ElementNotFound as e:
                return ActionResult.failure("ElementNotFound", str(e))
            self._mutated()
            return ActionResult.success(f"cursor end {node.node_id}")

    def wait(self) -> ActionResult:
        with self._lock:
            package = self._foreground
            on_wait = self._current_screen().on_wait
            if on_wait is not None:
                self._goto(package, on_wait)
            self._mutated()
            return ActionResult.success("wait")

    def start_recording(self) -> ActionResult:
        with self._lock:
            self._recording = True
            self._frames = []
            self._mutated()
            return ActionResult.success("recording started")

    def stop_recording(self) -> Tuple[ActionResult, FrameLog]:
        with self._lock:
            if not self._recording:
                return ActionResult.failure("NotRecording", "录屏未开始"), FrameLog()
            self._mutated()
            self._recording = False
            log = FrameLog(frames=tuple(self._frames))
            self._frames = []
            return ActionResult.success(f"recording stopped frames={len(log.frames)}", data=log), log

    def apply_action(self, call: ToolCall) -> ActionResult:
        """执行一次原始工具调用；选择器或元素问题作为失败结果返回"""
        kind = call.name
        if kind == ActionKind.TAP:
            if call.selector is None:
                return ActionResult.failure("MissingSelector", "Tap 需要选择器")
            return self.tap(call.selector)
        if kind == ActionKind.SWIPE:
            direction, _, amount = (call.payload or "up").partition(":")
            return self.swipe(direction.strip(), int(amount) if amount.strip().isdigit() else 1)
        if kind == ActionKind.TYPE_TEXT:
            return self.type_text(call.payload or "")
        if kind == ActionKind.BACK:
            return self.press_back()
        if kind == ActionKind.LAUNCH_APP:
            return self.launch_app(call.payload or "")
        if kind == ActionKind.WAIT:
            return self.wait()
        if kind == ActionKind.START_RECORDING:
            return self.start_recording()
        if kind == ActionKind.STOP_RECORDING:
            result, _ = self.stop_recording()
            return result
        return ActionResult.failure("NotADeviceAction", f"设备不处理该动作: {call.describe()}")

    # ---- 快照 ----

    def snapshot(self) -> str:
        with self._lock:
            snapshot_id = f"snap-{len(self._snapshots) + 1}"
            self._snapshots[snapshot_id] = copy.deepcopy({
                "data": self._data, "screen": self._screen, "form": self._form, "selected": self._selected,
                "scroll": self._scroll, "foreground": self._foreground, "focused": self._focused,
                "ticks": self._ticks, "recording": self._recording, "frames": self._frames,
                "rng": self._rng.bit_generator.state,
            })
            return snapshot_id

    def restore(self, snapshot_id: str) -> None:
        """恢复到快照（含数据与随机数状态）；seq 继续单调递增"""
        with self._lock:
            saved = self._snapshots.get(snapshot_id)
            if saved is None:
                raise UnknownSnapshot(snapshot_id)
            saved = copy.deepcopy(saved)
            self._data = saved["data"]
            self._screen = saved["screen"]
            self._form = saved["form"]
            self._selected = saved["selected"]
            self._scroll = saved["scroll"]
            self._foreground = saved["foreground"]
            self._focused = saved["focused"]
            self._ticks = saved["ticks"]
            self._recording = saved["recording"]
            self._frames = saved["frames"]
            self._rng.bit_generator.state = saved["rng"]
            self._seq += 1

    # ---- 评测查询 ----

    def current_screen(self) -> Tuple[str, str]:
        with self._lock:
            return self._foreground, self._screen[self._foreground]

    def field_value(self, package: str, field_key: str) -> Optional[str]:
        """字段当前内容；从未输入过返回 None"""
        with self._lock:
            return self._form.get(package, {}).get(field_key)

    def store(self, package: str, name: str) -> Any:
        with self._lock:
            return copy.deepcopy(self._data.get(package, {}).get(name))
