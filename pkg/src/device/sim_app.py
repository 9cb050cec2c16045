"""
模拟应用定义加载
应用由 YAML 文件声明：屏幕、元素、点击转换、列表生成器与初始数据，格式见 docs/APP_SCHEMA.md
"""

import copy
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from src.core.errors import AppDefinitionError
from src.core.models import Rect

EXIT = "exit"
EFFECT_OPS = {"reset_form", "load_form", "append", "update_selected", "delete_selected", "set", "toggle", "launch"}
TEMPLATE_RE = re.compile(r"\{([^{}]+)\}")


@dataclass(frozen=True)
class Transition:
    goto: Optional[str] = None
    effects: Tuple[Mapping[str, Any], ...] = ()


@dataclass(frozen=True)
class ElementSpec:
    id: str
    bounds: Rect
    resource_id: Optional[str] = None
    text: Optional[str] = None  # 可含 {values.x} 之类的模板
    content_desc: Optional[str] = None
    editable: bool = False
    on_tap: Optional[Transition] = None

    @property
    def field_key(self) -> str:
        return self.resource_id or self.id

    @property
    def interactive(self) -> bool:
        return self.editable or self.on_tap is not None


@dataclass(frozen=True)
class ListSpec:
    """绑定到记录存储的列表，每行显示 label 字段"""
    id: str
    store: str
    label: str
    top: int = 220
    row_height: int = 160
    page_size: int = 10
    left: int = 0
    right: int = 1080
    on_tap: Optional[Transition] = None


@dataclass(frozen=True)
class ScreenSpec:
    name: str
    elements: Tuple[ElementSpec, ...] = ()
    list: Optional[ListSpec] = None
    back: Optional[str] = None
    on_wait: Optional[str] = None

    def element(self, element_id: str) -> Optional[ElementSpec]:
        for element in self.elements:
            if element.id == element_id:
                return element
        return None


@dataclass(frozen=True)
class SimApp:
    package: str
    label: str
    initial_screen: str
    screens: Mapping[str, ScreenSpec]
    data: Mapping[str, Any] = field(default_factory=dict)

    def initial_data(self) -> Dict[str, Any]:
        return copy.deepcopy(dict(self.data))


def _parse_rect(value: Any, where: str) -> Rect:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise AppDefinitionError(f"{where}: bounds 需要 [left, top, right, bottom]")
    rect = Rect(*(int(v) for v in value))
    if rect.right <= rect.left or rect.bottom <= rect.top:
        raise AppDefinitionError(f"{where}: bounds 几何无效 {value}")
    return rect


def _parse_transition(data: Optional[Mapping[str, Any]], where: str) -> Optional[Transition]:
    if data is None:
        return None
    effects = tuple(data.get("effects") or ())
    for effect in effects:
        if effect.get("op") not in EFFECT_OPS:
            raise AppDefinitionError(f"{where}: 未知 effect {effect.get('op')}")
    return Transition(goto=data.get("goto"), effects=effects)


def parse_app(data: Mapping[str, Any], source: str = "<memory>") -> SimApp:
    """把 YAML 字典转换为 SimApp 并校验"""
    try:
        package = data["package"]
        screens_data = data["screens"]
    except KeyError as e:
        raise AppDefinitionError(f"{source}: 缺少字段 {e}") from None

    screens: Dict[str, ScreenSpec] = {}
    for name, screen_data in screens_data.items():
        where = f"{source}:{name}"
        elements = []
        for element_data in screen_data.get("elements") or ():
            element_where = f"{where}.{element_data.get('id')}"
            elements.append(ElementSpec(
                id=element_data["id"],
                bounds=_parse_rect(element_data.get("bounds"), element_where),
                resource_id=element_data.get("resource_id"),
                text=element_data.get("text"),
                content_desc=element_data.get("desc"),
                editable=bool(element_data.get("editable", False)),
                on_tap=_parse_transition(element_data.get("on_tap"), element_where),
            ))
        list_spec = None
        if screen_data.get("list"):
            ld = screen_data["list"]
            list_spec = ListSpec(
                id=ld["id"], store=ld["store"], label=ld["label"],
                top=int(ld.get("top", 220)), row_height=int(ld.get("row_height", 160)),
                page_size=int(ld.get("page_size", 10)),
                left=int(ld.get("left", 0)), right=int(ld.get("right", 1080)),
                on_tap=_parse_transition(ld.get("on_tap"), f"{where}.{ld['id']}"),
            )
        screens[name] = ScreenSpec(name=name, elements=tuple(elements), list=list_spec,
                                   back=screen_data.get("back"), on_wait=screen_data.get("on_wait"))

    app = SimApp(
        package=package,
        label=data.get("label", package),
        initial_screen=data.get("initial_screen", next(iter(screens), "")),
        screens=screens,
        data=data.get("data") or {},
    )
    validate_app(app, source)
    return app


def validate_app(app: SimApp, source: str = "<memory>"):
    """校验屏幕引用与元素 id；发现问题抛出 AppDefinitionError"""
    if app.initial_screen not in app.screens:
        raise AppDefinitionError(f"{source}: 初始屏幕不存在 {app.initial_screen}")

    def check_target(target: Optional[str], where: str, allow_exit: bool = False):
        if target is None or (allow_exit and target == EXIT):
            return
        if target not in app.screens:
            raise AppDefinitionError(f"{where}: 目标屏幕不存在 {target}")

    for name, screen in app.screens.items():
        where = f"{source}:{name}"
        ids = [e.id for e in screen.elements]
        if screen.list is not None:
            ids.append(screen.list.id)
            if screen.list.store not in app.data:
                raise AppDefinitionError(f"{where}: 列表绑定的存储不存在 {screen.list.store}")
            if screen.list.on_tap is not None:
                check_target(screen.list.on_tap.goto, where)
        if len(ids) != len(set(ids)):
            raise AppDefinitionError(f"{where}: 元素 id 重复")
        check_target(screen.back, where, allow_exit=True)
        check_target(screen.on_wait, where)
        for element in screen.elements:
            if element.on_tap is not None:
                check_target(element.on_tap.goto, f"{where}.{element.id}")


def load_app(path: str) -> SimApp:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    return parse_app(data, source=os.path.basename(path))


def load_apps(directory: str) -> Dict[str, SimApp]:
    """加载目录下全部 *.yaml 应用定义"""
    if not os.path.isdir(directory):
        raise AppDefinitionError(f"应用定义目录不存在: {directory}")
    apps: Dict[str, SimApp] = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith((".yaml", ".yml")):
            continue
        app = load_app(os.path.join(directory, name))
        if app.package in apps:
            raise AppDefinitionError(f"包名重复: {app.package}")
        apps[app.package] = app
    logging.info(f"加载模拟应用 {len(apps)} 个: {', '.join(apps)}")
    return apps


def load_scenarios(path: str) -> Dict[str, Dict[str, Any]]:
    """加载初始场景（任务的起始快照）"""
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}
