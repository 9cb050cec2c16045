"""
UI 层级的文本序列化、解析与选择器解析

序列化格式（每个节点一行，深度用两个空格缩进表示）:
    "contacts/list" rid=null text=null desc=null bounds=[0,0][1080,2400] flags=---
字符串字段用 JSON 编码；flags 三位依次为 focusable(f)、focused(F)、editable(e)，缺省为 '-'。
"""

import json
import re
from typing import List, Optional, Tuple

from src.core.errors import ElementNotFound, PreconditionViolation
from src.core.models import Rect, SelectorBundle, SelectorTier, UiNode

INDENT = "  "

_JSON_STR = r'"(?:[^"\\]|\\.)*"'
_LINE_RE = re.compile(
    rf'^(?P<indent>(?:{INDENT})*)(?P<id>{_JSON_STR}) '
    rf'rid=(?P<rid>null|{_JSON_STR}) '
    rf'text=(?P<text>null|{_JSON_STR}) '
    rf'desc=(?P<desc>null|{_JSON_STR}) '
    r'bounds=\[(?P<l>-?\d+),(?P<t>-?\d+)\]\[(?P<r>-?\d+),(?P<b>-?\d+)\] '
    r'flags=(?P<flags>[f-][F-][e-])$'
)


def _encode(value: Optional[str]) -> str:
    return "null" if value is None else json.dumps(value, ensure_ascii=False)


def _format_node(node: UiNode, depth: int) -> str:
    b = node.bounds
    flags = ("f" if node.focusable else "-") + ("F" if node.focused else "-") + ("e" if node.editable else "-")
    return (f"{INDENT * depth}{json.dumps(node.node_id, ensure_ascii=False)} "
            f"rid={_encode(node.resource_id)} text={_encode(node.text)} desc={_encode(node.content_desc)} "
            f"bounds=[{b.left},{b.top}][{b.right},{b.bottom}] flags={flags}")


def serialize_hierarchy(root: UiNode) -> str:
    """确定性序列化；parse_hierarchy 可还原"""
    lines: List[str] = []

    def walk(node: UiNode, depth: int):
        lines.append(_format_node(node, depth))
        for child in node.children:
            walk(child, depth + 1)

    walk(root, 0)
    return "\n".join(lines)


def parse_hierarchy(text: str) -> UiNode:
    """解析 serialize_hierarchy 的输出"""
    # 每个栈元素: (depth, 节点字段, 子节点列表)
    stack: List[Tuple[int, dict, list]] = []
    root_entry = None

    def freeze(entry) -> UiNode:
        _, fields, children = entry
        return UiNode(children=tuple(freeze(c) for c in children), **fields)

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        match = _LINE_RE.match(line)
        if not match:
            raise PreconditionViolation(f"第 {lineno} 行无法解析: {line!r}")
        depth = len(match.group("indent")) // len(INDENT)
        flags = match.group("flags")
        fields = dict(
            node_id=json.loads(match.group("id")),
            resource_id=json.loads(match.group("rid")),
            text=json.loads(match.group("text")),
            content_desc=json.loads(match.group("desc")),
            bounds=Rect(int(match.group("l")), int(match.group("t")), int(match.group("r")), int(match.group("b"))),
            focusable=flags[0] == "f",
            focused=flags[1] == "F",
            editable=flags[2] == "e",
        )
        entry = (depth, fields, [])
        if not stack:
            if depth != 0 or root_entry is not None:
                raise PreconditionViolation(f"第 {lineno} 行: 层级只能有一个根节点")
            root_entry = entry
        else:
            while stack and stack[-1][0] >= depth:
                stack.pop()
            if not stack or depth != stack[-1][0] + 1:
                raise PreconditionViolation(f"第 {lineno} 行缩进不连续")
            stack[-1][2].append(entry)
        stack.append(entry)

    if root_entry is None:
        raise PreconditionViolation("层级文本为空")
    return freeze(root_entry)


def resolve_selector(bundle: SelectorBundle, hierarchy: UiNode) -> Tuple[UiNode, SelectorTier]:
    """
    逐层回退解析选择器

    1. resource_id 精确匹配（文档顺序第一个）
    2. 包含坐标的最小非根节点（面积相同取文档顺序第一个）
    3. text 精确、区分大小写匹配（文档顺序第一个）
    4. 坐标落在根窗口内但没有其他节点包含时，返回根窗口（层级仍为 Coordinates）
    """
    if hierarchy is None:
        raise PreconditionViolation("层级为空")
    nodes = list(hierarchy.iter())

    if bundle.resource_id is not None:
        for node in nodes:
            if node.resource_id == bundle.resource_id:
                return node, SelectorTier.RESOURCE_ID

    if bundle.coordinates is not None:
        x, y = bundle.coordinates
        best: Optional[UiNode] = None
        for node in nodes[1:]:
            if node.bounds.contains(x, y) and (best is None or node.bounds.area < best.bounds.area):
                best = node
        if best is not None:
            return best, SelectorTier.COORDINATES

    if bundle.text_match is not None:
        for node in nodes:
            if node.text == bundle.text_match:
                return node, SelectorTier.TEXT

    if bundle.coordinates is not None and hierarchy.bounds.contains(*bundle.coordinates):
        return hierarchy, SelectorTier.COORDINATES

    raise ElementNotFound(f"选择器未命中: {bundle.canonical()}")


def visible_texts(root: UiNode) -> List[str]:
    """层级中出现的全部文本（文档顺序）"""
    return [node.text for node in root.iter() if node.text]
