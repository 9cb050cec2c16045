"""
确定性文本输入流程
聚焦（选择器三层回退）→ 光标移到末尾 → 输入 → 重新读取设备 → 定位目标 → 显式比较
"""

import logging
from typing import Optional

from src.core.errors import ElementNotFound, FieldNotEditable, PreconditionViolation
from src.core.models import ActionKind, SelectorBundle, SelectorTier, ToolCall, UiNode, VerificationFeedback
from src.device.controller import DeviceController
from src.device.hierarchy import resolve_selector

DEFAULT_RETRY_BUDGET = 3


def _field_content(device: DeviceController, node_id: str) -> Optional[UiNode]:
    return device.get_state().hierarchy.find(node_id)


def pin_selector(bundle: SelectorBundle, node: UiNode, tier: SelectorTier, hierarchy: UiNode) -> SelectorBundle:
    """坐标或文本命中的节点，resource_id 在层级中唯一时改用 resource_id 定位，否则沿用原选择器"""
    if tier == SelectorTier.RESOURCE_ID or not node.resource_id:
        return bundle
    owners = [n for n in hierarchy.iter() if n.resource_id == node.resource_id]
    if len(owners) != 1:
        return bundle
    return SelectorBundle(resource_id=node.resource_id)


def _focus_with_retry(device: DeviceController, bundle: SelectorBundle, node_id: str) -> bool:
    """聚焦目标字段；被抢焦点时在同一次尝试内重试一次"""
    for _ in range(2):
        result = device.focus(bundle)
        if not result.ok:
            return False
        node = _field_content(device, node_id)
        if node is not None and node.focused:
            return True
    return False


def input_text_verified(bundle: SelectorBundle, text: str, device: DeviceController, post_validation: bool = True,
                        retry_budget: int = DEFAULT_RETRY_BUDGET) -> VerificationFeedback:
    """
    带后置校验的文本输入

    Args:
        bundle: 目标字段选择器
        text: 要输入的文本（非空）
        device: 设备控制器
        post_validation: 关闭时跳过读取与比较，直接报告成功
        retry_budget: 校验失败时的最大尝试次数

    Returns:
        VerificationFeedback；verified 为 False 时 actual 是设备上的真实内容
    """
    if not text:
        raise PreconditionViolation("输入文本不能为空")
    if retry_budget < 1:
        raise PreconditionViolation(f"retry_budget 必须 ≥ 1: {retry_budget}")

    state = device.get_state()
    node, tier = resolve_selector(bundle, state.hierarchy)
    if not node.editable:
        raise FieldNotEditable(f"{node.node_id} 不可编辑")
    node_id = node.node_id
    # 后续操作一律用同一个节点，避免坐标层在字段内容变化后漂移
    target = pin_selector(bundle, node, tier, state.hierarchy)

    attempts = 0
    actual = node.text or ""
    while attempts < retry_budget:
        attempts += 1
        before_node = _field_content(device, node_id)
        if before_node is None:
            raise ElementNotFound(f"字段已不在屏幕上: {node_id}")
        before = before_node.text or ""

        focused = _focus_with_retry(device, target, node_id)
        if not focused and post_validation:
            actual = before
            logging.info(f"第 {attempts} 次输入未能聚焦 {node_id}")
            continue
        if before_node.bounds is not None:
            device.set_cursor_end(target)
        device.apply_action(ToolCall(ActionKind.TYPE_TEXT, target, text))

        if not post_validation:
            # 不读取设备，照单全收
            return VerificationFeedback(verified=True, expected=text, actual=before + text,
                                        tier_used=tier, attempts=attempts)

        after_node = _field_content(device, node_id)
        actual = (after_node.text or "") if after_node is not None else ""
        if actual.endswith(text):
            return VerificationFeedback(verified=True, expected=text, actual=actual, tier_used=tier,
                                        attempts=attempts)

        appended = len(actual) - len(before)
        if appended > 0:
            device.backspace(target, appended)
            after_node = _field_content(device, node_id)
            actual = (after_node.text or "") if after_node is not None else ""
        logging.info(f"文本校验失败（第 {attempts} 次）: 期望以 {text!r} 结尾，回滚后 {actual!r}")

    return VerificationFeedback(verified=False, expected=text, actual=actual, tier_used=tier, attempts=attempts)
