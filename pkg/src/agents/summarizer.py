"""
Summarizer：历史消息超过阈值时删除最旧的非常驻消息
"""

import logging
from typing import List, Sequence

from src.core.errors import PreconditionViolation
from src.core.models import AgentMessage


def summarize(history: Sequence[AgentMessage], threshold: int = 40, keep_recent: int = 10) -> List[AgentMessage]:
    """
    裁剪历史

    Args:
        history: 按时间顺序的消息
        threshold: 消息数上限
        keep_recent: 原样保留的最近消息数

    Returns:
        新的消息列表；常驻消息与最近 keep_recent 条永远保留
    """
    if not (threshold > keep_recent >= 1):
        raise PreconditionViolation(f"需要 threshold > keep_recent ≥ 1: {threshold}, {keep_recent}")
    if len(history) <= threshold:
        return list(history)

    recent_start = len(history) - keep_recent
    excess = len(history) - threshold
    dropped = set()
    for index, message in enumerate(history[:recent_start]):
        if excess == 0:
            break
        if not message.pinned:
            dropped.add(index)
            excess -= 1
    if excess:
        logging.warning(f"常驻消息过多，历史仍超出阈值 {excess} 条")
    return [m for i, m in enumerate(history) if i not in dropped]
