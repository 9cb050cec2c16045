"""
Contextor：每个决策周期开始时读取设备状态，必要时重新拉起锁定的应用
"""

import logging

from src.core.errors import AgentLoomError, DeviceUnavailable
from src.core.models import DeviceState, TaskGoal
from src.device.controller import DeviceController


def gather_context(device: DeviceController, goal: TaskGoal) -> DeviceState:
    """
    读取设备状态

    Args:
        device: 设备控制器
        goal: 任务目标；app_lock 设置时保证该应用在前台

    Returns:
        最新的 DeviceState（发生重新拉起时为拉起之后的状态）
    """
    try:
        state = device.get_state()
        if goal.app_lock and state.focused_package != goal.app_lock:
            logging.info(f"前台应用为 {state.focused_package}，重新拉起锁定应用 {goal.app_lock}")
            result = device.launch_app(goal.app_lock)
            if not result.ok:
                logging.warning(f"拉起 {goal.app_lock} 失败: {result.error}")
            state = device.get_state()
    except AgentLoomError:
        raise
    except Exception as e:
        raise DeviceUnavailable(f"设备无响应: {e}") from e
    return state
