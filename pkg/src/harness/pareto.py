"""
成本-成功率 Pareto 前沿
成功率越高越好，成本越低越好
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import yaml

from src.core.errors import ConfigError, PreconditionViolation


@dataclass(frozen=True)
class ConfigPoint:
    name: str
    success_rate: float  # 0..1
    cost: Optional[float] = None  # 每任务美元；None 表示未公布
    starred: bool = False  # 数据来源标注的最优配置

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise PreconditionViolation(f"成功率必须在 [0, 1]: {self.name}={self.success_rate}")
        if self.cost is not None and self.cost < 0:
            raise PreconditionViolation(f"成本不能为负: {self.name}={self.cost}")

    @property
    def priced(self) -> bool:
        return self.cost is not None


def dominates(q: ConfigPoint, p: ConfigPoint) -> bool:
    """q 的成功率不低且成本不高，并且至少一项严格更好；未定价的点与任何点互不支配"""
    if not (q.priced and p.priced):
        return False
    if q.success_rate < p.success_rate or q.cost > p.cost:
        return False
    return q.success_rate > p.success_rate or q.cost < p.cost


def pareto_frontier(points: Sequence[ConfigPoint]) -> List[ConfigPoint]:
    """
    返回所有不被支配的点，保持输入顺序；完全相同的点全部保留

    未定价的点不参与计算
    """
    priced = [p for p in points if p.priced]
    if not priced:
        return []
    mask = nondominated_mask(np.array([[p.success_rate, p.cost] for p in priced], dtype=float))
    return [p for p, keep in zip(priced, mask) if keep]


def nondominated_mask(values: np.ndarray) -> np.ndarray:
    """
    values 为 (n, 2) 数组，第 0 列成功率（越大越好），第 1 列成本（越小越好）
    """
    if values.size == 0:
        return np.zeros(0, dtype=bool)
    objectives = values * np.array([1.0, -1.0])
    n = objectives.shape[0]
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        others = np.delete(objectives, i, axis=0)
        if others.size == 0:
            continue
        ge_all = (others >= objectives[i]).all(axis=1)
        gt_any = (others > objectives[i]).any(axis=1)
        if (ge_all & gt_any).any():
            mask[i] = False
    return mask


def load_points(path: str) -> List[ConfigPoint]:
    """
    加载配置点文件

    格式: points: [{name, success_rate (百分数), cost (可缺省), starred}]
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"无法读取配置点文件 {path}: {e}") from None
    points = []
    for entry in data.get("points") or []:
        try:
            cost = entry.get("cost")
            points.append(ConfigPoint(
                name=entry["name"],
                success_rate=float(entry["success_rate"]) / 100.0,
                cost=float(cost) if cost is not None else None,
                starred=bool(entry.get("starred", False)),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"配置点条目无效 {entry}: {e}") from None
    return points
