"""
评测框架：任务集、成功判定、轨迹、成本与 Pareto 分析
"""
