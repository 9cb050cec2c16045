"""
执行图：状态、路由与运行循环
"""
