"""
设备控制层：控制器接口、UI 层级工具与模拟设备
"""
