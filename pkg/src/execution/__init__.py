"""
带校验的执行层
"""
