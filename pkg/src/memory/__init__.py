"""
任务级记忆
"""
