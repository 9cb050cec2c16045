"""
AgentLoom 核心代码模块
"""
