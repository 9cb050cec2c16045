"""
智能体：Planner、Orchestrator、Contextor、Cortex、Executor、Summarizer 与辅助智能体
"""
