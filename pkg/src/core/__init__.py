"""
核心领域类型与子目标生命周期
"""
