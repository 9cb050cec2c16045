"""
元认知：循环检测、停滞评估与完成证据
"""
