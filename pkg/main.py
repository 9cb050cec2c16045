"""
AgentLoom 主程序
命令行入口：运行任务、任务集、消融扫描、轨迹回放与成本分析
"""

import logging
import os
import sys

# 配置日志
logging.basicConfig(
    level=getattr(logging, os.getenv('AGENTLOOM_LOG_LEVEL', 'INFO').upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler('agentloom.log'),
        logging.StreamHandler(sys.stdout)
    ]
)

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
