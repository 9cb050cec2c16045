#!/usr/bin/env python3
"""
AgentLoom 测试运行器
依赖、语法、配置、单元测试、快速回放与任务集耗时检查
"""

import argparse
import ast
import importlib
import os
import subprocess
import sys
import tempfile
import time

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
SOURCE_DIRS = ("src", "tests")
REQUIRED_MODULES = ("yaml", "pydantic", "httpx", "fastapi", "uvicorn", "pandas", "numpy", "pytest", "hypothesis")
SMOKE_TASK = "contacts_add_alice"


def setup_dev_environment():
    """日志降噪；测试一律使用预言机后端，不读取真实 LLM 地址"""
    os.environ.setdefault("AGENTLOOM_LOG_LEVEL", "WARNING")
    for name in ("AGENTLOOM_LLM_URL", "AGENTLOOM_LLM_KEY"):
        os.environ.pop(name, None)


def _subprocess(argv, env=None):
    return subprocess.run([sys.executable, *argv], capture_output=True, text=True, cwd=PROJECT_ROOT, env=env)


def _echo(result):
    print(result.stdout)
    if result.stderr:
        print("错误输出:", result.stderr)


def check_dependencies(args) -> bool:
    print("📦 检查依赖项...")
    missing = []
    for name in REQUIRED_MODULES:
        try:
            importlib.import_module(name)
            print(f"  ✅ {name}")
        except ImportError:
            print(f"  ❌ {name} (缺失)")
            missing.append(name)
    if missing:
        print(f"\n⚠️  缺失包: {', '.join(missing)}，请运行: pip install -r requirements.txt")
    return not missing


def run_syntax_check(args) -> bool:
    print("📝 运行语法检查...")
    checked, broken = 0, 0
    for top in SOURCE_DIRS + ("main.py",):
        path = os.path.join(PROJECT_ROOT, top)
        files = [path] if path.endswith(".py") else [
            os.path.join(root, name)
            for root, dirs, names in os.walk(path)
            for name in names if name.endswith(".py")
        ]
        for file_path in sorted(files):
            checked += 1
            with open(file_path, "r", encoding="utf-8") as f:
                source = f.read()
            try:
                ast.parse(source, filename=file_path)
            except SyntaxError as e:
                broken += 1
                print(f"  ❌ {os.path.relpath(file_path, PROJECT_ROOT)}:{e.lineno}: {e.msg}")
    if broken:
        print(f"❌ {broken}/{checked} 个文件有语法错误")
        return False
    print(f"✅ {checked} 个Python文件语法正确")
    return True


def run_config_test(args) -> bool:
    """运行配置、价格表、模型方案、模拟应用与任务集能否加载"""
    print("⚙️  运行配置测试...")
    try:
        sys.path.append(PROJECT_ROOT)
        from src.config.config_manager import config_manager
        from src.harness.cost import load_pricing, load_profiles
        from src.harness.suite import load_fixtures, load_suite

        status = config_manager.get_status()
        print(f"  ✅ 运行配置: {status['config_file']} (方案 {status['profile']})")
        print(f"  ✅ 故障预设: {', '.join(status['fault_profiles'])}")

        harness = config_manager.harness
        pricing = load_pricing(harness.resolve(harness.pricing_file))
        profiles = load_profiles(harness.resolve(harness.profiles_file))
        print(f"  ✅ 价格表 {len(pricing.rates)} 个模型，模型方案 {len(profiles)} 个")

        fixtures = load_fixtures(harness.resolve(harness.fixtures_dir))
        suite = load_suite(harness.resolve(harness.suite_file))
        unscripted = [t.id for t in suite if t.id not in fixtures.scripts]
        print(f"  ✅ 模拟应用 {len(fixtures.apps)} 个，任务 {len(suite)} 个")
        if unscripted:
            print(f"  ❌ 缺少预言机脚本: {', '.join(unscripted)}")
            return False
        return True
    except Exception as e:
        print(f"  ❌ 配置测试失败: {e}")
        return False


def run_unit_tests(args) -> bool:
    print("🧪 运行单元测试...")
    env = dict(os.environ)
    if args.fuzz is not None:
        env["AGENTLOOM_FUZZ_EXAMPLES"] = str(args.fuzz)
    result = _subprocess(["-m", "pytest", "tests/", "-v", "--tb=short"], env)
    if "No module named pytest" in (result.stderr or ""):
        print("❌ pytest未安装，改用unittest...")
        result = _subprocess(["-m", "unittest", "discover", "-s", "tests", "-p", "test_*.py", "-v"], env)
    _echo(result)
    return result.returncode == 0


def run_quick_test(args) -> bool:
    """运行一个参考任务，再对它的轨迹做严格回放"""
    print("⚡ 运行快速验证测试...")
    with tempfile.TemporaryDirectory() as out:
        run = _subprocess(["main.py", "run", "--task", SMOKE_TASK, "--out", out])
        if run.returncode != 0:
            print(f"  ❌ {SMOKE_TASK} 运行失败 (exit {run.returncode})")
            _echo(run)
            return False
        print(f"  ✅ {SMOKE_TASK} 运行成功")

        replay = _subprocess(["main.py", "replay", os.path.join(out, f"{SMOKE_TASK}.trace.jsonl")])
        matched = replay.returncode == 0 and "MATCH" in replay.stdout.split()
        print(f"  {'✅' if matched else '❌'} 回放{'一致' if matched else '不一致'} (exit {replay.returncode})")
        return matched


def run_performance_test(args) -> bool:
    """参考任务集在默认配置下的耗时与成功率"""
    print("🚀 运行性能测试...")
    try:
        sys.path.append(PROJECT_ROOT)
        from src.config.config_manager import config_manager
        from src.graph.state import AblationFlags
        from src.harness.suite import load_fixtures, load_suite, run_suite

        harness = config_manager.harness
        fixtures = load_fixtures(harness.resolve(harness.fixtures_dir))
        suite = load_suite(harness.resolve(harness.suite_file))

        started = time.perf_counter()
        report = run_suite(suite, AblationFlags(), fixtures.oracle(), harness.seed, fixtures,
                           max_workers=harness.max_workers)
        elapsed = time.perf_counter() - started
        rate = "n/a" if report.success_rate is None else f"{report.success_rate * 100:.1f}%"
        print(f"  ⏱️  {report.task_count} 个任务耗时 {elapsed:.3f}秒")
        print(f"  📊 成功率 {rate}，LLM 调用 {report.token_totals()['calls']} 次")
        if elapsed >= 60:
            print("  ⚠️  性能较慢，可能需要优化")
            return False
        print("  ✅ 性能测试通过")
        return True
    except Exception as e:
        print(f"  ❌ 性能测试失败: {e}")
        return False


# (开关, 说明, 检查函数)，按此顺序执行
CHECKS = (
    ("deps", "检查依赖项", check_dependencies),
    ("syntax", "运行语法检查", run_syntax_check),
    ("config", "运行配置测试", run_config_test),
    ("unit", "运行单元测试", run_unit_tests),
    ("quick", "运行一个任务并严格回放", run_quick_test),
    ("perf", "运行参考任务集计时", run_performance_test),
)


def main() -> int:
    parser = argparse.ArgumentParser(description="AgentLoom 测试运行器")
    for flag, help_text, _ in CHECKS:
        parser.add_argument(f"--{flag}", action="store_true", help=help_text)
    parser.add_argument("--all", action="store_true", help="运行所有检查")
    parser.add_argument("--fuzz", type=int, default=None, metavar="N", help="扰动测试样例数（配合 --unit）")
    args = parser.parse_args()

    selected = [(flag, check) for flag, _, check in CHECKS if args.all or getattr(args, flag)]
    if not selected:
        selected = [("quick", run_quick_test)]

    print("🧪 AgentLoom 测试运行器")
    print("=" * 50)
    setup_dev_environment()

    failed = []
    for flag, check in selected:
        if not check(args):
            failed.append(flag)
        print()

    print("=" * 50)
    if failed:
        print(f"❌ 部分检查失败: {', '.join(failed)}")
        return 1
    print("🎉 所有测试完成！")
    return 0


if __name__ == "__main__":
    sys.exit(main())
