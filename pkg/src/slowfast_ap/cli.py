"""
命令行入口 `slowfast-ap`。

子命令: simulate, measure, bbar, average, sweep, check, schema。
退出码: 0 成功, 2 配置校验失败, 3 数值发散, 4 读写失败。
"""

from __future__ import annotations

import argparse
import json
import logging
import warnings
from typing import List, Optional

from pydantic import ValidationError

from .client import SlowFastClient
from .config import ExperimentConfig, load_experiment_config, settings
from .constants import DriftMethod, ExitCode
from .exceptions import BlowUpError, ConfigValidationError, RecordIOError

logger = logging.getLogger(__name__)


def _configure_logging(level: int, suppress_warnings: bool = False) -> None:
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    root = logging.getLogger()
    root.setLevel(level)
    if suppress_warnings:
        warnings.filterwarnings("ignore")
    logging.captureWarnings(True)


def _eps_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"无法解析 ε 列表: {text}")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", default="linear_validation", help="预设名 (linear_validation 等) 或 JSON 配置文件路径"
    )
    common.add_argument("--seed", type=int, help="覆盖配置中的主种子")
    common.add_argument("--out", help="输出目录, 覆盖 outputDir 与 SLOWFAST_OUTPUT_DIR")
    common.add_argument("--workers", type=int, help="进程数, 只影响速度不影响结果")
    common.add_argument("--eps", type=_eps_list, help="逗号分隔的递减 ε 列表")
    noise = common.add_mutually_exclusive_group()
    noise.add_argument("--quiet", action="store_true", help="只输出警告与错误")
    noise.add_argument("--verbose", action="store_true", help="输出调试日志")

    parser = argparse.ArgumentParser(
        prog="slowfast-ap", description="几乎周期系数慢快随机反应扩散系统的平均化实验"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="运行一次耦合系统")
    p.add_argument("--members", type=int, default=1)

    p = sub.add_parser("measure", parents=[common], help="构造 μ̂ᵗˣ 并运行诊断")
    p.add_argument("--t", type=float, default=0.0, help="测度的时间点")
    p.add_argument("--ensemble", type=int, help="集合大小, 默认 ensembleSize")

    p = sub.add_parser("bbar", parents=[common], help="估计 B̄(x₀)")
    p.add_argument("--method", choices=[m.value for m in DriftMethod], default=DriftMethod.ERGODIC.value)
    p.add_argument("--horizon", type=float, default=100.0, help="平均区间长度 T")
    p.add_argument("--paths", type=int, default=64)

    p = sub.add_parser("average", parents=[common], help="运行平均方程")
    p.add_argument("--members", type=int, default=1)

    sub.add_parser("sweep", parents=[common], help="收敛实验 (ε × 试验)")
    sub.add_parser("check", parents=[common], help="不变量检查")
    sub.add_parser("schema", help="打印 ExperimentConfig 的 JSON schema")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    overrides = {}
    seed = args.seed if args.seed is not None else settings.seed
    if seed is not None:
        overrides["seed"] = seed
    if args.eps:
        overrides["eps_list"] = args.eps
    if args.out:
        overrides["output_dir"] = args.out
    if overrides:
        try:
            config = config.with_overrides(**overrides)
        except ValidationError as e:
            raise ConfigValidationError(f"命令行覆盖项校验失败:\n{e}") from e
    return config


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, ensure_ascii=False, default=str))


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "schema":
        _emit(ExperimentConfig.model_json_schema(by_alias=True))
        return int(ExitCode.OK)

    config = _load(args)
    run_settings = settings.model_copy(update={"workers": args.workers}) if args.workers else settings
    client = SlowFastClient(config, run_settings)
    logger.info("配置 %s (hash=%s)", config.name, config.config_hash[:12])

    if args.command == "simulate":
        _, record = client.simulate(members=args.members)
        _emit(record.summary)
    elif args.command == "average":
        _, record = client.average(members=args.members)
        _emit(record.summary)
    elif args.command == "measure":
        record = client.measure(t=args.t, N=args.ensemble)
        _emit(record.summary)
    elif args.command == "bbar":
        estimate = client.estimate_bbar(T=args.horizon, n_paths=args.paths, method=DriftMethod(args.method), persist=True)
        _emit(estimate.model_dump(mode="json", by_alias=True))
    elif args.command == "sweep":
        report = client.sweep()
        _emit(report.model_dump(mode="json", by_alias=True))
    elif args.command == "check":
        report = client.check()
        _emit(report.model_dump(mode="json", by_alias=True))
        if not report.passed:
            return int(ExitCode.CONFIG)
    return int(ExitCode.OK)


def main(argv: Optional[List[str]] = None) -> int:
    """
    命令行入口。

    Args:
        argv: 参数列表, 默认 sys.argv[1:]。

    Returns:
        退出码。
    """
    args = _build_parser().parse_args(argv)
    if getattr(args, "quiet", False):
        level = logging.WARNING
    elif getattr(args, "verbose", False):
        level = logging.DEBUG
    else:
        level = logging.getLevelName(settings.log_level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    _configure_logging(level, suppress_warnings=getattr(args, "quiet", False))

    try:
        return _dispatch(args)
    except (ConfigValidationError, ValidationError) as e:
        logger.error("配置校验失败: %s", e)
        return int(ExitCode.CONFIG)
    except BlowUpError as e:
        logger.error("数值发散: %s", e)
        return int(ExitCode.BLOWUP)
    except (RecordIOError, OSError) as e:
        logger.error("读写失败: %s", e)
        return int(ExitCode.IO)


if __name__ == "__main__":
    raise SystemExit(main())
