from __future__ import annotations

# --- bootstrap to allow absolute package imports when run as a script ---
import os, sys
if __package__ is None or __package__ == "":
    sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import argparse

from loguru import logger

import services
from config import parse_config
from errors import ValidationError

LOG_LEVELS = {"error": "ERROR", "warn": "WARNING", "warning": "WARNING", "info": "INFO", "debug": "DEBUG"}

# Флаг -> ключ конфигурации
OVERRIDE_FLAGS = {
    "seed": "run.seed",
    "jobs": "run.jobs",
    "batch_size": "run.batch_size",
    "weights": "run.weights",
    "setting": "run.setting",
    "attention_dim": "model.attention_dim",
    "filter_kind": "augment.filter_kind",
    "db_range": "augment.db_range",
    "bands": "augment.bands",
    "min_bandwidth": "augment.min_bandwidth",
    "mode": "postproc.mode",
    "threshold": "postproc.threshold",
    "n_thresholds": "postproc.n_thresholds",
    "e_max": "eval.e_max",
    **{f"psds{i}_{k}": f"eval.psds{i}_{k}" for i in (1, 2) for k in ("dtc", "gtc", "cttc", "alpha_ct", "alpha_st")},
}
# Значения этих флагов могут начинаться с минуса (-4.5:6)
RANGE_FLAGS = ("--db-range", "--bands")


def setup_logging():
    """Один sink в stderr; уровень из переменной окружения SEDKIT_LOG"""
    raw = os.environ.get("SEDKIT_LOG", "info").strip().lower()
    level = LOG_LEVELS.get(raw)
    logger.remove()
    logger.add(sys.stderr, level=level or "INFO", format="{time:HH:mm:ss} | {level: <7} | {message}")
    if level is None:
        logger.warning(f"SEDKIT_LOG={raw}: неизвестный уровень, используется info")


def _join_range_values(argv: list[str]) -> list[str]:
    out, i = [], 0
    while i < len(argv):
        if argv[i] in RANGE_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="файл конфигурации [section] key = value")
    common.add_argument("--seed", help="зерно генератора")
    common.add_argument("--jobs", help="число параллельных потоков")
    common.add_argument("--batch-size", help="размер пакета при инференсе")
    common.add_argument("--weights", help="файл весов SEDW")
    common.add_argument("--setting", help="пресет настройки обучения 1..4")
    common.add_argument("--attention-dim", choices=["class", "time"])
    common.add_argument("--filter-kind", choices=["step", "linear"])
    common.add_argument("--db-range", help="диапазон усиления в дБ, например -4.5:6")
    common.add_argument("--bands", help="диапазон числа полос, например 2:5")
    common.add_argument("--min-bandwidth")
    common.add_argument("--mode", help="постобработка: mask | weaksed | none")
    common.add_argument("--threshold")
    common.add_argument("--n-thresholds")
    common.add_argument("--e-max")
    for i in (1, 2):
        for k in ("dtc", "gtc", "cttc", "alpha_ct", "alpha_st"):
            common.add_argument(f"--psds{i}-{k.replace('_', '-')}", dest=f"psds{i}_{k}")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="sedkit", description="Детекция звуковых событий: FDY-CRNN и оценка PSDS")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="WAV -> лог-мел признаки SEDF")
    p.add_argument("input_dir")
    p.add_argument("output_dir")

    p = sub.add_parser("augment", parents=[common], help="FilterAugment для файла признаков")
    p.add_argument("features")
    p.add_argument("output")
    p.add_argument("--worker", type=int, default=0)

    p = sub.add_parser("infer", parents=[common], help="признаки -> дамп предсказаний SEDP и TSV событий")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("postprocess", parents=[common], help="дамп SEDP -> TSV событий по порогам")
    p.add_argument("dump")
    p.add_argument("output_dir")
    p.add_argument("--durations", help="TSV filename / duration")

    p = sub.add_parser("ensemble", parents=[common], help="усреднение дампов нескольких моделей")
    p.add_argument("output")
    p.add_argument("dumps", nargs="+")
    p.add_argument("--ranking", help="TSV name / psds1 / psds2 для отбора лучших моделей")
    p.add_argument("--metric", default="psds1")
    p.add_argument("--top", type=int)

    p = sub.add_parser("eval", parents=[common], help="PSDS1, PSDS2 и collar F1")
    p.add_argument("detections", help="каталог с th_<порог>.tsv")
    p.add_argument("ground_truth")
    p.add_argument("--durations", help="TSV filename / duration")
    p.add_argument("--report-dir", help="каталог для ROC и разбивки по классам")

    p = sub.add_parser("gradcheck", parents=[common], help="проверка градиентов FDY конечными разностями")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)

    sub.add_parser("selftest", parents=[common], help="запустить набор тестов")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    return {key: str(getattr(args, dest)) for dest, key in OVERRIDE_FLAGS.items() if getattr(args, dest, None) is not None}


def run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config, _overrides(args))

    if args.command == "extract":
        services.extract_features(args.input_dir, args.output_dir, cfg)
    elif args.command == "augment":
        print(services.augment_features(args.features, args.output, cfg, args.worker))
    elif args.command == "infer":
        services.infer(args.input, args.output, cfg)
    elif args.command == "postprocess":
        services.postprocess(args.dump, args.output_dir, cfg, args.durations)
    elif args.command == "ensemble":
        services.ensemble(args.dumps, args.output, args.ranking, args.metric, args.top)
    elif args.command == "eval":
        report = services.evaluate(args.detections, args.ground_truth, cfg, args.durations, args.report_dir)
        print(report.line())
    elif args.command == "gradcheck":
        services.gradcheck(args.trials, args.tol, cfg.run.seed)
    elif args.command == "selftest":
        return 0 if services.selftest() else 1
    return 0


def main(argv: list[str] | None = None) -> int:
    """Основная точка входа в приложение"""
    setup_logging()
    args = build_parser().parse_args(_join_range_values(sys.argv[1:] if argv is None else argv))
    try:
        return run(args)
    except ValidationError as e:
        for message in e.errors:
            logger.error(message)
        return 1
    except OSError as e:
        logger.error(f"ошибка ввода-вывода: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
