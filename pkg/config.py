"""
Чтение конфигурации конвейера: файл UTF-8 из строк `key = value` под заголовками
`[section]`, переопределения из флагов командной строки и пресеты настроек обучения.

Порядок приоритета: значения по умолчанию < пресет --setting < файл < флаги.
"""
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

from errors import ConfigError
from models import (
    FILTER_PRESETS,
    EvalConfig,
    FilterAugParams,
    FrontendConfig,
    ModelConfig,
    PipelineConfig,
    PostprocConfig,
    PsdsParams,
    RunConfig,
)
from validators import ConfigValidator

# Настройки обучения: номер -> (seed, тип FilterAugment, ось softmax внимания)
TRAINING_SETTINGS = {
    1: (21, "step", "class"),
    2: (42, "step", "class"),
    3: (42, "linear", "class"),
    4: (42, "step", "time"),
}


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"ожидается true/false, получено '{text}'")


def _pair(cast: Callable) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        parts = text.split(":")
        if len(parts) != 2:
            raise ValueError(f"ожидается пара вида a:b, получено '{text}'")
        return cast(parts[0]), cast(parts[1])
    return parse


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _pooling(text: str) -> tuple[tuple[int, int], ...]:
    """Окна пулинга вида 2x2,2x2,1x2 (время x частота)"""
    return tuple(_pair(int)(v.replace("x", ":")) for v in text.split(","))


def _optional_str(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none") else text.strip()


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "frontend": {
        "n_fft": int,
        "hop": int,
        "n_mels": int,
        "sample_rate": int,
        "window": str,
        "log_floor": float,
    },
    "augment": {
        "filter_kind": str,
        "db_range": _pair(float),
        "bands": _pair(int),
        "min_bandwidth": int,
    },
    "model": {
        "channels": _int_list,
        "pooling": _pooling,
        "dropout": float,
        "gru_hidden": int,
        "gru_layers": int,
        "n_classes": int,
        "attention_dim": str,
        "n_basis": int,
        "temperature": float,
        "squeeze_ratio": int,
        "strict": _bool,
    },
    "postproc": {
        "mode": _optional_str,
        "threshold": float,
        "weak_threshold": float,
        "median": _int_list,
        "n_thresholds": int,
    },
    "eval": {
        **{f"psds{i}_{key}": float for i in (1, 2) for key in ("dtc", "gtc", "cttc", "alpha_ct", "alpha_st")},
        "e_max": float,
        "onset_collar": float,
        "offset_collar": float,
        "offset_ratio": float,
    },
    "run": {
        "seed": int,
        "jobs": int,
        "batch_size": int,
        "weights": _optional_str,
        "ema_momentum": float,
        "setting": int,
    },
}


def _convert(section: str, key: str, text: str, line: int | None = None):
    if section not in SCHEMA:
        raise ConfigError([f"неизвестная секция [{section}]"], line)
    if key not in SCHEMA[section]:
        raise ConfigError([f"неизвестный ключ {section}.{key}"], line)
    try:
        return SCHEMA[section][key](text.strip())
    except ValueError as e:
        raise ConfigError([f"{section}.{key}: некорректное значение '{text.strip()}' ({e})"], line)


def parse_config_text(text: str) -> dict[str, dict[str, Any]]:
    """Разобрать текст конфигурации в словарь section -> key -> значение"""
    values: dict[str, dict[str, Any]] = {}
    section = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError([f"неизвестная секция [{section}]"], line_no)
            values.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError([f"ожидается строка вида key = value, получено '{line}'"], line_no)
        if section is None:
            raise ConfigError(["ключ вне секции"], line_no)
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values[section]:
            raise ConfigError([f"ключ {section}.{key} задан повторно"], line_no)
        values[section][key] = _convert(section, key, value, line_no)
    return values


def _psds_params(values: dict, prefix: str, base: PsdsParams, e_max: float) -> PsdsParams:
    fields = {key: values[f"{prefix}_{key}"] for key in ("dtc", "gtc", "cttc", "alpha_ct", "alpha_st")
              if f"{prefix}_{key}" in values}
    return replace(base, e_max=e_max, **fields)


def _build(values: dict[str, dict[str, Any]]) -> PipelineConfig:
    defaults = PipelineConfig()
    fe, aug, mdl = values.get("frontend", {}), values.get("augment", {}), values.get("model", {})
    pp, ev, run = values.get("postproc", {}), values.get("eval", {}), values.get("run", {})

    frontend = replace(defaults.frontend, **fe)

    kind = aug.get("filter_kind", defaults.augment.kind)
    preset = FILTER_PRESETS.get(kind, defaults.augment)
    augment = FilterAugParams(
        kind=kind,
        db_range=aug.get("db_range", preset.db_range),
        band_range=aug.get("bands", preset.band_range),
        min_bandwidth=aug.get("min_bandwidth", preset.min_bandwidth),
    )

    model_fields = {k: v for k, v in mdl.items() if k != "strict"}
    model = replace(defaults.model, n_mels=frontend.n_mels, **model_fields)

    postproc = PostprocConfig(
        mode=pp.get("mode", defaults.postproc.mode),
        threshold=pp.get("threshold", defaults.postproc.threshold),
        weak_threshold=pp.get("weak_threshold", defaults.postproc.weak_threshold),
        median_lengths=pp.get("median", defaults.postproc.median_lengths),
        n_thresholds=pp.get("n_thresholds", defaults.postproc.n_thresholds),
    )

    e_max = ev.get("e_max", defaults.eval.psds1.e_max)
    eval_cfg = EvalConfig(
        psds1=_psds_params(ev, "psds1", defaults.eval.psds1, e_max),
        psds2=_psds_params(ev, "psds2", defaults.eval.psds2, e_max),
        onset_collar=ev.get("onset_collar", defaults.eval.onset_collar),
        offset_collar=ev.get("offset_collar", defaults.eval.offset_collar),
        offset_ratio=ev.get("offset_ratio", defaults.eval.offset_ratio),
    )

    run_cfg = replace(defaults.run, **{k: v for k, v in run.items() if k != "setting"})
    return PipelineConfig(frontend, augment, model, postproc, eval_cfg, run_cfg)


def validate_pipeline(cfg: PipelineConfig, strict_model: bool = True):
    """Проверить все секции; ошибки собираются вместе и содержат путь ключа"""
    errors = []
    checks = [
        ConfigValidator.validate_frontend(cfg.frontend),
        ConfigValidator.validate_filter_params(cfg.augment, cfg.frontend.n_mels),
        ConfigValidator.validate_model_config(cfg.model, strict=strict_model),
        ConfigValidator.validate_psds_params(cfg.eval.psds1, "eval.psds1"),
        ConfigValidator.validate_psds_params(cfg.eval.psds2, "eval.psds2"),
        ConfigValidator.validate_threshold(cfg.postproc.threshold),
        ConfigValidator.validate_threshold(cfg.postproc.weak_threshold, "postproc.weak_threshold"),
        ConfigValidator.validate_momentum(cfg.run.ema_momentum),
    ]
    if cfg.postproc.mode is not None:
        checks.append(ConfigValidator.validate_postproc_mode(cfg.postproc.mode))
    for _, errs in checks:
        errors.extend(errs)

    if not 1 <= cfg.model.n_classes <= 10:
        errors.append(f"model.n_classes ({cfg.model.n_classes}) должно быть от 1 до 10")
    lengths = cfg.postproc.median_lengths
    if len(lengths) != cfg.model.n_classes:
        errors.append(f"postproc.median: нужно {cfg.model.n_classes} длин, задано {len(lengths)}")
    if any(n < 1 or n % 2 == 0 for n in lengths):
        errors.append(f"postproc.median: длины должны быть нечетными и >= 1: {lengths}")
    if cfg.postproc.n_thresholds < 1:
        errors.append(f"postproc.n_thresholds ({cfg.postproc.n_thresholds}) должно быть >= 1")
    if cfg.run.jobs < 1 or cfg.run.batch_size < 1:
        errors.append("run: jobs и batch_size должны быть >= 1")

    if errors:
        raise ConfigError(errors)


def parse_config(path=None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    """
    Собрать полностью заполненную конфигурацию.

    Args:
        path: Путь к файлу конфигурации или None (только значения по умолчанию)
        overrides: Переопределения из флагов, ключи вида "section.key", значения - строки

    Returns:
        PipelineConfig
    """
    values: dict[str, dict[str, Any]] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError([f"{path}: не удалось прочитать конфигурацию ({e})"])
        values = parse_config_text(text)

    for dotted, text in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        values.setdefault(section, {})[key] = _convert(section, key, text)

    setting = values.get("run", {}).get("setting")
    if setting is not None:
        if setting not in TRAINING_SETTINGS:
            raise ConfigError([f"run.setting ({setting}) должна быть одной из {sorted(TRAINING_SETTINGS)}"])
        seed, kind, dim = TRAINING_SETTINGS[setting]
        values.setdefault("run", {}).setdefault("seed", seed)
        values.setdefault("augment", {}).setdefault("filter_kind", kind)
        values.setdefault("model", {}).setdefault("attention_dim", dim)

    strict = values.get("model", {}).get("strict", True)
    try:
        cfg = _build(values)
    except TypeError as e:
        raise ConfigError([f"некорректная конфигурация ({e})"])
    validate_pipeline(cfg, strict_model=strict)
    return cfg
