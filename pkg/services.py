"""
Операции командной строки: по одной функции на подкоманду.

Каждая операция регистрирует создаваемые файлы в PartialOutputs; при ошибке
они удаляются, а исключение пробрасывается в app.main.
"""
import os
import re
import unittest
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from augment import apply_filter_augment_log, format_filter_config, make_rng, sample_filter_config
from crnn import init_weights, model_forward
from errors import GradCheckError, ValidationError
from fdy_conv import GradCheckReport, run_gradcheck_suite
from frontend import extract_logmel, load_wav, normalize_minmax
from metrics import (
    class_breakdown,
    collar_f1,
    collar_f1_per_class,
    compute_psds,
    ensemble_dumps,
    plot_psd_roc,
    roc_frame,
    select_top_models,
)
from models import FramePredictions, LogMelSpectrogram, PipelineConfig
from postproc import (
    apply_postproc,
    decode_all_thresholds,
    decode_events,
    read_durations,
    read_event_tsv,
    threshold_filename,
    threshold_grid,
    write_event_tsv,
)
from storage import atomic_write, load_features, load_predictions, load_weights, save_features, save_predictions

THRESHOLD_FILE = re.compile(r"^th_(\d+(?:\.\d+)?)\.tsv$")
TESTS_DIR = Path(__file__).resolve().parent / "tests"


class PartialOutputs:
    """Список файлов, созданных операцией; при исключении они удаляются"""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for path in self.paths:
                if path.exists():
                    logger.debug(f"удаление частичного результата {path}")
                    os.remove(path)
        return False


def _map(fn, items, jobs: int) -> list:
    """Порядок результатов совпадает с порядком items при любом числе потоков"""
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _require_files(paths: list[Path], what: str, where) -> list[Path]:
    if not paths:
        raise ValidationError([f"{where}: не найдено ни одного файла {what}"])
    return paths


# ---- extract ----
def extract_features(input_dir, output_dir, cfg: PipelineConfig) -> list[Path]:
    """WAV-файлы каталога -> файлы признаков SEDF с тем же именем"""
    wavs = _require_files(sorted(Path(input_dir).glob("*.wav")), "*.wav", input_dir)
    output_dir = Path(output_dir)
    logger.info(f"extract: {len(wavs)} файлов, потоков {cfg.run.jobs}")

    with PartialOutputs() as outputs:
        def work(wav: Path) -> Path:
            spec = extract_logmel(load_wav(wav, cfg.frontend.sample_rate), cfg.frontend)
            target = outputs.add(output_dir / f"{wav.stem}.sedf")
            save_features(spec, target)
            return target

        return _map(work, wavs, cfg.run.jobs)


# ---- augment ----
def augment_features(feature_path, output_path, cfg: PipelineConfig, worker: int = 0) -> str:
    """
    Применить одну случайную реализацию FilterAugment к файлу признаков.

    Returns:
        Текстовое описание FilterConfig (оно же пишется в <output>.filter.txt)
    """
    spec = load_features(feature_path)
    rng = make_rng(cfg.run.seed, worker)
    filter_cfg = sample_filter_config(rng, cfg.augment, spec.n_mels)
    augmented = LogMelSpectrogram(apply_filter_augment_log(spec.values, filter_cfg), spec.frame_hop_s)
    text = format_filter_config(filter_cfg)

    output_path = Path(output_path)
    with PartialOutputs() as outputs:
        save_features(augmented, outputs.add(output_path))
        with atomic_write(outputs.add(output_path.with_suffix(".filter.txt"))) as fh:
            fh.write((text + "\n").encode("utf-8"))
    logger.info(f"augment: {Path(feature_path).name} -> {output_path.name} [{text}]")
    return text


# ---- infer ----
def _load_inputs(input_path, cfg: PipelineConfig) -> list[tuple[str, LogMelSpectrogram]]:
    """Признаки из *.sedf; если их нет - извлекаются из *.wav"""
    input_path = Path(input_path)
    if input_path.is_file():
        files = [input_path]
    else:
        files = sorted(input_path.glob("*.sedf")) or sorted(input_path.glob("*.wav"))
    _require_files(files, "*.sedf или *.wav", input_path)

    def load(path: Path) -> tuple[str, LogMelSpectrogram]:
        if path.suffix == ".wav":
            return path.stem, extract_logmel(load_wav(path, cfg.frontend.sample_rate), cfg.frontend)
        return path.stem, load_features(path)

    return _map(load, files, cfg.run.jobs)


def _batches(items: list[tuple[str, np.ndarray]], batch_size: int) -> list[list[tuple[str, np.ndarray]]]:
    """Клипы одинаковой длины собираются в пакеты; порядок детерминирован"""
    by_len: dict[int, list] = {}
    for item in items:
        by_len.setdefault(item[1].shape[-1], []).append(item)
    batches = []
    for length in sorted(by_len):
        group = by_len[length]
        batches.extend(group[i:i + batch_size] for i in range(0, len(group), batch_size))
    return batches


def run_inference(input_path, cfg: PipelineConfig) -> list[FramePredictions]:
    if cfg.run.weights:
        weights = load_weights(cfg.run.weights)
    else:
        logger.info(f"infer: веса не заданы, случайная инициализация с seed={cfg.run.seed}")
        weights = init_weights(cfg.model, cfg.run.seed)

    clips = _load_inputs(input_path, cfg)
    # Нормализация по клипу: предсказание не зависит от состава пакета
    normalized = [(name, normalize_minmax(spec.values[None])[0]) for name, spec in clips]

    def forward(batch):
        names = [name for name, _ in batch]
        x = np.stack([values for _, values in batch])
        return model_forward(x, weights, cfg.model, cfg.frontend, names)

    preds = [p for batch in _map(forward, _batches(normalized, cfg.run.batch_size), cfg.run.jobs) for p in batch]
    order = {name: i for i, (name, _) in enumerate(clips)}
    return sorted(preds, key=lambda p: order[p.clip_id])


def infer(input_path, output_path, cfg: PipelineConfig) -> list[Path]:
    """
    Признаки (или WAV) -> дамп SEDP и TSV событий при пороге postproc.threshold.

    Returns:
        Созданные файлы
    """
    preds = run_inference(input_path, cfg)
    output_path = Path(output_path)
    table = cfg.class_table

    events = []
    for p in preds:
        smoothed = apply_postproc(p, cfg.postproc.mode, table, cfg.postproc.weak_threshold)
        events.extend(decode_events(smoothed, cfg.postproc.threshold, p.frame_duration_s, table, filename=p.clip_id))

    with PartialOutputs() as outputs:
        save_predictions(preds, outputs.add(output_path))
        write_event_tsv(events, outputs.add(output_path.with_suffix(".tsv")))
    logger.info(f"infer: {len(preds)} клипов, {len(events)} событий -> {output_path}")
    return outputs.paths


# ---- postprocess ----
def postprocess(dump_path, output_dir, cfg: PipelineConfig, durations_path=None) -> list[Path]:
    """Дамп предсказаний -> TSV событий для каждого порога сетки (th_<порог>.tsv)"""
    preds = load_predictions(dump_path)
    durations = read_durations(durations_path) if durations_path else None
    thresholds = threshold_grid(cfg.postproc.n_thresholds)
    decoded = decode_all_thresholds(preds, thresholds, cfg.class_table, cfg.postproc.mode, durations)

    output_dir = Path(output_dir)
    with PartialOutputs() as outputs:
        for th, events in decoded.items():
            write_event_tsv(events, outputs.add(output_dir / threshold_filename(th)))
    logger.info(f"postprocess: {len(decoded)} порогов -> {output_dir}")
    return outputs.paths


# ---- ensemble ----
def ensemble(dump_paths, output_path, ranking_path=None, metric: str = "psds1", top: int | None = None) -> Path:
    """
    Усреднить дампы нескольких моделей. С таблицей рейтинга берутся top лучших
    по колонке metric (имена в таблице - имена файлов дампов без расширения).
    """
    paths = [Path(p) for p in dump_paths]
    if ranking_path is not None:
        ranking = pd.read_csv(ranking_path, sep="\t")
        chosen = select_top_models(ranking, metric, top or len(paths))
        by_stem = {p.stem: p for p in paths}
        missing = [name for name in chosen if name not in by_stem]
        if missing:
            raise ValidationError([f"ансамбль: нет дампов для моделей {', '.join(missing)}"])
        paths = [by_stem[name] for name in chosen]
        logger.info(f"ensemble: выбраны по {metric}: {', '.join(chosen)}")

    averaged = ensemble_dumps([load_predictions(p) for p in paths])
    output_path = Path(output_path)
    with PartialOutputs() as outputs:
        save_predictions(averaged, outputs.add(output_path))
    logger.info(f"ensemble: {len(paths)} моделей -> {output_path}")
    return output_path


# ---- eval ----
@dataclass
class EvalReport:
    psds1: float
    psds2: float
    cbf1: float

    def line(self) -> str:
        return f"PSDS1={self.psds1:.4f} PSDS2={self.psds2:.4f} CBF1={self.cbf1:.3f}"


def read_detection_dir(det_dir) -> dict[float, list]:
    det_dir = Path(det_dir)
    detections = {}
    for path in sorted(det_dir.glob("th_*.tsv")):
        match = THRESHOLD_FILE.match(path.name)
        if match:
            detections[float(match.group(1))] = read_event_tsv(path)
    if not detections:
        raise ValidationError([f"{det_dir}: нет файлов th_<порог>.tsv"])
    return detections


def _total_duration(durations: dict[str, float] | None, gts, detections) -> float:
    if durations:
        return sum(durations.values())
    # Без таблицы длительностей - по последнему offset в каждом клипе
    logger.warning("eval: таблица длительностей не задана, длительность клипа оценивается по событиям")
    ends: dict[str, float] = {}
    for e in [*gts, *(e for events in detections.values() for e in events)]:
        ends[e.filename] = max(ends.get(e.filename, 0.0), e.offset)
    return sum(ends.values())


def evaluate(det_dir, gt_path, cfg: PipelineConfig, durations_path=None, report_dir=None) -> EvalReport:
    """
    PSDS1, PSDS2 по всем порогам и макро F1 при пороге, ближайшем к 0.5.
    С report_dir дополнительно пишутся ROC (TSV и PNG) и разбивка по классам.
    """
    table = cfg.class_table
    detections = read_detection_dir(det_dir)
    gts = read_event_tsv(gt_path)
    durations = read_durations(durations_path) if durations_path else None
    total = _total_duration(durations, gts, detections)

    psds1, roc1, points1 = compute_psds(detections, gts, total, cfg.eval.psds1, table)
    psds2, roc2, _ = compute_psds(detections, gts, total, cfg.eval.psds2, table)

    f1_threshold = min(detections, key=lambda th: (abs(th - 0.5), th))
    f1_args = (table, cfg.eval.onset_collar, cfg.eval.offset_collar, cfg.eval.offset_ratio)
    cbf1 = collar_f1(detections[f1_threshold], gts, *f1_args)
    report = EvalReport(psds1, psds2, cbf1)
    logger.info(f"eval: {len(detections)} порогов, F1 при пороге {f1_threshold:g}; {report.line()}")

    if report_dir is not None:
        report_dir = Path(report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        with PartialOutputs() as outputs:
            for name, curve, score in (("psds1", roc1, psds1), ("psds2", roc2, psds2)):
                with atomic_write(outputs.add(report_dir / f"roc_{name}.tsv")) as fh:
                    fh.write(roc_frame(curve).to_csv(sep="\t", index=False).encode("utf-8"))
                plot_psd_roc(curve, outputs.add(report_dir / f"roc_{name}.png"), name.upper(), score)
            per_class_f1 = collar_f1_per_class(detections[f1_threshold], gts, *f1_args)
            breakdown = class_breakdown(points1, cfg.eval.psds1, per_class_f1, table)
            with atomic_write(outputs.add(report_dir / "class_breakdown.tsv")) as fh:
                fh.write(breakdown.to_csv(sep="\t", index=False, float_format="%.4f").encode("utf-8"))
    return report


# ---- gradcheck / selftest ----
def gradcheck(trials: int = 100, tolerance: float = 1e-4, seed: int = 0) -> list[GradCheckReport]:
    reports = run_gradcheck_suite(trials=trials, tolerance=tolerance, seed=seed)
    failed = [i for i, r in enumerate(reports) if not r.passed]
    worst = max(r.worst for r in reports) if reports else 0.0
    if failed:
        raise GradCheckError(
            [f"gradcheck: {len(failed)} из {trials} проверок не прошли (первая #{failed[0]}: "
             f"{reports[failed[0]].summary()})"]
        )
    logger.info(f"gradcheck: {trials} проверок пройдено, максимальная относительная ошибка {worst:.2e}")
    return reports


def selftest(verbosity: int = 1) -> bool:
    """Запустить все тесты из каталога tests/"""
    suite = unittest.TestLoader().discover(str(TESTS_DIR), top_level_dir=str(TESTS_DIR.parent))
    result = unittest.TextTestRunner(verbosity=verbosity).run(suite)
    return result.wasSuccessful()
