"""
Постобработка покадровых предсказаний: маскирование по weak-предсказанию или
weak SED, медианная фильтрация по классам, бинаризация и декодирование событий.
"""
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.ndimage import median_filter

from errors import EventError, ShapeError, ValidationError
from models import ClassTable, Event, FramePredictions
from storage import atomic_write
from validators import ConfigValidator

EVENT_COLUMNS = ["filename", "onset", "offset", "event_label"]


def _check_shapes(strong: np.ndarray, weak: np.ndarray):
    if strong.ndim != 2 or weak.shape != (strong.shape[1],):
        raise ShapeError([f"postproc: strong {strong.shape} и weak {weak.shape} не согласованы"])


def weak_prediction_masking(strong: np.ndarray, weak: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Обнулить столбцы классов, у которых weak[c] < threshold"""
    _check_shapes(strong, weak)
    return np.where(weak[None, :] >= threshold, strong, 0).astype(strong.dtype, copy=False)


def weak_sed(strong: np.ndarray, weak: np.ndarray) -> np.ndarray:
    """Заменить каждый кадр клиповыми вероятностями (временная локализация теряется)"""
    _check_shapes(strong, weak)
    return np.tile(weak.astype(strong.dtype), (strong.shape[0], 1))


def median_filter_per_class(strong: np.ndarray, table: ClassTable) -> np.ndarray:
    """Центрированная медиана длины L_c по времени для каждого класса, края дополняются повтором"""
    if strong.ndim != 2 or strong.shape[1] != table.n_classes:
        raise ShapeError([f"median: ожидается [T', {table.n_classes}], получено {strong.shape}"])
    out = np.empty_like(strong)
    for c, length in enumerate(table.median_lengths):
        out[:, c] = median_filter(strong[:, c], size=length, mode="nearest")
    return out


def apply_postproc(pred: FramePredictions, mode: str | None, table: ClassTable, weak_threshold: float = 0.5) -> np.ndarray:
    """
    Полная постобработка одного клипа до бинаризации.

    Args:
        pred: Предсказания модели
        mode: mask | weaksed | None (только медианный фильтр)
        table: Таблица классов с длинами медианных фильтров
        weak_threshold: Порог weak-предсказания для режима mask
    """
    strong = pred.strong
    if mode is not None:
        valid, errors = ConfigValidator.validate_postproc_mode(mode)
        if not valid:
            raise ValidationError(errors)
        if mode == "mask":
            strong = weak_prediction_masking(strong, pred.weak, weak_threshold)
        else:
            strong = weak_sed(strong, pred.weak)
    return median_filter_per_class(strong, table)


def decode_events(
    smoothed: np.ndarray,
    threshold: float = 0.5,
    frame_duration_s: float = 0.064,
    table: ClassTable = ClassTable(),
    clip_duration_s: float | None = None,
    filename: str = "",
) -> list[Event]:
    """
    Бинаризовать по порогу (>= threshold) и превратить максимальные серии кадров в события.

    Серия [i..j] дает Event(onset=i*dt, offset=(j+1)*dt); offset обрезается
    длительностью клипа. Результат отсортирован по onset.
    """
    valid, errors = ConfigValidator.validate_threshold(threshold)
    if not valid:
        raise ValidationError(errors)
    if smoothed.ndim != 2 or smoothed.shape[1] != table.n_classes:
        raise ShapeError([f"decode: ожидается [T', {table.n_classes}], получено {smoothed.shape}"])

    binary = smoothed >= threshold
    padded = np.pad(binary.astype(np.int8), ((1, 1), (0, 0)))
    edges = np.diff(padded, axis=0)

    events = []
    for c, name in enumerate(table.names):
        starts = np.flatnonzero(edges[:, c] == 1)
        stops = np.flatnonzero(edges[:, c] == -1)
        for start, stop in zip(starts, stops):
            onset = start * frame_duration_s
            offset = stop * frame_duration_s
            if clip_duration_s is not None:
                offset = min(offset, clip_duration_s)
            if offset > onset:
                events.append(Event(name, float(onset), float(offset), filename))
    events.sort(key=lambda e: (e.onset, table.index(e.event_label)))
    return events


def rasterize_events(
    events: list[Event],
    n_frames: int,
    frame_duration_s: float = 0.064,
    table: ClassTable = ClassTable(),
) -> np.ndarray:
    """Обратное к decode_events: бинарная маска [n_frames, C] с кадрами [round(on/dt), round(off/dt))"""
    mask = np.zeros((n_frames, table.n_classes), dtype=np.float32)
    for e in events:
        check_event(e, table)
        start = int(round(e.onset / frame_duration_s))
        stop = min(int(round(e.offset / frame_duration_s)), n_frames)
        mask[start:stop, table.index(e.event_label)] = 1.0
    return mask


def check_event(event: Event, table: ClassTable | None = None):
    if not event.offset > event.onset or event.onset < 0:
        raise EventError(
            [f"{event.filename}: событие {event.event_label} ({event.onset}, {event.offset}) некорректно"]
        )
    if table is not None and event.event_label not in table.names:
        raise EventError([f"{event.filename}: неизвестный класс {event.event_label}"])


# ---- TSV ----
def events_to_frame(events: list[Event]) -> pd.DataFrame:
    rows = [(e.filename, e.onset, e.offset, e.event_label) for e in events]
    return pd.DataFrame(rows, columns=EVENT_COLUMNS)


def frame_to_events(df: pd.DataFrame) -> list[Event]:
    """Строки без метки (клипы без событий) пропускаются"""
    missing = set(EVENT_COLUMNS) - set(df.columns)
    if missing:
        raise ValidationError([f"TSV событий: нет колонок {sorted(missing)}"])
    df = df.reset_index(drop=True).dropna(subset=["event_label", "onset", "offset"])
    events = []
    for row, r in zip(df.index, df.itertuples(index=False)):
        try:
            event = Event(str(r.event_label), float(r.onset), float(r.offset), str(r.filename))
        except (TypeError, ValueError) as e:
            raise ValidationError([f"TSV событий: строка {row + 2}: {e}"]) from e
        check_event(event)
        events.append(event)
    return events


def read_event_tsv(path) -> list[Event]:
    return frame_to_events(pd.read_csv(path, sep="\t"))


def write_event_tsv(events: list[Event], path):
    df = events_to_frame(events).sort_values(["filename", "onset", "event_label"], kind="mergesort")
    with atomic_write(path) as fh:
        fh.write(df.to_csv(sep="\t", index=False, float_format="%.3f").encode("utf-8"))


def read_durations(path) -> dict[str, float]:
    df = pd.read_csv(path, sep="\t")
    if not {"filename", "duration"}.issubset(df.columns):
        raise ValidationError([f"{Path(path).name}: нужны колонки filename и duration"])
    try:
        return {str(r.filename): float(r.duration) for r in df.itertuples(index=False)}
    except (TypeError, ValueError) as e:
        raise ValidationError([f"{Path(path).name}: длительность не число ({e})"]) from e


def threshold_grid(n: int = 50, low: float = 0.01, high: float = 0.99) -> np.ndarray:
    return np.round(np.linspace(low, high, n), 6)


def threshold_filename(threshold: float) -> str:
    return f"th_{threshold:.3f}.tsv"


def decode_all_thresholds(
    preds: list[FramePredictions],
    thresholds,
    table: ClassTable,
    mode: str | None = None,
    durations: dict[str, float] | None = None,
) -> dict[float, list[Event]]:
    """События для каждого порога из сетки; постобработка выполняется один раз на клип"""
    durations = durations or {}
    smoothed = [(p, apply_postproc(p, mode, table)) for p in preds]
    result = {}
    for th in thresholds:
        events = []
        for p, s in smoothed:
            events.extend(
                decode_events(s, float(th), p.frame_duration_s, table, durations.get(p.clip_id), p.clip_id)
            )
        result[float(th)] = events
    return result
