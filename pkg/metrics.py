"""
Оценка детекций: PSDS по критериям пересечения (DTC / GTC / CTTC), макро F1
с коллар-допусками, усреднение ансамбля и отбор лучших моделей.
"""
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from loguru import logger

from errors import ShapeError, ValidationError
from models import ClassTable, Event, FramePredictions, OperatingPoint, PsdsParams, RocCurve
from postproc import check_event
from validators import ConfigValidator


def _group(events: list[Event], table: ClassTable) -> dict[tuple[str, str], list[Event]]:
    groups = defaultdict(list)
    for e in events:
        check_event(e, table)
        groups[(e.filename, e.event_label)].append(e)
    return groups


def _intersection(a: Event, b: Event) -> float:
    return max(0.0, min(a.offset, b.offset) - max(a.onset, b.onset))


def _coverage(event: Event, others: list[Event]) -> float:
    """Доля длительности event, покрытая событиями others"""
    return sum(_intersection(event, o) for o in others) / event.duration


# ---- Сопоставление ----
@dataclass
class MatchCounts:
    tp: np.ndarray  # [C]
    fp: np.ndarray  # [C]
    ct: np.ndarray  # [C, C]
    n_gt: np.ndarray  # [C]


def match_detections(
    dets: list[Event],
    gts: list[Event],
    params: PsdsParams,
    table: ClassTable = ClassTable(),
) -> MatchCounts:
    """
    Подсчет TP / FP / CT по критериям пересечения.

    - детекция проходит DTC, если доля ее длительности, покрытая эталонами того же класса, >= dtc;
    - эталон считается TP, если доля его длительности, покрытая прошедшими DTC детекциями, >= gtc;
    - детекции, не прошедшие DTC, считаются FP;
    - среди них ct[c, c'] считает детекции класса c, покрытые эталонами класса c' на долю >= cttc.
    """
    n = table.n_classes
    tp = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    ct = np.zeros((n, n), dtype=np.int64)
    n_gt = np.zeros(n, dtype=np.int64)

    det_groups = _group(dets, table)
    gt_groups = _group(gts, table)
    for (_, label), items in gt_groups.items():
        n_gt[table.index(label)] += len(items)

    passing = defaultdict(list)
    for (filename, label), items in sorted(det_groups.items()):
        c = table.index(label)
        same = gt_groups.get((filename, label), [])
        for d in items:
            if same and _coverage(d, same) >= params.dtc:
                passing[(filename, label)].append(d)
                continue
            fp[c] += 1
            for c_other, other in enumerate(table.names):
                if c_other == c:
                    continue
                refs = gt_groups.get((filename, other), [])
                if refs and _coverage(d, refs) >= params.cttc:
                    ct[c, c_other] += 1

    for key, items in gt_groups.items():
        c = table.index(key[1])
        dets_ok = passing.get(key, [])
        tp[c] += sum(1 for g in items if dets_ok and _coverage(g, dets_ok) >= params.gtc)

    return MatchCounts(tp=tp, fp=fp, ct=ct, n_gt=n_gt)


def operating_point(
    threshold: float,
    dets: list[Event],
    gts: list[Event],
    params: PsdsParams,
    total_duration_s: float,
    table: ClassTable = ClassTable(),
) -> OperatingPoint:
    counts = match_detections(dets, gts, params, table)
    return OperatingPoint(
        threshold=threshold,
        tp=counts.tp,
        fp=counts.fp,
        ct=counts.ct,
        n_gt=counts.n_gt,
        total_duration_h=total_duration_s / 3600.0,
    )


# ---- ROC и PSDS ----
def _valid_classes(n_gt: np.ndarray, table: ClassTable | None = None) -> np.ndarray:
    valid = np.flatnonzero(n_gt > 0)
    if len(valid) < len(n_gt):
        skipped = [table.names[c] if table else str(c) for c in np.flatnonzero(n_gt == 0)]
        logger.warning(f"PSDS: классы без эталонных событий исключены: {', '.join(skipped)}")
    if len(valid) == 0:
        raise ValidationError(["PSDS: нет ни одного эталонного события"])
    return valid


def point_rates(point: OperatingPoint, params: PsdsParams, classes: np.ndarray, valid: np.ndarray) -> tuple[float, float]:
    """
    (eFPR в час, eTPR) одной рабочей точки для подмножества классов.

    eFPR = mean_c (FP_c / T + alpha_ct * mean_{c' != c} CT_{c,c'} / T)
    eTPR = mean_c TPR_c - alpha_st * std_c TPR_c (std по генеральной совокупности)
    """
    if point.total_duration_h <= 0:
        raise ValidationError(["PSDS: суммарная длительность данных должна быть больше нуля"])
    tpr = point.tp[classes] / point.n_gt[classes]
    etpr = float(tpr.mean() - params.alpha_st * tpr.std())

    rates = []
    for c in classes:
        others = valid[valid != c]
        ct_rate = point.ct[c, others].mean() / point.total_duration_h if len(others) else 0.0
        rates.append(point.fp[c] / point.total_duration_h + params.alpha_ct * ct_rate)
    return float(np.mean(rates)), etpr


def roc_from_points(points: list[tuple[float, float]], e_max: float) -> RocCurve:
    """
    Верхняя огибающая ступенчатой ROC: точка (0, 0) соответствует пустому выходу,
    для каждого eFPR берется лучший eTPR среди точек не правее, кривая продлевается до e_max.
    """
    pts = sorted([(0.0, 0.0), *points])
    xs, ys = [], []
    for x, y in pts:
        if x > e_max:
            break
        if xs and x == xs[-1]:
            ys[-1] = max(ys[-1], y)
        else:
            xs.append(x)
            ys.append(y)
    ys = np.maximum.accumulate(ys)
    if xs[-1] < e_max:
        xs.append(e_max)
        ys = np.append(ys, ys[-1])
    return RocCurve(efpr=np.asarray(xs, dtype=np.float64), etpr=np.asarray(ys, dtype=np.float64), e_max=e_max)


def build_roc(points: list[OperatingPoint], params: PsdsParams, table: ClassTable | None = None) -> RocCurve:
    valid_params, errors = ConfigValidator.validate_psds_params(params)
    if not valid_params:
        raise ValidationError(errors)
    if not points:
        raise ValidationError(["PSDS: нужна хотя бы одна рабочая точка"])
    thresholds = [p.threshold for p in points]
    if len(set(thresholds)) != len(thresholds):
        raise ValidationError(["PSDS: пороги рабочих точек должны быть различны"])

    valid = _valid_classes(points[0].n_gt, table)
    return roc_from_points([point_rates(p, params, valid, valid) for p in points], params.e_max)


def psds_score(curve: RocCurve, params: PsdsParams | None = None) -> float:
    """Площадь под max(eTPR, 0) на [0, e_max], деленная на e_max (ступенчатое интегрирование)"""
    e_max = params.e_max if params is not None else curve.e_max
    x = np.minimum(curve.efpr, e_max)
    widths = np.diff(np.append(x, e_max))
    area = float(np.sum(widths * np.maximum(curve.etpr, 0.0)))
    return float(np.clip(area / e_max, 0.0, 1.0))


def per_class_psds(points: list[OperatingPoint], params: PsdsParams, table: ClassTable) -> dict[str, float]:
    """PSDS каждого класса в отдельности; классы без эталонов получают nan"""
    valid = np.flatnonzero(points[0].n_gt > 0)
    scores = {name: float("nan") for name in table.names}
    for c in valid:
        rates = [point_rates(p, params, np.array([c]), valid) for p in points]
        scores[table.names[c]] = psds_score(roc_from_points(rates, params.e_max), params)
    return scores


def compute_psds(
    detections: dict[float, list[Event]],
    gts: list[Event],
    total_duration_s: float,
    params: PsdsParams,
    table: ClassTable = ClassTable(),
) -> tuple[float, RocCurve, list[OperatingPoint]]:
    """
    PSDS по набору детекций для разных порогов.

    Args:
        detections: порог -> список событий
        gts: Эталонные события
        total_duration_s: Суммарная длительность оцениваемых клипов
        params: Параметры PSDS

    Returns:
        (score, ROC, рабочие точки)
    """
    points = [
        operating_point(th, dets, gts, params, total_duration_s, table)
        for th, dets in sorted(detections.items())
    ]
    curve = build_roc(points, params, table)
    return psds_score(curve, params), curve, points


# ---- Collar-based F1 ----
def collar_match(det: Event, gt: Event, onset_collar: float, offset_collar: float, offset_ratio: float) -> bool:
    offset_tol = max(offset_collar, offset_ratio * gt.duration)
    return abs(det.onset - gt.onset) <= onset_collar and abs(det.offset - gt.offset) <= offset_tol


def collar_f1_per_class(
    dets: list[Event],
    gts: list[Event],
    table: ClassTable = ClassTable(),
    onset_collar: float = 0.2,
    offset_collar: float = 0.2,
    offset_ratio: float = 0.2,
) -> dict[str, float]:
    """
    F1 по событиям для каждого класса. Жадное взаимно однозначное сопоставление
    в порядке onset внутри каждого клипа. Классы без эталонов получают nan.
    """
    tp = defaultdict(int)
    n_det = defaultdict(int)
    n_gt = defaultdict(int)
    det_groups = _group(dets, table)
    gt_groups = _group(gts, table)

    for key in set(det_groups) | set(gt_groups):
        label = key[1]
        d_items = sorted(det_groups.get(key, []), key=lambda e: (e.onset, e.offset))
        g_items = sorted(gt_groups.get(key, []), key=lambda e: (e.onset, e.offset))
        n_det[label] += len(d_items)
        n_gt[label] += len(g_items)
        used = [False] * len(g_items)
        for d in d_items:
            for i, g in enumerate(g_items):
                if not used[i] and collar_match(d, g, onset_collar, offset_collar, offset_ratio):
                    used[i] = True
                    tp[label] += 1
                    break

    scores = {}
    for name in table.names:
        if n_gt[name] == 0:
            scores[name] = float("nan")
            continue
        fp = n_det[name] - tp[name]
        fn = n_gt[name] - tp[name]
        scores[name] = 2 * tp[name] / (2 * tp[name] + fp + fn)
    return scores


def collar_f1(
    dets: list[Event],
    gts: list[Event],
    table: ClassTable = ClassTable(),
    onset_collar: float = 0.2,
    offset_collar: float = 0.2,
    offset_ratio: float = 0.2,
) -> float:
    """Макро F1: среднее по классам, присутствующим в эталоне"""
    scores = collar_f1_per_class(dets, gts, table, onset_collar, offset_collar, offset_ratio)
    present = [v for v in scores.values() if not np.isnan(v)]
    if not present:
        logger.warning("F1: эталон не содержит событий")
        return 0.0
    return float(np.mean(present))


# ---- Ансамбль ----
def ensemble_average(preds: list[FramePredictions]) -> FramePredictions:
    """Поэлементное среднее strong и weak предсказаний нескольких моделей"""
    if not preds:
        raise ValidationError(["ансамбль: пустой список предсказаний"])
    first = preds[0]
    for p in preds[1:]:
        if p.strong.shape != first.strong.shape or p.weak.shape != first.weak.shape:
            raise ShapeError(
                [f"ансамбль {first.clip_id}: формы {p.strong.shape}/{p.weak.shape} "
                 f"и {first.strong.shape}/{first.weak.shape} не совпадают"]
            )
    strong = np.mean([p.strong for p in preds], axis=0, dtype=np.float64).astype(first.strong.dtype)
    weak = np.mean([p.weak for p in preds], axis=0, dtype=np.float64).astype(first.weak.dtype)
    return FramePredictions(strong, weak, first.frame_duration_s, first.clip_id)


def ensemble_dumps(dumps: list[list[FramePredictions]]) -> list[FramePredictions]:
    """Усреднить дампы нескольких моделей (студентов и/или учителей) поклипово"""
    if not dumps:
        raise ValidationError(["ансамбль: не задано ни одного дампа"])
    by_clip = [{p.clip_id: p for p in dump} for dump in dumps]
    clips = [p.clip_id for p in dumps[0]]
    for i, d in enumerate(by_clip[1:], start=2):
        if set(d) != set(clips):
            raise ValidationError([f"ансамбль: дамп #{i} содержит другой набор клипов"])
    return [ensemble_average([d[clip] for d in by_clip]) for clip in clips]


def select_top_models(ranking: pd.DataFrame, metric: str = "psds1", top: int = 1) -> list[str]:
    """
    Имена лучших моделей по колонке метрики таблицы name / psds1 / psds2.
    При равенстве сохраняется исходный порядок строк.
    """
    if "name" not in ranking.columns or metric not in ranking.columns:
        raise ValidationError([f"рейтинг: нужны колонки name и {metric}, есть {list(ranking.columns)}"])
    if top < 1:
        raise ValidationError([f"рейтинг: top ({top}) должен быть >= 1"])
    ordered = ranking.sort_values(metric, ascending=False, kind="mergesort")
    return [str(n) for n in ordered["name"].head(top)]


# ---- Отчеты ----
def roc_frame(curve: RocCurve) -> pd.DataFrame:
    return pd.DataFrame({"efpr": curve.efpr, "etpr": curve.etpr})


def plot_psd_roc(curve: RocCurve, path, title: str = "PSD-ROC", score: float | None = None):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(curve.efpr, curve.etpr, where="post")
    ax.set_xlim(0, curve.e_max)
    ax.set_ylim(0, 1)
    ax.set_xlabel("eFPR, ложных срабатываний в час")
    ax.set_ylabel("eTPR")
    ax.set_title(f"{title}: {score:.4f}" if score is not None else title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


def class_breakdown(
    points: list[OperatingPoint],
    params: PsdsParams,
    f1_scores: dict[str, float],
    table: ClassTable,
) -> pd.DataFrame:
    """Таблица class / n_gt / psds / f1"""
    psds = per_class_psds(points, params, table)
    return pd.DataFrame(
        {
            "class": list(table.names),
            "n_gt": [int(v) for v in points[0].n_gt],
            "psds": [psds[n] for n in table.names],
            "f1": [f1_scores.get(n, float("nan")) for n in table.names],
        }
    )
