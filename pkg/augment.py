"""
FilterAugment (ступенчатый и линейный типы) и вспомогательные аугментации:
mixup, маскирование по времени, циклический сдвиг кадров.

Все случайные операции берут явный numpy.random.Generator (PCG64), поэтому
результат - чистая функция от состояния генератора и параметров.
"""
import numpy as np
from loguru import logger

from errors import ValidationError
from models import FilterAugParams, FilterConfig
from validators import ConfigValidator

MAX_BOUNDARY_ATTEMPTS = 1000


def make_rng(seed: int, worker: int = 0) -> np.random.Generator:
    """Генератор PCG64; отдельный поток на воркер с зерном seed + worker"""
    return np.random.default_rng(seed + worker)


def sample_filter_config(rng: np.random.Generator, params: FilterAugParams, n_mels: int) -> FilterConfig:
    """
    Сэмплировать границы полос и веса в дБ.

    Число полос равномерно из [min_bands, max_bands] включительно. Внутренние
    границы - отбор с отклонением среди {min_bw, ..., n_mels - min_bw}, пока все
    полосы не шире min_bandwidth; после 1000 попыток - равномерная разбивка.
    """
    valid, errors = ConfigValidator.validate_filter_params(params, n_mels)
    if not valid:
        raise ValidationError(errors)

    min_bands, max_bands = params.band_range
    n_bands = int(rng.integers(min_bands, max_bands, endpoint=True))
    min_bw = params.min_bandwidth

    boundaries = None
    candidates = np.arange(min_bw, n_mels - min_bw + 1)
    if n_bands == 1:
        boundaries = [0, n_mels]
    elif len(candidates) >= n_bands - 1:
        for _ in range(MAX_BOUNDARY_ATTEMPTS):
            inner = np.sort(rng.choice(candidates, size=n_bands - 1, replace=False))
            b = np.concatenate([[0], inner, [n_mels]])
            if np.all(np.diff(b) >= min_bw):
                boundaries = b.tolist()
                break
    if boundaries is None:
        logger.debug(f"FilterAugment: равномерная разбивка на {n_bands} полос")
        boundaries = [i * n_mels // n_bands for i in range(n_bands + 1)]

    n_weights = n_bands if params.kind == "step" else n_bands + 1
    low, high = params.db_range
    weights = rng.uniform(low, high, size=n_weights)

    return FilterConfig(
        kind=params.kind,
        boundaries=tuple(int(v) for v in boundaries),
        weights_db=tuple(float(w) for w in weights),
    )


def filter_gain_db(cfg: FilterConfig, n_mels: int) -> np.ndarray:
    """Усиление в дБ для каждого мел-бина"""
    valid, errors = ConfigValidator.validate_filter_config(cfg, n_mels)
    if not valid:
        raise ValidationError(errors)

    if cfg.kind == "step":
        return np.repeat(np.asarray(cfg.weights_db), np.diff(cfg.boundaries))
    # Якоря в бинах b_i, линейная интерполяция внутри [b_i, b_{i+1})
    return np.interp(np.arange(n_mels), cfg.boundaries, cfg.weights_db)


def apply_filter_augment(mel_amplitude: np.ndarray, cfg: FilterConfig) -> np.ndarray:
    """
    Применить FilterAugment к мел-спектрограмме в амплитудной области (до логарифма).

    Args:
        mel_amplitude: [..., n_mels, T]
        cfg: Реализация фильтра

    Returns:
        mel * 10^(gain_db / 20) по оси мел-бинов
    """
    n_mels = mel_amplitude.shape[-2]
    gain = np.power(10.0, filter_gain_db(cfg, n_mels) / 20.0)
    return (mel_amplitude * gain[:, None]).astype(mel_amplitude.dtype, copy=False)


def apply_filter_augment_log(log_mel: np.ndarray, cfg: FilterConfig) -> np.ndarray:
    """То же в натуральном лог-домене: аддитивный сдвиг на gain_db * ln(10) / 20"""
    n_mels = log_mel.shape[-2]
    shift = filter_gain_db(cfg, n_mels) * np.log(10.0) / 20.0
    return (log_mel + shift[:, None]).astype(log_mel.dtype, copy=False)


def format_filter_config(cfg: FilterConfig) -> str:
    """Текстовый вид: kind;boundaries=0,41,97,128;weights_db=-2.1,3.4,0.8"""
    boundaries = ",".join(str(b) for b in cfg.boundaries)
    weights = ",".join(f"{w:.6g}" for w in cfg.weights_db)
    return f"{cfg.kind};boundaries={boundaries};weights_db={weights}"


def parse_filter_config(text: str) -> FilterConfig:
    parts = text.strip().split(";")
    try:
        kind = parts[0]
        fields = dict(p.split("=", 1) for p in parts[1:])
        boundaries = tuple(int(v) for v in fields["boundaries"].split(","))
        weights = tuple(float(v) for v in fields["weights_db"].split(","))
    except (KeyError, ValueError, IndexError) as e:
        raise ValidationError([f"FilterConfig: не удалось разобрать '{text.strip()}' ({e})"])
    return FilterConfig(kind=kind, boundaries=boundaries, weights_db=weights)


def mixup(x1: np.ndarray, x2: np.ndarray, y1: np.ndarray, y2: np.ndarray, lam: float):
    """Выпуклая комбинация двух примеров и их меток"""
    if not 0 <= lam <= 1:
        raise ValidationError([f"mixup: lambda ({lam}) должна быть в [0, 1]"])
    if x1.shape != x2.shape or y1.shape != y2.shape:
        raise ValidationError([f"mixup: формы не совпадают {x1.shape}/{x2.shape}, {y1.shape}/{y2.shape}"])
    return lam * x1 + (1 - lam) * x2, lam * y1 + (1 - lam) * y2


def time_mask(spec: np.ndarray, rng: np.random.Generator, max_mask_frames: int | None = None) -> np.ndarray:
    """
    Заполнить один непрерывный интервал кадров минимальным значением спектрограммы.
    Ширина равномерно из [0, max_mask_frames]; по умолчанию max_mask_frames = T / 5.
    """
    n_frames = spec.shape[-1]
    if max_mask_frames is None:
        max_mask_frames = n_frames // 5
    if max_mask_frames > n_frames:
        raise ValidationError([f"time_mask: max_mask_frames ({max_mask_frames}) больше числа кадров ({n_frames})"])

    width = int(rng.integers(0, max_mask_frames, endpoint=True))
    start = int(rng.integers(0, n_frames - width, endpoint=True))
    logger.debug(f"time_mask: кадры [{start}, {start + width})")

    out = spec.copy()
    out[..., start:start + width] = spec.min()
    return out


def roll_frames(spec: np.ndarray, labels: np.ndarray, shift: int):
    """
    Циклический сдвиг спектрограммы по времени и меток на тот же интервал.
    Сдвиг меток масштабируется на отношение их числа кадров к числу кадров спектрограммы.
    """
    label_shift = int(round(shift * labels.shape[0] / spec.shape[-1]))
    return np.roll(spec, shift, axis=-1), np.roll(labels, label_shift, axis=0)


def frame_shift(
    spec: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator,
    max_shift: int | None = None,
):
    """Случайный циклический сдвиг на величину из [-max_shift, max_shift] (по умолчанию T / 10)"""
    if max_shift is None:
        max_shift = spec.shape[-1] // 10
    shift = int(rng.integers(-max_shift, max_shift, endpoint=True))
    logger.debug(f"frame_shift: сдвиг {shift} кадров")
    return roll_frames(spec, labels, shift)
