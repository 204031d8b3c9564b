from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from errors import ValidationError
from validators import ConfigValidator

FilterKind = Literal["step", "linear"]
AttentionDim = Literal["class", "time"]

# Именованная карта параметров модели: имя тензора -> массив float32
ModelWeights = dict[str, np.ndarray]


# ---- Аудио и признаки ----
@dataclass(frozen=True)
class FrontendConfig:
    n_fft: int = 2048
    hop: int = 256
    n_mels: int = 128
    sample_rate: int = 16000
    window: str = "hann"
    log_floor: float = 1e-10

    @property
    def frame_hop_s(self) -> float:
        return self.hop / self.sample_rate

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int
    # Частота дискретизации отличается от ожидаемой (ресэмплинг не выполняется)
    rate_mismatch: bool = False

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class LogMelSpectrogram:
    values: np.ndarray  # [n_mels, n_frames]
    frame_hop_s: float

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


# ---- FilterAugment ----
@dataclass(frozen=True)
class FilterAugParams:
    kind: FilterKind
    db_range: tuple[float, float]
    band_range: tuple[int, int]
    min_bandwidth: int


STEP_PARAMS = FilterAugParams("step", (-4.5, 6.0), (2, 5), 4)
LINEAR_PARAMS = FilterAugParams("linear", (-6.0, 4.5), (3, 6), 7)
FILTER_PRESETS: dict[str, FilterAugParams] = {"step": STEP_PARAMS, "linear": LINEAR_PARAMS}


@dataclass(frozen=True)
class FilterConfig:
    kind: FilterKind
    boundaries: tuple[int, ...]
    weights_db: tuple[float, ...]

    @property
    def n_bands(self) -> int:
        return len(self.boundaries) - 1


@dataclass
class AttentionMap:
    values: np.ndarray  # [B, K, F], симплекс по оси K


# ---- Модель ----
@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128, 128, 128, 128)
    # Окна пулинга по блокам в порядке (время, частота)
    pooling: tuple[tuple[int, int], ...] = ((2, 2), (2, 2), (1, 2), (1, 2), (1, 2), (1, 2), (1, 2))
    dropout: float = 0.5
    gru_hidden: int = 128
    gru_layers: int = 2
    n_classes: int = 10
    attention_dim: AttentionDim = "class"
    n_mels: int = 128
    n_basis: int = 4
    temperature: float = 45.0
    squeeze_ratio: int = 4

    @property
    def time_pool(self) -> int:
        return int(np.prod([p[0] for p in self.pooling]))

    @property
    def freq_pool(self) -> int:
        return int(np.prod([p[1] for p in self.pooling]))

    def frame_duration_s(self, frontend: FrontendConfig | None = None) -> float:
        frontend = frontend or FrontendConfig()
        return frontend.frame_hop_s * self.time_pool


@dataclass
class FramePredictions:
    strong: np.ndarray  # [T', C]
    weak: np.ndarray  # [C]
    frame_duration_s: float = 0.064
    clip_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.strong.shape[0]


# ---- Постобработка ----
DESED_CLASSES = (
    "Alarm_bell_ringing",
    "Blender",
    "Cat",
    "Dishes",
    "Dog",
    "Electric_shaver_toothbrush",
    "Frying",
    "Running_water",
    "Speech",
    "Vacuum_cleaner",
)
DESED_MEDIAN_LENGTHS = (5, 11, 5, 5, 5, 67, 61, 49, 5, 17)


@dataclass(frozen=True)
class ClassTable:
    names: tuple[str, ...] = DESED_CLASSES
    median_lengths: tuple[int, ...] = DESED_MEDIAN_LENGTHS

    def __post_init__(self):
        valid, errors = ConfigValidator.validate_class_table(self.names, self.median_lengths)
        if not valid:
            raise ValidationError(errors)

    @property
    def n_classes(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Event:
    event_label: str
    onset: float
    offset: float
    filename: str = ""

    @property
    def duration(self) -> float:
        return self.offset - self.onset


# ---- Оценка ----
@dataclass(frozen=True)
class PsdsParams:
    dtc: float
    gtc: float
    cttc: float = 0.3
    alpha_ct: float = 0.0
    alpha_st: float = 1.0
    e_max: float = 100.0


PSDS1_PARAMS = PsdsParams(dtc=0.7, gtc=0.7, cttc=0.3, alpha_ct=0.0, alpha_st=1.0)
PSDS2_PARAMS = PsdsParams(dtc=0.1, gtc=0.1, cttc=0.3, alpha_ct=0.5, alpha_st=1.0)


@dataclass
class OperatingPoint:
    threshold: float
    tp: np.ndarray  # [C]
    fp: np.ndarray  # [C]
    ct: np.ndarray  # [C, C], ct[c, c'] - срабатывания класса c на эталонах c'
    n_gt: np.ndarray  # [C]
    total_duration_h: float


@dataclass
class RocCurve:
    efpr: np.ndarray
    etpr: np.ndarray
    e_max: float = 100.0


# ---- Конфигурация конвейера ----
@dataclass(frozen=True)
class PostprocConfig:
    # None - только медианный фильтр
    mode: str | None = None
    threshold: float = 0.5
    weak_threshold: float = 0.5
    median_lengths: tuple[int, ...] = DESED_MEDIAN_LENGTHS
    n_thresholds: int = 50


@dataclass(frozen=True)
class EvalConfig:
    psds1: PsdsParams = PSDS1_PARAMS
    psds2: PsdsParams = PSDS2_PARAMS
    onset_collar: float = 0.2
    offset_collar: float = 0.2
    offset_ratio: float = 0.2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    jobs: int = 1
    batch_size: int = 8
    weights: str | None = None
    ema_momentum: float = 0.999


@dataclass(frozen=True)
class PipelineConfig:
    frontend: FrontendConfig = FrontendConfig()
    augment: FilterAugParams = STEP_PARAMS
    model: ModelConfig = ModelConfig()
    postproc: PostprocConfig = PostprocConfig()
    eval: EvalConfig = EvalConfig()
    run: RunConfig = RunConfig()

    @property
    def class_table(self) -> ClassTable:
        return ClassTable(DESED_CLASSES[:self.model.n_classes], self.postproc.median_lengths)
