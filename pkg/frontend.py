"""
Извлечение признаков: чтение WAV, STFT, мел-фильтры, логарифм и
min-max нормализация пакета спектрограмм.
"""
import math
import struct
from pathlib import Path

import librosa
import numpy as np
import soundfile as sf
from loguru import logger

from errors import AudioFormatError, EmptyAudioError, TruncatedAudioError, ValidationError
from models import FrontendConfig, LogMelSpectrogram, Waveform
from validators import ConfigValidator

SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")


def _check_frontend(cfg: FrontendConfig):
    valid, errors = ConfigValidator.validate_frontend(cfg)
    if not valid:
        raise ValidationError(errors)


def _riff_data_sizes(path: Path) -> tuple[int, int]:
    """
    Пройти по чанкам RIFF и найти чанк data.

    Returns:
        (объявленный размер data в байтах, фактически доступный размер)
    """
    size = path.stat().st_size
    with open(path, "rb") as fh:
        fh.seek(12)
        pos = 12
        while pos + 8 <= size:
            chunk_id, chunk_size = struct.unpack("<4sI", fh.read(8))
            pos += 8
            if chunk_id == b"data":
                return chunk_size, size - pos
            pos += chunk_size + (chunk_size & 1)
            fh.seek(pos)
    raise TruncatedAudioError([f"{path.name}: чанк data не найден"])


def load_wav(path, expected_rate: int = 16000) -> Waveform:
    """
    Прочитать RIFF/WAVE (PCM 16 бит или float32, моно или стерео).

    Стерео усредняется в моно, 16-битные отсчеты масштабируются на 1/32768.
    Несовпадение частоты дискретизации помечается флагом, ресэмплинг не выполняется.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(12)
    if len(header) < 12:
        raise TruncatedAudioError([f"{path.name}: файл короче заголовка RIFF ({len(header)} байт)"])
    if header[:4] != b"RIFF" or header[8:12] != b"WAVE":
        raise AudioFormatError([f"{path.name}: не RIFF/WAVE файл"])

    declared, available = _riff_data_sizes(path)
    if declared > available:
        raise TruncatedAudioError([f"{path.name}: заголовок объявляет {declared} байт данных, доступно {available}"])
    if declared == 0:
        raise EmptyAudioError([f"{path.name}: файл не содержит отсчетов"])

    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise TruncatedAudioError([f"{path.name}: не удалось прочитать заголовок ({e})"])
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise AudioFormatError([f"{path.name}: кодек {info.subtype} не поддерживается, нужен PCM_16 или FLOAT"])
    if info.frames == 0:
        raise EmptyAudioError([f"{path.name}: файл не содержит отсчетов"])

    data, rate = sf.read(str(path), dtype="float32", always_2d=True)
    samples = data.mean(axis=1, dtype=np.float32)

    mismatch = rate != expected_rate
    if mismatch:
        logger.warning(f"{path.name}: частота {rate} Гц вместо {expected_rate} Гц, ресэмплинг не выполняется")
    return Waveform(samples=samples, sample_rate=int(rate), rate_mismatch=mismatch)


def save_wav(path, waveform: Waveform):
    """Записать моно WAV PCM 16 бит (округление к ближайшему уровню 1/32768)"""
    pcm = np.clip(np.round(np.asarray(waveform.samples, dtype=np.float64) * 32768.0), -32768, 32767)
    sf.write(str(path), pcm.astype(np.int16), waveform.sample_rate, subtype="PCM_16")


def n_frames_for(n_samples: int, hop: int) -> int:
    return math.ceil(n_samples / hop)


def stft_magnitude(waveform: Waveform, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """
    Модуль STFT с центрированием (reflect) и периодическим окном Ханна.

    Returns:
        [n_fft/2 + 1, ceil(N / hop)]
    """
    _check_frontend(cfg)
    y = np.asarray(waveform.samples, dtype=np.float32)
    if y.size < 1:
        raise EmptyAudioError(["stft: пустой сигнал"])

    spec = librosa.stft(
        y,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        window=cfg.window,
        center=True,
        pad_mode="reflect",
    )
    return np.abs(spec[:, :n_frames_for(y.size, cfg.hop)]).astype(np.float32)


def mel_filterbank(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Треугольные фильтры в шкале HTK от 0 до sr/2 с пиком 1: [n_mels, n_fft/2 + 1]"""
    _check_frontend(cfg)
    return librosa.filters.mel(
        sr=cfg.sample_rate,
        n_fft=cfg.n_fft,
        n_mels=cfg.n_mels,
        fmin=0.0,
        fmax=cfg.sample_rate / 2,
        htk=True,
        norm=None,
    ).astype(np.float32)


def mel_amplitude(mag: np.ndarray, fb: np.ndarray) -> np.ndarray:
    if fb.shape[1] != mag.shape[0]:
        raise ValidationError([f"mel: фильтры ждут {fb.shape[1]} бинов, спектр содержит {mag.shape[0]}"])
    return (fb @ mag).astype(np.float32)


def log_mel(mag: np.ndarray, fb: np.ndarray, cfg: FrontendConfig = FrontendConfig()) -> LogMelSpectrogram:
    """Натуральный логарифм мел-амплитуды с полом log_floor"""
    values = np.log(np.maximum(mel_amplitude(mag, fb), cfg.log_floor)).astype(np.float32)
    return LogMelSpectrogram(values=values, frame_hop_s=cfg.frame_hop_s)


def extract_logmel(waveform: Waveform, cfg: FrontendConfig = FrontendConfig()) -> LogMelSpectrogram:
    """Полный путь волна -> лог-мел спектрограмма"""
    return log_mel(stft_magnitude(waveform, cfg), mel_filterbank(cfg), cfg)


def normalize_minmax(batch: np.ndarray) -> np.ndarray:
    """
    Min-max нормализация в [0, 1] по осям пакета и времени отдельно для каждого мел-бина.
    Вырожденные бины (max - min < 1e-12) обнуляются.

    Args:
        batch: [B, n_mels, n_frames]
    """
    if batch.ndim != 3:
        raise ValidationError([f"normalize_minmax: ожидается [B, n_mels, T], получено {batch.shape}"])

    lo = batch.min(axis=(0, 2), keepdims=True)
    hi = batch.max(axis=(0, 2), keepdims=True)
    span = hi - lo
    degenerate = span < 1e-12
    out = (batch - lo) / np.where(degenerate, 1, span)
    return np.where(degenerate, 0, out).astype(batch.dtype, copy=False)
