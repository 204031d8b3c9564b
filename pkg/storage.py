"""
Бинарные контейнеры (little endian):

SEDW - веса модели:
    "SEDW" | u32 version=1 | u32 count
    для каждого тензора: u16 длина имени | имя UTF-8 | u8 rank | u32 * rank размеров | f32 данные

SEDF - лог-мел признаки одного клипа:
    "SEDF" | u32 version=1 | u32 n_mels | u32 n_frames | f32 frame_hop_s | f32 данные [n_mels, n_frames]

SEDP - дамп предсказаний:
    "SEDP" | u32 version=1 | u32 n_clips
    для каждого клипа: u16 длина имени | имя UTF-8 | u32 T' | u32 C | f32 frame_duration_s
                       | f32 strong [T', C] | f32 weak [C]
"""
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from errors import BadMagicError, ContainerError, DuplicateNameError, TruncatedPayloadError, UnknownVersionError
from models import FramePredictions, LogMelSpectrogram, ModelWeights

VERSION = 1
WEIGHTS_MAGIC = b"SEDW"
FEATURES_MAGIC = b"SEDF"
PREDICTIONS_MAGIC = b"SEDP"
F32 = np.dtype("<f4")


@contextmanager
def atomic_write(path):
    """Записать файл через временный файл в том же каталоге и os.replace"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class _Reader:
    """Последовательное чтение буфера с проверкой длины"""

    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                [f"{self.source}: данные обрываются на байте {len(self.data)}, нужно {self.pos + n}"]
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (length,) = self.unpack("<H")
        raw = self.take(length)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ContainerError([f"{self.source}: имя на байте {self.pos - length} не в UTF-8 ({e.reason})"]) from e

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(count * 4), dtype=F32).reshape(shape).astype(np.float32)

    def finish(self):
        if self.pos != len(self.data):
            raise TruncatedPayloadError([f"{self.source}: {len(self.data) - self.pos} лишних байт после данных"])


def _open(path, magic: bytes) -> _Reader:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path.name)
    head = reader.take(4) if len(reader.data) >= 4 else reader.data
    if head != magic:
        raise BadMagicError([f"{path.name}: сигнатура {head!r}, ожидается {magic!r}"])
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise UnknownVersionError([f"{path.name}: версия формата {version} не поддерживается"])
    return reader


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _pack_floats(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype=F32).tobytes()


# ---- SEDW ----
def encode_tensor(name: str, tensor: np.ndarray) -> bytes:
    header = _pack_name(name) + struct.pack("<B", tensor.ndim)
    header += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
    return header + _pack_floats(tensor)


def save_weights(weights: ModelWeights, path):
    with atomic_write(path) as fh:
        fh.write(WEIGHTS_MAGIC + struct.pack("<II", VERSION, len(weights)))
        for name, tensor in weights.items():
            fh.write(encode_tensor(name, np.asarray(tensor)))


def load_weights(path) -> ModelWeights:
    reader = _open(path, WEIGHTS_MAGIC)
    (count,) = reader.unpack("<I")
    weights = {}
    for _ in range(count):
        name = reader.name()
        if name in weights:
            raise DuplicateNameError([f"{reader.source}: тензор {name} встречается дважды"])
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        weights[name] = reader.floats(tuple(shape))
    reader.finish()
    return weights


# ---- SEDF ----
def save_features(spec: LogMelSpectrogram, path):
    with atomic_write(path) as fh:
        fh.write(FEATURES_MAGIC + struct.pack("<III", VERSION, spec.n_mels, spec.n_frames))
        fh.write(struct.pack("<f", spec.frame_hop_s))
        fh.write(_pack_floats(spec.values))


def load_features(path) -> LogMelSpectrogram:
    reader = _open(path, FEATURES_MAGIC)
    n_mels, n_frames = reader.unpack("<II")
    (frame_hop_s,) = reader.unpack("<f")
    values = reader.floats((n_mels, n_frames))
    reader.finish()
    return LogMelSpectrogram(values=values, frame_hop_s=round(float(frame_hop_s), 6))


# ---- SEDP ----
def save_predictions(preds: list[FramePredictions], path):
    names = [p.clip_id for p in preds]
    if len(set(names)) != len(names):
        raise DuplicateNameError([f"{Path(path).name}: идентификаторы клипов повторяются"])
    with atomic_write(path) as fh:
        fh.write(PREDICTIONS_MAGIC + struct.pack("<II", VERSION, len(preds)))
        for p in preds:
            n_frames, n_classes = p.strong.shape
            fh.write(_pack_name(p.clip_id))
            fh.write(struct.pack("<IIf", n_frames, n_classes, p.frame_duration_s))
            fh.write(_pack_floats(p.strong))
            fh.write(_pack_floats(p.weak))


def load_predictions(path) -> list[FramePredictions]:
    reader = _open(path, PREDICTIONS_MAGIC)
    (n_clips,) = reader.unpack("<I")
    preds, seen = [], set()
    for _ in range(n_clips):
        clip_id = reader.name()
        if clip_id in seen:
            raise DuplicateNameError([f"{reader.source}: клип {clip_id} встречается дважды"])
        seen.add(clip_id)
        n_frames, n_classes, frame_duration = reader.unpack("<IIf")
        strong = reader.floats((n_frames, n_classes))
        weak = reader.floats((n_classes,))
        preds.append(FramePredictions(strong, weak, round(float(frame_duration), 6), clip_id))
    reader.finish()
    return preds
