class ValidationError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


class ShapeError(ValidationError):
    """Несовпадение размерностей тензоров"""


class EventError(ValidationError):
    """Некорректное событие (offset <= onset)"""


# ---- Аудио ----
class AudioFormatError(ValidationError):
    """Файл не RIFF/WAVE или кодек не PCM16/float32"""


class TruncatedAudioError(ValidationError):
    """Файл обрезан: заголовок обещает больше данных, чем есть"""


class EmptyAudioError(ValidationError):
    """Файл не содержит ни одного сэмпла"""


# ---- Бинарные контейнеры (SEDW / SEDF / SEDP) ----
class ContainerError(ValidationError):
    """Общая ошибка бинарного контейнера"""


class BadMagicError(ContainerError):
    pass


class UnknownVersionError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class DuplicateNameError(ContainerError):
    pass


class ConfigError(ValidationError):
    """Ошибка конфигурации; line - номер строки файла, если известен"""

    def __init__(self, errors: list[str], line: int | None = None):
        if line is not None:
            errors = [f"строка {line}: {e}" for e in errors]
        super().__init__(errors)
        self.line = line


class GradCheckError(ValidationError):
    """Нечисловой (nan/inf) градиент при проверке конечными разностями"""
