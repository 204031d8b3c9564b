from typing import List, Optional, Sequence, Tuple

VALID_FILTER_KINDS = ("step", "linear")
VALID_ATTENTION_DIMS = ("class", "time")
VALID_POSTPROC_MODES = ("mask", "weaksed")


class ConfigValidator:
    """Класс для валидации конфигураций и параметров конвейера"""

    @classmethod
    def validate_frontend(cls, cfg) -> Tuple[bool, List[str]]:
        """
        Проверяет параметры извлечения признаков

        Args:
            cfg: FrontendConfig

        Returns:
            Tuple[bool, List[str]]: (результат валидации, список ошибок)
        """
        errors = []

        if cfg.n_fft < 2:
            errors.append(f"frontend.n_fft ({cfg.n_fft}) должен быть >= 2")
        if cfg.hop < 1:
            errors.append(f"frontend.hop ({cfg.hop}) должен быть >= 1")
        if cfg.hop > cfg.n_fft:
            errors.append(f"frontend.hop ({cfg.hop}) не может превышать n_fft ({cfg.n_fft})")
        if cfg.n_mels < 1 or cfg.n_mels > cfg.n_fft // 2 + 1:
            errors.append(f"frontend.n_mels ({cfg.n_mels}) должен быть от 1 до n_fft/2+1 ({cfg.n_fft // 2 + 1})")
        if cfg.sample_rate <= 0:
            errors.append(f"frontend.sample_rate ({cfg.sample_rate}) должна быть больше нуля")
        if cfg.log_floor <= 0:
            errors.append(f"frontend.log_floor ({cfg.log_floor}) должен быть больше нуля")

        return len(errors) == 0, errors

    @classmethod
    def validate_filter_params(cls, params, n_mels: int) -> Tuple[bool, List[str]]:
        """
        Проверяет гиперпараметры FilterAugment для заданного числа мел-полос

        Args:
            params: FilterAugParams
            n_mels: Число мел-полос спектрограммы

        Returns:
            Tuple[bool, List[str]]: (результат валидации, список ошибок)
        """
        errors = []

        if params.kind not in VALID_FILTER_KINDS:
            errors.append(f"augment.filter_kind ({params.kind}) должен быть одним из {VALID_FILTER_KINDS}")

        low, high = params.db_range
        if not low < high:
            errors.append(f"augment.db_range: нижняя граница ({low}) должна быть меньше верхней ({high})")

        min_bands, max_bands = params.band_range
        if min_bands < 1 or min_bands > max_bands:
            errors.append(f"augment.bands: нужно 1 <= min ({min_bands}) <= max ({max_bands})")

        if params.min_bandwidth < 1:
            errors.append(f"augment.min_bandwidth ({params.min_bandwidth}) должна быть >= 1")

        if max_bands * params.min_bandwidth > n_mels:
            errors.append(
                f"augment: {max_bands} полос по {params.min_bandwidth} бинов "
                f"не помещаются в {n_mels} мел-полос"
            )

        return len(errors) == 0, errors

    @classmethod
    def validate_filter_config(cls, cfg, n_mels: int) -> Tuple[bool, List[str]]:
        """
        Проверяет сэмплированную реализацию FilterAugment

        Args:
            cfg: FilterConfig
            n_mels: Число мел-полос спектрограммы

        Returns:
            Tuple[bool, List[str]]: (результат валидации, список ошибок)
        """
        errors = []
        b = list(cfg.boundaries)

        if len(b) < 2 or b[0] != 0 or b[-1] != n_mels:
            errors.append(f"границы полос должны начинаться с 0 и заканчиваться {n_mels}: {b}")
            return False, errors

        if any(b[i + 1] <= b[i] for i in range(len(b) - 1)):
            errors.append(f"границы полос должны строго возрастать: {b}")

        expected = cfg.n_bands if cfg.kind == "step" else cfg.n_bands + 1
        if len(cfg.weights_db) != expected:
            errors.append(f"для типа {cfg.kind} нужно {expected} весов, получено {len(cfg.weights_db)}")

        return len(errors) == 0, errors

    @classmethod
    def validate_model_config(cls, cfg, strict: bool = True) -> Tuple[bool, List[str]]:
        """
        Проверяет конфигурацию CRNN

        Args:
            cfg: ModelConfig
            strict: Требовать раскладку из 7 блоков с общим пулингом по времени x4

        Returns:
            Tuple[bool, List[str]]: (результат валидации, список ошибок)
        """
        errors = []

        if len(cfg.channels) != len(cfg.pooling) or not cfg.channels:
            errors.append(
                f"model: число блоков в channels ({len(cfg.channels)}) и pooling ({len(cfg.pooling)}) должно совпадать"
            )
        if cfg.freq_pool != cfg.n_mels:
            errors.append(
                f"model: произведение пулингов по частоте ({cfg.freq_pool}) должно равняться n_mels ({cfg.n_mels})"
            )
        if strict:
            if len(cfg.channels) != 7:
                errors.append(f"model: ожидается 7 CNN-блоков, задано {len(cfg.channels)}")
            if cfg.time_pool != 4:
                errors.append(f"model: произведение пулингов по времени ({cfg.time_pool}) должно быть 4")
        if cfg.n_basis < 1:
            errors.append(f"model.n_basis ({cfg.n_basis}) должно быть >= 1")
        if cfg.temperature <= 0:
            errors.append(f"model.temperature ({cfg.temperature}) должна быть больше нуля")
        if cfg.squeeze_ratio < 1:
            errors.append(f"model.squeeze_ratio ({cfg.squeeze_ratio}) должно быть >= 1")
        if cfg.attention_dim not in VALID_ATTENTION_DIMS:
            errors.append(f"model.attention_dim ({cfg.attention_dim}) должно быть одним из {VALID_ATTENTION_DIMS}")
        if cfg.gru_hidden < 1 or cfg.gru_layers < 1:
            errors.append("model: gru_hidden и gru_layers должны быть >= 1")
        if not 0 <= cfg.dropout < 1:
            errors.append(f"model.dropout ({cfg.dropout}) должен быть в [0, 1)")

        return len(errors) == 0, errors

    @classmethod
    def validate_class_table(cls, names: Sequence[str], lengths: Sequence[int]) -> Tuple[bool, List[str]]:
        """
        Проверяет таблицу классов и длины медианных фильтров

        Args:
            names: Имена классов
            lengths: Длины медианного фильтра (в выходных кадрах)

        Returns:
            Tuple[bool, List[str]]: (результат валидации, список ошибок)
        """
        errors = []

        if len(names) != len(lengths):
            errors.append(f"postproc.median: нужно {len(names)} длин, задано {len(lengths)}")
            return False, errors
        if len(set(names)) != len(names):
            errors.append("таблица классов содержит повторяющиеся имена")

        for name, length in zip(names, lengths):
            if length < 1 or length % 2 == 0:
                errors.append(f"длина медианного фильтра для {name} ({length}) должна быть нечетной и >= 1")

        return len(errors) == 0, errors

    @classmethod
    def validate_psds_params(cls, params, prefix: str = "eval") -> Tuple[bool, List[str]]:
        """
        Проверяет параметры PSDS

        Args:
            params: PsdsParams
            prefix: Префикс пути ключа для сообщений

        Returns:
            Tuple[bool, List[str]]: (результат валидации, список ошибок)
        """
        errors = []

        for key in ("dtc", "gtc", "cttc"):
            value = getattr(params, key)
            if not 0 < value <= 1:
                errors.append(f"{prefix}.{key} ({value}) должен быть в (0, 1]")
        for key in ("alpha_ct", "alpha_st"):
            value = getattr(params, key)
            if value < 0:
                errors.append(f"{prefix}.{key} ({value}) не может быть отрицательным")
        if params.e_max <= 0:
            errors.append(f"{prefix}.e_max ({params.e_max}) должен быть больше нуля")

        return len(errors) == 0, errors

    @classmethod
    def validate_threshold(cls, threshold: float, key: str = "postproc.threshold") -> Tuple[bool, List[str]]:
        """Проверяет, что порог лежит строго внутри (0, 1)"""
        if not 0 < threshold < 1:
            return False, [f"{key} ({threshold}) должен быть в (0, 1)"]
        return True, []

    @classmethod
    def validate_momentum(cls, momentum: float) -> Tuple[bool, List[str]]:
        """Проверяет коэффициент EMA для mean teacher"""
        if not 0 <= momentum <= 1:
            return False, [f"model.ema_momentum ({momentum}) должен быть в [0, 1]"]
        return True, []

    @classmethod
    def validate_postproc_mode(cls, mode: Optional[str]) -> Tuple[bool, List[str]]:
        """Проверяет режим постобработки (mask | weaksed)"""
        if mode not in VALID_POSTPROC_MODES:
            return False, [f"postproc.mode ({mode}) должен быть одним из {VALID_POSTPROC_MODES}"]
        return True, []
