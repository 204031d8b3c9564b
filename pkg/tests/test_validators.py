import unittest
from dataclasses import replace

import sys
import os

# Добавляем корневую директорию проекта в sys.path
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.abspath(os.path.join(current_dir, '..'))
if project_root not in sys.path:
    sys.path.append(project_root)

from models import (
    DESED_CLASSES,
    DESED_MEDIAN_LENGTHS,
    LINEAR_PARAMS,
    PSDS1_PARAMS,
    PSDS2_PARAMS,
    STEP_PARAMS,
    FilterAugParams,
    FilterConfig,
    FrontendConfig,
    ModelConfig,
)
from validators import ConfigValidator


class TestConfigValidator(unittest.TestCase):
    """Тесты для класса ConfigValidator"""

    def test_validate_frontend_valid(self):
        """Тест валидации корректных параметров признаков"""
        for cfg in (FrontendConfig(), FrontendConfig(n_fft=512, hop=128, n_mels=64)):
            with self.subTest(cfg=cfg):
                valid, errors = ConfigValidator.validate_frontend(cfg)
                self.assertTrue(valid)
                self.assertEqual(len(errors), 0)

    def test_validate_frontend_invalid(self):
        """Тест валидации некорректных параметров признаков"""
        invalid = [
            FrontendConfig(n_fft=1),  # слишком короткое окно
            FrontendConfig(hop=0),  # нулевой шаг
            FrontendConfig(hop=4096),  # шаг больше окна
            FrontendConfig(n_mels=2000),  # полос больше, чем бинов
            FrontendConfig(sample_rate=0),  # нулевая частота
            FrontendConfig(log_floor=0.0),  # нулевой пол логарифма
        ]
        for cfg in invalid:
            with self.subTest(cfg=cfg):
                valid, errors = ConfigValidator.validate_frontend(cfg)
                self.assertFalse(valid)
                self.assertGreater(len(errors), 0)

    def test_validate_filter_params(self):
        """Тест валидации гиперпараметров FilterAugment"""
        for params in (STEP_PARAMS, LINEAR_PARAMS):
            with self.subTest(kind=params.kind):
                valid, errors = ConfigValidator.validate_filter_params(params, 128)
                self.assertTrue(valid)
                self.assertEqual(len(errors), 0)

        invalid = [
            FilterAugParams("cosine", (-1.0, 1.0), (2, 3), 4),  # неизвестный тип
            FilterAugParams("step", (1.0, 1.0), (2, 3), 4),  # пустой диапазон дБ
            FilterAugParams("step", (-1.0, 1.0), (0, 3), 4),  # ноль полос
            FilterAugParams("step", (-1.0, 1.0), (4, 3), 4),  # min > max
            FilterAugParams("step", (-1.0, 1.0), (2, 3), 0),  # нулевая ширина
            FilterAugParams("step", (-1.0, 1.0), (2, 5), 40),  # не помещается в 128 полос
        ]
        for params in invalid:
            with self.subTest(params=params):
                valid, errors = ConfigValidator.validate_filter_params(params, 128)
                self.assertFalse(valid)
                self.assertGreater(len(errors), 0)

    def test_validate_filter_config(self):
        """Тест валидации реализации фильтра"""
        valid_cfgs = [
            FilterConfig("step", (0, 64, 128), (1.0, -2.0)),
            FilterConfig("linear", (0, 64, 128), (1.0, -2.0, 0.5)),
        ]
        for cfg in valid_cfgs:
            with self.subTest(cfg=cfg):
                valid, _ = ConfigValidator.validate_filter_config(cfg, 128)
                self.assertTrue(valid)

        invalid_cfgs = [
            FilterConfig("step", (1, 64, 128), (1.0, -2.0)),  # не с нуля
            FilterConfig("step", (0, 64, 100), (1.0, -2.0)),  # не до n_mels
            FilterConfig("step", (0, 64, 64, 128), (1.0, 0.0, -2.0)),  # пустая полоса
            FilterConfig("step", (0, 64, 128), (1.0,)),  # мало весов
            FilterConfig("linear", (0, 64, 128), (1.0, -2.0)),  # linear требует n+1 весов
        ]
        for cfg in invalid_cfgs:
            with self.subTest(cfg=cfg):
                valid, errors = ConfigValidator.validate_filter_config(cfg, 128)
                self.assertFalse(valid)
                self.assertGreater(len(errors), 0)

    def test_validate_model_config(self):
        """Тест валидации конфигурации модели"""
        valid, errors = ConfigValidator.validate_model_config(ModelConfig())
        self.assertTrue(valid)
        self.assertEqual(len(errors), 0)

        small = ModelConfig(channels=(4, 6, 8), pooling=((2, 2), (2, 2), (1, 2)), n_mels=8)
        self.assertFalse(ConfigValidator.validate_model_config(small)[0])
        self.assertTrue(ConfigValidator.validate_model_config(small, strict=False)[0])

        invalid = [
            replace(ModelConfig(), n_mels=64),  # пулинг по частоте не сходится
            replace(ModelConfig(), channels=(16, 32)),  # число блоков
            replace(ModelConfig(), attention_dim="frequency"),
            replace(ModelConfig(), n_basis=0),
            replace(ModelConfig(), temperature=0.0),
            replace(ModelConfig(), dropout=1.0),
            replace(ModelConfig(), gru_hidden=0),
        ]
        for cfg in invalid:
            with self.subTest(cfg=cfg):
                valid, errors = ConfigValidator.validate_model_config(cfg, strict=False)
                self.assertFalse(valid)
                self.assertGreater(len(errors), 0)

    def test_validate_class_table(self):
        """Тест валидации таблицы классов"""
        self.assertTrue(ConfigValidator.validate_class_table(DESED_CLASSES, DESED_MEDIAN_LENGTHS)[0])
        invalid = [
            (("A", "B"), (3,)),  # разная длина
            (("A", "A"), (3, 3)),  # повтор имени
            (("A",), (4,)),  # четная длина
            (("A",), (0,)),  # нулевая длина
        ]
        for names, lengths in invalid:
            with self.subTest(names=names, lengths=lengths):
                valid, errors = ConfigValidator.validate_class_table(names, lengths)
                self.assertFalse(valid)
                self.assertGreater(len(errors), 0)

    def test_validate_psds_params(self):
        """Тест валидации параметров PSDS"""
        for params in (PSDS1_PARAMS, PSDS2_PARAMS):
            with self.subTest(params=params):
                self.assertTrue(ConfigValidator.validate_psds_params(params)[0])

        valid, errors = ConfigValidator.validate_psds_params(
            replace(PSDS1_PARAMS, dtc=0.0, alpha_st=-1.0, e_max=0.0), "eval.psds1"
        )
        self.assertFalse(valid)
        self.assertEqual(len(errors), 3)
        self.assertTrue(all(e.startswith("eval.psds1.") for e in errors))

    def test_validate_scalars(self):
        """Тест валидации порога, коэффициента EMA и режима постобработки"""
        for th in (0.01, 0.5, 0.99):
            with self.subTest(threshold=th):
                self.assertTrue(ConfigValidator.validate_threshold(th)[0])
        for th in (0.0, 1.0, -0.5):
            with self.subTest(threshold=th):
                self.assertFalse(ConfigValidator.validate_threshold(th)[0])

        self.assertTrue(ConfigValidator.validate_momentum(0.999)[0])
        self.assertFalse(ConfigValidator.validate_momentum(1.5)[0])

        for mode in ("mask", "weaksed"):
            self.assertTrue(ConfigValidator.validate_postproc_mode(mode)[0])
        for mode in ("median", None, ""):
            self.assertFalse(ConfigValidator.validate_postproc_mode(mode)[0])


if __name__ == '__main__':
    unittest.main()
