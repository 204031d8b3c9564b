import unittest
import tempfile
from pathlib import Path

import sys
import os

# Добавляем корневую директорию проекта в sys.path
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.abspath(os.path.join(current_dir, '..'))
if project_root not in sys.path:
    sys.path.append(project_root)

from config import TRAINING_SETTINGS, parse_config, parse_config_text
from errors import ConfigError
from models import LINEAR_PARAMS, STEP_PARAMS, PipelineConfig

SMALL_MODEL = """
[frontend]
n_mels = 8

[augment]
bands = 1:2
min_bandwidth = 2

[model]
channels = 4,6,8
pooling = 2x2,2x2,1x2
gru_hidden = 5
"""


class TestConfigParsing(unittest.TestCase):
    """Тесты чтения файла конфигурации"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text: str) -> Path:
        path = self.dir / "sed.conf"
        path.write_text(text, encoding="utf-8")
        return path

    def test_defaults(self):
        """Тест значений по умолчанию без файла и с пустым файлом"""
        self.assertEqual(parse_config(), PipelineConfig())
        self.assertEqual(parse_config(self.write("")), PipelineConfig())
        self.assertEqual(parse_config(self.write("# только комментарий\n\n")), PipelineConfig())

    def test_postproc_mode(self):
        """Тест выбора режима weaksed"""
        cfg = parse_config(self.write("[postproc]\nmode = weaksed\n"))
        self.assertEqual(cfg.postproc.mode, "weaksed")
        self.assertEqual(cfg.postproc.threshold, 0.5)
        self.assertEqual(parse_config(self.write("[postproc]\nmode = none\n")).postproc.mode, None)

    def test_values_with_comments(self):
        """Тест значений с комментариями в конце строки"""
        cfg = parse_config(self.write("[run]\njobs = 4  # потоки\nweights = model.sedw\n"))
        self.assertEqual(cfg.run.jobs, 4)
        self.assertEqual(cfg.run.weights, "model.sedw")

    def test_bad_value_reports_line(self):
        """Тест некорректного значения с номером строки"""
        with self.assertRaises(ConfigError) as ctx:
            parse_config(self.write("[frontend]\nn_fft = abc\n"))
        self.assertEqual(ctx.exception.line, 2)
        self.assertIn("строка 2", str(ctx.exception))
        self.assertIn("frontend.n_fft", str(ctx.exception))

    def test_malformed_files(self):
        """Тест различных синтаксических ошибок"""
        cases = {
            "unknown_key": ("[frontend]\nfoo = 1\n", 2),
            "unknown_section": ("[training]\n", 1),
            "duplicate": ("[run]\nseed = 1\nseed = 2\n", 3),
            "no_section": ("seed = 1\n", 1),
            "no_equals": ("[run]\nseed 1\n", 2),
            "bad_pair": ("[augment]\ndb_range = 1\n", 2),
        }
        for name, (text, line) in cases.items():
            with self.subTest(case=name):
                with self.assertRaises(ConfigError) as ctx:
                    parse_config(self.write(text))
                self.assertEqual(ctx.exception.line, line)

    def test_semantic_errors_collected(self):
        """Тест сбора нескольких семантических ошибок"""
        with self.assertRaises(ConfigError) as ctx:
            parse_config(self.write("[postproc]\nthreshold = 1.5\n[eval]\npsds1_dtc = 0\n"))
        text = str(ctx.exception)
        self.assertIn("postproc.threshold", text)
        self.assertIn("eval.psds1.dtc", text)
        self.assertGreaterEqual(len(ctx.exception.errors), 2)

    def test_median_lengths(self):
        """Тест длин медианного фильтра"""
        cfg = parse_config(self.write("[postproc]\nmedian = 3,3,3,3,3,3,3,3,3,3\n"))
        self.assertEqual(cfg.class_table.median_lengths, (3,) * 10)
        with self.assertRaises(ConfigError):
            parse_config(self.write("[postproc]\nmedian = 3,3\n"))
        with self.assertRaises(ConfigError):
            parse_config(self.write("[postproc]\nmedian = 4,3,3,3,3,3,3,3,3,3\n"))

    def test_strict_model_layout(self):
        """Тест строгой проверки раскладки модели и ее отключения"""
        with self.assertRaises(ConfigError):
            parse_config(self.write(SMALL_MODEL))
        cfg = parse_config(self.write(SMALL_MODEL + "strict = false\n"))
        self.assertEqual(cfg.model.channels, (4, 6, 8))
        self.assertEqual(cfg.model.pooling, ((2, 2), (2, 2), (1, 2)))
        self.assertEqual(cfg.model.n_mels, 8)

    def test_parse_text_sections(self):
        """Тест разбора текста в словарь секций"""
        values = parse_config_text("[eval]\npsds2_alpha_ct = 0.25\ne_max = 50\n")
        self.assertEqual(values, {"eval": {"psds2_alpha_ct": 0.25, "e_max": 50.0}})


class TestConfigPrecedence(unittest.TestCase):
    """Тесты приоритета: значения по умолчанию < пресет < файл < флаги"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "sed.conf"

    def tearDown(self):
        self.tmp.cleanup()

    def test_override_beats_file(self):
        """Тест переопределения значения из файла флагом"""
        self.path.write_text("[postproc]\nthreshold = 0.4\n", encoding="utf-8")
        cfg = parse_config(self.path, {"postproc.threshold": "0.3"})
        self.assertEqual(cfg.postproc.threshold, 0.3)

    def test_eval_overrides(self):
        """Тест параметров PSDS из флагов"""
        cfg = parse_config(overrides={"eval.psds2_alpha_ct": "0.0", "eval.e_max": "50"})
        self.assertEqual(cfg.eval.psds2.alpha_ct, 0.0)
        self.assertEqual(cfg.eval.psds2.dtc, 0.1)
        self.assertEqual(cfg.eval.psds1.e_max, 50.0)
        self.assertEqual(cfg.eval.psds2.e_max, 50.0)

    def test_filter_kind_switches_preset(self):
        """Тест: тип фильтра подтягивает пресет, отдельные поля переопределяются"""
        cfg = parse_config(overrides={"augment.filter_kind": "linear"})
        self.assertEqual(cfg.augment, LINEAR_PARAMS)
        cfg = parse_config(overrides={"augment.filter_kind": "step", "augment.db_range": "-4.5:6"})
        self.assertEqual(cfg.augment, STEP_PARAMS)
        cfg = parse_config(overrides={"augment.bands": "2:3"})
        self.assertEqual(cfg.augment.band_range, (2, 3))
        self.assertEqual(cfg.augment.db_range, STEP_PARAMS.db_range)

    def test_training_settings(self):
        """Тест пресетов настроек обучения"""
        for setting, (seed, kind, dim) in TRAINING_SETTINGS.items():
            with self.subTest(setting=setting):
                cfg = parse_config(overrides={"run.setting": str(setting)})
                self.assertEqual(cfg.run.seed, seed)
                self.assertEqual(cfg.augment.kind, kind)
                self.assertEqual(cfg.model.attention_dim, dim)

    def test_file_beats_setting(self):
        """Тест: значение из файла важнее пресета настройки"""
        self.path.write_text("[run]\nseed = 7\n", encoding="utf-8")
        cfg = parse_config(self.path, {"run.setting": "3"})
        self.assertEqual(cfg.run.seed, 7)
        self.assertEqual(cfg.augment.kind, "linear")

    def test_unknown_setting(self):
        """Тест неизвестного номера настройки"""
        with self.assertRaises(ConfigError):
            parse_config(overrides={"run.setting": "9"})

    def test_unreadable_file(self):
        """Тест отсутствующего файла"""
        with self.assertRaises(ConfigError):
            parse_config(Path(self.tmp.name) / "missing.conf")


if __name__ == '__main__':
    unittest.main()
