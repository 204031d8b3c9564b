import unittest
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

# Добавляем корневую директорию проекта в sys.path
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.abspath(os.path.join(current_dir, '..'))
if project_root not in sys.path:
    sys.path.append(project_root)

from augment import parse_filter_config
from crnn import init_weights
from errors import DuplicateNameError, ValidationError
from frontend import save_wav
from models import (
    STEP_PARAMS,
    Event,
    FramePredictions,
    FrontendConfig,
    LogMelSpectrogram,
    ModelConfig,
    PipelineConfig,
    RunConfig,
    Waveform,
)
from postproc import read_event_tsv, threshold_grid, write_event_tsv
from services import (
    PartialOutputs,
    augment_features,
    ensemble,
    evaluate,
    extract_features,
    gradcheck,
    infer,
    postprocess,
    run_inference,
)
from storage import load_features, load_predictions, save_features, save_predictions, save_weights

SMALL_MODEL = ModelConfig(channels=(4, 6, 8), pooling=((2, 2), (2, 2), (1, 2)), gru_hidden=5, n_mels=8)


def small_config(jobs: int = 1, batch_size: int = 8, weights: str | None = None) -> PipelineConfig:
    return PipelineConfig(
        frontend=FrontendConfig(n_mels=8),
        model=SMALL_MODEL,
        run=RunConfig(seed=3, jobs=jobs, batch_size=batch_size, weights=weights),
    )


GTS = [
    Event("Dog", 1.0, 3.0, "a"),
    Event("Speech", 4.0, 8.5, "a"),
    Event("Cat", 0.5, 2.0, "b"),
]


class TestFeatureServices(unittest.TestCase):
    """Тесты извлечения признаков и аугментации"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_extract(self):
        """Тест извлечения признаков из каталога WAV"""
        wav_dir = self.dir / "wav"
        wav_dir.mkdir()
        rng = np.random.default_rng(0)
        for name in ("b", "a"):
            save_wav(wav_dir / f"{name}.wav", Waveform(rng.uniform(-0.5, 0.5, 16000).astype(np.float32), 16000))
        paths = extract_features(wav_dir, self.dir / "feats", PipelineConfig())
        self.assertEqual([p.name for p in paths], ["a.sedf", "b.sedf"])
        spec = load_features(paths[0])
        self.assertEqual(spec.values.shape, (128, 63))
        self.assertAlmostEqual(spec.frame_hop_s, 0.016)

    def test_extract_empty_dir(self):
        """Тест каталога без WAV"""
        with self.assertRaises(ValidationError):
            extract_features(self.dir, self.dir / "feats", PipelineConfig())

    def test_augment(self):
        """Тест FilterAugment для файла признаков"""
        spec = LogMelSpectrogram(np.random.default_rng(1).standard_normal((128, 20)).astype(np.float32), 0.016)
        src = self.dir / "clip.sedf"
        save_features(spec, src)
        out = self.dir / "clip_aug.sedf"
        text = augment_features(src, out, PipelineConfig())
        self.assertEqual((self.dir / "clip_aug.filter.txt").read_text(encoding="utf-8").strip(), text)

        filter_cfg = parse_filter_config(text)
        self.assertEqual(filter_cfg.kind, "step")
        self.assertTrue(STEP_PARAMS.band_range[0] <= filter_cfg.n_bands <= STEP_PARAMS.band_range[1])
        diff = load_features(out).values - spec.values
        # Сдвиг в лог-области постоянен по времени внутри каждого бина
        np.testing.assert_allclose(diff, np.repeat(diff[:, :1], 20, axis=1), atol=1e-5)
        self.assertEqual(augment_features(src, self.dir / "again.sedf", PipelineConfig()), text)


class TestInference(unittest.TestCase):
    """Тесты инференса и постобработки"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.feats = self.dir / "feats"
        rng = np.random.default_rng(2)
        for name, frames in (("c1", 24), ("c2", 16), ("c3", 24), ("c4", 24)):
            spec = LogMelSpectrogram(rng.standard_normal((8, frames)).astype(np.float32), 0.016)
            save_features(spec, self.feats / f"{name}.sedf")

    def tearDown(self):
        self.tmp.cleanup()

    def test_ten_second_silence(self):
        """Тест 10 секунд тишины с моделью по умолчанию"""
        wav_dir = self.dir / "wav"
        wav_dir.mkdir()
        save_wav(wav_dir / "silence.wav", Waveform(np.zeros(160000, dtype=np.float32), 16000))
        preds = run_inference(wav_dir, PipelineConfig())
        self.assertEqual(len(preds), 1)
        self.assertEqual(preds[0].clip_id, "silence")
        self.assertEqual(preds[0].strong.shape, (156, 10))
        self.assertEqual(preds[0].weak.shape, (10,))

    def test_infer_outputs(self):
        """Тест файлов дампа и TSV событий"""
        out = self.dir / "scores.sedp"
        paths = infer(self.feats, out, small_config())
        self.assertEqual(paths, [out, out.with_suffix(".tsv")])
        preds = load_predictions(out)
        self.assertEqual([p.clip_id for p in preds], ["c1", "c2", "c3", "c4"])
        self.assertEqual(preds[0].strong.shape, (6, 10))
        self.assertEqual(preds[1].strong.shape, (4, 10))
        header = out.with_suffix(".tsv").read_text(encoding="utf-8").splitlines()[0]
        self.assertEqual(header, "filename\tonset\toffset\tevent_label")

    def test_infer_independent_of_jobs(self):
        """Тест побайтового совпадения дампа при разном числе потоков"""
        infer(self.feats, self.dir / "one.sedp", small_config(jobs=1, batch_size=2))
        infer(self.feats, self.dir / "many.sedp", small_config(jobs=3, batch_size=2))
        self.assertEqual((self.dir / "one.sedp").read_bytes(), (self.dir / "many.sedp").read_bytes())

    def test_infer_with_weights_file(self):
        """Тест загрузки весов из файла"""
        weights_path = self.dir / "model.sedw"
        save_weights(init_weights(SMALL_MODEL, seed=3), weights_path)
        from_file = run_inference(self.feats, small_config(weights=str(weights_path)))
        from_seed = run_inference(self.feats, small_config())
        for a, b in zip(from_file, from_seed):
            np.testing.assert_array_equal(a.strong, b.strong)

    def test_postprocess_threshold_files(self):
        """Тест файлов событий для каждого порога"""
        dump = self.dir / "scores.sedp"
        infer(self.feats, dump, small_config())
        paths = postprocess(dump, self.dir / "det", small_config())
        self.assertEqual(len(paths), 50)
        self.assertEqual(paths[0].name, "th_0.010.tsv")
        self.assertEqual(paths[-1].name, "th_0.990.tsv")
        totals = [sum(e.duration for e in read_event_tsv(p)) for p in paths]
        self.assertTrue(all(a >= b - 1e-6 for a, b in zip(totals, totals[1:])))


class TestEnsembleAndEval(unittest.TestCase):
    """Тесты ансамбля и оценки"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.gt = self.dir / "gt.tsv"
        write_event_tsv(GTS, self.gt)
        self.durations = self.dir / "durations.tsv"
        pd.DataFrame({"filename": ["a", "b"], "duration": [10.0, 10.0]}).to_csv(
            self.durations, sep="\t", index=False
        )

    def tearDown(self):
        self.tmp.cleanup()

    def write_detections(self, events_for_threshold) -> Path:
        det = self.dir / "det"
        for th in threshold_grid(5):
            write_event_tsv(events_for_threshold(th), det / f"th_{th:.3f}.tsv")
        return det

    def test_perfect_detections(self):
        """Тест детекций, совпадающих с эталоном"""
        det = self.write_detections(lambda th: GTS)
        report = evaluate(det, self.gt, PipelineConfig(), self.durations, self.dir / "report")
        self.assertEqual(report.line(), "PSDS1=1.0000 PSDS2=1.0000 CBF1=1.000")
        for name in ("roc_psds1.tsv", "roc_psds2.tsv", "roc_psds1.png", "roc_psds2.png", "class_breakdown.tsv"):
            with self.subTest(file=name):
                self.assertTrue((self.dir / "report" / name).exists())
        breakdown = pd.read_csv(self.dir / "report" / "class_breakdown.tsv", sep="\t")
        self.assertEqual(len(breakdown), 10)

    def test_durations_estimated_from_events(self):
        """Тест оценки без таблицы длительностей"""
        det = self.write_detections(lambda th: GTS)
        self.assertEqual(evaluate(det, self.gt, PipelineConfig()).line(), "PSDS1=1.0000 PSDS2=1.0000 CBF1=1.000")

    def test_empty_detections(self):
        """Тест пустого выхода системы"""
        det = self.write_detections(lambda th: [])
        report = evaluate(det, self.gt, PipelineConfig(), self.durations)
        self.assertEqual(report.line(), "PSDS1=0.0000 PSDS2=0.0000 CBF1=0.000")

    def test_missing_threshold_files(self):
        """Тест каталога без файлов порогов"""
        (self.dir / "empty").mkdir()
        with self.assertRaises(ValidationError):
            evaluate(self.dir / "empty", self.gt, PipelineConfig())

    def write_dump(self, name: str, value: float) -> Path:
        preds = [FramePredictions(np.full((6, 10), value, np.float32), np.full(10, value, np.float32), 0.064, clip)
                 for clip in ("a", "b")]
        path = self.dir / f"{name}.sedp"
        save_predictions(preds, path)
        return path

    def test_ensemble_average(self):
        """Тест усреднения двух дампов"""
        paths = [self.write_dump("m1", 0.2), self.write_dump("m2", 0.6)]
        out = ensemble(paths, self.dir / "ens.sedp")
        for p in load_predictions(out):
            np.testing.assert_allclose(p.strong, 0.4, rtol=1e-6)

    def test_ensemble_ranking(self):
        """Тест отбора лучших моделей по таблице рейтинга"""
        paths = [self.write_dump("m1", 0.2), self.write_dump("m2", 0.6), self.write_dump("m3", 1.0)]
        ranking = self.dir / "ranking.tsv"
        pd.DataFrame({"name": ["m1", "m2", "m3"], "psds1": [0.3, 0.5, 0.4], "psds2": [0.9, 0.1, 0.2]}).to_csv(
            ranking, sep="\t", index=False
        )
        out = ensemble(paths, self.dir / "top2.sedp", ranking, "psds1", 2)
        np.testing.assert_allclose(load_predictions(out)[0].strong, 0.8, rtol=1e-6)
        out = ensemble(paths, self.dir / "best.sedp", ranking, "psds2", 1)
        np.testing.assert_allclose(load_predictions(out)[0].strong, 0.2, rtol=1e-6)

    def test_ensemble_missing_dump(self):
        """Тест модели из рейтинга без дампа: результат не создается"""
        paths = [self.write_dump("m1", 0.2)]
        ranking = self.dir / "ranking.tsv"
        pd.DataFrame({"name": ["m9"], "psds1": [0.5], "psds2": [0.5]}).to_csv(ranking, sep="\t", index=False)
        with self.assertRaises(ValidationError):
            ensemble(paths, self.dir / "ens.sedp", ranking)
        self.assertFalse((self.dir / "ens.sedp").exists())


class TestPartialOutputs(unittest.TestCase):
    """Тесты удаления частичных результатов"""

    def test_removed_on_error(self):
        """Тест удаления созданных файлов при исключении"""
        with tempfile.TemporaryDirectory() as tmp:
            first = Path(tmp) / "first.tsv"
            with self.assertRaises(DuplicateNameError):
                with PartialOutputs() as outputs:
                    outputs.add(first).write_text("x", encoding="utf-8")
                    p = FramePredictions(np.zeros((2, 10), np.float32), np.zeros(10, np.float32), 0.064, "x")
                    save_predictions([p, p], outputs.add(Path(tmp) / "dup.sedp"))
            self.assertEqual(list(Path(tmp).iterdir()), [])

    def test_kept_on_success(self):
        """Тест сохранения файлов при успешном завершении"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ok.tsv"
            with PartialOutputs() as outputs:
                outputs.add(path).write_text("x", encoding="utf-8")
            self.assertTrue(path.exists())


class TestGradcheckService(unittest.TestCase):
    """Тесты операции gradcheck"""

    def test_few_trials(self):
        """Тест нескольких проверок градиентов"""
        reports = gradcheck(trials=2, seed=1)
        self.assertEqual(len(reports), 2)
        self.assertTrue(all(r.passed for r in reports))


if __name__ == '__main__':
    unittest.main()
