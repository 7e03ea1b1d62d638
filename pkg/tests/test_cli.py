import csv
import json

import pytest

from robustbank.cli import main, sha256_file
from robustbank.featurebank import read_bank


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture
def synth_args(tmp_path):
    out = tmp_path / "bank.fbank"
    return out, [
        "synth",
        "--scans-per-class", 10,
        "--slices", 5,
        "--dim", 16,
        "--sep", 4,
        "--sigma", 1,
        "--seed", 7,
        "--out", out,
    ]


class TestSynth:
    def test_record_counts(self, synth_args):
        out, argv = synth_args
        assert run(argv) == 0
        bank = read_bank(out)
        assert len(bank) == 100
        assert bank.feature_dim == 16

    def test_missing_out_usage_error(self, synth_args):
        _, argv = synth_args
        argv = argv[: argv.index("--out")]
        with pytest.raises(SystemExit) as exc:
            run(argv)
        assert exc.value.code == 2

    def test_same_args_identical_digests(self, tmp_path, synth_args):
        out, argv = synth_args
        assert run(argv) == 0
        first = sha256_file(out)
        assert run(argv) == 0
        assert sha256_file(out) == first

    def test_run_manifest_written(self, synth_args):
        out, argv = synth_args
        assert run(argv) == 0
        manifest = json.loads((out.parent / (out.name + ".run.json")).read_text())
        assert manifest["command"] == "synth"
        assert manifest["seed"] == 7
        assert str(out) in manifest["outputs"]


class TestTrainEval:
    @pytest.fixture
    def trained(self, tmp_path, synth_args):
        out, argv = synth_args
        run(argv)
        model = tmp_path / "m.mlpmodel"
        code = run(
            ["train", "--bank", out, "--alpha", 0.5, "--gamma", 0.05,
             "--lr", 1e-3, "--batch", 32, "--epochs", 10, "--seed", 1,
             "--out", model]
        )
        assert code == 0
        return out, model

    def test_train_outputs(self, trained):
        bank, model = trained
        assert model.exists()
        history = model.parent / (model.name + ".history.jsonl")
        assert len(history.read_text().strip().splitlines()) == 10

    def test_train_invalid_alpha_exit_2(self, trained):
        bank, model = trained
        with pytest.raises(SystemExit) as exc:
            run(["train", "--bank", bank, "--alpha", 1.5, "--out", model])
        assert exc.value.code == 2

    def test_train_determinism(self, tmp_path, trained):
        bank, model = trained
        other = tmp_path / "other.mlpmodel"
        run(
            ["train", "--bank", bank, "--alpha", 0.5, "--gamma", 0.05,
             "--lr", 1e-3, "--batch", 32, "--epochs", 10, "--seed", 1,
             "--out", other]
        )
        assert model.read_bytes() == other.read_bytes()

    def test_eval_report_schema(self, tmp_path, trained):
        bank, model = trained
        manifest = bank.parent / (bank.name + ".manifest.csv")
        report_path = tmp_path / "report.json"
        code = run(
            ["eval", "--model", model, "--bank", bank,
             "--manifest", manifest, "--out", report_path]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert "slice" in report and "scan" in report
        assert report["scan"]["macro_f1"] >= 0.5

    def test_eval_missing_manifest_exit_1(self, tmp_path, trained):
        bank, model = trained
        assert run(
            ["eval", "--model", model, "--bank", bank,
             "--manifest", tmp_path / "nope.csv", "--out", tmp_path / "r.json"]
        ) == 1

    def test_train_missing_bank_exit_1(self, tmp_path):
        assert run(
            ["train", "--bank", tmp_path / "missing.fbank",
             "--out", tmp_path / "m.mlpmodel"]
        ) == 1


class TestPseudoLabelDistill:
    def test_pseudo_label_counts(self, tmp_path, synth_args):
        out, argv = synth_args
        run(argv)
        model = tmp_path / "m.mlpmodel"
        run(["train", "--bank", out, "--epochs", 3, "--out", model])
        # build an unlabeled bank by stripping labels
        import numpy as np
        from robustbank.featurebank import FeatureBank, write_bank

        bank = read_bank(out)
        unlabeled_path = tmp_path / "u.fbank"
        write_bank(
            FeatureBank(bank.feature_dim, bank.scan_ids, bank.features, None),
            unlabeled_path,
        )
        labeled_path = tmp_path / "pl.fbank"
        code = run(
            ["pseudo-label", "--model", model, "--bank", unlabeled_path,
             "--out", labeled_path]
        )
        assert code == 0
        labeled = read_bank(labeled_path)
        assert len(labeled) == 100
        assert labeled.labeled
        stats = json.loads((tmp_path / "pl.fbank.stats.json").read_text())
        assert stats["total_unlabeled"] == 100
        assert stats["discarded_low_confidence"] == 0

    def test_distill_outputs(self, tmp_path, synth_args):
        out, argv = synth_args
        run(argv)
        import numpy as np
        from robustbank.featurebank import FeatureBank, write_bank

        bank = read_bank(out)
        unlabeled_path = tmp_path / "u.fbank"
        write_bank(
            FeatureBank(bank.feature_dim, bank.scan_ids, bank.features, None),
            unlabeled_path,
        )
        teacher = tmp_path / "teacher.mlpmodel"
        student = tmp_path / "student.mlpmodel"
        code = run(
            ["distill", "--labeled", out, "--unlabeled", unlabeled_path,
             "--teacher-out", teacher, "--student-out", student,
             "--epochs", 2, "--seed", 3]
        )
        assert code == 0
        assert teacher.exists() and student.exists()
        report = json.loads((tmp_path / "student.mlpmodel.distill.json").read_text())
        assert report["student_set_size"] == 200


class TestSweepAndSurface:
    def test_sweep_alpha_rows(self, tmp_path, synth_args):
        out, argv = synth_args
        run(argv)
        manifest = out.parent / (out.name + ".manifest.csv")
        csv_path = tmp_path / "sweep.csv"
        code = run(
            ["sweep-alpha", "--train-bank", out, "--test-bank", out,
             "--manifest", manifest, "--out", csv_path,
             "--alphas", 0.3, 0.6, 0.9, "--epochs", 2, "--seed", 5]
        )
        assert code == 0
        with open(csv_path) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 3
        assert [float(r["alpha"]) for r in rows] == [0.3, 0.6, 0.9]

    def test_loss_surface_rows(self, tmp_path, synth_args):
        out, argv = synth_args
        run(argv)
        model = tmp_path / "m.mlpmodel"
        run(["train", "--bank", out, "--epochs", 2, "--out", model])
        csv_path = tmp_path / "surface.csv"
        code = run(
            ["loss-surface", "--model", model, "--bank", out,
             "--grid-points", 5, "--out", csv_path]
        )
        assert code == 0
        with open(csv_path) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 25
