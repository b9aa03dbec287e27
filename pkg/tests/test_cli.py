import csv
import json

import pytest

from iaakit.cli import main


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """A complete synth -> iaa -> split pipeline in one directory."""
    out = tmp_path_factory.mktemp("pipeline")
    assert main(["synth", "--out", str(out), "--n", "48", "--seed", "3", "--side", "24"]) == 0
    assert main(["iaa", "--manifest", str(out / "manifest.json"), "--out", str(out),
                 "--grid", "24"]) == 0
    assert main(["split", "--manifest", str(out / "manifest.json"),
                 "--iaa", str(out / "iaa.json"), "--out", str(out), "--seed", "4"]) == 0
    return out


class TestPipeline:
    def test_synth_outputs_exist(self, pipeline_dir):
        manifest = json.loads((pipeline_dir / "manifest.json").read_text())
        assert len(manifest) == 48
        for entry in manifest[:3]:
            assert (pipeline_dir / entry["image_path"]).exists()
            for m in entry["masks"]:
                assert (pipeline_dir / m["mask_path"]).exists()

    def test_iaa_outputs(self, pipeline_dir):
        iaa = json.loads((pipeline_dir / "iaa.json").read_text())
        assert len(iaa) == 48
        for entry in iaa.values():
            assert 0.0 <= entry["iaa"] <= 1.0
            assert entry["pair_count"] >= 1
        with open(pipeline_dir / "pairs.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert sum(e["pair_count"] for e in iaa.values()) == len(rows)
        assert list(rows[0]) == ["image_id", "idx_a", "idx_b", "dice", "hausdorff", "flags"]

    def test_iaa_rerun_bit_identical(self, pipeline_dir, tmp_path):
        again = tmp_path / "again"
        assert main(["iaa", "--manifest", str(pipeline_dir / "manifest.json"),
                     "--out", str(again), "--grid", "24"]) == 0
        assert (again / "pairs.csv").read_bytes() == (pipeline_dir / "pairs.csv").read_bytes()
        assert (again / "iaa.json").read_bytes() == (pipeline_dir / "iaa.json").read_bytes()

    def test_stats_report(self, pipeline_dir, capsys):
        assert main(["stats", "--manifest", str(pipeline_dir / "manifest.json"),
                     "--iaa", str(pipeline_dir / "iaa.json"), "--out", str(pipeline_dir),
                     "--seed", "5", "--iterations", "300"]) == 0
        captured = capsys.readouterr().out
        assert "fail to reject" in captured or "reject" in captured
        report = json.loads((pipeline_dir / "stats.json").read_text())
        tests = {t["test"] for t in report["tests"]}
        assert tests == {"mann-whitney", "cohens-d", "fosd"}
        fosd = [t for t in report["tests"] if t["test"] == "fosd"]
        assert {t["hypothesis"] for t in fosd} == {
            "benign-dominates-malignant",
            "malignant-dominates-benign",
        }
        for t in report["tests"]:
            if "p_value" in t and t["p_value"] is not None:
                assert 0.0 <= t["p_value"] <= 1.0

    def test_split_partition(self, pipeline_dir):
        with open(pipeline_dir / "splits.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 48
        assert len({r["image_id"] for r in rows}) == 48
        assert {r["fold"] for r in rows} <= {"train", "valid", "test"}

    def test_table_outputs(self, pipeline_dir):
        assert main(["table", "--manifest", str(pipeline_dir / "manifest.json"),
                     "--pairs", str(pipeline_dir / "pairs.csv"),
                     "--out", str(pipeline_dir)]) == 0
        rows = json.loads((pipeline_dir / "factor_table.json").read_text())
        assert len(rows) == 3 * 2 * 3  # factor x relation x malignancy slice
        with open(pipeline_dir / "factor_table.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header[:4] == ["factor", "relation", "malignancy", "n_pairs"]

    def test_train_eval_round_trip(self, pipeline_dir, capsys):
        args = ["train", "--manifest", str(pipeline_dir / "manifest.json"),
                "--splits", str(pipeline_dir / "splits.csv"),
                "--iaa", str(pipeline_dir / "iaa.json"),
                "--model", "mt", "--alpha", "0.9", "--epochs", "2", "--seed", "6",
                "--out", str(pipeline_dir), "--widths", "4", "8", "--head-hidden", "8",
                "--batch-size", "16"]
        assert main(args) == 0
        assert (pipeline_dir / "checkpoint.json").exists()
        with open(pipeline_dir / "epochs.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert list(rows[0]) == ["epoch", "train_loss", "val_mae",
                                 "val_balanced_accuracy", "lr"]
        assert main(["eval", "--checkpoint", str(pipeline_dir / "checkpoint.json"),
                     "--manifest", str(pipeline_dir / "manifest.json"),
                     "--splits", str(pipeline_dir / "splits.csv"),
                     "--iaa", str(pipeline_dir / "iaa.json"),
                     "--fold", "test", "--out", str(pipeline_dir)]) == 0
        report = json.loads((pipeline_dir / "eval_test.json").read_text())
        assert report["fold"] == "test" and report["n"] >= 1
        assert "balanced_accuracy" in report and "mae" in report

    def test_model_alias_equivalence(self, pipeline_dir, tmp_path):
        common = ["--manifest", str(pipeline_dir / "manifest.json"),
                  "--splits", str(pipeline_dir / "splits.csv"),
                  "--epochs", "1", "--seed", "8", "--widths", "4", "8",
                  "--head-hidden", "8", "--batch-size", "16"]
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--model", "m2", "--out", str(a_dir), *common]) == 0
        assert main(["train", "--model", "diagnosis", "--out", str(b_dir), *common]) == 0
        assert (a_dir / "epochs.csv").read_bytes() == (b_dir / "epochs.csv").read_bytes()
        assert (a_dir / "checkpoint.json").read_bytes() == (b_dir / "checkpoint.json").read_bytes()


class TestErrorsAndWarnings:
    def test_missing_manifest_fails(self, tmp_path, capsys):
        code = main(["iaa", "--manifest", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_single_mask_image_warns_but_succeeds(self, tmp_path, capsys):
        from iaakit.learn import synth_generate, write_synth_dataset

        ds = synth_generate(20, seed=9, side=16)
        manifest_path = write_synth_dataset(ds, tmp_path)
        manifest = json.loads(manifest_path.read_text())
        manifest[0]["masks"] = manifest[0]["masks"][:1]
        manifest_path.write_text(json.dumps(manifest))
        code = main(["iaa", "--manifest", str(manifest_path), "--out", str(tmp_path),
                     "--grid", "16"])
        assert code == 0
        captured = capsys.readouterr()
        assert "fewer than 2 masks" in captured.err
        assert "1 warnings" in captured.out
        iaa = json.loads((tmp_path / "iaa.json").read_text())
        assert len(iaa) == 19

    def test_out_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IAAKIT_OUT", str(tmp_path / "env_out"))
        assert main(["synth", "--n", "20", "--seed", "1", "--side", "16"]) == 0
        assert (tmp_path / "env_out" / "manifest.json").exists()
