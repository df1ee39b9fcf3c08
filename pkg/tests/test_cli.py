"""Command-line surface: error taxonomy, config validation, stage wiring."""

import json

import numpy as np
import pytest

from neurotopo import cli, topomap
from neurotopo.cli import main


class TestErrorTaxonomy:
    def test_unknown_flag(self, capsys):
        assert main(["synth", "--bogus", "--out", "x"]) == 1
        assert capsys.readouterr().err.startswith("ERROR:cli:badflag:")

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert capsys.readouterr().err.startswith("ERROR:cli:badflag:")

    def test_missing_required_flag(self, capsys):
        assert main(["synth"]) == 1
        assert capsys.readouterr().err.startswith("ERROR:cli:badflag:")

    def test_version_lists_format_magics(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "NTW1" in out and "PGM P5" in out

    def test_preprocess_empty_dir(self, tmp_path, capsys):
        assert main(["preprocess", "--in", str(tmp_path / "nothing"),
                     "--out", str(tmp_path / "out")]) == 1
        assert capsys.readouterr().err.startswith("ERROR:preprocess:notrials:")


class TestConfigValidation:
    def _run(self, tmp_path, doc) -> tuple[int, str]:
        cfg = tmp_path / "cfg.json"
        cfg.write_text(doc if isinstance(doc, str) else json.dumps(doc))
        return cfg

    def test_unknown_section_rejected(self, tmp_path, capsys):
        cfg = self._run(tmp_path, {"nonsense": {}})
        assert main(["all", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 1
        assert capsys.readouterr().err.startswith("ERROR:all:badconfig:")

    def test_unknown_subkey_rejected(self, tmp_path, capsys):
        cfg = self._run(tmp_path, {"cnn": {"layers": 9}})
        assert main(["all", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 1
        assert capsys.readouterr().err.startswith("ERROR:all:badconfig:")

    def test_invalid_json_rejected(self, tmp_path, capsys):
        cfg = self._run(tmp_path, "{not json")
        assert main(["all", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 1
        assert capsys.readouterr().err.startswith("ERROR:all:badconfig:")

    def test_valid_config_accepted(self, tmp_path):
        doc = cli.load_pipeline_config(self._run(tmp_path, {
            "globalSeed": 4, "synth": {"subjects": 1}, "aae": {"epochs": 2}}))
        assert doc["globalSeed"] == 4


class TestGradcheckCommand:
    def test_table_and_exit_code(self, capsys):
        assert main(["gradcheck", "--seeds", "2"]) == 0
        out = capsys.readouterr().out
        lines = [l for l in out.strip().splitlines() if "max_rel_err=" in l]
        assert len(lines) == 10
        assert all(l.endswith("ok") for l in lines)


class TestReports:
    def test_empty_report_rejected(self, tmp_path):
        with pytest.raises(cli.CliError):
            cli.emit_report({}, tmp_path, "r")

    def test_confusion_csv_roundtrip(self):
        confusion = np.array([[10, 2], [3, 5]])
        assert np.array_equal(
            cli.csv_to_confusion(cli.confusion_to_csv(confusion)), confusion)

    def test_heatmap_diagonal(self):
        img = cli.confusion_heatmap(np.array([[10, 0], [0, 10]]), cell_px=4)
        assert img.shape == (8, 8)
        assert img[0, 0] == 255 and img[7, 7] == 255
        assert img[0, 7] == 0 and img[7, 0] == 0

    def test_emit_report_writes_all_artifacts(self, tmp_path):
        cli.emit_report({"accuracy": 1.0, "confusion": [[2, 0], [0, 2]]},
                        tmp_path, "res")
        assert (tmp_path / "res.json").exists()
        assert (tmp_path / "res_confusion.csv").exists()
        assert (tmp_path / "res_confusion.pgm").exists()


class TestExportMontage:
    def test_writes_csv(self, tmp_path):
        out = tmp_path / "montage.csv"
        assert main(["export-montage", "--out", str(out)]) == 0
        assert len(out.read_text().strip().splitlines()) == 33


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    """synth -> preprocess -> dataset on a 10-trial cohort."""
    root = tmp_path_factory.mktemp("cli_run")
    assert main(["synth", "--subjects", "1", "--trials-per-hand", "5",
                 "--seed", "13", "--out", str(root / "synth")]) == 0
    assert main(["preprocess", "--in", str(root / "synth"),
                 "--out", str(root / "pre"),
                 "--dump-filters", str(root / "filters.csv")]) == 0
    assert main(["dataset", "--in", str(root / "pre"),
                 "--out", str(root / "ds"), "--seed", "13",
                 "--no-fullres"]) == 0
    return root


class TestStageWiring:
    def test_synth_writes_trial_files(self, micro_run):
        assert len(list((micro_run / "synth").glob("trial_*.csv"))) == 10

    def test_preprocess_preserves_cohort(self, micro_run):
        assert len(list((micro_run / "pre").glob("trial_*.csv"))) == 10
        header = (micro_run / "filters.csv").read_text().splitlines()[0]
        assert header == "filter,section,b0,b1,b2,a0,a1,a2"

    def test_dataset_manifest_complete(self, micro_run):
        manifest = topomap.DatasetManifest.load(
            micro_run / "ds" / "manifest.jsonl")
        assert len(manifest.entries) == 10 * 4 * 2
        for e in manifest.entries:
            assert (micro_run / "ds" / e.path).exists()

    def test_train_and_eval_cnn(self, micro_run, tmp_path):
        manifest = str(micro_run / "ds" / "manifest.jsonl")
        model = tmp_path / "cnn.ntw"
        assert main(["train-cnn", "--manifest", manifest, "--epochs", "1",
                     "--seed", "0", "--out", str(model),
                     "--report", str(tmp_path / "train.json")]) == 0
        assert model.exists()
        assert main(["eval-cnn", "--model", str(model),
                     "--manifest", manifest,
                     "--report", str(tmp_path / "eval.json")]) == 0
        report = json.loads((tmp_path / "eval.json").read_text())
        assert 0.0 <= report["accuracy"] <= 1.0
        assert (tmp_path / "eval_confusion.csv").exists()

    def test_train_and_eval_aae(self, micro_run, tmp_path):
        manifest = str(micro_run / "ds" / "manifest.jsonl")
        model = tmp_path / "aae.ntw"
        assert main(["train-aae", "--manifest", manifest, "--epochs", "1",
                     "--seed", "0", "--out", str(model),
                     "--report", str(tmp_path / "train.json")]) == 0
        train_report = json.loads((tmp_path / "train.json").read_text())
        assert "threshold" in train_report
        assert len(train_report["history"]) == 1
        assert main(["eval-aae", "--model", str(model),
                     "--manifest", manifest,
                     "--report", str(tmp_path / "eval.json")]) == 0
        report = json.loads((tmp_path / "eval.json").read_text())
        assert 0.0 <= report["auc"] <= 1.0

    def test_failed_stage_leaves_no_partial_output(self, micro_run, tmp_path,
                                                   capsys):
        out = tmp_path / "never"
        assert main(["preprocess", "--in", str(tmp_path / "empty"),
                     "--out", str(out)]) == 1
        capsys.readouterr()
        assert not out.exists()
        assert not list(tmp_path.glob("never.partial-*"))
