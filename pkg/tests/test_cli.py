"""End-to-end tests of the command-line interface (all in-process)."""

import os

import numpy as np
import pytest

from vlcalib import parse_report_csv, read_matrix, write_matrix
from vlcalib.bench import SynthConfig, synth_views
from vlcalib.cli import main
from vlcalib.metrics import RELIABILITY_HEADER, parse_reliability_csv


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    """Small synthetic benchmark shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli-data")
    rc = main(
        [
            "synth-gen",
            "--out", str(root),
            "--test-n", "60",
            "--shots", "4",
            "--seed", "0",
        ]
    )
    assert rc == 0
    return root


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestSynthGen:
    def test_writes_expected_files(self, data_dir):
        for name in (
            "source_features.vlf", "source_labels.vll",
            "target_features.vlf", "target_labels.vll",
            "support_features.vlf", "support_labels.vll",
            "prototypes.vlf", "meta.txt",
        ):
            assert (data_dir / name).exists(), name

    def test_is_deterministic(self, data_dir, tmp_path):
        rc = run_cli("synth-gen", "--out", tmp_path, "--test-n", 60,
                     "--shots", 4, "--seed", 0)
        assert rc == 0
        a = (data_dir / "source_features.vlf").read_bytes()
        b = (tmp_path / "source_features.vlf").read_bytes()
        assert a == b


class TestZeroshot:
    def test_report_csv(self, data_dir, tmp_path):
        report = tmp_path / "report.csv"
        rc = run_cli(
            "zeroshot",
            "--features", data_dir / "target_features.vlf",
            "--labels", data_dir / "target_labels.vll",
            "--prototypes", data_dir / "prototypes.vlf",
            "--temperature", 0.1,
            "--dataset-label", "target",
            "--report", report,
        )
        assert rc == 0
        rows = parse_report_csv(report.read_text())
        assert len(rows) == 1
        assert rows[0].method == "zeroshot"
        assert rows[0].dataset == "target"
        assert rows[0].n == 60
        assert 0.0 <= rows[0].ece <= 1.0

    def test_prompts_manifest_matches_prototype_file(self, data_dir, tmp_path):
        proto = read_matrix(data_dir / "prototypes.vlf")
        for k in range(proto.shape[0]):
            write_matrix(tmp_path / f"class{k}.vlf", np.tile(proto[k], (2, 1)))
        manifest = tmp_path / "prompts.txt"
        manifest.write_text(
            "".join(f"class{k}.vlf\n" for k in range(proto.shape[0]))
        )
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        common = [
            "--features", data_dir / "source_features.vlf",
            "--labels", data_dir / "source_labels.vll",
            "--temperature", 0.1,
        ]
        assert run_cli("zeroshot", *common, "--prototypes",
                       data_dir / "prototypes.vlf", "--report", out_a) == 0
        assert run_cli("zeroshot", *common, "--prompts-manifest", manifest,
                       "--report", out_b) == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_sals_flag_keeps_accuracy(self, data_dir, tmp_path):
        out_plain = tmp_path / "plain.csv"
        out_sals = tmp_path / "sals.csv"
        common = [
            "--features", data_dir / "target_features.vlf",
            "--labels", data_dir / "target_labels.vll",
            "--prototypes", data_dir / "prototypes.vlf",
            "--temperature", 0.1,
        ]
        assert run_cli("zeroshot", *common, "--report", out_plain) == 0
        assert run_cli("zeroshot", *common, "--sals", "--range-factor", 0.5,
                       "--report", out_sals) == 0
        plain = parse_report_csv(out_plain.read_text())[0]
        rescaled = parse_report_csv(out_sals.read_text())[0]
        assert plain.acc == rescaled.acc
        assert rescaled.calib == "sals"
        assert rescaled.mean_logit_range < plain.mean_logit_range

    def test_reliability_output(self, data_dir, tmp_path):
        rel = tmp_path / "rel.csv"
        rc = run_cli(
            "zeroshot",
            "--features", data_dir / "source_features.vlf",
            "--labels", data_dir / "source_labels.vll",
            "--prototypes", data_dir / "prototypes.vlf",
            "--temperature", 0.1,
            "--report", tmp_path / "r.csv",
            "--reliability", rel,
            "--bins", 10,
        )
        assert rc == 0
        table = parse_reliability_csv(rel.read_text())
        assert len(table) == 10
        assert sum(b.count for b in table) == 60


@pytest.fixture(scope="module")
def adapter_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("adapter") / "lp"
    rc = main(
        [
            "train-adapter",
            "--method", "lp",
            "--features", str(data_dir / "support_features.vlf"),
            "--labels", str(data_dir / "support_labels.vll"),
            "--prototypes", str(data_dir / "prototypes.vlf"),
            "--temperature", "0.1",
            "--epochs", "40",
            "--out", str(out),
        ]
    )
    assert rc == 0
    return out


class TestAdapterCommands:
    def test_train_writes_adapter_directory(self, adapter_dir):
        assert (adapter_dir / "manifest.txt").exists()
        assert (adapter_dir / "prototypes.vlf").exists()
        assert (adapter_dir / "weights.vlf").exists()

    def test_eval_and_sals_agree_on_accuracy(self, data_dir, adapter_dir, tmp_path):
        out_eval = tmp_path / "eval.csv"
        out_sals = tmp_path / "sals.csv"
        common = [
            "--params", adapter_dir,
            "--features", data_dir / "target_features.vlf",
            "--labels", data_dir / "target_labels.vll",
        ]
        assert run_cli("eval", *common, "--report", out_eval) == 0
        assert run_cli("sals", *common, "--report", out_sals) == 0
        a = parse_report_csv(out_eval.read_text())[0]
        b = parse_report_csv(out_sals.read_text())[0]
        assert a.method == "lp" and b.method == "lp"
        assert a.calib == "none" and b.calib == "sals"
        assert a.acc == b.acc

    def test_eval_sals_flag_matches_sals_command(self, data_dir, adapter_dir, tmp_path):
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        common = [
            "--params", adapter_dir,
            "--features", data_dir / "source_features.vlf",
            "--labels", data_dir / "source_labels.vll",
        ]
        assert run_cli("eval", *common, "--sals", "--report", out_a) == 0
        assert run_cli("sals", *common, "--report", out_b) == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_logit_stats_prints_parsable_lines(self, data_dir, adapter_dir, capsys, tmp_path):
        per_sample = tmp_path / "per.csv"
        rc = run_cli(
            "logit-stats",
            "--params", adapter_dir,
            "--features", data_dir / "target_features.vlf",
            "--labels", data_dir / "target_labels.vll",
            "--per-sample", per_sample,
        )
        assert rc == 0
        out = capsys.readouterr().out
        values = dict(line.split("=") for line in out.strip().splitlines())
        assert float(values["mean_logit_norm"]) > 0
        assert float(values["mean_logit_range"]) > 0
        lines = per_sample.read_text().splitlines()
        assert lines[0] == "index,logit_norm,logit_range"
        assert len(lines) == 61

    def test_reliability_command(self, data_dir, adapter_dir, tmp_path, capsys):
        out = tmp_path / "rel.csv"
        rc = run_cli(
            "reliability",
            "--params", adapter_dir,
            "--features", data_dir / "target_features.vlf",
            "--labels", data_dir / "target_labels.vll",
            "--out", out,
        )
        assert rc == 0
        assert out.read_text().splitlines()[0] == RELIABILITY_HEADER
        summary = capsys.readouterr().out
        assert summary.startswith("acc=")


class TestTta:
    def test_tta_command(self, data_dir, tmp_path, capsys):
        feats = read_matrix(data_dir / "target_features.vlf")[:6]
        labels_path = tmp_path / "labels.vll"
        from vlcalib import read_labels, write_labels

        write_labels(labels_path, read_labels(data_dir / "target_labels.vll")[:6])
        feats_path = tmp_path / "feats.vlf"
        write_matrix(feats_path, feats)
        cfg = SynthConfig(test_n=60, shots=4, tta_views=8)
        lines = []
        for i, batch in enumerate(synth_views(cfg, feats)):
            name = f"views{i}.vlf"
            write_matrix(tmp_path / name, batch)
            lines.append(name)
        manifest = tmp_path / "views.txt"
        manifest.write_text("".join(f"{l}\n" for l in lines))
        rc = run_cli(
            "tta",
            "--features", feats_path,
            "--labels", labels_path,
            "--prototypes", data_dir / "prototypes.vlf",
            "--temperature", 0.1,
            "--views-manifest", manifest,
            "--calib", "sals",
        )
        assert rc == 0
        out = capsys.readouterr().out
        rows = parse_report_csv(out)
        assert rows[0].method == "tta"
        assert rows[0].n == 6

    def test_view_count_mismatch_fails(self, data_dir, tmp_path):
        manifest = tmp_path / "views.txt"
        batch = tmp_path / "views0.vlf"
        write_matrix(batch, np.eye(8))
        manifest.write_text("views0.vlf\n")
        rc = run_cli(
            "tta",
            "--features", data_dir / "target_features.vlf",
            "--labels", data_dir / "target_labels.vll",
            "--prototypes", data_dir / "prototypes.vlf",
            "--views-manifest", manifest,
        )
        assert rc == 2


class TestRun:
    BASE = ["run", "--set", "synth.test_n=80", "--set", "synth.shots=6",
            "--set", "train.epochs=30"]

    def test_stdout_report(self, capsys):
        rc = main(self.BASE + ["--method", "zeroshot"])
        assert rc == 0
        rows = parse_report_csv(capsys.readouterr().out)
        assert [r.dataset for r in rows] == ["source", "target"]

    def test_spec_file_plus_overrides(self, tmp_path, capsys):
        spec = tmp_path / "exp.spec"
        spec.write_text("method=lp\nsynth.test_n=80\nsynth.shots=6\ntrain.epochs=30\n")
        report = tmp_path / "report.csv"
        rc = main(["run", "--spec", str(spec), "--calib", "sals",
                   "--range-factor", "0.5", "--report", str(report)])
        assert rc == 0
        rows = parse_report_csv(report.read_text())
        assert all(r.method == "lp" and r.calib == "sals" for r in rows)

    def test_plot_data_directory(self, tmp_path):
        plot = tmp_path / "plots"
        rc = main(self.BASE + ["--method", "zeroshot", "--report",
                               str(tmp_path / "r.csv"), "--plot-data", str(plot)])
        assert rc == 0
        names = sorted(os.listdir(plot))
        assert names == [
            "zeroshot_none_source_reliability.csv",
            "zeroshot_none_target_reliability.csv",
        ]

    def test_golden_bless_then_match_then_mismatch(self, tmp_path, capsys):
        golden = tmp_path / "golden.csv"
        argv = self.BASE + ["--method", "zeroshot", "--report",
                            str(tmp_path / "r.csv"), "--golden", str(golden)]
        assert main(argv + ["--bless"]) == 0
        assert golden.exists()
        assert main(argv) == 0
        golden.write_text(golden.read_text().replace("zeroshot", "zeroshot2"))
        assert main(argv) == 3
        assert "golden mismatch" in capsys.readouterr().err

    def test_bad_combination_exits_2(self, capsys):
        rc = main(["run", "--method", "zeroshot", "--calib", "penalty"])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_bad_set_key_exits_2(self, capsys):
        rc = main(["run", "--set", "synth.banana=1"])
        assert rc == 2

    def test_missing_file_exits_2(self, tmp_path, capsys):
        rc = run_cli(
            "zeroshot",
            "--features", tmp_path / "absent.vlf",
            "--labels", tmp_path / "absent.vll",
            "--prototypes", tmp_path / "absent-protos.vlf",
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err
