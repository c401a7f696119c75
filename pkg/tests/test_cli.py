import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from src.attention.complexity import BenchRow
from src.commands.render import class_palette, difference_map, overlay, read_netpbm, write_ppm
from src.errors import FormatError
from src.main import cli
from src.metrics.labelmap import LabelMap
from src.tensor.core import get_primitive

TINY_NET = """
[net]
levels = 2
filters = [4, 8]
attention_depths = [1, 1]
heads = 2
"""

GRADCHECK_NET = """
[net]
levels = 1
filters = [4]
attention_depths = [1]
heads = 2
num_classes = 3
input_size = 4

[gradcheck]
samples = 20
"""


@pytest.fixture
def runner(no_logging_setup):
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def snapshot(directory):
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir())}


class TestGen:
    def test_writes_every_case(self, runner, tmp_path):
        out = tmp_path / "data"
        result = invoke(runner, "gen", "--cases", 16, "--size", 32, "--organs", 4, "--seed", 7, "--out", out)
        assert result.exit_code == 0, result.output
        assert len(list(out.glob("case_*_img.wtf1"))) == 16
        assert len(list(out.glob("case_*_lbl.wtf1"))) == 16
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["cases"] == 16
        assert "total" in result.output

    def test_rerun_is_byte_identical(self, runner, tmp_path):
        out = tmp_path / "data"
        args = ["gen", "--cases", 3, "--size", 24, "--organs", 4, "--seed", 7, "--out", out]
        assert invoke(runner, *args).exit_code == 0
        first = snapshot(out)
        assert invoke(runner, *args, "--force").exit_code == 0
        assert snapshot(out) == first

    def test_zero_cases_is_usage_error(self, runner, tmp_path):
        result = invoke(runner, "gen", "--cases", 0, "--out", tmp_path / "data")
        assert result.exit_code == 2

    def test_refuses_non_empty_output(self, runner, tmp_path):
        out = tmp_path / "data"
        out.mkdir()
        (out / "keep.txt").write_text("mine")
        result = invoke(runner, "gen", "--cases", 2, "--size", 24, "--out", out)
        assert result.exit_code == 2
        assert "--force" in result.output
        assert sorted(p.name for p in out.iterdir()) == ["keep.txt"]

    def test_missing_out(self, runner):
        assert invoke(runner, "gen", "--cases", 2).exit_code == 2

    def test_unknown_config_key(self, runner, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text("bogus = 1\n")
        result = invoke(runner, "gen", "--config", config, "--out", tmp_path / "data")
        assert result.exit_code == 2
        assert "bogus" in result.output

    def test_yaml_config(self, runner, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text("gen:\n  cases: 2\n  phantom:\n    size: 24\n")
        out = tmp_path / "data"
        assert invoke(runner, "gen", "--config", config, "--out", out).exit_code == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["gen"]["cases"] == 2
        assert "force" not in resolved


def test_train_eval_predict(runner, tmp_path):
    data = tmp_path / "data"
    config = tmp_path / "net.toml"
    config.write_text(TINY_NET)
    assert invoke(runner, "gen", "--cases", 6, "--size", 24, "--organs", 4, "--seed", 1, "--out", data).exit_code == 0

    result = invoke(runner, "train", "--config", config, "--data", data, "--steps", 2, "--out", tmp_path / "run")
    assert result.exit_code == 0, result.output
    checkpoint = tmp_path / "run" / "checkpoint"
    assert (checkpoint / "manifest.json").is_file()
    resolved = json.loads((tmp_path / "run" / "resolved_config.json").read_text())
    assert resolved["net"]["num_classes"] == 5
    assert resolved["net"]["input_size"] == 24

    result = invoke(runner, "eval", "--data", data, "--checkpoint", checkpoint, "--split", "all", "--out", tmp_path / "eval")
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "eval" / "metrics.csv")
    assert len(frame) == 4
    assert list(frame["class"]) == ["mandible", "brain_stem", "parotid", "chiasm"]

    result = invoke(
        runner, "predict", "--data", data, "--checkpoint", checkpoint, "--case", 0, "--format", "ppm", "--out", tmp_path / "pred"
    )
    assert result.exit_code == 0, result.output
    pred = tmp_path / "pred"
    for name in ("case_0000_pred.wtf1", "case_0000_input.pgm", "case_0000_overlay.ppm", "case_0000_diff.ppm"):
        assert (pred / name).is_file()
    assert read_netpbm(pred / "case_0000_diff.ppm").shape == (24, 24, 3)
    assert read_netpbm(pred / "case_0000_input.pgm").shape == (24, 24)


def test_train_with_mismatched_class_count(runner, tmp_path):
    data = tmp_path / "data"
    config = tmp_path / "net.toml"
    config.write_text(TINY_NET + "num_classes = 3\n")
    invoke(runner, "gen", "--cases", 3, "--size", 24, "--organs", 4, "--out", data)
    result = invoke(runner, "train", "--config", config, "--data", data, "--steps", 1, "--out", tmp_path / "run")
    assert result.exit_code == 2


def test_missing_checkpoint_exits_one(runner, tmp_path):
    data = tmp_path / "data"
    invoke(runner, "gen", "--cases", 3, "--size", 24, "--organs", 4, "--out", data)
    result = invoke(runner, "eval", "--data", data, "--checkpoint", tmp_path / "nowhere", "--out", tmp_path / "eval")
    assert result.exit_code == 1
    assert "manifest" in result.output


class TestGradcheck:
    def test_passes(self, runner, tmp_path):
        config = tmp_path / "net.toml"
        config.write_text(GRADCHECK_NET)
        result = invoke(runner, "gradcheck", "--config", config, "--out", tmp_path / "gc")
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "gc" / "gradcheck.json").read_text())
        assert report["passed"]
        assert report["network"]["results"]["waunet"]["n_sampled"] > 0

    def test_sign_bug_fails_with_offender(self, runner, tmp_path, mocker):
        relu = get_primitive("relu")
        original = relu.backward

        def flipped(grad, saved, needs):
            return tuple(None if g is None else -g for g in original(grad, saved, needs))

        mocker.patch.object(relu, "backward", side_effect=flipped)
        config = tmp_path / "net.toml"
        config.write_text(GRADCHECK_NET)
        result = invoke(runner, "gradcheck", "--config", config, "--out", tmp_path / "gc")
        assert result.exit_code == 1
        report = json.loads((tmp_path / "gc" / "gradcheck.json").read_text())
        assert not report["passed"]
        assert "primitives/relu: x" in report["offenders"]


def test_bench(runner, tmp_path):
    out = tmp_path / "bench"
    result = invoke(
        runner, "bench", "--size", 8, "--size", 16, "--size", 32, "--full-max-size", 16,
        "--channels", 4, "--repeats", 1, "--no-enforce-slopes", "--out", out,
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out / "bench.csv")
    assert len(frame) == 5
    assert (frame["macs_formula"] == frame["macs_measured"]).all()
    summary = json.loads((out / "bench_summary.json").read_text())
    assert summary["full_over_axial_flops"]["32"] == 16
    assert summary["slopes"]["axial"]["macs_slope"] == pytest.approx(1.5)
    assert set(summary["slopes"]["axial"]) >= {"time_slope", "within_tolerance"}


def _timed_rows(mode, exponent, sizes):
    return [
        BenchRow(mode, size, size * size, macs_formula=1, macs_measured=1, seconds=1e-6 * (size * size) ** exponent)
        for size in sizes
    ]


def test_bench_fails_on_slope_outside_tolerance(runner, tmp_path, mocker):
    rows = _timed_rows("axial", 0.9, [8, 16, 32]) + _timed_rows("full", 2.0, [8, 16])
    mocker.patch("src.commands.check_commands.run_attention_bench", return_value=rows)
    out = tmp_path / "bench"
    result = invoke(runner, "bench", "--size", 8, "--size", 16, "--size", 32, "--full-max-size", 16, "--out", out)
    assert result.exit_code == 1
    assert "axial time slope 0.90" in result.output
    slopes = json.loads((out / "bench_summary.json").read_text())["slopes"]
    assert slopes["axial"]["within_tolerance"] is False
    assert slopes["full"]["within_tolerance"] is True


def test_bench_passes_on_expected_slopes(runner, tmp_path, mocker):
    rows = _timed_rows("axial", 1.55, [8, 16, 32]) + _timed_rows("full", 1.9, [8, 16])
    mocker.patch("src.commands.check_commands.run_attention_bench", return_value=rows)
    result = invoke(runner, "bench", "--out", tmp_path / "bench")
    assert result.exit_code == 0, result.output


class TestRender:
    def test_perfect_prediction_is_black_on_foreground(self, rng):
        truth = LabelMap(rng.integers(0, 4, size=(6, 6)), num_classes=4)
        diff = difference_map(truth, truth)
        assert not diff[truth.classes != 0].any()
        assert (diff[truth.classes == 0] == 255).all()

    def test_disagreement_uses_class_color(self):
        truth = LabelMap(np.array([[0, 2]]), num_classes=3)
        pred = LabelMap(np.array([[1, 0]]), num_classes=3)
        diff = difference_map(truth, pred)
        palette = class_palette(3)
        np.testing.assert_array_equal(diff[0, 0], palette[1])
        np.testing.assert_array_equal(diff[0, 1], palette[2])

    def test_overlay_marks_boundaries(self):
        labels = np.zeros((5, 5), dtype=int)
        labels[1:4, 1:4] = 1
        rgb = overlay(np.full((5, 5), 0.5), LabelMap(labels), LabelMap(np.zeros((5, 5), dtype=int)))
        np.testing.assert_array_equal(rgb[1, 1], [0, 200, 0])
        np.testing.assert_array_equal(rgb[2, 2], [128, 128, 128])

    def test_ppm_round_trip(self, rng, tmp_path):
        rgb = rng.integers(0, 256, size=(4, 7, 3), dtype=np.uint8)
        write_ppm(tmp_path / "x.ppm", rgb)
        np.testing.assert_array_equal(read_netpbm(tmp_path / "x.ppm"), rgb)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P3\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(FormatError):
            read_netpbm(path)
