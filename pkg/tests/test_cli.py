import json

import pytest
from click.testing import CliRunner

from camprompt.cli import main


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    """demo-data -> train -> run, all through the CLI."""
    base = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    data = base / "data"
    result = runner.invoke(main, ["demo-data", "--out", str(data), "--train", "12",
                                  "--test", "4", "--size", "64", "--seed", "2"])
    assert result.exit_code == 0, result.output

    config = base / "train.json"
    config.write_text(json.dumps({
        "classifier": {"num_classes": 4, "input_resolution": 64, "epochs": 1,
                       "warmup_epochs": 0, "base_lr": 1e-3, "batch_size": 8},
        "backbone": "tiny",
        "backbone_kwargs": {"embed_dim": 32, "depth": 1, "num_heads": 2,
                            "patch_size": 8, "window": 4},
        "seed": 1,
    }))
    model_dir = base / "model"
    result = runner.invoke(main, ["train", "--data", str(data), "--config",
                                  str(config), "--out", str(model_dir)])
    assert result.exit_code == 0, result.output
    assert (model_dir / "weights.pt").exists()

    runs = base / "runs"
    result = runner.invoke(main, [
        "run", "--data", str(data), "--split", "test", "--model", str(model_dir),
        "--out", str(runs), "--mode", "auto-eval", "--input", "original",
        "--masks", "multi", "-k", "3", "--backend", "flood",
    ])
    assert result.exit_code == 0, result.output
    run_dirs = [p for p in runs.iterdir() if p.is_dir()]
    assert len(run_dirs) == 1
    return runner, data, model_dir, run_dirs[0]


def test_ingest_report(cli_env, tmp_path):
    runner, data, _, _ = cli_env
    out = tmp_path / "ingest.json"
    result = runner.invoke(main, ["ingest", "--data", str(data), "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert report["splits"]["train"]["n_images"] == 12
    assert report["splits"]["test"]["n_images"] == 4


def test_run_artifacts_exist(cli_env):
    _, _, _, run_dir = cli_env
    assert (run_dir / "manifest.json").exists()
    assert (run_dir / "run_meta.json").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["mode"] == "auto-eval"
    assert manifest["segmenter_config"]["mask_strategy"] == "multi"


def test_report_command_renders_figures(cli_env):
    runner, _, _, run_dir = cli_env
    result = runner.invoke(main, ["report", "--run", str(run_dir), "--figures", "2"])
    assert result.exit_code == 0, result.output
    assert (run_dir / "figures" / "iou_per_class.png").exists() or \
        "no metrics report" in result.output


def test_run_review_mode(cli_env, tmp_path):
    runner, data, model_dir, _ = cli_env
    runs = tmp_path / "review_runs"
    result = runner.invoke(main, [
        "run", "--data", str(data), "--split", "test", "--model", str(model_dir),
        "--out", str(runs), "--mode", "review", "--masks", "multi",
    ])
    assert result.exit_code == 0, result.output
    run_dir = next(p for p in runs.iterdir() if p.is_dir())
    assert not (run_dir / "report.json").exists()
    assert (run_dir / "proposals").is_dir()
