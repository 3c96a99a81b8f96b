import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import small_spec
from core.config import PipelineConfig
from core.errors import InputError
from core.scene_io import read_depth_map, read_ply, save_scene
from stages.cli import main
from stages.fusion.synthetic import SyntheticSceneSpec, save_synthetic_scene, synth_scene
from stages.pipeline.pipeline import ABLATION_ROWS, REPORT_COLUMNS, markdown_table, row_config, run_ablation, run_pipeline
from stages.pipeline.stage import AblationStage

ARTIFACTS = [
    "depth/000.dmb", "depth/000.nmb", "depth/000.cmb",
    "prior/tri_000.dmb", "prior/sam_000.dmb",
    "aggregate/000.dmb", "aggregate/L_000.cmb", "aggregate/selection_000.png",
    "final/000.dmb", "final/002.dmb",
    "fused.ply", "metrics.txt", "metrics.json", "config.yaml", "timings.json",
]


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    bundle, gt_depth, gt_cloud, _ = synth_scene(small_spec())
    return save_synthetic_scene(bundle, gt_depth, gt_cloud, root)


def test_pipeline_writes_every_artifact(scene_dir, fast_config):
    result = run_pipeline(fast_config, scene_dir)
    for name in ARTIFACTS:
        assert (result.output_dir / name).exists(), name
    assert len(read_ply(result.output_dir / "fused.ply")) == len(result.cloud)
    metrics = json.loads((result.output_dir / "metrics.json").read_text())
    for key in ("f1", "accuracy", "completeness", "depth_fraction", "textureless_fraction", "fusion.tol_rel"):
        assert key in metrics
    assert 0.0 <= metrics["f1"] <= 100.0
    assert PipelineConfig.from_yaml(result.output_dir / "config.yaml") == fast_config
    saved = read_depth_map(result.output_dir / "final" / "000")
    np.testing.assert_array_equal(saved.depth, result.final[0].depth)


def test_pipeline_is_deterministic(scene_dir, fast_config, tmp_path):
    a = run_pipeline(fast_config.override({"output_dir": str(tmp_path / "a"), "cache_enabled": False}), scene_dir)
    b = run_pipeline(fast_config.override({"output_dir": str(tmp_path / "b"), "cache_enabled": False}), scene_dir)
    for i in a.final:
        np.testing.assert_array_equal(a.final[i].depth, b.final[i].depth)
    np.testing.assert_array_equal(a.cloud.positions, b.cloud.positions)
    assert a.metrics == b.metrics


def test_artifacts_do_not_depend_on_worker_count(scene_dir, fast_config, tmp_path):
    runs = {}
    for workers in (1, 8):
        config = fast_config.override(
            {"output_dir": str(tmp_path / f"w{workers}"), "cache_enabled": False, "workers": workers}
        )
        runs[workers] = run_pipeline(config, scene_dir).output_dir
    # config.yaml records the worker count itself; timings are wall-clock
    skip = {"config.yaml", "timings.json"}
    files = sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file() and p.name not in skip)
    assert len(files) >= len(ARTIFACTS) - len(skip)
    assert files == sorted(p.relative_to(runs[8]) for p in runs[8].rglob("*") if p.is_file() and p.name not in skip)
    for rel in files:
        assert (runs[1] / rel).read_bytes() == (runs[8] / rel).read_bytes(), str(rel)


def test_toggles_skip_priors(scene_dir, fast_config):
    config = row_config(fast_config, "plain", fast_config.output_dir)
    result = run_pipeline(config, scene_dir)
    assert not (result.output_dir / "prior").exists()
    assert (result.output_dir / "fused.ply").exists()


def test_ablation_rows_are_distinct():
    assert len(ABLATION_ROWS) == 12
    assert len(set(ABLATION_ROWS.values())) == 12
    assert ABLATION_ROWS["full"] == (True, True, True, True)
    with pytest.raises(InputError):
        row_config(PipelineConfig(), "everything", "out")


def test_ablation_table(scene_dir, fast_config):
    df = AblationStage(fast_config).run(scene_dir, ["plain", "full"])
    assert list(df.columns) == REPORT_COLUMNS
    assert df["row"].tolist() == ["plain", "full"]
    out = fast_config.output_dir
    report = (Path(out) / "ablation.md").read_text()
    assert "| plain |" in report and "| full | x | x | x | x |" in report
    assert len(pd.read_csv(Path(out) / "ablation.csv")) == 2


def test_markdown_table_format():
    df = pd.DataFrame.from_records(
        [{"row": "full", "TP": True, "SP": False, "f1": 71.234, "depth_fraction": 0.5}]
    )
    lines = markdown_table(df).splitlines()
    assert lines[0] == "| row | TP | SP | f1 | depth_fraction |"
    assert lines[2] == "| full | x |  | 71.23 | 50.00 |"


def test_ablation_needs_ground_truth(tmp_path, fast_config):
    bundle, _, _, _ = synth_scene(small_spec())
    save_scene(bundle, tmp_path / "bare")
    with pytest.raises(InputError):
        run_ablation(fast_config, tmp_path / "bare", ["plain"])


def test_cli_exit_codes(scene_dir, fast_config, tmp_path):
    config_path = tmp_path / "fast.yaml"
    fast_config.to_yaml(config_path)
    assert main([]) == 2
    assert main(["pipeline", "--out", str(tmp_path / "x")]) == 2
    assert main(["pipeline", "--scene", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 2
    out = tmp_path / "cli"
    assert main(["pipeline", "--scene", str(scene_dir), "--out", str(out), "--config", str(config_path)]) == 0
    assert (out / "fused.ply").exists()


def test_cli_stage_out_of_order_is_input_error(scene_dir, fast_config, tmp_path):
    config_path = tmp_path / "fast.yaml"
    fast_config.to_yaml(config_path)
    common = ["--scene", str(scene_dir), "--out", str(tmp_path / "fresh"), "--config", str(config_path)]
    assert main(["aggregate", *common]) == 2
    assert main(["fuse", *common]) == 2


def test_cli_unexpected_failure_exits_3(scene_dir, fast_config, tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("disk gone")

    monkeypatch.setattr("stages.pipeline.stage.run_pipeline", boom)
    config_path = tmp_path / "fast.yaml"
    fast_config.to_yaml(config_path)
    assert main(["pipeline", "--scene", str(scene_dir), "--out", str(tmp_path / "x"), "--config", str(config_path)]) == 3


def test_cli_stages_chain(scene_dir, fast_config, tmp_path):
    config_path = tmp_path / "fast.yaml"
    fast_config.to_yaml(config_path)
    common = ["--scene", str(scene_dir), "--out", str(tmp_path / "run"), "--config", str(config_path)]
    provenance = tmp_path / "run" / "config.yaml"
    expected = fast_config.override({"output_dir": str(tmp_path / "run")})
    for command in ("depth", "prior", "aggregate", "fuse", "eval"):
        provenance.unlink(missing_ok=True)
        assert main([command, *common]) == 0, command
        assert PipelineConfig.from_yaml(provenance) == expected, command
    assert (tmp_path / "run" / "metrics.txt").exists()


def test_cli_synth(tmp_path):
    spec_path = tmp_path / "scene.cfg"
    spec_path.write_text("n_cameras = 3\nwidth = 48\nheight = 36\nfx = 42\n")
    assert main(["synth", "--out", str(tmp_path / "s"), "--spec", str(spec_path), "--seed", "2"]) == 0
    assert (tmp_path / "s" / "gt" / "cloud.ply").exists()
    saved = json.loads((tmp_path / "s" / "scene_spec.json").read_text())
    assert saved["seed"] == 2 and saved["n_cameras"] == 3


@pytest.mark.slow
def test_textureless_wall_is_recovered(tmp_path):
    """Default 320x240 five-view scene: floor texture, weakly textured wall."""
    bundle, gt_depth, gt_cloud, masks = synth_scene(SyntheticSceneSpec())
    assert (masks[0].labels > 0).mean() >= 0.3
    scene = save_synthetic_scene(bundle, gt_depth, gt_cloud, tmp_path / "scene")
    config = PipelineConfig(output_dir=str(tmp_path / "out"), cache_dir=str(tmp_path / "cache"))
    df = run_ablation(config, scene, ["full", "no_sp", "baseline", "plain"]).set_index("row")
    fraction = df["textureless_fraction"]
    assert fraction["full"] >= 0.95
    assert fraction["full"] > fraction["plain"]
    assert fraction["full"] >= fraction["no_sp"] >= fraction["baseline"]
