import json

import numpy as np
import pytest
import torch

from camprompt.cam import GradCamEngine, save_cam_artifacts, select_prompt
from camprompt.classifier import load_artifact
from camprompt.dataset import load_split
from camprompt.errors import ContractViolation, NoActivation


@pytest.fixture()
def engine(micro_model):
    with GradCamEngine(micro_model) as eng:
        yield eng


def test_shape_contract_nonsquare(engine):
    rng = np.random.default_rng(20)
    pixels = rng.integers(0, 256, (96, 128, 3)).astype(np.uint8)
    cam = engine.compute(pixels, class_id=1)
    assert cam.grid.shape == (96, 128)


def test_grid_normalized_to_unit_interval(engine, micro_root):
    item = load_split(micro_root, "test")[0]
    cam = engine.compute(item.pixels, class_id=2)
    assert cam.grid.min() >= 0.0
    assert cam.grid.max() <= 1.0
    if cam.raw_peak > 0:
        assert cam.grid.max() == pytest.approx(1.0)


def test_zero_head_gives_zero_cam(micro_model, micro_root):
    frozen = load_artifact(micro_model.artifact_dir)
    torch.nn.init.zeros_(frozen.module.head.weight)
    torch.nn.init.zeros_(frozen.module.head.bias)
    item = load_split(micro_root, "test")[0]
    with GradCamEngine(frozen) as eng:
        cam = eng.compute(item.pixels, class_id=1)
    assert cam.raw_peak == 0.0
    assert np.all(cam.grid == 0.0)
    with pytest.raises(NoActivation):
        select_prompt(cam)


def test_class_id_bounds(engine):
    pixels = np.zeros((64, 64, 3), dtype=np.uint8)
    with pytest.raises(ContractViolation):
        engine.compute(pixels, class_id=4)
    with pytest.raises(ContractViolation):
        engine.compute(pixels, class_id=-1)


def test_cam_deterministic(engine, micro_root):
    item = load_split(micro_root, "test")[2]
    a = engine.compute(item.pixels, class_id=1)
    b = engine.compute(item.pixels, class_id=1)
    assert np.array_equal(a.grid, b.grid)
    assert a.raw_peak == b.raw_peak


def test_prompt_coordinates_in_bounds(engine, micro_root):
    for item in load_split(micro_root, "test"):
        for class_id in (1, 2, 3):
            cam = engine.compute(item.pixels, class_id=class_id)
            if cam.raw_peak == 0:
                continue
            prompt = select_prompt(cam)
            h, w = item.pixels.shape[:2]
            assert 0 <= prompt.x < w and 0 <= prompt.y < h


def test_save_cam_artifacts(engine, micro_root, tmp_path):
    item = load_split(micro_root, "test")[0]
    cam = engine.compute(item.pixels, class_id=1)
    prompt = None
    try:
        prompt = select_prompt(cam)
    except NoActivation:
        pass
    png, sidecar = save_cam_artifacts(cam, prompt, tmp_path, item.image_id)
    assert png.name == f"{item.image_id}.1.cam.png"
    from PIL import Image

    loaded = Image.open(png)
    assert loaded.mode == "L"
    assert loaded.size == (item.pixels.shape[1], item.pixels.shape[0])
    meta = json.loads(sidecar.read_text())
    assert meta["class_id"] == 1
    if prompt is not None:
        assert meta["prompt"] == {
            "x": prompt.x, "y": prompt.y, "activation": prompt.activation
        }
