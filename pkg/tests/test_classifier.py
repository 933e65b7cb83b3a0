import json

import numpy as np
import pytest
import torch

from camprompt.classifier import (
    ClassifierConfig,
    load_artifact,
    predict,
    read_image,
    train,
)
from camprompt.classifier.backbones import TinyWindowAttentionBackbone, build_backbone
from camprompt.classifier.model import MultiLabelClassifier
from camprompt.dataset import AugmentationConfig, load_split
from camprompt.errors import CapabilityError, ContractViolation, IngestionError

TINY_KW = {"embed_dim": 32, "depth": 1, "num_heads": 2, "patch_size": 8, "window": 4}


def _cfg(epochs=1):
    return ClassifierConfig(
        num_classes=4, input_resolution=64, epochs=epochs,
        warmup_epochs=0, base_lr=1e-3, batch_size=8,
    )


def test_empty_dataset_rejected(tmp_path, micro_root):
    view = load_split(micro_root, "train")
    empty = view[:0]
    with pytest.raises(ContractViolation):
        train(empty, _cfg(), tmp_path, backbone="tiny", backbone_kwargs=TINY_KW)


def test_num_classes_mismatch_rejected(tmp_path, micro_root):
    view = load_split(micro_root, "train")
    bad = ClassifierConfig(num_classes=7, input_resolution=64, epochs=1,
                           warmup_epochs=0, batch_size=8)
    with pytest.raises(ContractViolation):
        train(view, bad, tmp_path, backbone="tiny", backbone_kwargs=TINY_KW)


def test_checkpoint_mismatch_fails_before_training(tmp_path, micro_root):
    view = load_split(micro_root, "train")
    wrong = MultiLabelClassifier(TinyWindowAttentionBackbone(embed_dim=16, depth=1,
                                                             num_heads=2), 4)
    weights = tmp_path / "wrong.pt"
    torch.save(wrong.state_dict(), weights)
    with pytest.raises(CapabilityError, match="mismatch"):
        train(view, _cfg(), tmp_path / "out", backbone="tiny",
              backbone_kwargs=TINY_KW, init_weights=weights)


def test_training_determinism_same_seed(tmp_path, micro_root):
    view = load_split(micro_root, "train")
    aug = AugmentationConfig(crop_size=64)
    r1 = train(view, _cfg(), tmp_path / "a", backbone="tiny",
               backbone_kwargs=TINY_KW, augmentation=aug, seed=5)
    r2 = train(view, _cfg(), tmp_path / "b", backbone="tiny",
               backbone_kwargs=TINY_KW, augmentation=aug, seed=5)
    assert r1.epoch_losses[0] == r2.epoch_losses[0]


def test_training_log_and_artifact(micro_model):
    assert micro_model.artifact_dir is not None
    log = micro_model.artifact_dir / "training_log.jsonl"
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    steps = [r for r in rows if "step" in r]
    assert steps, "per-step rows present"
    assert all("loss" in r and "lr" in r for r in steps)
    epochs = [r for r in rows if "epoch_loss" in r]
    assert len(epochs) == 2
    config = json.loads((micro_model.artifact_dir / "config.json").read_text())
    assert {"classifier_config", "catalog_fingerprint", "seed",
            "code_version", "fingerprint", "backbone"} <= set(config)
    ckpts = list((micro_model.artifact_dir / "checkpoints").glob("epoch_*.pt"))
    assert 1 <= len(ckpts) <= 3


def test_artifact_roundtrip_same_probabilities(micro_model, micro_root):
    reloaded = load_artifact(micro_model.artifact_dir)
    assert reloaded.fingerprint == micro_model.fingerprint
    item = load_split(micro_root, "test")[0]
    a = predict(item.pixels, micro_model, image_id=item.image_id)
    b = predict(item.pixels, reloaded, image_id=item.image_id)
    assert np.array_equal(a.probabilities, b.probabilities)


def test_corrupted_artifact_reports_mismatch(micro_model, tmp_path):
    art = tmp_path / "corrupt"
    art.mkdir()
    (art / "weights.pt").write_bytes(
        (micro_model.artifact_dir / "weights.pt").read_bytes()
    )
    meta = json.loads((micro_model.artifact_dir / "config.json").read_text())
    meta["backbone_kwargs"]["embed_dim"] = 48  # architecture no longer matches
    (art / "config.json").write_text(json.dumps(meta))
    with pytest.raises(CapabilityError, match="mismatch"):
        load_artifact(art)


def test_predict_determinism_and_contract(micro_model, micro_root):
    item = load_split(micro_root, "test")[1]
    a = predict(item.pixels, micro_model)
    b = predict(item.pixels, micro_model)
    assert np.array_equal(a.probabilities, b.probabilities)
    assert a.probabilities.shape == (4,)
    assert np.all((a.probabilities >= 0) & (a.probabilities <= 1))
    assert 0 not in a.predicted_classes  # background never prompted


def test_predict_threshold_validation(micro_model, micro_root):
    item = load_split(micro_root, "test")[0]
    with pytest.raises(ContractViolation):
        predict(item.pixels, micro_model, threshold=1.0)
    with pytest.raises(ContractViolation):
        predict(item.pixels, micro_model, threshold=0.0)


def test_zero_logits_give_half_probabilities(micro_model, micro_root):
    item = load_split(micro_root, "test")[0]
    model = load_artifact(micro_model.artifact_dir)
    torch.nn.init.zeros_(model.module.head.weight)
    torch.nn.init.zeros_(model.module.head.bias)
    result = predict(item.pixels, model)
    assert np.allclose(result.probabilities, 0.5)
    assert result.predicted_classes == {1, 2, 3}  # 0.5 >= threshold, minus background


def test_read_image_decode_error(tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"this is not an image")
    with pytest.raises(IngestionError, match="broken.png"):
        read_image(bad)


def test_unknown_backbone():
    with pytest.raises(CapabilityError):
        build_backbone("resnet-900")


def test_tiny_backbone_grid_divisibility():
    backbone = TinyWindowAttentionBackbone(patch_size=8, window=4, embed_dim=32,
                                           depth=1, num_heads=2)
    with pytest.raises(ContractViolation):
        backbone.forward_features(torch.zeros(1, 3, 40, 40))  # grid 5x5, window 4
