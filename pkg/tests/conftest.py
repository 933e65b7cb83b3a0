import json
import time

import pytest

from camprompt.classifier import ClassifierConfig, train
from camprompt.dataset import AugmentationConfig, load_split
from camprompt.synthetic import generate_shapes_dataset


@pytest.fixture(scope="session")
def micro_root(tmp_path_factory):
    """A very small shapes dataset for fast unit tests."""
    root = tmp_path_factory.mktemp("micro_data")
    return generate_shapes_dataset(root, n_train=16, n_test=6, size=64, seed=7)


@pytest.fixture(scope="session")
def micro_model(micro_root, tmp_path_factory):
    """A classifier trained briefly on the micro dataset (mechanics, not accuracy)."""
    out = tmp_path_factory.mktemp("micro_model")
    split = load_split(micro_root, "train")
    cfg = ClassifierConfig(
        num_classes=4, input_resolution=64, epochs=2, warmup_epochs=1,
        base_lr=1e-3, batch_size=8,
    )
    result = train(
        split, cfg, out, backbone="tiny",
        backbone_kwargs={"embed_dim": 32, "depth": 1, "num_heads": 2,
                         "patch_size": 8, "window": 4},
        augmentation=AugmentationConfig(crop_size=64),
        seed=11,
    )
    return result.model


# the end-to-end oracle recipe; kept in one place so every test that trains
# on the oracle dataset exercises the identical configuration
SMOKE_CLASSIFIER_CFG = dict(
    num_classes=4, input_resolution=128, epochs=5, warmup_epochs=1,
    base_lr=2e-2, batch_size=4,
)
SMOKE_BACKBONE_KWARGS = dict(
    embed_dim=64, depth=1, num_heads=4, patch_size=16, window=2,
)
SMOKE_TRAIN_SEED = 7


@pytest.fixture(scope="session")
def smoke_root(tmp_path_factory):
    """The end-to-end oracle dataset: 200 train / 50 test colored shapes at 128x128."""
    root = tmp_path_factory.mktemp("smoke_data")
    return generate_shapes_dataset(root, n_train=200, n_test=50, size=128, seed=42)


@pytest.fixture(scope="session")
def smoke_model(smoke_root, tmp_path_factory):
    """Classifier trained 5 epochs on the oracle dataset; returns (model, seconds, result)."""
    out = tmp_path_factory.mktemp("smoke_model")
    split = load_split(smoke_root, "train")
    cfg = ClassifierConfig(**SMOKE_CLASSIFIER_CFG)
    started = time.monotonic()
    result = train(
        split, cfg, out, backbone="tiny",
        backbone_kwargs=SMOKE_BACKBONE_KWARGS,
        augmentation=AugmentationConfig(crop_size=128),
        seed=SMOKE_TRAIN_SEED,
    )
    elapsed = time.monotonic() - started
    (out / "train_seconds.json").write_text(json.dumps({"seconds": elapsed}))
    return result.model, elapsed, result
