import numpy as np
import pytest
from PIL import Image

from conceptcf_exporter.toys import (
    save_head_checkpoint,
    save_text_encoder,
    save_vision_encoder,
)

IMAGE_SIZE = 32


@pytest.fixture(scope="session")
def text_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "text_encoder.pt"
    save_text_encoder(path, dim=16)
    return path


@pytest.fixture(scope="session")
def vision_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "vision_encoder.pt"
    save_vision_encoder(path, image_size=IMAGE_SIZE, dim=8, seed=1)
    return path


@pytest.fixture(scope="session")
def head_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "classifier.pt"
    save_head_checkpoint(path, feature_dim=8, class_names=("No Finding", "Cardiomegaly"), seed=2)
    return path


@pytest.fixture(scope="session")
def image_files(tmp_path_factory):
    directory = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(7)
    paths = []
    for i in range(3):
        arr = rng.integers(0, 256, size=(40, 48, 3), dtype=np.uint8)
        path = directory / f"xray_{i}.png"
        Image.fromarray(arr).save(path)
        paths.append(path)
    return paths
