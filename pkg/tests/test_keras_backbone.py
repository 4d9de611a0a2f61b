import numpy as np
import pytest

from ctscan_tl.errors import ConfigError, LoadError
from ctscan_tl.model import HeadConfig, Model, build_head, load_backbone

pytest.importorskip("tensorflow")


@pytest.fixture(scope="module")
def backbone():
    return load_backbone("inception-resnet-v2", "random", (224, 224, 3))


@pytest.mark.slow
def test_parameter_count_and_output(backbone):
    assert backbone.parameter_count() > 50_000_000
    assert backbone.output_shape == (5, 5, 1536)
    feats = backbone.forward(np.random.default_rng(0).random((1, 224, 224, 3)))
    assert feats.shape == (1, 5, 5, 1536)
    assert np.isfinite(feats).all()


@pytest.mark.slow
def test_backbone_must_stay_frozen(backbone):
    head = build_head(backbone.output_shape, HeadConfig(num_classes=2))
    with pytest.raises(ConfigError):
        Model(backbone, head, freeze=False)
    model = Model(backbone, head, freeze=True)
    assert not any(k.startswith("backbone/") for k in model.trainable_params())


def test_missing_weight_file():
    with pytest.raises(LoadError):
        load_backbone("inception-resnet-v2", "/no/such/file.h5", (224, 224, 3))
