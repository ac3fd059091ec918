import numpy as np
import pytest

from dbag.backends import (
    BackendRegistry,
    ConstantLandmarks,
    FullFrameDetector,
    IntensityGridLandmarks,
    IntensityHistogramBehavioral,
    PooledPixelIdentity,
)
from dbag.descriptor import DBaGSlice, FRAME_DIM
from dbag.network import ModelConfig
from dbag.trainer import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


@pytest.fixture
def stub_registry():
    return BackendRegistry(
        face_detector=FullFrameDetector(),
        landmark_extractor=IntensityGridLandmarks(),
        behavioral_extractor=IntensityHistogramBehavioral(),
        identity_extractor=PooledPixelIdentity(),
    )


@pytest.fixture
def constant_registry():
    return BackendRegistry(
        face_detector=FullFrameDetector(),
        landmark_extractor=ConstantLandmarks(),
        behavioral_extractor=IntensityHistogramBehavioral(),
        identity_extractor=PooledPixelIdentity(),
    )


TINY_MODEL = ModelConfig(
    stem_channels=2,
    stage_channels=(2, 2, 4, 4, 4),
    se_reduction_ratio=2,
    embedding_dim=8,
    fc_hidden=8,
)


@pytest.fixture
def tiny_model_config():
    return TINY_MODEL


@pytest.fixture
def tiny_train_config():
    return TrainConfig(epochs=2, batch_size=4, seed=3)


def make_slices(rng, n_per_class=3, window=120, dim=FRAME_DIM, separation=4.0):
    """Labeled random slices with a crude class offset, for trainer tests."""
    slices = []
    for label, shift in (("real", 0.0), ("fake", separation)):
        for k in range(n_per_class):
            mat = rng.normal(shift, 1.0, (window, dim)).astype(np.float32)
            slices.append(
                DBaGSlice(matrix=mat, start_frame=0, video_id=f"{label}-{k}", label=label)
            )
    return slices
