import numpy as np
import pytest

from signrep.pose import KeypointSequence, load_layout


@pytest.fixture(scope="session")
def layout():
    return load_layout()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_sequence(rng, t=6, scale=1.0):
    return KeypointSequence(rng.normal(0, scale, size=(t, 73, 2)))


def normalized_sequence(rng, layout, t=6):
    """Random frames with shoulders pinned at (+-0.5, 0)."""
    frames = rng.normal(0, 0.3, size=(t, 73, 2))
    frames[:, layout.left_shoulder] = (-0.5, 0.0)
    frames[:, layout.right_shoulder] = (0.5, 0.0)
    return KeypointSequence(frames)


@pytest.fixture()
def tiny_mae_config():
    return {"d": 16, "gc_channels": 4, "refine_dim": 2, "d_ff": 32,
            "n_heads": 2, "enc_layers": 1, "dec_layers": 1, "dropout": 0.1,
            "batch_size": 2, "steps": 3, "warmup_steps": 2, "peak_lr": 1e-4,
            "eval_segments_per_record": 1}
