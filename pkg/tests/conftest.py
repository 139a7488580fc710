import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = """\
seed = 3
temporal_field = 2
extent_x = 16
extent_y = 16
resolution = 1.0
depth_bins = 4
depth_min = 2
depth_max = 8
encoder_channels = 4
feature_channels = 4
hidden_channels = 4
head_channels = 4
feature_stride = 4
epochs = 2
num_frames = 3
num_cameras = 3
fov_deg = 120
image_height = 16
image_width = 24
vehicles_min = 2
vehicles_max = 3
spawn_r_min = 2
spawn_r_max = 8
speed_max = 2
vehicle_length = 3.0
vehicle_width = 2.0
"""


@pytest.fixture
def tiny_config_text():
    return TINY


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path
