"""Masked video + body-worn IMU autoencoding with an IMU device graph."""

from . import dataset_io, encoders, imu_graph, imu_pipeline, masking, objectives, pixel_decoder, video_pipeline
from .errors import EviMAEError

__version__ = "0.1.0"
