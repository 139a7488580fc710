"""Input checks shared by the estimator and the command-line workflows."""

import numpy as np

from .exceptions import InvalidValueError, ShapeError
from .synthetic import Sample


def check_images(images, window=None):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 5 or images.shape[2] != 3:
        raise ShapeError(f"images must be [T, N, 3, h, w], got {images.shape}")
    if not np.isfinite(images).all():
        raise InvalidValueError("images contain NaN or Inf")
    if window is not None:
        if images.shape[0] < window:
            raise ShapeError(f"window of {images.shape[0]} frames, need at least {window}")
        images = images[images.shape[0] - window:]
    return images


def check_labels(labels, grid_shape, num_classes):
    labels = np.asarray(labels)
    if labels.shape != tuple(grid_shape):
        raise ShapeError(f"label grid {labels.shape} does not match BEV grid {tuple(grid_shape)}")
    if not np.all(labels == np.round(labels)):
        raise InvalidValueError("label ids must be integers")
    labels = labels.astype(np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise InvalidValueError(f"label ids must lie in [0, {num_classes})")
    return labels


def check_samples(X):
    if isinstance(X, Sample):
        X = [X]
    X = list(X)
    if not X:
        raise InvalidValueError("no samples given")
    for s in X:
        if not isinstance(s, Sample):
            raise TypeError(f"expected Sample, got {type(s).__name__}")
        if s.images.ndim != 5 or s.images.shape[1] != len(s.rig):
            raise ShapeError(f"sample {s.sample_id!r}: {s.images.shape[1]} camera images "
                             f"for a rig of {len(s.rig)}")
    shape = X[0].images.shape[1:]
    if any(s.images.shape[1:] != shape for s in X):
        raise ShapeError("all samples must share camera count and image size")
    return X
