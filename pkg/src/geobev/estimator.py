"""scikit-learn compatible wrapper around the BEV segmentation model."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .camera import BevGridSpec
from .exceptions import ConfigError
from .metrics import SegmentationScorer
from .model import (
    AdamState,
    Architecture,
    Geometry,
    adam_step,
    cross_entropy_loss,
    init_model_params,
    model_backward,
    model_forward,
)
from .validation import check_images, check_labels, check_samples

TEMPORAL_MODULES = ("static", "conv3d", "convgru", "geo-convgru")


class GeoBEVSegmenter(ClassifierMixin, BaseEstimator):
    """Multi-camera BEV semantic segmenter with a pluggable temporal module.

    ``X`` is a sequence of :class:`~geobev.synthetic.Sample` windows and ``y``
    the matching ``[H, W]`` label grids (taken from the samples when omitted).
    ``temporal_module`` selects ``"static"`` (present frame only), ``"conv3d"``,
    ``"convgru"`` or ``"geo-convgru"`` (ConvGRU output weighted by the camera
    visibility mask).
    """

    def __init__(self, temporal_module="geo-convgru", temporal_field=5, num_classes=2,
                 encoder_channels=16, feature_channels=16, hidden_channels=16,
                 head_channels=16, depth_bins=16, depth_min=1.0, depth_max=40.0,
                 gru_units=2, kernel_size=3, epsilon=0.1, extent_x=100.0, extent_y=100.0,
                 resolution=0.5, feature_stride=8, lr=1e-3, beta1=0.9, beta2=0.999,
                 adam_eps=1e-8, epochs=1, batch_size=1, max_steps=0, seed=0):
        self.temporal_module = temporal_module
        self.temporal_field = temporal_field
        self.num_classes = num_classes
        self.encoder_channels = encoder_channels
        self.feature_channels = feature_channels
        self.hidden_channels = hidden_channels
        self.head_channels = head_channels
        self.depth_bins = depth_bins
        self.depth_min = depth_min
        self.depth_max = depth_max
        self.gru_units = gru_units
        self.kernel_size = kernel_size
        self.epsilon = epsilon
        self.extent_x = extent_x
        self.extent_y = extent_y
        self.resolution = resolution
        self.feature_stride = feature_stride
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.seed = seed

    # -- helpers -----------------------------------------------------------

    def _architecture(self):
        if self.temporal_module not in TEMPORAL_MODULES:
            raise ConfigError(f"temporal_module must be one of {TEMPORAL_MODULES}")
        return Architecture.from_params(self.get_params())

    def _grid(self):
        return BevGridSpec(self.extent_x, self.extent_y, self.resolution)

    def _depth_values(self):
        if self.depth_bins == 1:
            return np.array([float(self.depth_min)])
        return np.linspace(self.depth_min, self.depth_max, self.depth_bins)

    def _window(self):
        return 1 if self.temporal_module == "static" else self.temporal_field

    def geometry_for(self, sample):
        key = (tuple(c.key() for c in sample.rig), sample.images.shape[-2:])
        cache = self.__dict__.setdefault("_geometry_cache", {})
        if key not in cache:
            cache[key] = Geometry(sample.rig, self._grid(), self._depth_values(),
                                  sample.images.shape[-2:], self.feature_stride, self.epsilon)
        return cache[key]

    def _loss_grad(self, sample, labels):
        geom = self.geometry_for(sample)
        images = check_images(sample.images, self._window())
        logits, cache = model_forward(self.params_, self.arch_, geom, images, return_cache=True)
        loss, g = cross_entropy_loss(logits, labels)
        return loss, model_backward(self.params_, self.arch_, geom, cache, g)

    def init_params(self):
        """(Re)initialise parameters from ``seed`` without training."""
        self.arch_ = self._architecture()
        self._rng = np.random.default_rng(self.seed)
        self.params_ = init_model_params(self.arch_, self._rng)
        self.classes_ = np.arange(self.num_classes)
        self.history_ = []
        self.n_steps_ = 0
        return self

    def set_weights(self, params):
        """Install externally loaded parameters (e.g. a checkpoint)."""
        self.init_params()
        missing = set(self.params_) ^ set(params)
        if missing:
            raise ConfigError(f"parameter names do not match the architecture: {sorted(missing)}")
        for name, arr in params.items():
            if arr.shape != self.params_[name].shape:
                raise ConfigError(f"{name}: shape {arr.shape} != expected {self.params_[name].shape}")
            self.params_[name] = np.array(arr, dtype=np.float64)
        return self

    # -- sklearn API -------------------------------------------------------

    def fit(self, X, y=None, eval_set=None, callback=None):
        """Train with Adam on mini-batches of windows.

        ``eval_set`` is an optional ``(X_val, y_val)`` pair scored after each
        epoch; ``callback(record)`` receives each per-epoch history record.
        """
        X = check_samples(X)
        self.init_params()
        grid_shape = self._grid().shape
        ys = [s.label for s in X] if y is None else list(y)
        ys = [check_labels(lbl, grid_shape, self.num_classes) for lbl in ys]
        # start the head at the label prior; Adam's bounded step would
        # otherwise spend thousands of steps walking the bias there
        counts = sum(np.bincount(lbl.ravel(), minlength=self.num_classes) for lbl in ys)
        self.params_["head.bias"][:] = np.log((counts + 1.0) / (counts.sum() + self.num_classes))
        state = AdamState.zeros(self.params_)
        n = len(X)
        for epoch in range(self.epochs):
            order = self._rng.permutation(n)
            losses = []
            for start in range(0, n, self.batch_size):
                if self.max_steps and self.n_steps_ >= self.max_steps:
                    break
                idx = order[start:start + self.batch_size]
                total = None
                for i in idx:
                    loss, g = self._loss_grad(X[i], ys[i])
                    losses.append(loss)
                    if total is None:
                        total = g
                    else:
                        for k in total:
                            total[k] += g[k]
                for k in total:
                    total[k] /= len(idx)
                adam_step(self.params_, total, state, self.lr, self.beta1, self.beta2,
                          self.adam_eps)
                self.n_steps_ += 1
            record = {"epoch": epoch + 1, "step": self.n_steps_,
                      "loss": float(np.mean(losses)) if losses else float("nan"),
                      "val_iou": float("nan")}
            if eval_set is not None and len(eval_set[0]):
                record["val_iou"] = self.score(*eval_set)
            self.history_.append(record)
            if callback is not None:
                callback(record)
        self.adam_state_ = state
        return self

    def decision_function(self, X):
        """Class logits ``[n, num_classes, H, W]``."""
        check_is_fitted(self, "params_")
        X = check_samples(X)
        out = []
        for s in X:
            images = check_images(s.images, self._window())
            out.append(model_forward(self.params_, self.arch_, self.geometry_for(s), images))
        return np.stack(out)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def evaluate(self, X, y=None, instances=None):
        """Dataset-level per-class IoU and PQ/SQ/RQ for the vehicle class."""
        X = check_samples(X)
        ys = [s.label for s in X] if y is None else list(y)
        insts = [s.instances for s in X] if instances is None else list(instances)
        scorer = SegmentationScorer(self.num_classes, instance_class=1)
        for pred, gt, inst in zip(self.predict(X), ys, insts):
            scorer.update(pred, gt, inst)
        return scorer.report()

    def score(self, X, y=None):
        """Vehicle-class (label 1) IoU accumulated over all samples."""
        return self.evaluate(X, y)["iou_1"]
