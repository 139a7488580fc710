"""File-level workflows: checkpoints, training and evaluation on exported datasets."""

import csv
import math
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .estimator import GeoBEVSegmenter
from .exceptions import ConfigError, FormatError
from .synthetic import Dataset

GCGR_MAGIC = b"GCGR\x00"
GCGR_VERSION = 1
CHECKPOINT_NAME = "model.gcgr"
CONFIG_NAME = "config.txt"
METRICS_NAME = "metrics.csv"


class CheckpointVersionError(FormatError):
    pass


def save_checkpoint(path, params):
    out = [GCGR_MAGIC, struct.pack("<II", GCGR_VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path):
    path = Path(path)
    buf = path.read_bytes()
    if buf[:5] != GCGR_MAGIC:
        raise FormatError(f"{path}: not a GCGR checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 5)
    if version != GCGR_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, "
                                     f"this build reads version {GCGR_VERSION}")
    off = 13
    params = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            if off + 8 * size > len(buf):
                raise FormatError(f"{path}: truncated data for '{name}'")
            params[name] = np.frombuffer(buf, "<f8", size, off).astype(np.float64).reshape(dims)
            off += 8 * size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from None
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return params


def estimator_from_config(cfg):
    return GeoBEVSegmenter(**cfg.model_params())


def split_dataset(ds, cfg, window):
    """Hold out the last ``val_scenes`` scenes for validation."""
    scenes = ds.scenes()
    if cfg.val_scenes > len(scenes):
        raise ConfigError(f"val_scenes: {cfg.val_scenes} exceeds the {len(scenes)} scenes available")
    val = set(scenes[len(scenes) - cfg.val_scenes:]) if cfg.val_scenes else set()
    train_ids = [i for i in ds.ids if i.rsplit("_t", 1)[0] not in val]
    val_ids = [i for i in ds.ids if i.rsplit("_t", 1)[0] in val]
    return ds.samples(window, train_ids), ds.samples(window, val_ids)


def _window(cfg):
    return 1 if cfg.temporal_module == "static" else cfg.temporal_field


def train(cfg, data_dir, out_dir):
    """Fit on ``data_dir`` and write checkpoint, config and per-epoch metrics to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = Dataset(data_dir)
    train_set, val_set = split_dataset(ds, cfg, _window(cfg))
    est = estimator_from_config(cfg)
    metrics_path = out / METRICS_NAME
    with metrics_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss", "val_iou"])
        if cfg.epochs == 0 or not train_set:
            est.init_params()
        else:
            def log(rec):
                writer.writerow([rec["epoch"], rec["step"], repr(rec["loss"]),
                                 "" if math.isnan(rec["val_iou"]) else repr(rec["val_iou"])])
                fh.flush()

            val = (val_set, [s.label for s in val_set]) if val_set else None
            est.fit(train_set, eval_set=val, callback=log)
    save_checkpoint(out / CHECKPOINT_NAME, est.params_)
    (out / CONFIG_NAME).write_text(cfg.to_text())
    return est


def load_estimator(checkpoint, cfg=None):
    checkpoint = Path(checkpoint)
    if cfg is None:
        sidecar = checkpoint.with_name(CONFIG_NAME)
        cfg = load_config(sidecar) if sidecar.is_file() else Config()
    est = estimator_from_config(cfg)
    est.set_weights(load_checkpoint(checkpoint))
    return est, cfg


def evaluate(checkpoint, data_dir, cfg=None):
    est, cfg = load_estimator(checkpoint, cfg)
    ds = Dataset(data_dir)
    samples = ds.samples(_window(cfg))
    return est.evaluate(samples)


def format_report(report):
    lines = ["metric      value"]
    for key, val in report.items():
        lines.append(f"{key:<10} {val:8.4f}")
    return "\n".join(lines)


def write_report_csv(path, report):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(report))
        writer.writerow([repr(float(v)) for v in report.values()])
