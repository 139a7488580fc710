"""Temporal-module x temporal-field ablation grid."""

import csv
import time
from pathlib import Path

from .exceptions import ConfigError, FormatError
from .pipeline import estimator_from_config
from .synthetic import Dataset, parse_sample_id

CSV_HEADER = ("module", "T", "iou", "pq", "train_seconds")
FIELDS = (1, 3, 5, 7)
GRID = (("static", (1,)), ("conv3d", FIELDS), ("convgru", FIELDS), ("geo-convgru", FIELDS))


def ablation_cells():
    return [(m, t) for m, ts in GRID for t in ts]


def _split(ds, cfg, history):
    """Train/val ids restricted to targets with ``history`` frames available."""
    scenes = ds.scenes()
    if cfg.val_scenes > len(scenes):
        raise ConfigError(f"val_scenes: {cfg.val_scenes} exceeds the {len(scenes)} scenes available")
    val = set(scenes[len(scenes) - cfg.val_scenes:]) if cfg.val_scenes else set()
    ids = [i for i in ds.ids if parse_sample_id(i)[1] >= history - 1]
    if not ids:
        raise FormatError(f"{ds.root}: no sample has {history} frames of history")
    train = [i for i in ids if parse_sample_id(i)[0] not in val]
    held = [i for i in ids if parse_sample_id(i)[0] in val]
    if not train or not held:
        raise ConfigError("val_scenes: ablation needs both training and validation scenes")
    return train, held


def run_ablation(cfg, data_dir, cells=None, log=None):
    """Train and score every cell with the same seed, data and step budget.

    IoU and PQ are reported in points (percent) for the vehicle class.
    """
    ds = Dataset(data_dir)
    cells = ablation_cells() if cells is None else list(cells)
    history = max(t for _, t in cells)
    train_ids, val_ids = _split(ds, cfg, history)
    rows = []
    for module, T in cells:
        cell_cfg = cfg.replace(temporal_module=module, temporal_field=T)
        train_set = ds.samples(T, train_ids)
        val_set = ds.samples(T, val_ids)
        est = estimator_from_config(cell_cfg)
        t0 = time.perf_counter()
        est.fit(train_set)
        seconds = time.perf_counter() - t0
        report = est.evaluate(val_set)
        row = {"module": module, "T": T, "iou": 100.0 * report["iou_1"],
               "pq": 100.0 * report["pq"], "train_seconds": seconds}
        rows.append(row)
        if log is not None:
            log(row)
    return rows


def write_ablation_csv(path, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r["module"], r["T"], repr(r["iou"]), repr(r["pq"]),
                             f"{r['train_seconds']:.3f}"])


def read_ablation_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise FormatError(f"{path}: expected header {','.join(CSV_HEADER)}")
        return [{"module": m, "T": int(t), "iou": float(i), "pq": float(p),
                 "train_seconds": float(s)} for m, t, i, p, s in reader]


def trend_checks(rows):
    """The three directional comparisons as ``(name, passed, detail)``."""
    iou = {(r["module"], r["T"]): r["iou"] for r in rows}

    def get(m, t):
        if (m, t) not in iou:
            raise ConfigError(f"ablation results lack the {m} T={t} cell")
        return iou[(m, t)]

    geo5, geo1 = get("geo-convgru", 5), get("geo-convgru", 1)
    gru5, c3d5 = get("convgru", 5), get("conv3d", 5)
    return [
        ("longer window helps", geo5 - geo1 >= 2.0,
         f"geo-convgru T=5 {geo5:.2f} vs T=1 {geo1:.2f} (need +2.00)"),
        ("mask helps", geo5 >= gru5, f"geo-convgru T=5 {geo5:.2f} vs convgru T=5 {gru5:.2f}"),
        ("convgru competitive", gru5 >= c3d5 - 0.5,
         f"convgru T=5 {gru5:.2f} vs conv3d T=5 {c3d5:.2f} (allow -0.50)"),
    ]
