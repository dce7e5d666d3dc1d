"""On-disk layout for datasets: meta.json + integer CSV blocks.

One ``obs.csv`` holds the observational samples and one ``int_<name>.csv``
per intervened variable holds its block; rows are comma-separated category
indices with no header. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .cgm import Dataset, InterventionBlock
from .errors import DataFormatError
from .graphs import VarMeta

SCHEMA_VERSION = 1


def _write_csv(path: Path, block: np.ndarray):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in block:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def _read_csv(path: Path, n_cols) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_cols:
                raise DataFormatError(
                    f"expected {n_cols} columns, found {len(parts)}",
                    line=lineno,
                    path=str(path),
                )
            try:
                rows.append([int(p) for p in parts])
            except ValueError as e:
                raise DataFormatError(str(e), line=lineno, path=str(path)) from e
    if not rows:
        return np.zeros((0, n_cols), dtype=np.int32)
    return np.asarray(rows, dtype=np.int32)


def write_dataset(dataset: Dataset, dirpath):
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    names = [m.name for m in dataset.metas]
    meta = {
        "schema_version": SCHEMA_VERSION,
        "variables": [
            {"name": m.name, "cardinality": m.cardinality} for m in dataset.metas
        ],
        "intervened": [names[t] for t in dataset.intervened_targets],
        "interventions": {
            names[t]: dataset.ints[t].descriptor for t in dataset.intervened_targets
        },
        "seeds": dataset.seeds,
    }
    with open(dirpath / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_csv(dirpath / "obs.csv", dataset.obs)
    for t in dataset.intervened_targets:
        _write_csv(dirpath / f"int_{names[t]}.csv", dataset.ints[t].samples)
    return dirpath


def read_dataset(dirpath) -> Dataset:
    dirpath = Path(dirpath)
    meta_path = dirpath / "meta.json"
    if not meta_path.is_file():
        raise DataFormatError("missing meta.json", path=str(meta_path))
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"malformed meta.json: {e}", path=str(meta_path)) from e
    for key in ("variables", "intervened"):
        if key not in meta:
            raise DataFormatError(f"meta.json missing {key!r}", path=str(meta_path))
    metas = [VarMeta(v["name"], int(v["cardinality"])) for v in meta["variables"]]
    index = {m.name: k for k, m in enumerate(metas)}
    obs_path = dirpath / "obs.csv"
    if not obs_path.is_file():
        raise DataFormatError("missing obs.csv", path=str(obs_path))
    obs = _read_csv(obs_path, len(metas))
    descriptors = meta.get("interventions", {})
    ints = {}
    expected = {f"int_{name}.csv" for name in meta["intervened"]}
    for name in meta["intervened"]:
        if name not in index:
            raise DataFormatError(
                f"intervened variable {name!r} not declared", path=str(meta_path)
            )
        block_path = dirpath / f"int_{name}.csv"
        if not block_path.is_file():
            raise DataFormatError(f"missing int_{name}.csv", path=str(block_path))
        ints[index[name]] = InterventionBlock(
            _read_csv(block_path, len(metas)),
            descriptor=descriptors.get(name, {"type": "uniform"}),
        )
    known = expected | {"meta.json", "obs.csv"}
    for entry in sorted(p.name for p in dirpath.iterdir() if p.is_file()):
        if entry not in known:
            warnings.warn(f"ignoring unknown file {entry!r} in dataset directory")
    return Dataset(metas, obs, ints, seeds=meta.get("seeds", {}))
