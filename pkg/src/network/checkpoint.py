"""Checkpoint directories: manifest.json plus one WTF1 file per array.

Writes go to a temporary sibling directory that is renamed into place, so a
reader never sees a half-written checkpoint.
"""

import json
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from loguru import logger

from src.config.run_config import NetConfig
from src.errors import FormatError
from src.network.waunet import NetworkGraph, build_waunet
from src.tensor import wtf1

FORMAT = "waunet-checkpoint/1"
MANIFEST = "manifest.json"


@dataclass
class OptimizerSnapshot:
    """Adam moments by parameter name and the step counter."""

    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Checkpoint:
    graph: NetworkGraph
    step: int
    loss_history: List[float] = field(default_factory=list)
    optimizer: Optional[OptimizerSnapshot] = None
    train_config: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def _file_name(name: str, suffix: str = "") -> str:
    return f"{name}{suffix}.wtf1"


def save_checkpoint(
    directory,
    graph: NetworkGraph,
    step: int,
    loss_history: Optional[List[float]] = None,
    optimizer: Optional[OptimizerSnapshot] = None,
    train_config: Optional[Dict[str, Any]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{directory.name}-", dir=directory.parent))
    try:
        (staging / "params").mkdir()
        params_entries = []
        for name, param in graph.params.items():
            file_name = _file_name(name)
            wtf1.save(staging / "params" / file_name, param.data)
            params_entries.append({"name": name, "shape": list(param.shape), "file": f"params/{file_name}"})

        optimizer_entry = None
        if optimizer is not None:
            (staging / "optimizer").mkdir()
            moments = []
            for name in optimizer.m:
                m_file, v_file = _file_name(name, ".m"), _file_name(name, ".v")
                wtf1.save(staging / "optimizer" / m_file, optimizer.m[name])
                wtf1.save(staging / "optimizer" / v_file, optimizer.v[name])
                moments.append({"name": name, "m": f"optimizer/{m_file}", "v": f"optimizer/{v_file}"})
            optimizer_entry = {"t": optimizer.t, "moments": moments}

        manifest = {
            "format": FORMAT,
            "config": graph.config.model_dump(mode="json"),
            "seed": graph.seed,
            "step": step,
            "params": params_entries,
            "loss_history": list(loss_history or []),
            "optimizer": optimizer_entry,
            "train_config": train_config,
            "extra": extra or {},
        }
        (staging / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")

        retired = None
        if directory.exists():
            retired = directory.with_name(f".{directory.name}-retired")
            if retired.exists():
                shutil.rmtree(retired)
            directory.rename(retired)
        staging.rename(directory)
        if retired is not None:
            shutil.rmtree(retired)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info(f"checkpoint written to {directory} at step {step}")
    return directory


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise FormatError(manifest_path, "checkpoint manifest not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(manifest_path, f"invalid JSON: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise FormatError(manifest_path, f"unsupported checkpoint format {manifest.get('format')!r}")

    config = NetConfig.model_validate(manifest["config"])
    graph = build_waunet(config, manifest.get("seed", 0))
    names = {entry["name"] for entry in manifest["params"]}
    if names != set(graph.params):
        missing = sorted(set(graph.params) - names)
        unexpected = sorted(names - set(graph.params))
        raise FormatError(manifest_path, f"parameter mismatch; missing {missing}, unexpected {unexpected}")
    for entry in manifest["params"]:
        array = wtf1.load(directory / entry["file"])
        param = graph.params[entry["name"]]
        if tuple(array.shape) != param.shape or tuple(entry["shape"]) != param.shape:
            raise FormatError(directory / entry["file"], f"shape {array.shape} does not match {param.shape}")
        param.data = np.ascontiguousarray(array.astype(param.dtype, copy=False))

    optimizer = None
    if manifest.get("optimizer"):
        optimizer = OptimizerSnapshot(t=int(manifest["optimizer"]["t"]))
        for entry in manifest["optimizer"]["moments"]:
            optimizer.m[entry["name"]] = wtf1.load(directory / entry["m"])
            optimizer.v[entry["name"]] = wtf1.load(directory / entry["v"])

    return Checkpoint(
        graph=graph,
        step=int(manifest["step"]),
        loss_history=[float(x) for x in manifest.get("loss_history", [])],
        optimizer=optimizer,
        train_config=manifest.get("train_config"),
        extra=manifest.get("extra", {}),
    )
