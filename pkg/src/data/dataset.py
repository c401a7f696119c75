"""Phantom datasets on disk: WTF1 case pairs plus manifest.json.

Layout::

    <dir>/manifest.json
    <dir>/case_0000_img.wtf1   float32 [1, H, W]
    <dir>/case_0000_lbl.wtf1   uint8   [H, W]
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from loguru import logger
from sklearn.model_selection import KFold
from tqdm import tqdm

from src.config.run_config import GenConfig, SplitRatios
from src.data.phantom import generate_phantom
from src.errors import ConfigurationError, FormatError, UsageError
from src.metrics.labelmap import LabelMap
from src.tensor import wtf1
from src.tensor.core import Tensor

FORMAT = "waunet-dataset/1"
MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")


def case_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def split_cases(n_cases: int, ratios: SplitRatios, seed: int) -> Dict[str, List[int]]:
    """Seeded shuffle; val and test sizes are floored and the remainder goes to train."""
    n_val = math.floor(n_cases * ratios.val + 1e-9)
    n_test = math.floor(n_cases * ratios.test + 1e-9)
    order = np.random.default_rng(seed).permutation(n_cases)
    val = order[:n_val]
    test = order[n_val : n_val + n_test]
    train = order[n_val + n_test :]
    return {name: sorted(int(i) for i in ids) for name, ids in zip(SPLITS, (train, val, test))}


def kfold_assignment(n_cases: int, k: int, seed: int) -> List[int]:
    """Fold index per case; fold sizes differ by at most one."""
    if k < 2 or k > n_cases:
        raise ConfigurationError(f"cannot split {n_cases} cases into {k} folds")
    folds = [0] * n_cases
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    for index, (_, held_out) in enumerate(splitter.split(np.arange(n_cases))):
        for case in held_out:
            folds[int(case)] = index
    return folds


@dataclass
class PhantomDataset:
    directory: Path
    manifest: Dict = field(default_factory=dict)

    @property
    def case_ids(self) -> List[int]:
        return [entry["id"] for entry in self.manifest["files"]]

    @property
    def class_names(self) -> List[str]:
        return list(self.manifest["class_names"])

    @property
    def num_classes(self) -> int:
        return len(self.manifest["class_names"])

    @property
    def size(self) -> int:
        return int(self.manifest["size"])

    @property
    def spacing(self) -> Tuple[float, float]:
        return tuple(self.manifest["spacing"])

    def __len__(self) -> int:
        return len(self.manifest["files"])

    def split(self, name: str) -> List[int]:
        if name == "all":
            return self.case_ids
        if name not in SPLITS:
            raise UsageError(f"unknown split {name!r}")
        return list(self.manifest["split"]["assignment"][name])

    def folds(self, k: int) -> List[Tuple[List[int], List[int]]]:
        """(training ids, held-out ids) per fold.

        Uses the stored assignment when ``k`` matches it, otherwise reassigns
        with the dataset seed.
        """
        stored = self.manifest["folds"]
        if stored["k"] == k:
            assignment = stored["assignment"]
        else:
            assignment = kfold_assignment(len(self), k, self.manifest["seed"])
        return [
            (
                [i for i, f in zip(self.case_ids, assignment) if f != index],
                [i for i, f in zip(self.case_ids, assignment) if f == index],
            )
            for index in range(k)
        ]

    def load_case(self, case_id: int) -> Tuple[Tensor, LabelMap]:
        entry = self._entry(case_id)
        image = wtf1.load(self.directory / entry["image"])
        labels = wtf1.load(self.directory / entry["labels"])
        if image.ndim != 3 or labels.shape != image.shape[1:]:
            raise FormatError(self.directory / entry["image"], f"image {image.shape} does not match labels {labels.shape}")
        return Tensor(image, dtype=np.float32), LabelMap(labels, self.spacing, self.num_classes)

    def _entry(self, case_id: int) -> Dict:
        for entry in self.manifest["files"]:
            if entry["id"] == case_id:
                return entry
        raise UsageError(f"case {case_id} not in dataset {self.directory}")


def _case_files(index: int) -> Tuple[str, str]:
    return f"case_{index:04d}_img.wtf1", f"case_{index:04d}_lbl.wtf1"


def write_dataset(directory, config: GenConfig, seed: int, progress: bool = False) -> PhantomDataset:
    """Generate ``config.cases`` phantoms into ``directory`` (must be empty or absent)."""
    from src.config.organs import class_names

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = config.phantom
    names = (
        ["background"] + [r.name for r in spec.recipes] if spec.recipes is not None else class_names(spec.num_organs)
    )

    files = []
    for index in tqdm(range(config.cases), desc="phantoms", disable=not progress):
        image, labels = generate_phantom(spec.model_copy(update={"seed": case_seed(seed, index)}))
        image_file, label_file = _case_files(index)
        wtf1.save(directory / image_file, image.numpy().astype(np.float32))
        wtf1.save(directory / label_file, labels.classes.astype(np.uint8))
        files.append({"id": index, "image": image_file, "labels": label_file})

    split = split_cases(config.cases, config.split, seed)
    folds = min(config.folds, config.cases) if config.cases >= 2 else None
    manifest = {
        "format": FORMAT,
        "seed": seed,
        "cases": config.cases,
        "size": spec.size,
        "num_organs": spec.num_organs,
        "class_names": names,
        "spacing": list(spec.spacing),
        "phantom": spec.model_dump(mode="json"),
        "split": {"ratios": config.split.model_dump(), "assignment": split},
        "folds": {
            "k": folds or 1,
            "assignment": kfold_assignment(config.cases, folds, seed) if folds else [0] * config.cases,
        },
        "files": files,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info(
        f"wrote {config.cases} cases to {directory} "
        f"(train {len(split['train'])}, val {len(split['val'])}, test {len(split['test'])})"
    )
    return PhantomDataset(directory=directory, manifest=manifest)


def open_dataset(directory) -> PhantomDataset:
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.is_file():
        raise FormatError(path, "dataset manifest not found")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise FormatError(path, f"unsupported dataset format {manifest.get('format')!r}")
    manifest["files"] = sorted(manifest["files"], key=lambda entry: entry["image"])
    return PhantomDataset(directory=directory, manifest=manifest)
