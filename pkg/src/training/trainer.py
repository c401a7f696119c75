"""Training loop, evaluation and the k-fold driver."""

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from loguru import logger
from tqdm import tqdm

from src.config.run_config import NetConfig, TrainConfig
from src.data.dataset import PhantomDataset
from src.data.transforms import augment
from src.errors import NumericError, TrainingError, UsageError
from src.metrics.labelmap import LabelMap
from src.metrics.report import MetricReport, metric_report
from src.network.checkpoint import load_checkpoint, save_checkpoint
from src.network.waunet import NetworkGraph, build_waunet, forward, predict_labels
from src.tensor import ops
from src.tensor.core import Tensor, backward, kernel_threads, no_grad
from src.training.optim import OptimizerState, adam_step, poly_lr


class TrainStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    EARLY_STOPPED = "early_stopped"
    FAILED = "failed"


@dataclass
class TrainResult:
    status: TrainStatus
    start_time: float
    end_time: Optional[float] = None
    steps: int = 0
    loss_history: List[float] = field(default_factory=list)
    eval_history: List[Dict[str, Any]] = field(default_factory=list)
    checkpoint_dir: Optional[str] = None
    errors: List[str] = field(default_factory=list)

    @property
    def duration(self) -> Optional[float]:
        if self.end_time:
            return self.end_time - self.start_time
        return None

    @property
    def final_loss(self) -> Optional[float]:
        return self.loss_history[-1] if self.loss_history else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "duration": self.duration,
            "steps": self.steps,
            "final_loss": self.final_loss,
            "checkpoint_dir": self.checkpoint_dir,
            "errors": self.errors,
        }


def predict_case(graph: NetworkGraph, image: Tensor, spacing=(1.0, 1.0)) -> Tuple[Tensor, LabelMap]:
    """Logits [1, K, H, W] and the predicted label map [H, W] for one image [C, H, W]."""
    with no_grad():
        logits = forward(graph, Tensor(image.data[None], dtype=graph.dtype))
    labels = predict_labels(logits, spacing)
    return logits, labels[0]


def evaluate_graph(graph: NetworkGraph, dataset: PhantomDataset, case_ids: List[int]) -> Tuple[MetricReport, List[LabelMap], List[LabelMap]]:
    if not case_ids:
        raise UsageError("cannot evaluate an empty split")
    truths, preds = [], []
    for case_id in case_ids:
        image, labels = dataset.load_case(case_id)
        _, predicted = predict_case(graph, image, labels.spacing)
        truths.append(labels)
        preds.append(predicted)
    return metric_report(truths, preds, dataset.class_names), truths, preds


def evaluate(checkpoint: Union[str, Path, NetworkGraph], dataset: PhantomDataset, split: str = "test") -> MetricReport:
    """Forward, argmax and metrics for every case of ``split``."""
    graph = checkpoint if isinstance(checkpoint, NetworkGraph) else load_checkpoint(checkpoint).graph
    report, _, _ = evaluate_graph(graph, dataset, dataset.split(split))
    logger.info(f"evaluated {report.n_cases} {split} cases: mean foreground DSC {report.mean_foreground_dsc():.4f}")
    return report


class Trainer:
    """Runs Adam on cross-entropy over a phantom dataset.

    Every random choice (initialization, data order, augmentation) is a
    function of the seed and the step index, so a resumed run replays the
    uninterrupted one.
    """

    def __init__(
        self,
        net_config: NetConfig,
        dataset: PhantomDataset,
        train_config: TrainConfig,
        out_dir: Optional[Union[str, Path]] = None,
        case_ids: Optional[List[int]] = None,
        progress: bool = False,
    ):
        self.net_config = net_config
        self.dataset = dataset
        self.config = train_config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.case_ids = list(case_ids) if case_ids is not None else dataset.split(train_config.split)
        if not self.case_ids:
            raise UsageError(f"split {train_config.split!r} of {dataset.directory} is empty")
        self.progress = progress
        self.dtype = np.dtype(net_config.precision)
        self.graph = build_waunet(net_config, train_config.seed)
        self.state = OptimizerState.for_params(self.graph.params)
        self.step = 0
        self.loss_history: List[float] = []
        self.best_dsc = -np.inf
        self.best_step = 0
        self._cases = {case_id: dataset.load_case(case_id) for case_id in self.case_ids}
        self._val_ids = dataset.split("val")

    @property
    def checkpoint_dir(self) -> Optional[Path]:
        if self.config.checkpoint_dir:
            return Path(self.config.checkpoint_dir)
        return self.out_dir / "checkpoint" if self.out_dir is not None else None

    @property
    def log_path(self) -> Optional[Path]:
        return self.out_dir / "train_log.jsonl" if self.out_dir is not None else None

    def trainable_names(self) -> List[str]:
        frozen = set(self.graph.attention_parameter_names()) if self.config.freeze_attention else set()
        return [name for name in self.graph.params if name not in frozen]

    def batch_ids(self, step: int) -> List[int]:
        """Case ids of the batch at ``step``: consecutive draws from per-epoch permutations."""
        n = len(self.case_ids)
        ids = []
        for k in range(step * self.config.batch_size, (step + 1) * self.config.batch_size):
            epoch, position = divmod(k, n)
            order = np.random.default_rng([self.config.seed, epoch]).permutation(n)
            ids.append(self.case_ids[int(order[position])])
        return ids

    def make_batch(self, step: int) -> Tuple[Tensor, LabelMap]:
        images, labels = [], []
        for b, case_id in enumerate(self.batch_ids(step)):
            image, label_map = self._cases[case_id]
            if self.config.augment:
                rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, step, b]))
                image, label_map = augment(image, label_map, self.config.augment_params, rng=rng)
            images.append(image.data)
            labels.append(label_map)
        return Tensor(np.stack(images), dtype=self.dtype), LabelMap.stack(labels)

    def train_step(self) -> float:
        images, labels = self.make_batch(self.step)
        self.graph.zero_grad()
        try:
            loss = ops.cross_entropy_loss(forward(self.graph, images), labels)
        except NumericError as exc:
            raise TrainingError(f"non-finite logits at step {self.step}: {exc}") from None
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {self.step}")
        backward(loss)
        grads = {}
        for name in self.trainable_names():
            param = self.graph.params[name]
            grads[name] = param.grad if param.grad is not None else np.zeros_like(param.data)
        lr = poly_lr(self.step, self.config)
        adam_step(self.graph.params, grads, self.state, lr, self.config, clip_norm=self.config.clip_norm)
        self._log({"step": self.step, "lr": lr, "loss": value})
        logger.debug(f"step {self.step}: lr {lr:.3e} loss {value:.6f}")
        self.loss_history.append(value)
        self.step += 1
        return value

    def _log(self, record: Dict[str, Any]) -> None:
        if self.log_path is not None:
            with self.log_path.open("a") as handle:
                handle.write(json.dumps(record) + "\n")

    def _validate(self) -> Optional[MetricReport]:
        if not self._val_ids:
            return None
        report, _, _ = evaluate_graph(self.graph, self.dataset, self._val_ids)
        self._log({"step": self.step, "eval": report.to_dict()})
        mean_dsc = report.mean_foreground_dsc()
        logger.info(f"step {self.step}: validation mean foreground DSC {mean_dsc:.4f}")
        if mean_dsc > self.best_dsc:
            self.best_dsc, self.best_step = mean_dsc, self.step
        return report

    def save(self) -> Optional[Path]:
        if self.checkpoint_dir is None:
            return None
        return save_checkpoint(
            self.checkpoint_dir,
            self.graph,
            self.step,
            loss_history=self.loss_history,
            optimizer=self.state.snapshot(),
            train_config=self.config.model_dump(mode="json"),
            extra={"best_dsc": None if not np.isfinite(self.best_dsc) else self.best_dsc, "best_step": self.best_step},
        )

    def resume(self, checkpoint_dir: Union[str, Path]) -> None:
        """Restore parameters, optimizer state and step from a checkpoint."""
        checkpoint = load_checkpoint(checkpoint_dir)
        if checkpoint.graph.config.model_dump() != self.net_config.model_dump():
            raise UsageError(f"checkpoint {checkpoint_dir} was written for a different network config")
        self.graph = checkpoint.graph
        self.step = checkpoint.step
        self.loss_history = list(checkpoint.loss_history)
        if checkpoint.optimizer is not None:
            self.state = OptimizerState.from_snapshot(checkpoint.optimizer, self.graph.params)
        best = checkpoint.extra.get("best_dsc")
        self.best_dsc = -np.inf if best is None else float(best)
        self.best_step = int(checkpoint.extra.get("best_step", 0))
        self._truncate_log()
        logger.info(f"resumed from {checkpoint_dir} at step {self.step}")

    def _truncate_log(self) -> None:
        if self.log_path is None or not self.log_path.exists():
            return
        kept = [
            line
            for line in self.log_path.read_text().splitlines()
            if line and json.loads(line)["step"] < self.step
        ]
        self.log_path.write_text("".join(f"{line}\n" for line in kept))

    def run(self, resume_from: Optional[Union[str, Path]] = None) -> TrainResult:
        result = TrainResult(status=TrainStatus.RUNNING, start_time=time.time())
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        if resume_from is not None:
            self.resume(resume_from)
        elif self.log_path is not None:
            self.log_path.write_text("")

        total = self.config.total_steps
        logger.info(f"training {self.graph.parameter_count()} parameters for {total} steps on {len(self.case_ids)} cases")
        try:
            with kernel_threads(), tqdm(total=total, initial=self.step, desc="train", disable=not self.progress) as bar:
                while self.step < total:
                    loss = self.train_step()
                    bar.update(1)
                    bar.set_postfix(loss=f"{loss:.4f}")
                    if self.config.eval_every and self.step % self.config.eval_every == 0:
                        report = self._validate()
                        if report is not None:
                            result.eval_history.append({"step": self.step, **report.to_dict()})
                    if self.config.checkpoint_every and self.step % self.config.checkpoint_every == 0:
                        self.save()
                    patience = self.config.early_stop_patience
                    if patience and self.best_step and self.step - self.best_step >= patience:
                        logger.info(f"early stop at step {self.step}: no DSC gain since step {self.best_step}")
                        result.status = TrainStatus.EARLY_STOPPED
                        break
        except TrainingError as exc:
            # a failed step leaves parameters and moments at the last good step
            result.status = TrainStatus.FAILED
            result.errors.append(str(exc))
            result.end_time = time.time()
            if self.step > 0:
                saved = self.save()
                if saved is not None:
                    logger.info(f"kept last good checkpoint at step {self.step} in {saved}")
            logger.error(f"training aborted: {exc}")
            raise

        saved = self.save()
        if result.status == TrainStatus.RUNNING:
            result.status = TrainStatus.COMPLETED
        result.steps = self.step
        result.loss_history = list(self.loss_history)
        result.checkpoint_dir = str(saved) if saved is not None else None
        result.end_time = time.time()
        logger.info(f"training {result.status.value} after {self.step} steps in {result.duration:.1f}s")
        return result


def train(
    net_config: NetConfig,
    dataset: PhantomDataset,
    train_config: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
    resume_from: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> TrainResult:
    return Trainer(net_config, dataset, train_config, out_dir, progress=progress).run(resume_from)


@dataclass
class CrossValidationResult:
    fold_reports: List[MetricReport]
    pooled: MetricReport

    def to_dict(self) -> Dict[str, Any]:
        return {
            "folds": [report.to_dict() for report in self.fold_reports],
            "pooled": self.pooled.to_dict(),
        }


def cross_validate(
    net_config: NetConfig,
    dataset: PhantomDataset,
    train_config: TrainConfig,
    k: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> CrossValidationResult:
    """Train one network per fold and evaluate it on the held-out cases."""
    k = k or train_config.folds
    fold_reports: List[MetricReport] = []
    truths: List[LabelMap] = []
    preds: List[LabelMap] = []
    for index, (training, held_out) in enumerate(dataset.folds(k)):
        fold_dir = Path(out_dir) / f"fold_{index}" if out_dir is not None else None
        fold_config = train_config.model_copy(update={"checkpoint_dir": None})
        trainer = Trainer(net_config, dataset, fold_config, fold_dir, case_ids=training, progress=progress)
        trainer.run()
        report, fold_truths, fold_preds = evaluate_graph(trainer.graph, dataset, held_out)
        logger.info(f"fold {index + 1}/{k}: mean foreground DSC {report.mean_foreground_dsc():.4f}")
        fold_reports.append(report)
        truths.extend(fold_truths)
        preds.extend(fold_preds)
    return CrossValidationResult(fold_reports=fold_reports, pooled=metric_report(truths, preds, dataset.class_names))
