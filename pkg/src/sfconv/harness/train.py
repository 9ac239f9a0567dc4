"""Training and evaluation loop for the synthetic classification / segmentation tasks."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import regularizer as reg
from ..imstats import weight_histogram
from ..nn import ops
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, parse_config
from .data import N_CLASSES, Dataset, load_dataset, synth_dataset
from .models import Segmenter, classifier
from .optim import AdamState, adam_step, lr_schedule

log = logging.getLogger(__name__)

STEP_FIELDS = ["step", "epoch", "task_loss", "kl_term", "lambda", "total"]
EPOCH_FIELDS = ["epoch", "step", "lr", "task_loss", "kl_term", "total_loss",
                "train_metric", "eval_metric", "mean_layer_kl", "weight_variance"]


class TrainingDiverged(RuntimeError):
    """A non-finite loss was produced; ``spectra`` holds the per-layer singular values."""

    def __init__(self, msg, spectra):
        super().__init__(msg)
        self.spectra = spectra


def build_model(cfg: TrainConfig):
    m = cfg.model
    if cfg.task == "classification":
        kinds = m.layer_kinds(len(m.widths))
        return classifier(kinds, widths=m.widths, k=m.kernel, rank=m.rank, seed=cfg.seed)
    return Segmenter(m.layer_kinds(5), widths=m.widths, k=m.kernel, rank=m.rank, seed=cfg.seed)


def load_data(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    kind = "classify" if cfg.task == "classification" else "segment"
    if d.source == "synthetic":
        full = synth_dataset(kind, d.n_train + d.n_eval, d.seed)
    else:
        full = load_dataset(d.source)
        if full.kind != kind:
            raise ValueError(f"dataset kind {full.kind!r} does not match task {cfg.task!r}")
    n = len(full)
    n_train = min(d.n_train, n)
    return full.subset(slice(0, n_train)), full.subset(slice(n_train, n))


def task_loss(task: str, out: np.ndarray, targets: np.ndarray):
    if task == "classification":
        return ops.softmax_cross_entropy(out, targets)
    return ops.dice_loss(out, targets)


def predict(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    outs = [model.forward(images[i:i + batch_size], train=False)
            for i in range(0, images.shape[0], batch_size)]
    return np.concatenate(outs, axis=0)


def metric(task: str, out: np.ndarray, targets: np.ndarray) -> float:
    """Top-1 accuracy, or mean per-image Dice of the 0.5-thresholded mask."""
    if task == "classification":
        return float(np.mean(np.argmax(out, axis=1) == targets.astype(np.int64)))
    pred = (out >= 0.5).astype(np.float64)
    return float(np.mean([ops.dice_coefficient(p, t) for p, t in zip(pred, targets)]))


def evaluate(model, dataset: Dataset, task: str | None = None) -> float:
    task = task or dataset.task
    if len(dataset) == 0:
        return float("nan")
    return metric(task, predict(model, dataset.images), dataset.targets)


def mean_layer_kl(model) -> float:
    layers = model.factorized_layers()
    if not layers:
        return float("nan")
    total, _ = reg.network_kl(list(layers.values()))
    return total / len(layers)


def layer_spectra(model) -> dict:
    """Raw and normalized singular values of every factorized weight matrix."""
    from ..factorized import spectrum_view
    from ..linalg import svd

    out = {}
    for name, f in model.factorized_layers().items():
        view = spectrum_view(f)
        for part, mat in (("p", view.matrix_p), ("q", view.matrix_q)):
            sigma = svd(mat).sigma
            try:
                s = reg.normalize_spectrum(sigma).values
            except reg.DeadLayerError:
                s = np.zeros_like(sigma)
            out[f"{name}.{part}"] = (sigma, s)
    return out


@dataclass
class TrainResult:
    config: TrainConfig
    model: object
    state: AdamState
    epoch: int
    step_rows: list = field(default_factory=list)
    epoch_rows: list = field(default_factory=list)
    initial_mean_kl: float = float("nan")

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config_text=self.config.to_ini(),
            params=dict(self.model.params),
            adam_m=dict(self.state.m),
            adam_v=dict(self.state.v),
            step=self.state.step,
            epoch=self.epoch,
            rng_state=(self.config.seed, self.epoch),
        )

    @property
    def losses(self) -> list:
        return [r["total"] for r in self.step_rows]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\r\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row[k]) for k in fields})
    return buf.getvalue()


def _shuffle_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train(cfg: TrainConfig, out_dir=None, resume=None, data=None, threads: int | None = 1) -> TrainResult:
    """Run the training loop; optionally write metrics/checkpoints to ``out_dir``.

    ``resume`` is a :class:`Checkpoint` (or path) to continue from; its
    config must match ``cfg``.  ``data`` overrides dataset loading with a
    ``(train, eval)`` pair.  BLAS is limited to ``threads`` for reproducibility.
    """
    if threads is not None:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return _train(cfg, out_dir, resume, data)
    return _train(cfg, out_dir, resume, data)


def _train(cfg, out_dir, resume, data) -> TrainResult:
    train_ds, eval_ds = data if data is not None else load_data(cfg)
    model = build_model(cfg)
    state = AdamState()
    start_epoch = 0
    step_rows, epoch_rows = [], []
    out = Path(out_dir) if out_dir is not None else None

    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if parse_config(ckpt.config_text) != cfg:
            raise ValueError("checkpoint was written with a different configuration")
        model.set_params(ckpt.params)
        state = AdamState(step=ckpt.step, m=dict(ckpt.adam_m), v=dict(ckpt.adam_v))
        start_epoch = ckpt.epoch
        if out is not None:
            step_rows = _read_rows(out / "steps.csv", ckpt.step, "step")
            epoch_rows = _read_rows(out / "metrics.csv", ckpt.epoch, "epoch")

    result = TrainResult(cfg, model, state, start_epoch, step_rows, epoch_rows)
    result.initial_mean_kl = mean_layer_kl(model) if resume is None else float("nan")
    reg_cfg = reg.RegularizerConfig(lam=cfg.lam)
    n = len(train_ds)

    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_schedule(epoch, cfg.learning_rate, cfg.scheduler_step, cfg.scheduler_gamma)
        order = _shuffle_rng(cfg.seed, epoch).permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = train_ds.images[idx], train_ds.targets[idx]
            out_b = model.forward(x, train=True)
            loss, g = task_loss(cfg.task, out_b, y)
            grads = model.backward(g)
            report, grads = reg.combine_loss(loss, grads, model.factorized_layers(), reg_cfg)
            if not math.isfinite(report.total):
                spectra = layer_spectra(model)
                for name, (sigma, _) in spectra.items():
                    log.error("spectrum %s: %s", name, np.array2string(sigma, precision=4))
                raise TrainingDiverged(f"non-finite loss at step {state.step + 1}", spectra)
            params, state = adam_step(model.params, grads, state, lr, cfg.weight_decay)
            model.set_params(params)
            row = report.row(state.step)
            row["epoch"] = epoch + 1
            step_rows.append(row)
            epoch_losses.append(report)

        result.state, result.epoch = state, epoch + 1
        erow = {
            "epoch": epoch + 1,
            "step": state.step,
            "lr": lr,
            "task_loss": float(np.mean([r.task_loss for r in epoch_losses])),
            "kl_term": float(np.mean([r.kl_term for r in epoch_losses])),
            "total_loss": float(np.mean([r.total for r in epoch_losses])),
            "train_metric": evaluate(model, train_ds, cfg.task),
            "eval_metric": evaluate(model, eval_ds, cfg.task),
            "mean_layer_kl": mean_layer_kl(model),
            "weight_variance": weight_histogram(model).variance,
        }
        epoch_rows.append(erow)
        log.info("epoch %d: loss %.4f kl %.4f train %.4f eval %.4f", erow["epoch"],
                 erow["total_loss"], erow["kl_term"], erow["train_metric"], erow["eval_metric"])
        if out is not None:
            _write_outputs(result, out, final=(epoch + 1 == cfg.epochs))
    return result


def _read_rows(path: Path, limit: int, key: str) -> list:
    if not path.exists():
        return []
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if int(row[key]) > limit:
                break
            rows.append({k: _parse(v) for k, v in row.items()})
    return rows


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        return float(v)


def _write_outputs(result: TrainResult, out: Path, final: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "steps.csv").write_text(rows_to_csv(result.step_rows, STEP_FIELDS), encoding="utf-8", newline="")
    (out / "metrics.csv").write_text(rows_to_csv(result.epoch_rows, EPOCH_FIELDS), encoding="utf-8", newline="")
    if final or result.epoch % result.config.checkpoint_every == 0:
        ckpt = result.checkpoint()
        save_checkpoint(ckpt, out / f"epoch{result.epoch:04d}.sfck")
        save_checkpoint(ckpt, out / "last.sfck")


def model_from_checkpoint(ckpt: Checkpoint):
    cfg = parse_config(ckpt.config_text)
    model = build_model(cfg)
    model.set_params(ckpt.params)
    return cfg, model


def evaluate_checkpoint(path, data_path=None) -> tuple[str, float]:
    """Metric of a saved model on a dataset directory (or its configured held-out split)."""
    ckpt = load_checkpoint(path)
    cfg, model = model_from_checkpoint(ckpt)
    if data_path is None:
        _, ds = load_data(cfg)
    else:
        ds = load_dataset(data_path)
        if ds.task != cfg.task:
            raise ValueError(f"dataset task {ds.task!r} does not match checkpoint task {cfg.task!r}")
    name = "accuracy" if cfg.task == "classification" else "dice"
    return name, evaluate(model, ds, cfg.task)


__all__ = [
    "N_CLASSES", "TrainResult", "TrainingDiverged", "build_model", "evaluate",
    "evaluate_checkpoint", "layer_spectra", "load_data", "mean_layer_kl", "metric",
    "model_from_checkpoint", "predict", "train",
]
