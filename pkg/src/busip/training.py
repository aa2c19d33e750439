"""Training, evaluation and checkpointing."""
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .aggregation import cls_loss
from .config import RunConfig
from .errors import ConfigurationError, DatasetError
from .geometry import compose_affine, invert_affine
from .losses import COMPONENTS, ipc_loss, mpb_loss, pso_loss, total_loss
from .model import BUSIPNet
from .synthdata import augment_batch, load_dataset

log = logging.getLogger("busip")

CHECKPOINT_FORMAT = "busip.checkpoint/1"
LOSS_COLUMNS = ("step", "epoch", *COMPONENTS, "total")
BACKGROUND_DOMINANCE = 0.95


def set_numerics(parallel=False):
    """Pin torch to one thread unless ``parallel`` is requested.

    Single-threaded CPU kernels reduce in a fixed order, which is what makes
    runs bitwise reproducible; multi-threaded reductions are not.
    """
    if not parallel:
        torch.set_num_threads(1)


def build_model(cfg, num_classes):
    return BUSIPNet(num_classes, cfg)


def compute_losses(model, cfg, x1, x2, A1, A2, y):
    """Forward both views and evaluate every applicable loss component.

    Classification uses view 1 only; the part losses see both views. All
    part losses are computed for logging even when switched off.
    """
    B = x1.shape[0]
    out = model(torch.cat([x1, x2]))
    comps = {"cls": cls_loss(out.logits[:B], y)}
    if out.V is not None:
        eps = cfg.loss.epsilon
        V, P = out.V, out.part_tokens
        n_tok = V.shape[1] * V.shape[2]
        comps["ipc"] = ipc_loss(V, eps)
        comps["mpb"] = mpb_loss(V, cfg.loss.alpha_for(n_tok), eps)
        comps["pso"] = pso_loss(P[:, 1:], model.anchors, cfg.loss.margin, cfg.loss.scale)
        warp1to2 = compose_affine(A2, invert_affine(A1))
        warp2to1 = compose_affine(A1, invert_affine(A2))
        comps["gdc"] = model.gdc(x1, x2, V[:B], V[B:], P[:B], P[B:], warp1to2, warp2to1)
    return out, comps


def background_fraction(V):
    """Share of total part-map mass held by the background channel."""
    return float(V[..., 0].sum() / V.sum())


@dataclass
class TrainResult:
    model: BUSIPNet
    config: RunConfig
    class_names: list
    history: list = field(default_factory=list)  # one dict per step
    epochs: list = field(default_factory=list)  # one summary per epoch
    checkpoint: Path | None = None
    warnings: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_total(self):
        return self.history[-1]["total"]


def _load_split(cfg, subset):
    if cfg.data_root is None:
        raise ConfigurationError("config has no data_root")
    return load_dataset(cfg.data_root, cfg.split_file, subset=subset, size=cfg.image_size)


def _write_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in LOSS_COLUMNS})


def train(cfg, train_data=None, test_data=None, out_dir=None, save=True):
    """Train a model from ``cfg``; datasets default to the configured splits.

    Writes ``losses.csv`` (one row per step), ``metrics.json`` (per-epoch
    summaries), ``losses.png`` and ``checkpoint.pt`` into ``out_dir``.
    """
    set_numerics(cfg.parallel)
    t0 = time.perf_counter()
    if train_data is None:
        train_data = _load_split(cfg, cfg.train_subset)
    if test_data is None and cfg.eval_every_epoch and cfg.test_subset:
        test_data = _load_split(cfg, cfg.test_subset)
    torch.manual_seed(cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    shuffle = torch.Generator().manual_seed(cfg.seed + 2)

    model = build_model(cfg, train_data.num_classes)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    X, Y = train_data.tensors()
    steps_per_epoch = math.ceil(len(Y) / cfg.batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, cfg.epochs * steps_per_epoch))
    switches = cfg.loss_switches()

    result = TrainResult(model=model, config=cfg, class_names=train_data.class_names)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = torch.randperm(len(Y), generator=shuffle)
        bg = []
        for start in range(0, len(Y), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            x1, x2, A1, A2 = augment_batch(X[idx], aug_rng)
            out, comps = compute_losses(model, cfg, x1, x2, A1, A2, Y[idx])
            total = total_loss(comps, cfg.loss, switches, step=step)
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            sched.step()
            step += 1
            row = {"step": step, "epoch": epoch, "total": float(total.detach())}
            row.update({k: float(v.detach()) for k, v in comps.items()})
            result.history.append(row)
            if out.V is not None:
                bg.append(background_fraction(out.V.detach()))
        summary = _epoch_summary(result.history, epoch)
        if bg:
            summary["background_fraction"] = float(np.mean(bg))
        if test_data is not None and cfg.eval_every_epoch:
            summary["test_accuracy"] = evaluate(model, test_data)["accuracy"]
        result.epochs.append(summary)
        log.info("epoch %d %s", epoch, json.dumps(summary))

    last_bg = result.epochs[-1].get("background_fraction") if result.epochs else None
    if last_bg is not None and last_bg > BACKGROUND_DOMINANCE:
        msg = (f"background-dominant part map: {last_bg:.3f} of V mass on background "
               f"(> {BACKGROUND_DOMINANCE}); parts have collapsed")
        result.warnings.append(msg)
        log.warning(msg)
    result.seconds = time.perf_counter() - t0

    if out_dir is None:
        out_dir = cfg.out_dir
    if save and out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_loss_csv(out_dir / "losses.csv", result.history)
        (out_dir / "metrics.json").write_text(json.dumps(
            {"epochs": result.epochs, "warnings": result.warnings, "seconds": result.seconds}, indent=2))
        cfg.to_json(out_dir / "config.json")
        result.checkpoint = save_checkpoint(out_dir / "checkpoint.pt", model, cfg,
                                            train_data.class_names, opt, epoch=cfg.epochs)
        from .plotting import plot_loss_curves
        plot_loss_curves(result.history, out_dir / "losses.png")
    return result


def _epoch_summary(history, epoch):
    rows = [r for r in history if r["epoch"] == epoch]
    summary = {"epoch": epoch}
    for k in (*COMPONENTS, "total"):
        vals = [r[k] for r in rows if r.get(k) is not None]
        if vals:
            summary[k] = float(np.mean(vals))
    return summary


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, model, cfg, class_names, optimizer=None, epoch=0):
    state = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "class_names": list(class_names),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "rng": {"torch": torch.get_rng_state()},
        "epoch": epoch,
    }
    torch.save(state, path)
    return Path(path)


def load_checkpoint(path):
    """Return ``(model, config, class_names, raw_state)`` with the model in eval mode."""
    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a checkpoint (format={state.get('format')})")
    cfg = RunConfig.from_dict(state["config"])
    model = build_model(cfg, len(state["class_names"]))
    model.load_state_dict(state["model"])
    model.eval()
    return model, cfg, state["class_names"], state


# -- evaluation --------------------------------------------------------------

@torch.no_grad()
def predict(model, images, batch_size=64):
    """Eval-mode logits and (if available) part scores for ``(N, H, W)`` images."""
    model.eval()
    logits, scores = [], []
    for start in range(0, len(images), batch_size):
        out = model(images[start:start + batch_size])
        logits.append(out.logits)
        if out.part_scores is not None:
            scores.append(out.part_scores)
    return torch.cat(logits), (torch.cat(scores) if scores else None)


def accuracy_report(y_true, y_pred, class_names):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    n = len(class_names)
    conf = np.zeros((n, n), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    per_class = {name: (float(conf[i, i] / conf[i].sum()) if conf[i].sum() else None)
                 for i, name in enumerate(class_names)}
    return {
        "accuracy": float((y_true == y_pred).mean()) if len(y_true) else float("nan"),
        "n": int(len(y_true)),
        "per_class_accuracy": per_class,
        "confusion": conf.tolist(),
        "class_names": list(class_names),
    }


def check_classes(expected, dataset):
    if list(expected) != list(dataset.class_names):
        raise DatasetError(f"dataset classes {dataset.class_names} do not match "
                           f"checkpoint classes {list(expected)}")


def evaluate(model, dataset, class_names=None, explain=False):
    """Overall and per-class accuracy plus the confusion matrix.

    With ``explain`` the report also carries per-image logits and part scores
    and the mean part scores of every predicted class.
    """
    if class_names is not None:
        check_classes(class_names, dataset)
    X, Y = dataset.tensors()
    logits, scores = predict(model, X)
    pred = logits.argmax(dim=1)
    report = accuracy_report(Y.numpy(), pred.numpy(), dataset.class_names)
    if explain:
        items = []
        for i in range(len(Y)):
            items.append({
                "path": str(dataset.paths[i]) if dataset.paths else None,
                "target": int(Y[i]),
                "label": int(pred[i]),
                "logits": logits[i].tolist(),
                "part_scores": scores[i].tolist() if scores is not None else None,
            })
        report["items"] = items
        if scores is not None:
            report["part_contributions"] = {
                name: (scores[pred == c].mean(dim=0).tolist() if (pred == c).any() else None)
                for c, name in enumerate(dataset.class_names)
            }
    return report
