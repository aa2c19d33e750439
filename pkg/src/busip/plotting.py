"""Figures written next to the CSV/JSON reports."""
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402

from .losses import COMPONENTS, part_mass  # noqa: E402

OVERLAY_ALPHA = 0.55


def part_palette(num_parts):
    """RGB colors (uint8) for foreground parts 1..K; background is left transparent."""
    cmap = plt.get_cmap("tab10" if num_parts <= 10 else "tab20")
    return [tuple(int(round(255 * c)) for c in cmap(k % cmap.N)[:3]) for k in range(num_parts)]


def part_overlay(image, V, alpha=OVERLAY_ALPHA):
    """Blend an argmax-part coloring of ``V`` over a grayscale image.

    ``image`` is ``(H, W)`` in ``[0, 1]``; ``V`` is ``(H', W', K+1)`` with
    ``H`` a multiple of ``H'``. Returns ``(rgb uint8 (H, W, 3), labels (H, W))``
    where label 0 marks background pixels, which keep the input gray level.
    """
    image = np.asarray(image, dtype=np.float64)
    V = np.asarray(V)
    H, W = image.shape
    Hp, Wp, _ = V.shape
    labels = V.argmax(axis=-1)
    labels = np.repeat(np.repeat(labels, H // Hp, axis=0), W // Wp, axis=1)
    gray = np.repeat(np.clip(image, 0, 1)[..., None], 3, axis=2) * 255.0
    colors = np.array([(0, 0, 0)] + part_palette(V.shape[-1] - 1), dtype=np.float64)
    fg = labels > 0
    out = gray.copy()
    out[fg] = (1 - alpha) * gray[fg] + alpha * colors[labels[fg]]
    return np.round(out).astype(np.uint8), labels


@torch.no_grad()
def visualize_parts(model, image, out_png):
    """Write the part overlay PNG and a JSON sidecar with part scores and masses."""
    if not getattr(model, "use_spr", False):
        raise ValueError("model has no part module; nothing to visualize")
    model.eval()
    x = torch.as_tensor(np.asarray(image, dtype=np.float32))[None]
    out = model(x)
    V = out.V[0]
    rgb, _ = part_overlay(image, V.numpy())
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(out_png)
    K = V.shape[-1] - 1
    info = {
        "num_parts": K,
        "palette": {str(k + 1): list(c) for k, c in enumerate(part_palette(K))},
        "background": "transparent",
        "label": int(out.logits[0].argmax()),
        "logits": out.logits[0].tolist(),
        "part_scores": out.part_scores[0].tolist() if out.part_scores is not None else None,
        "part_mass": part_mass(V, eps=0.0)[0].tolist(),
    }
    json_path = out_png.with_suffix(".json")
    json_path.write_text(json.dumps(info, indent=2))
    return info


def plot_loss_curves(history, path):
    fig, ax = plt.subplots(figsize=(6, 3.6))
    steps = [r["step"] for r in history]
    for name in (*COMPONENTS, "total"):
        vals = [r.get(name) for r in history]
        if any(v is not None for v in vals):
            ax.plot(steps, [np.nan if v is None else v for v in vals], label=name,
                    lw=2.0 if name == "total" else 1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8, ncol=3, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(rows, path):
    """Horizontal bar chart of test accuracy per ablation row."""
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(rows) + 1.2))
    names = [f"{r['table']}: {r['name']}" for r in rows]
    acc = [100 * float(r["accuracy"]) for r in rows]
    colors = ["tab:blue" if r["table"] == "modules" else "tab:orange" for r in rows]
    ax.barh(range(len(rows)), acc, color=colors)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("overall accuracy (%)")
    ax.set_xlim(0, 100)
    for i, a in enumerate(acc):
        ax.text(a + 1, i, f"{a:.1f}", va="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
