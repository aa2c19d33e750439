"""Module and loss ablation grids."""
import csv
import json
import logging
from pathlib import Path

from .training import BACKGROUND_DOMINANCE, evaluate, train

log = logging.getLogger("busip")

# (name, use_lsp, use_spr, use_pki); PKI consumes part tokens, so it never runs without SPR
MODULE_ROWS = (
    ("baseline", False, False, False),
    ("SPR", False, True, False),
    ("SPR+PKI", False, True, True),
    ("LSP", True, False, False),
    ("LSP+SPR", True, True, False),
    ("LSP+SPR+PKI", True, True, True),
)
LOSS_ROWS = (
    ("full", None),
    ("w/o MPB", "mpb"),
    ("w/o IPC", "ipc"),
    ("w/o GDC", "gdc"),
    ("w/o PSO", "pso"),
)
# ablations whose known failure mode is a part map swallowed by the background
COLLAPSE_EXPECTED = {"w/o MPB", "w/o IPC"}
CSV_COLUMNS = ("table", "name", "use_lsp", "use_spr", "use_pki", "ipc", "mpb", "gdc", "pso",
               "accuracy", "final_total", "background_fraction", "background_dominant", "seconds",
               "warnings")


def ablation_configs(base):
    """The 6 module rows then the 5 loss rows, as ``(table, name, RunConfig)``."""
    out = []
    for name, lsp, spr, pki in MODULE_ROWS:
        out.append(("modules", name, base.replace(use_lsp=lsp, use_spr=spr, use_pki=pki)))
    full = base.replace(use_lsp=True, use_spr=True, use_pki=True)
    for name, dropped in LOSS_ROWS:
        switches = {k: k != dropped for k in ("ipc", "mpb", "gdc", "pso")}
        out.append(("losses", name, full.replace(losses=switches)))
    return out


def ablation_grid(base, train_data=None, test_data=None, out=None, runs_dir=None):
    """Run every ablation row and return one result dict per row.

    With ``out`` set, the rows are written as CSV and a bar chart is written
    next to it (same stem, ``.png``).
    """
    rows = []
    for table, name, cfg in ablation_configs(base):
        log.info("ablation %s / %s", table, name)
        run_dir = None
        if runs_dir is not None:
            run_dir = Path(runs_dir) / f"{table}_{name.replace('/', '').replace('+', '_').replace(' ', '_')}"
        res = train(cfg, train_data, test_data, out_dir=run_dir, save=run_dir is not None)
        test = test_data
        if test is None and cfg.test_subset and cfg.data_root:
            from .training import _load_split
            test = _load_split(cfg, cfg.test_subset)
        acc = evaluate(res.model, test)["accuracy"] if test is not None else float("nan")
        bg = res.epochs[-1].get("background_fraction")
        dominant = bg is not None and bg > BACKGROUND_DOMINANCE
        if name in COLLAPSE_EXPECTED and not dominant:
            log.info("%s: background share %s did not reach %.2f", name,
                     "n/a" if bg is None else f"{bg:.3f}", BACKGROUND_DOMINANCE)
        rows.append({
            "table": table, "name": name,
            "use_lsp": cfg.use_lsp, "use_spr": cfg.use_spr, "use_pki": cfg.use_pki,
            **cfg.loss_switches(),
            "accuracy": acc,
            "final_total": res.final_total,
            "background_fraction": bg,
            "background_dominant": dominant,
            "seconds": res.seconds,
            "warnings": " | ".join(res.warnings),
        })
    if out is not None:
        write_grid(rows, out)
    return rows


def write_grid(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in CSV_COLUMNS})
    path.with_suffix(".json").write_text(json.dumps(rows, indent=2))
    from .plotting import plot_ablation
    plot_ablation(rows, path.with_suffix(".png"))
    return path
