"""Command-line entry point: ``busip <verb> ...``.

Every verb prints a JSON result on stdout. Failures print a single JSON line
``{"error": <type>, "message": <text>}`` on stderr and exit nonzero.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import BusipError, ConfigurationError

log = logging.getLogger("busip")


def _emit(obj):
    print(json.dumps(obj, indent=2, default=str))


def cmd_gen_synthetic(args):
    from .synthdata import gen_synthetic
    m = gen_synthetic(args.out, num_classes=args.classes, per_class=args.per_class, size=args.size,
                      seed=args.seed, use_speckle=not args.no_speckle, force=args.force,
                      test_per_class=args.test_per_class)
    _emit({"out": args.out, "images": m["num_classes"] * (m["per_class"] + m["test_per_class"]),
           "manifest": str(Path(args.out) / "manifest.json")})


def cmd_init_config(args):
    cfg = RunConfig(data_root=args.data, out_dir=args.out_dir, epochs=args.epochs, seed=args.seed)
    text = cfg.to_json()
    if args.out:
        Path(args.out).write_text(text)
        _emit({"config": args.out})
    else:
        print(text)


def cmd_train(args):
    from .training import train
    cfg = RunConfig.from_json(Path(args.config))
    overrides = {k: v for k, v in (("out_dir", args.out_dir), ("epochs", args.epochs),
                                   ("seed", args.seed), ("data_root", args.data)) if v is not None}
    if overrides:
        cfg = cfg.replace(**overrides)
    res = train(cfg)
    _emit({"out_dir": cfg.out_dir, "checkpoint": res.checkpoint, "epochs": res.epochs,
           "warnings": res.warnings, "seconds": res.seconds})


def cmd_eval(args):
    from .synthdata import load_dataset
    from .training import check_classes, evaluate, load_checkpoint
    model, cfg, class_names, _ = load_checkpoint(args.ckpt)
    subset = None if args.subset == "all" else args.subset
    data = load_dataset(args.data, args.split, subset=subset, size=cfg.image_size)
    check_classes(class_names, data)
    report = evaluate(model, data, class_names, explain=args.explain)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    _emit(report)


def cmd_ablate(args):
    from .ablation import ablation_grid
    cfg = RunConfig.from_json(Path(args.config))
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    rows = ablation_grid(cfg, out=args.out, runs_dir=args.runs_dir)
    _emit({"csv": args.out, "figure": str(Path(args.out).with_suffix(".png")), "rows": rows})


def cmd_visualize_parts(args):
    from .plotting import visualize_parts
    from .synthdata import read_png
    from .training import load_checkpoint
    model, cfg, _, _ = load_checkpoint(args.ckpt)
    img = read_png(args.image)
    if img.shape != (cfg.image_size, cfg.image_size):
        raise ConfigurationError(f"image is {img.shape[1]}x{img.shape[0]}, model expects "
                                 f"{cfg.image_size}x{cfg.image_size}")
    info = visualize_parts(model, img, args.out)
    _emit({"png": args.out, "json": str(Path(args.out).with_suffix(".json")), **info})


def cmd_extract_scattering(args):
    from .morlet import MorletFilterBank
    from .scattering import scatter
    from .synthdata import read_png
    from .tensorio import write_dump
    bank = MorletFilterBank.from_manifest(args.bank).double()
    img = torch.from_numpy(read_png(args.image).astype(np.float64))
    with torch.no_grad():
        fmap = scatter(img, bank, order=args.order)
    # stored channels-last: (H, W, Cs)
    values = fmap.values.permute(1, 2, 0).numpy()
    write_dump(args.out, values, layout="HWC",
               paths=[[list(p) for p in path] for path in fmap.path_index])
    _emit({"out": args.out, "shape": list(values.shape)})


def cmd_export_bank(args):
    from .morlet import MorletFilterBank
    if args.ckpt:
        from .training import load_checkpoint
        model, _, _, _ = load_checkpoint(args.ckpt)
        if not hasattr(model.backbone, "bank"):
            raise ConfigurationError("checkpoint has no scattering front-end")
        bank = model.backbone.bank
    else:
        bank = MorletFilterBank(J=args.J, L=args.L, grid_size=args.grid_size)
    _emit(bank.export(args.out))


def build_parser():
    p = argparse.ArgumentParser(prog="busip", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("gen-synthetic", help="write a synthetic blob dataset")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--test-per-class", type=int, default=0,
                   help="extra samples per class listed under the test split")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--no-speckle", action="store_true")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("init-config", help="print or write a default run configuration")
    s.add_argument("--data")
    s.add_argument("--out-dir", default="runs/default")
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_init_config)

    s = sub.add_parser("train", help="train from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--data")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="accuracy report for a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", help="split manifest (default DATA/split.json)")
    s.add_argument("--subset", default="test", help="split key, or 'all' for every image")
    s.add_argument("--explain", action="store_true", help="include per-image logits and part scores")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run the module and loss ablation grids")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--runs-dir")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("visualize-parts", help="part overlay PNG plus scores JSON")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_visualize_parts)

    s = sub.add_parser("extract-scattering", help="dump scattering coefficients of one image")
    s.add_argument("--image", required=True)
    s.add_argument("--bank", required=True, help="filter-bank manifest JSON")
    s.add_argument("--order", type=int, default=2, choices=(1, 2))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract_scattering)

    s = sub.add_parser("export-bank", help="write a filter-bank manifest and kernel dump")
    s.add_argument("--ckpt", help="export the learned bank of a checkpoint")
    s.add_argument("--J", type=int, default=3)
    s.add_argument("--L", type=int, default=4)
    s.add_argument("--grid-size", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_bank)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (BusipError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
