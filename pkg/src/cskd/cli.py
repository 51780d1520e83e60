"""Command line entry point: ``cskd train | eval | sweep | gen-data``.

Exit status is 0 on success, 2 on configuration or input errors and 3 when
training aborts on a non-finite value.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .data import hash_split, load_csv, load_idx, save_csv, synth_gaussians
from .errors import CSKDError, ConfigError, NumericError
from .training import evaluate, sweep, train

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("cskd")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_dataset(path: str):
    if "," in path:
        images, labels = path.split(",", 1)
        return load_idx(images, labels)
    return load_csv(path)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    manifest = train(cfg)
    print(json.dumps(manifest.final, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    out = args.out or str(Path(args.checkpoint).with_suffix("")) + "_eval"
    result = evaluate(args.checkpoint, ds, n_bins=args.bins, out_dir=out)
    print(json.dumps(result.metrics, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    if cfg.loss.kind == "ce":
        raise ConfigError("sweeping T and lambda_cls needs a distillation loss kind, not 'ce'")
    table = sweep(cfg, args.T, args.lcls)
    for row in table:
        print(json.dumps(row, sort_keys=True))
    return 0


def cmd_gen_data(args) -> int:
    text = args.spec
    spec_path = Path(text)
    try:
        raw = json.loads(spec_path.read_text() if spec_path.is_file() else text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--spec is neither a JSON file nor inline JSON: {exc}") from None
    allowed = {"classes", "per_class", "dim", "spread", "seed", "n_samples", "test_fraction"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown gen-data keys: {unknown}")
    ds = synth_gaussians(
        raw.get("classes", 8),
        raw.get("per_class", 125),
        raw.get("dim", 2),
        raw.get("spread", 0.6),
        raw.get("seed", 0),
        n_samples=raw.get("n_samples"),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if "test_fraction" in raw:
        tr, te = hash_split(ds, raw["test_fraction"])
        save_csv(tr, out.with_name(out.stem + "_train.csv"))
        save_csv(te, out.with_name(out.stem + "_test.csv"))
    else:
        save_csv(ds, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cskd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="CSV file, or IMAGES,LABELS for an IDX pair")
    p.add_argument("--out")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over temperature and class-wise loss weight")
    p.add_argument("--config", required=True)
    p.add_argument("--T", type=_floats, required=True)
    p.add_argument("--lcls", type=_floats, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-data", help="write a synthetic Gaussian dataset as CSV")
    p.add_argument("--spec", required=True, help="JSON file or inline JSON object")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        log.error("numeric abort: %s", exc)
        return EXIT_NUMERIC
    except (CSKDError, OSError) as exc:
        log.error("error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
