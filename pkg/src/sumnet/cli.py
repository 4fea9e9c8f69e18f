"""Command-line front end.

Subcommands: generate-data, train, eval, infer, gradcheck, bench-scan.
Every command is deterministic given its inputs (bench-scan timings aside):
no output ever embeds a timestamp.  Exit codes are a stable contract:
0 success, 2 configuration or I/O problem, 3 numeric abort during training,
4 verification failure in gradcheck.

Train/eval configs are strict JSON: the SumConfig fields plus
train_manifest, val_manifest, and out_dir.  Relative paths inside a config
resolve against the config file's own directory.  The env var SUM_THREADS
caps evaluation worker threads (default: hardware parallelism).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import (
    CheckpointError,
    ParseError,
    generate_dataset,
    load_checkpoint,
    load_samples,
    read_ppm,
    resize_bilinear,
    save_checkpoint,
    write_pgm,
)
from .gradcheck import run_suite
from .metrics import evaluate_sample, f_scores, summarize
from .model import (
    CONDITIONINGS,
    ConfigError,
    Model,
    NumericAbort,
    PLACEMENTS,
    SumConfig,
    config_from_arrays,
    train,
)
from .scan import bench_lengths, fit_loglog_slope

DOMAIN_NAMES = ("natural-mouse", "natural-eye", "ecommerce", "ui")

_PATH_KEYS = ("train_manifest", "val_manifest", "out_dir")


def _load_train_config(path: str, overrides: dict) -> tuple:
    """Strict config document -> (SumConfig, resolved path fields)."""
    base = Path(path).parent
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    paths = {}
    for key in _PATH_KEYS:
        if key in doc:
            paths[key] = str(base / doc.pop(key))
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    cfg = SumConfig.from_dict(doc)
    missing = [k for k in _PATH_KEYS if k not in paths]
    if missing:
        raise ConfigError(f"{path}: missing {', '.join(missing)}")
    return cfg, paths


def _require_size(samples, size: int, manifest: str) -> None:
    for s in samples:
        if s.image.shape[:2] != (size, size):
            raise ConfigError(
                f"{manifest}: sample {s.sid} is {s.image.shape[0]}x{s.image.shape[1]}, "
                f"model expects {size}x{size}; regenerate the dataset")


def _workers() -> int:
    env = os.environ.get("SUM_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"SUM_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"SUM_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_data(args) -> int:
    paths = generate_dataset(args.out, n_per_domain=args.per_domain, size=args.size,
                             seed=args.seed, n_conflict_pairs=args.conflict_pairs)
    for fold in sorted(paths):
        print(f"{fold}\t{paths[fold]}")
    return 0


def cmd_train(args) -> int:
    overrides = {
        "placement": args.placement,
        "conditioning": args.conditioning,
        "seed": args.seed,
        "epochs": args.epochs,
        "lr": args.lr,
    }
    if args.kl_literal:
        overrides["kl_literal"] = True
    cfg, paths = _load_train_config(args.config, overrides)
    if args.out_dir is not None:
        paths["out_dir"] = args.out_dir
    train_samples = load_samples(paths["train_manifest"], cfg.num_domains)
    val_samples = load_samples(paths["val_manifest"], cfg.num_domains)
    _require_size(train_samples, cfg.input_size, paths["train_manifest"])
    _require_size(val_samples, cfg.input_size, paths["val_manifest"])

    model = Model(cfg)
    report = train(model, train_samples, val_samples)

    out = Path(paths["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.ckpt", model.state_arrays())
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    with open(out / "epochs.jsonl", "w", encoding="utf-8") as fh:
        for row in report.rows:
            fh.write(json.dumps(vars(row), sort_keys=True) + "\n")
    print(f"best_epoch\t{report.best_epoch}")
    print(f"f_score\t{report.f_scores[report.best_epoch]:.6f}")
    print(f"val_cc\t{report.rows[report.best_epoch].val_cc:.6f}")
    print(f"checkpoint\t{out / 'checkpoint.ckpt'}")
    return 0


def _model_from_checkpoint(path: str, config_path: str | None) -> Model:
    arrays = load_checkpoint(path)
    if config_path is not None:
        doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        for key in _PATH_KEYS:
            doc.pop(key, None)
        cfg = SumConfig.from_dict(doc)
    else:
        cfg = config_from_arrays(arrays)
    model = Model(cfg)
    model.load_state(arrays)
    return model


def _pooled_reports(samples, preds) -> list:
    """Per-sample metrics on worker threads; order follows the samples."""
    def one(pair):
        s, pred = pair
        return evaluate_sample(pred, s.smap, s.fmap, s.sid)

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        return list(pool.map(one, zip(samples, preds)))


def _oracle_reports(samples) -> list:
    """Score each ground-truth map against itself (metric smoke test)."""
    return _pooled_reports(samples, [s.smap for s in samples])


def cmd_eval(args) -> int:
    samples = load_samples(args.manifest)
    if not samples:
        raise ConfigError(f"{args.manifest}: no samples")
    lines = []
    summaries = {}
    if args.oracle:
        reports = _oracle_reports(samples)
        for r in reports:
            lines.append({"run": "oracle", **r.as_dict()})
        summaries["oracle"] = summarize(reports)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --oracle)")
        for ckpt in args.checkpoint:
            model = _model_from_checkpoint(ckpt, args.config)
            _require_size(samples, model.cfg.input_size, args.manifest)
            preds = []
            for start in range(0, len(samples), model.cfg.batch_size):
                chunk = samples[start : start + model.cfg.batch_size]
                imgs = np.stack([s.image for s in chunk])
                labels = np.array([s.label for s in chunk])
                preds.extend(model.predict(imgs, labels))
            reports = _pooled_reports(samples, preds)
            summary = summarize(reports)
            run = Path(ckpt).stem if len(args.checkpoint) == 1 else ckpt
            for r in reports:
                lines.append({"run": run, **r.as_dict()})
            summaries[run] = summary

    payload = {"summaries": summaries}
    if len(summaries) > 1:
        runs = [(name, {k: s[k]["mean"] for k in ("cc", "sim", "nss", "kld")})
                for name, s in summaries.items()]
        payload["f_scores"] = {r.name: r.f_score for r in f_scores(runs)}

    text = "".join(json.dumps(ln, sort_keys=True) + "\n" for ln in lines)
    text += json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_infer(args) -> int:
    model = _model_from_checkpoint(args.checkpoint, None)
    img = read_ppm(args.image)
    h, w = img.shape[:2]
    s = model.cfg.input_size
    resized = img if (h, w) == (s, s) else resize_bilinear(img, (s, s))
    labels = None
    if model.cfg.conditioning != "none":
        labels = np.array([DOMAIN_NAMES.index(args.domain)])
    pred = model.predict(resized[None], labels)[0]
    if (h, w) != (s, s):
        pred = resize_bilinear(pred, (h, w))
    lo, hi = float(pred.min()), float(pred.max())
    scaled = np.zeros_like(pred) if hi == lo else (pred - lo) / (hi - lo)
    write_pgm(args.out, scaled)
    print(f"wrote\t{args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_suite(args.module)
    failures = []
    print("op,rel_err,tol,status")
    for name, err, tol in rows:
        ok = err < tol
        if not ok:
            failures.append(name)
        print(f"{name},{err:.6e},{tol:g},{'ok' if ok else 'FAIL'}")
    if failures:
        print(f"gradcheck failed: {', '.join(failures)}", file=sys.stderr)
        return 4
    return 0


def cmd_bench_scan(args) -> int:
    lengths = [int(tok) for tok in args.lengths.split(",") if tok.strip()]
    if len(lengths) < 2 or any(n < 2 for n in lengths):
        raise ConfigError(f"need at least two lengths >= 2, got {lengths}")
    meds = bench_lengths(lengths, runs=args.repeats)
    print("L,seconds")
    for n in lengths:
        print(f"{n},{meds[n]:.6f}")
    print(f"slope,{fit_loglog_slope(lengths, [meds[n] for n in lengths]):.4f}")
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sumnet",
                                     description="conditional saliency toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="render the synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--per-domain", type=int, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--conflict-pairs", type=int, default=0)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--placement", choices=PLACEMENTS)
    t.add_argument("--conditioning", choices=CONDITIONINGS)
    t.add_argument("--kl-literal", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score checkpoints (or the oracle) on a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", action="append", default=[])
    e.add_argument("--config")
    e.add_argument("--oracle", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict one map for one image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--domain", required=True, choices=DOMAIN_NAMES)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("gradcheck", help="finite-difference verification")
    c.add_argument("--module", default="all",
                   choices=("all", "tensor", "scan", "blocks", "objective", "model"))
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench-scan", help="time the scan kernel across lengths")
    b.add_argument("--lengths", default="1024,2048,4096,8192")
    b.add_argument("--repeats", type=int, default=5)
    b.set_defaults(func=cmd_bench_scan)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ParseError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
