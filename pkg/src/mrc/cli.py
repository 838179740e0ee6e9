"""Command-line entry points.

Subcommands: train, compress, decompress, evaluate, prune-sweep,
histograms, repro.  All randomness flows from seeds in the config (or the
--seed override), and every output file is written atomically (temp +
rename).  Exit codes: 0 success, 1 usage/config error, 2 data or format
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .codec import CodecError
from .config import ConfigError, RunConfig, load_config
from .data import DataFormatError, Dataset, gen_synthetic, load_digits_dataset, load_idx_dataset
from .gaussians import DiagonalGaussian
from .nn import ModelSpec
from .pipeline import (
    CompressedModel,
    CompressedModelFormatError,
    PipelineError,
    checkpoint_from_json,
    checkpoint_to_json,
    compress_model,
    compression_ratio,
    decompress_model,
    evaluate,
    export_histograms,
    train,
)
from .pruning import STRATEGIES, PruneStrategy, default_fractions, prune_sweep


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_atomic(path: str, payload: bytes | str):
    mode = "wb" if isinstance(payload, bytes) else "w"
    tmp = f"{path}.tmp"
    kwargs = {} if isinstance(payload, bytes) else {"newline": "", "encoding": "utf-8"}
    with open(tmp, mode, **kwargs) as f:
        f.write(payload)
    os.replace(tmp, path)


def _load_dataset(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    kind = cfg.dataset
    if kind == "synthetic":
        return gen_synthetic(cfg.synth_points, cfg.synth_classes, cfg.synth_dim, cfg.synth_seed)
    if kind == "digits":
        return load_digits_dataset(cfg.data_seed)
    return load_idx_dataset(
        cfg.idx_train_images,
        cfg.idx_train_labels,
        cfg.idx_test_images,
        cfg.idx_test_labels,
        downsample_factor=cfg.downsample_factor,
        train_limit=cfg.train_limit,
        test_limit=cfg.test_limit,
    )


def _model_spec(cfg: RunConfig, train_ds: Dataset) -> ModelSpec:
    spec = ModelSpec(tuple(cfg.layers))
    if spec.layer_sizes[0] != train_ds.dim:
        raise ConfigError(f"layers[0] = {spec.layer_sizes[0]} but dataset dimension is {train_ds.dim}")
    if spec.num_classes <= int(train_ds.labels.max()):
        raise ConfigError(f"layers[-1] = {spec.num_classes} too small for dataset labels")
    return spec


def _csv_text(header: list[str], rows: list[list], comments: list[str]) -> str:
    out = [f"# {c}" for c in comments]
    out.append(",".join(header))
    for row in rows:
        out.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(out) + "\n"


def _ensure_outdir(path: str):
    os.makedirs(path, exist_ok=True)


# -- subcommands -----------------------------------------------------------


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_ds, _ = _load_dataset(cfg)
    spec = _model_spec(cfg, train_ds)
    seed = cfg.seed if args.seed is None else args.seed
    tc = cfg.train_config(seed=seed)
    posterior, coding, trace = train(spec, train_ds, tc)
    outdir = args.out or cfg.output_dir
    _ensure_outdir(outdir)
    ckpt_path = os.path.join(outdir, f"checkpoint_seed{seed}.json")
    _write_atomic(ckpt_path, checkpoint_to_json(posterior, coding, tc))
    rows = [[r.iteration, r.cross_entropy, r.kl_nats, r.beta_or_kappa] for r in trace.rows]
    comments = [
        f"config_hash={cfg.config_hash}",
        f"parameterization={tc.parameterization}",
        f"anneal_rule={trace.anneal_rule}",
        f"budget_nats_per_block={trace.budget_nats_per_block!r}",
    ]
    trace_path = os.path.join(outdir, f"trace_seed{seed}.csv")
    _write_atomic(trace_path, _csv_text(["iter", "cross_entropy", "kl_nats", "beta_or_kappa"], rows, comments))
    print(f"wrote {ckpt_path} and {trace_path}")
    return 0


def _cmd_compress(args) -> int:
    cfg = load_config(args.config)
    train_ds, _ = _load_dataset(cfg)
    with open(args.checkpoint, "r", encoding="utf-8") as f:
        ckpt_text = f.read()
    posterior, coding = checkpoint_from_json(ckpt_text)
    seed = json.loads(ckpt_text).get("seed", cfg.seed)
    tc = cfg.train_config(parameterization=posterior.parameterization, seed=seed)
    result = compress_model(posterior, coding, train_ds, tc)
    outdir = args.out or cfg.output_dir
    _ensure_outdir(outdir)
    model_path = os.path.join(outdir, f"model_seed{seed}.mrcl")
    _write_atomic(model_path, result.compressed.to_bytes())
    post_path = os.path.join(outdir, f"posterior_seed{seed}.json")
    snapshot = {
        "means": list(result.encode_posterior.means),
        "log_stds": list(result.encode_posterior.log_stds),
    }
    _write_atomic(post_path, json.dumps(snapshot, sort_keys=True))
    ratio = compression_ratio(result.compressed.spec.total_params, 32, result.compressed)
    print(f"wrote {model_path} ({len(result.compressed.to_bytes())} bytes, ratio {ratio:.1f}x) and {post_path}")
    return 0


def _cmd_decompress(args) -> int:
    with open(args.model, "rb") as f:
        cm = CompressedModel.from_bytes(f.read())
    weights = decompress_model(cm)
    _write_atomic(args.out, weights.astype("<f8").tobytes())
    print(f"wrote {args.out} ({weights.size} weights)")
    return 0


def _load_weights_for_eval(args) -> tuple[ModelSpec | None, np.ndarray]:
    if args.model:
        with open(args.model, "rb") as f:
            cm = CompressedModel.from_bytes(f.read())
        return cm.spec, decompress_model(cm)
    raw = open(args.weights, "rb").read()
    if len(raw) % 8:
        raise DataFormatError(f"{args.weights}: length {len(raw)} is not a whole number of f8 values")
    return None, np.frombuffer(raw, dtype="<f8").astype(np.float64)


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    train_ds, test_ds = _load_dataset(cfg)
    spec, weights = _load_weights_for_eval(args)
    if spec is None:
        spec = _model_spec(cfg, train_ds)
    if weights.size != spec.total_params:
        raise DataFormatError(f"weight vector has {weights.size} values, architecture needs {spec.total_params}")
    data = train_ds if args.split == "train" else test_ds
    accuracy, error = evaluate(spec, weights, data)
    print(f"accuracy={accuracy!r} error={error!r}")
    return 0


def _cmd_prune_sweep(args) -> int:
    cfg = load_config(args.config)
    train_ds, test_ds = _load_dataset(cfg)
    with open(args.model, "rb") as f:
        cm = CompressedModel.from_bytes(f.read())
    weights = decompress_model(cm)
    with open(args.posterior, "r", encoding="utf-8") as f:
        snap = json.load(f)
    posterior = DiagonalGaussian(np.array(snap["means"]), np.array(snap["log_stds"]))
    strategies = [PruneStrategy(kind, seed=cfg.seed) for kind in STRATEGIES]
    fractions = default_fractions(args.step)
    curves = prune_sweep(
        weights,
        posterior,
        strategies,
        fractions,
        cm.spec,
        test_ds,
        csv_path=None,
        seed=cfg.seed,
    )
    rows = []
    for kind in STRATEGIES:
        curve = curves[kind]
        for f_val, acc in zip(curve.fractions, curve.accuracies):
            rows.append([kind, float(f_val), float(acc), cfg.seed])
    _write_atomic(
        args.out,
        _csv_text(["strategy", "fraction", "accuracy", "seed"], rows, [f"config_hash={cfg.config_hash}"]),
    )
    print(f"wrote {args.out}")
    return 0


def _cmd_histograms(args) -> int:
    with open(args.checkpoint, "r", encoding="utf-8") as f:
        posterior, coding = checkpoint_from_json(f.read())
    layer_ids, means, log_stds = export_histograms(posterior, coding)
    rows = [[int(l), float(m), float(s)] for l, m, s in zip(layer_ids, means, log_stds)]
    _write_atomic(args.out, _csv_text(["layer", "mean", "log_std"], rows, [f"parameterization={posterior.parameterization}"]))
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_repro(args) -> int:
    cfg = load_config(args.config)
    train_ds, test_ds = _load_dataset(cfg)
    spec = _model_spec(cfg, train_ds)
    outdir = args.out or cfg.output_dir
    _ensure_outdir(outdir)
    block_sizes = list(cfg.block_sizes) or [cfg.block_size]
    summary_rows = []
    for bs in block_sizes:
        errors = []
        ratio = None
        for seed in cfg.repro_seeds:
            tc = cfg.train_config(seed=seed, block_size=bs)
            posterior, coding, _ = train(spec, train_ds, tc)
            result = compress_model(posterior, coding, train_ds, tc)
            model_path = os.path.join(outdir, f"model_bs{bs}_seed{seed}.mrcl")
            _write_atomic(model_path, result.compressed.to_bytes())
            _, err = evaluate(spec, decompress_model(result.compressed), test_ds)
            errors.append(err)
            ratio = compression_ratio(spec.total_params, 32, result.compressed)
        mean = float(np.mean(errors))
        stderr = float(np.std(errors, ddof=1) / np.sqrt(len(errors))) if len(errors) > 1 else 0.0
        summary_rows.append([bs, float(ratio), mean, stderr, cfg.max_iters])
    _write_atomic(
        os.path.join(outdir, "summary.csv"),
        _csv_text(
            ["block_size", "ratio", "error_mean", "error_stderr", "iters"],
            summary_rows,
            [f"config_hash={cfg.config_hash}", f"seeds={','.join(str(s) for s in cfg.repro_seeds)}"],
        ),
    )
    print(f"wrote {os.path.join(outdir, 'summary.csv')}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="mrc", description="Variational weight compression with minimal random coding")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="variational training; writes checkpoint and trace CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("compress", help="blockwise compress a trained checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_compress)

    p = sub.add_parser("decompress", help="decode a compressed model to raw little-endian f8 weights")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_decompress)

    p = sub.add_parser("evaluate", help="accuracy/error of a compressed model or raw weights")
    p.add_argument("--config", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("prune-sweep", help="accuracy vs pruned fraction for all strategies")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--posterior", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--step", type=float, default=0.05)
    p.set_defaults(fn=_cmd_prune_sweep)

    p = sub.add_parser("histograms", help="per-weight (layer, mean, log_std) CSV from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_histograms)

    p = sub.add_parser("repro", help="seed sweep: train, compress, evaluate, summarize")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_repro)

    return parser


def cli_main(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "evaluate" and bool(args.model) == bool(args.weights):
            raise _UsageError("evaluate needs exactly one of --model or --weights")
        return args.fn(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, CompressedModelFormatError, CodecError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
