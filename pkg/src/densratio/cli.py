"""Command-line entry point: one subcommand per pipeline.

Exit codes: 0 success, 1 contract violation, 2 bad data or file format,
64 unknown flags/usage. Every run writes a JSON provenance record
(`<out>.prov.json`) with the resolved parameters, seeds and tool version.
The DENSRATIO_SEED environment variable is the fallback seed source.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import bootstrap, sample_size_sweep, write_bootstrap_csv, write_sweep_csv
from .curation import rank_and_filter, write_id_list, write_manifest_jsonl
from .divergence import (compute_moments, d_c_refs, d_kl_many, d_klr_many,
                         d_w_refs, metric_correlations, read_metric_csv,
                         write_metric_csv)
from .embeddings import EmbeddingMatrix, PairedCorpus, load, normalize, raw_norms, save
from .errors import ContractError, DataError
from .ngrams import Caption, coverage_curve, decile_groups, read_captions_jsonl, write_curves_csv
from .scoring import ScoreModel, iwl_weights, ratio_matrix, write_value_csv
from .toy import (MixtureWorld, TrainConfig, evaluate, evaluation_grid,
                  iwl_demo, load_params, save_params, train)

_OBJECTIVES = {"clip": "softmax_contrastive", "siglip": "sigmoid_contrastive",
               "softmax_contrastive": "softmax_contrastive",
               "sigmoid_contrastive": "sigmoid_contrastive"}


class _Parser(argparse.ArgumentParser):
    """argparse with the sysexits-style usage code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(64)


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(os.environ.get("DENSRATIO_SEED", "0"))


def _provenance(args, out_path: str, extra: dict | None = None) -> None:
    record = {
        "tool": "densratio",
        "version": __version__,
        "command": args.command,
        "params": {k: v for k, v in vars(args).items()
                   if k not in ("command", "func") and v is not None},
    }
    if extra:
        record.update(extra)
    Path(str(out_path) + ".prov.json").write_text(
        json.dumps(record, indent=2, sort_keys=True, default=str))


def _model(args) -> ScoreModel:
    return ScoreModel(logit_scale=args.scale, logit_bias=args.bias,
                      flavor=_OBJECTIVES[args.flavor], nu=args.nu)


def _add_model_flags(p, default_scale=100.0):
    p.add_argument("--scale", type=float, default=default_scale,
                   help="logit scale a (default %(default)s)")
    p.add_argument("--bias", type=float, default=0.0, help="logit bias b")
    p.add_argument("--flavor", default="clip", choices=sorted(_OBJECTIVES),
                   help="scoring flavor")
    p.add_argument("--nu", type=int, default=1,
                   help="negatives per positive (sigmoid calibration)")


# ---------------------------------------------------------------------------
# subcommand handlers

def _cmd_ingest(args) -> int:
    m = load(args.infile, fmt=args.format, modality=args.modality)
    if args.norms_out:
        write_metric_csv(args.norms_out, raw_norms(m))
    if args.normalize:
        m = normalize(m)
    save(m, args.out, fmt="emb1")
    _provenance(args, args.out, {"n": m.n, "d": m.d})
    return 0


def _cmd_score(args) -> int:
    texts = normalize(load(args.texts))
    images = normalize(load(args.images))
    model = _model(args)
    calibration = args.calibration
    ratios = ratio_matrix(texts, images, model, calibration)
    header = {"a": model.logit_scale, "b": model.logit_bias,
              "flavor": model.flavor,
              "calibration": calibration or model.default_calibration}
    if args.matrix:
        ids = [f"{t}:{i}" for t in texts.ids for i in images.ids]
        write_value_csv(args.out, ids, ratios.reshape(-1), header)
    else:
        if texts.n != images.n:
            raise ContractError(
                "pairwise output needs equally sized text and image sets; "
                "pass --matrix for the full grid")
        write_value_csv(args.out, texts.ids, np.diag(ratios), header)
    _provenance(args, args.out)
    return 0


def _cmd_kl(args) -> int:
    queries = normalize(load(args.queries))
    refs = normalize(load(args.refs))
    model = _model(args)
    if args.metric == "d_kl":
        mv = d_kl_many(queries, refs, model)
    elif args.metric == "d_klr":
        mv = d_klr_many(queries, refs, model)
    elif args.metric == "d_c":
        mv = d_c_refs(queries, refs, model.logit_scale)
    else:
        if not args.refs2:
            raise ContractError("d_w needs --refs2 (own-modality reference set)")
        refs_own = normalize(load(args.refs2))
        mv = d_w_refs(queries, refs, refs_own, model.logit_scale)
    write_metric_csv(args.out, mv)
    _provenance(args, args.out)
    return 0


def _cmd_moments(args) -> int:
    texts = normalize(load(args.texts))
    images = normalize(load(args.images))
    ms = compute_moments(texts, images)
    doc = {
        "mean_text": ms.mean_text.tolist(), "mean_image": ms.mean_image.tolist(),
        "cov_text": ms.cov_text.tolist(), "cov_image": ms.cov_image.tolist(),
        "counts": list(ms.counts),
    }
    Path(args.out).write_text(json.dumps(doc, sort_keys=True))
    _provenance(args, args.out)
    return 0


def _load_refs(args):
    if args.refs_images and args.refs_texts:
        return PairedCorpus(images=normalize(load(args.refs_images)),
                            texts=normalize(load(args.refs_texts)))
    if args.refs:
        return normalize(load(args.refs))
    raise ContractError("pass --refs, or --refs-images with --refs-texts")


def _cmd_bootstrap(args) -> int:
    queries = normalize(load(args.queries))
    refs = _load_refs(args)
    report = bootstrap(queries, refs, args.metric, _model(args),
                       B=args.resamples, seed=_seed(args), threads=args.threads)
    write_bootstrap_csv(args.out, report)
    _provenance(args, args.out, {"seed": report.seed})
    return 0


def _cmd_sweep(args) -> int:
    queries = normalize(load(args.queries))
    refs = _load_refs(args)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = sample_size_sweep(queries, refs, args.metric, _model(args),
                             sizes=sizes, repeats=args.repeats,
                             seed=_seed(args), B=args.resamples,
                             threads=args.threads)
    write_sweep_csv(args.out, rows, {
        "metric": args.metric, "B": args.resamples, "repeats": args.repeats,
        "seed": _seed(args), "sizes": sizes,
    })
    _provenance(args, args.out, {"seed": _seed(args)})
    return 0


def _cmd_curate(args) -> int:
    metric = read_metric_csv(args.metric)
    pair_ids = []
    with Path(args.pairs).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                pair_ids.append(str(json.loads(line)["id"]))
    manifest = rank_and_filter(pair_ids, metric, args.keep, tie_rule=args.tie_rule)
    write_manifest_jsonl(manifest, args.out)
    if args.ids_out:
        write_id_list(manifest, args.ids_out)
    _provenance(args, args.out, {"kept": len(manifest)})
    return 0


def _cmd_ngram(args) -> int:
    captions = read_captions_jsonl(args.captions)
    metric = read_metric_csv(args.metric)
    group_by = {"own": "own_metric", "paired-image": "paired_image_metric"}[args.group_by]
    groups = decile_groups(metric, captions, group_by=group_by)
    orders = [int(n) for n in args.orders.split(",")]
    curves = {}
    for g, group in enumerate(groups):
        for n in orders:
            if not group:
                continue
            curves[(g, n)] = coverage_curve(group, n, args.k_max)
    write_curves_csv(args.out, curves)
    _provenance(args, args.out)
    return 0


def _cmd_toy_gen(args) -> int:
    world = MixtureWorld.default(args.k, args.d, var=args.var, seed=_seed(args))
    Path(args.out).write_text(world.to_json())
    _provenance(args, args.out)
    return 0


def _train_config(args, doc: dict) -> TrainConfig:
    base = dict(doc.get("train", {}))
    base["objective"] = _OBJECTIVES[args.objective]
    base["seed"] = _seed(args)
    for key in ("steps", "batch_size", "lr", "hidden", "embed_dim"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    return TrainConfig.from_dict(base)


def _cmd_toy_train(args) -> int:
    doc = json.loads(Path(args.config).read_text())
    world = MixtureWorld.from_json(json.dumps(doc))
    config = _train_config(args, doc)
    params, losses = train(world, config)
    save_params(params, args.out)
    if args.losses:
        write_value_csv(args.losses, [str(k) for k in range(len(losses))],
                        losses, {"config": config.to_dict()})
    _provenance(args, args.out, {"seed": config.seed, "final_loss": float(losses[-1])})
    return 0


def _cmd_toy_eval(args) -> int:
    world = MixtureWorld.from_file(args.world)
    params = load_params(args.params)
    result = evaluate(world, params, n_test=args.n_test, seed=_seed(args))
    Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True))
    if args.grid_out:
        for label in range(world.K):
            rows = evaluation_grid(world, params, label)
            path = f"{args.grid_out}_label{label}.csv"
            with open(path, "w") as fh:
                fh.write("x,y,true_ratio,predicted_ratio\n")
                for x, y, t, p in rows:
                    fh.write(",".join(repr(float(v)) for v in (x, y, t, p)) + "\n")
    _provenance(args, args.out, {"seed": _seed(args)})
    return 0


def _cmd_iwl_weights(args) -> int:
    images = normalize(load(args.images))
    prompt = normalize(load(args.prompt))
    if prompt.n != 1:
        raise ContractError(f"prompt file must hold exactly one vector, got {prompt.n}")
    w = iwl_weights(images, prompt.rows[0], args.scale)
    write_value_csv(args.out, images.ids, w,
                    {"a": args.scale, "kind": "iwl_weight"})
    _provenance(args, args.out)
    return 0


def _cmd_iwl_demo(args) -> int:
    world = MixtureWorld.from_file(args.world)
    config = TrainConfig(objective="softmax_contrastive", steps=args.steps,
                         batch_size=args.batch_size, hidden=32, embed_dim=8,
                         seed=_seed(args))
    report = iwl_demo(world, args.prompt_label, config)
    Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    _provenance(args, args.out, {"seed": _seed(args)})
    return 0


def _cmd_correlate(args) -> int:
    metrics = [read_metric_csv(p) for p in args.metrics]
    corr = metric_correlations(metrics)
    Path(args.out).write_text(corr.to_json())
    _provenance(args, args.out)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="densratio",
                     description="Density-ratio toolkit for contrastive embeddings")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert CSV/JSONL/EMB1 to EMB1")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="csv", choices=["emb1", "csv", "jsonl"])
    p.add_argument("--modality", default="image", choices=["image", "text"])
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--norms-out", help="write pre-normalization raw norms CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("score", help="calibrated density ratios for pairs")
    p.add_argument("--texts", required=True)
    p.add_argument("--images", required=True)
    _add_model_flags(p)
    p.add_argument("--calibration", choices=["empirical_Z", "nu_eb", "none"])
    p.add_argument("--matrix", action="store_true", help="full text x image grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("kl", help="per-query divergence metrics")
    p.add_argument("--metric", required=True, choices=["d_kl", "d_klr", "d_c", "d_w"])
    p.add_argument("--queries", required=True)
    p.add_argument("--refs", required=True,
                   help="reference set (other modality for d_kl/d_klr/d_w, own for d_c)")
    p.add_argument("--refs2", help="own-modality reference set (d_w only)")
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_kl)

    p = sub.add_parser("moments", help="means and covariances of reference sets")
    p.add_argument("--texts", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_moments)

    for name, helptext in (("bootstrap", "bootstrap error report"),
                           ("sweep", "sample-size sweep of bootstrap RMSE")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--queries", required=True)
        p.add_argument("--refs", help="single reference matrix")
        p.add_argument("--refs-images", help="paired corpus, image side")
        p.add_argument("--refs-texts", help="paired corpus, text side")
        p.add_argument("--metric", required=True,
                       choices=["d_kl", "d_klr", "d_c", "d_w"])
        _add_model_flags(p)
        p.add_argument("-B", "--resamples", type=int, default=100)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", required=True)
        if name == "sweep":
            p.add_argument("--sizes", default="100,500,1000,5000")
            p.add_argument("--repeats", type=int, default=8)
            p.set_defaults(func=_cmd_sweep)
        else:
            p.set_defaults(func=_cmd_bootstrap)

    p = sub.add_parser("curate", help="keep the top fraction by metric")
    p.add_argument("--metric", required=True, help="metric CSV")
    p.add_argument("--keep", type=float, required=True)
    p.add_argument("--pairs", required=True, help="JSONL pool with an 'id' per pair")
    p.add_argument("--tie-rule", default="by_id", choices=["by_id", "stable"])
    p.add_argument("--ids-out", help="also write a plain ID list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("ngram", help="decile coverage curves for captions")
    p.add_argument("--captions", required=True, help="JSONL {id, text[, image_id]}")
    p.add_argument("--metric", required=True, help="metric CSV")
    p.add_argument("--group-by", default="own", choices=["own", "paired-image"])
    p.add_argument("--orders", default="1,2,3")
    p.add_argument("--k-max", type=int, default=2500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ngram)

    p = sub.add_parser("toy-gen", help="write a mixture world JSON")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--var", type=float, default=4.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_toy_gen)

    p = sub.add_parser("toy-train", help="train toy encoders on a world")
    p.add_argument("--config", required=True, help="world JSON (optional 'train' section)")
    p.add_argument("--objective", default="clip", choices=sorted(_OBJECTIVES))
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--losses", help="write the loss curve CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_toy_train)

    p = sub.add_parser("toy-eval", help="score trained encoders against the oracle")
    p.add_argument("--params", required=True)
    p.add_argument("--world", required=True)
    p.add_argument("--n-test", type=int, default=8192)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-out", help="prefix for per-label grid CSVs (d=2)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_toy_eval)

    p = sub.add_parser("iwl-weights", help="importance weights for images given a prompt")
    p.add_argument("--images", required=True)
    p.add_argument("--prompt", required=True, help="EMB1 file with one prompt vector")
    p.add_argument("--scale", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_iwl_weights)

    p = sub.add_parser("iwl-demo", help="weighted vs baseline training comparison")
    p.add_argument("--world", required=True)
    p.add_argument("--prompt-label", type=int, required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=128)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_iwl_demo)

    p = sub.add_parser("correlate", help="Pearson matrix across metric CSVs")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_correlate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 64
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"densratio: contract error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"densratio: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
