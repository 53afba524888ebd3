"""Command-line entry point.

Every subcommand prints one JSON document on stdout; progress and
``name<TAB>value`` lines go to stderr unless ``--quiet`` is given.
Exit status: 0 on success, 1 on user error, 2 on internal error.
"""

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import gradcheck as gc
from .config import load_run_config
from .embeddings import SampleMeta, l2_normalize
from .errors import ReIDError
from .evaluation import evaluate, format_metrics, rank_from_distances, rerank, summarize
from .io import decode_embeddings, encode_embeddings, read_csv, read_embeddings, write_embeddings
from .pseudo_labels import NOISE, clustering_ari, num_clusters
from .synthetic import PRESETS, preset, split_samples, synth_dataset, synth_two_domain

logger = logging.getLogger("reidlab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="seed for every random draw (default 0)")
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config")
    p.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                   help="override a config field, e.g. loss.margin=0.5 (repeatable)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _run_config(args, **overrides):
    sets = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        sets[key] = _parse_value(value)
    # explicit subcommand flags win over both the file and --set
    sets.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "seed", None) is not None:
        sets["seed"] = args.seed
    return load_run_config(getattr(args, "config", None), sets)


def _say(args, text):
    if not getattr(args, "quiet", False):
        print(text, file=sys.stderr)


def _emit(args, doc, path=None):
    text = json.dumps(doc, sort_keys=True)
    print(text)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _load(path):
    if path.endswith(".csv"):
        return read_csv(path)
    return read_embeddings(path)


def _features(values, normalize):
    values = values.astype(np.float64)
    return l2_normalize(values) if normalize and values.shape[0] else values


def _synthetic(args, name, default):
    overrides = {}
    for flag, field in (("identities", "identities"), ("cameras", "cameras"),
                        ("samples", "samples_per_camera"), ("noise", "noise"),
                        ("camera_offset", "camera_offset"), ("tokens", "num_tokens")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    seed = getattr(args, "seed", None)
    if seed is not None:
        overrides["seed"] = seed
    return preset(name or default, **overrides)


def _data_source(args, default_preset):
    """Synthetic preset or ``--in`` file, as a SyntheticData-like object."""
    from .synthetic import SyntheticData
    if getattr(args, "input", None):
        values, meta, _ = _load(args.input)
        return SyntheticData(values.astype(np.float64), meta, meta.labels.copy())
    return synth_dataset(_synthetic(args, args.preset, default_preset))


def _save_encoder(path, encoder):
    if path:
        np.savez(path, **{k: v for k, v in encoder.params.items() if v is not None})


# --- subcommands ------------------------------------------------------------

def cmd_synth(args):
    data = synth_dataset(_synthetic(args, args.preset, "easy"))
    write_embeddings(args.out, data.raw, data.meta)
    doc = {"num_samples": len(data), "dim": int(data.raw.shape[1]),
           "identities": int(np.unique(data.meta.labels).size),
           "cameras": int(np.unique(data.meta.cameras).size)}
    if args.query_out or args.gallery_out:
        if not (args.query_out and args.gallery_out):
            raise UsageError("--query-out and --gallery-out go together")
        cfg = _run_config(args)
        gallery, query = split_samples(data, cfg.test_fraction, np.random.default_rng(cfg.seed))
        write_embeddings(args.query_out, query.raw, query.meta)
        write_embeddings(args.gallery_out, gallery.raw, gallery.meta)
        doc.update(num_query=len(query), num_gallery=len(gallery))
    _say(args, format_metrics(doc))
    _emit(args, doc)
    return 0


def cmd_eval(args):
    qv, qm, _ = _load(args.query)
    gv, gm, _ = _load(args.gallery)
    q, g = _features(qv, not args.raw), _features(gv, not args.raw)
    summary = evaluate(q, qm, g, gm, args.metric, cross_camera=not args.same_camera)
    _say(args, format_metrics(summary))
    _emit(args, summary, args.metrics)
    return 0


def cmd_rerank(args):
    cfg = _run_config(args, **{"rerank.k1": args.k1, "rerank.k2": args.k2,
                               "rerank.lambda_value": args.lambda_value})
    qv, qm, _ = _load(args.query)
    gv, gm, _ = _load(args.gallery)
    q, g = _features(qv, not args.raw), _features(gv, not args.raw)
    rc = cfg.rerank
    k1 = min(rc.k1, q.shape[0] + g.shape[0] - 1)
    dist = rerank(q, g, k1, min(rc.k2, k1), rc.lambda_value, args.mode)
    summary = summarize(rank_from_distances(dist, qm, gm, cross_camera=not args.same_camera))
    if args.out:
        np.save(args.out, dist)
    _say(args, format_metrics(summary))
    _emit(args, summary, args.metrics)
    return 0


def _cluster_cfg(args):
    return _run_config(args, **{"cluster.eps": args.eps, "cluster.min_pts": args.min_pts,
                                "cluster.use_jaccard": True if args.jaccard else None})


def _cluster_doc(assign, meta):
    doc = {"num_clusters": num_clusters(assign), "num_noise": int(np.sum(assign == NOISE)),
           "num_samples": int(assign.size)}
    if assign.size and np.all(meta.labels >= 0):
        doc["ari"] = clustering_ari(assign, meta.labels)
    return doc


def cmd_cluster(args):
    from .pipelines.common import clustering_distances
    from .pseudo_labels import dbscan
    cfg = _cluster_cfg(args)
    values, meta, _ = _load(args.input)
    _, dist = clustering_distances(values.astype(np.float64), cfg.cluster, cfg.rerank)
    assign = dbscan(dist=dist, eps=cfg.cluster.eps, min_pts=cfg.cluster.min_pts)
    if args.out:
        write_embeddings(args.out, values, SampleMeta(assign, meta.cameras))
    doc = _cluster_doc(assign, meta)
    _say(args, format_metrics(doc))
    _emit(args, doc)
    return 0


def cmd_refine(args):
    from .pipelines.daprh import cluster_and_refine
    cfg = _run_config(args, **{"cluster.eps": args.eps, "cluster.min_pts": args.min_pts,
                               "cluster.use_jaccard": True if args.jaccard else None,
                               "cluster.alpha": args.alpha,
                               "cluster.sigma_threshold": args.sigma_threshold})
    values, meta, _ = _load(args.input)
    assign, soft, _ = cluster_and_refine(values.astype(np.float64), cfg.cluster, cfg.rerank)
    ok = assign != NOISE
    doc = _cluster_doc(assign, meta)
    if ok.any():
        doc["max_row_sum_error"] = float(np.max(np.abs(soft[ok].sum(axis=1) - 1.0)))
        doc["mean_top_probability"] = float(soft[ok].max(axis=1).mean())
    if args.out:
        np.save(args.out, soft)
    _say(args, format_metrics(doc))
    _emit(args, doc)
    return 0


def _final_eval(log):
    evals = log.of("eval")
    keys = ("mAP", "rank1", "rank5", "rank10", "num_queries", "num_excluded")
    return {k: evals[-1][k] for k in keys}


def cmd_train_scm(args):
    from .pipelines.scm import train_scm
    cfg = _run_config(args, epochs=args.epochs, lr=args.lr)
    data = _data_source(args, "easy")
    train, test = split_samples(data, cfg.test_fraction, np.random.default_rng(cfg.seed))
    encoder, _, log = train_scm(train, cfg, test=test, log_path=args.log)
    summary = _final_eval(log)
    _save_encoder(args.model, encoder)
    _say(args, f"baseline_rank1\t{log.of('eval')[0]['rank1']:.6f}")
    _say(args, format_metrics(summary))
    _emit(args, summary, args.metrics)
    return 0


def cmd_train_daprh(args):
    from .pipelines.common import retrieval_metrics
    from .pipelines.daprh import pretrain_source, train_daprh_stage2
    cfg = _run_config(args, epochs=args.epochs, lr=args.lr,
                      **{"cluster.use_jaccard": True if args.jaccard else None,
                         "cluster.eps": args.eps, "cluster.min_pts": args.min_pts})
    source = None
    if args.two_domain:
        if getattr(args, "input", None):
            raise UsageError("--two-domain uses the synthetic generator; drop --in")
        source, target = synth_two_domain(_synthetic(args, args.preset, "easy"))
        student = pretrain_source(source, cfg)
    else:
        target = _data_source(args, "easy")
        student = None
    _, teacher, log = train_daprh_stage2(target, cfg, student=student,
                                         source=source if args.domain_loss else None,
                                         log_path=args.log)
    summary = retrieval_metrics(teacher.features(target.raw), target.meta)
    _save_encoder(args.model, teacher.encoder)
    clusters = log.of("cluster")
    if "ari" in clusters[-1]:
        _say(args, f"ari_start\t{clusters[0]['ari']:.6f}\nari_final\t{clusters[-1]['ari']:.6f}")
    _say(args, format_metrics(summary))
    _emit(args, summary, args.metrics)
    return 0


def cmd_train_vitc(args):
    from .pipelines.vitc import train_vitc
    cfg = _run_config(args, epochs=args.epochs, lr=args.lr,
                      **{"loss.lambda_cap": args.lambda_cap, "cluster.eps": args.eps,
                         "cluster.min_pts": args.min_pts})
    data = _data_source(args, "camera")
    encoder, log = train_vitc(data, cfg, log_path=args.log)
    summary = _final_eval(log)
    _save_encoder(args.model, encoder)
    clusters = log.of("cluster")
    if "ari" in clusters[-1]:
        _say(args, f"ari_start\t{clusters[0]['ari']:.6f}\nari_final\t{clusters[-1]['ari']:.6f}")
    _say(args, format_metrics(summary))
    _emit(args, summary, args.metrics)
    return 0


def cmd_gradcheck(args):
    names = list(gc.CASES) if args.all or not args.loss else args.loss
    unknown = [n for n in names if n not in gc.CASES]
    if unknown:
        raise UsageError(f"unknown loss {unknown[0]!r}; choose from {', '.join(gc.CASES)}")
    seed = getattr(args, "seed", 0)
    results = [gc.check_case(n, args.instances, seed) for n in names]
    for r in results:
        _say(args, f"{r.name}\t{r.max_error:.3e}\t{'ok' if r.passed else 'FAIL'}"
                   f"\t{r.instances} instances\t{r.redraws} redraws")
    doc = {r.name: {"max_error": r.max_error, "passed": r.passed} for r in results}
    _emit(args, doc)
    return 0 if all(r.passed for r in results) else 2


def _roundtrip_ok(values, meta, normalized):
    buf = encode_embeddings(values, meta, normalized)
    v2, m2, flag = decode_embeddings(buf)
    return (v2.tobytes() == np.asarray(values, dtype="<f4").tobytes()
            and np.array_equal(m2.labels, meta.labels)
            and np.array_equal(m2.cameras, meta.cameras) and flag == normalized
            and encode_embeddings(v2, m2, flag) == buf)


def cmd_io_roundtrip(args):
    if args.input:
        values, meta, flag = _load(args.input)
        ok = _roundtrip_ok(values, meta, flag)
        if args.out:
            write_embeddings(args.out, values, meta, flag)
            with open(args.out, "rb") as a:
                ok &= a.read() == encode_embeddings(values, meta, flag)
        doc = {"files": 1, "passed": bool(ok)}
    else:
        rng = np.random.default_rng(getattr(args, "seed", 0))
        ok, shapes = True, [(0, 4), (1, 1), (0, 1), (5, 1)]
        shapes += [tuple(rng.integers(0, 40, 2) + (0, 1)) for _ in range(args.count - len(shapes))]
        with tempfile.TemporaryDirectory() as tmp:
            for i, (n, d) in enumerate(shapes[:max(args.count, 4)]):
                values = rng.normal(size=(n, d)).astype(np.float32)
                meta = SampleMeta(rng.integers(-1, 10, n), rng.integers(0, 4, n))
                path = os.path.join(tmp, f"{i}.emb")
                write_embeddings(path, values, meta, bool(i % 2))
                v2, m2, flag = read_embeddings(path)
                ok &= (v2.tobytes() == values.tobytes()
                       and np.array_equal(m2.labels, meta.labels)
                       and np.array_equal(m2.cameras, meta.cameras) and flag == bool(i % 2))
        doc = {"files": len(shapes[:max(args.count, 4)]), "passed": bool(ok)}
    _say(args, format_metrics(doc))
    _emit(args, doc)
    return 0 if doc["passed"] else 2


# --- parser -----------------------------------------------------------------

def _train_flags(p, default_preset):
    p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help=f"synthetic data preset (default {default_preset})")
    p.add_argument("--in", dest="input", help="labeled embedding file instead of a preset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--log", help="JSONL log path (truncated)")
    p.add_argument("--metrics", help="also write the metric summary here")
    p.add_argument("--model", help="save encoder weights (.npz)")
    _synth_shape_flags(p)


def _synth_shape_flags(p):
    p.add_argument("--identities", type=int)
    p.add_argument("--cameras", type=int)
    p.add_argument("--samples", type=int, help="samples per identity and camera")
    p.add_argument("--noise", type=float)
    p.add_argument("--camera-offset", type=float)
    p.add_argument("--tokens", type=int, help="token features per sample (0 = none)")


def _dbscan_flags(p):
    p.add_argument("--eps", type=float)
    p.add_argument("--min-pts", type=int)


def _cluster_flags(p):
    p.add_argument("--in", dest="input", required=True)
    _dbscan_flags(p)
    p.add_argument("--jaccard", action="store_true", help="cluster on k-reciprocal distances")
    p.add_argument("--out")


def build_parser():
    common = _common()
    parser = _Parser(prog="reidlab", parents=[common],
                     description="Re-identification losses, pseudo-labels and evaluation "
                                 "on embedding vectors.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a synthetic dataset as an embedding file")
    p.add_argument("--preset", choices=sorted(PRESETS), default="easy")
    p.add_argument("--out", required=True)
    p.add_argument("--query-out")
    p.add_argument("--gallery-out")
    _synth_shape_flags(p)

    for name, func, text in (("eval", cmd_eval, "mAP and CMC of a query/gallery pair"),
                             ("rerank", cmd_rerank, "evaluate with k-reciprocal re-ranking")):
        p = add(name, func, text)
        p.add_argument("--query", required=True)
        p.add_argument("--gallery", required=True)
        p.add_argument("--raw", action="store_true", help="do not L2-normalize features")
        p.add_argument("--same-camera", action="store_true",
                       help="keep same-camera matches of the query identity")
        p.add_argument("--metrics", help="also write the summary JSON here")
        if name == "eval":
            p.add_argument("--metric", choices=("euclidean", "sqeuclidean", "cosine"),
                           default="euclidean")
        else:
            p.add_argument("--k1", type=int)
            p.add_argument("--k2", type=int)
            p.add_argument("--lambda", dest="lambda_value", type=float)
            p.add_argument("--mode", choices=("fuzzy", "hard"), default="fuzzy")
            p.add_argument("--out", help="save the re-ranked distance matrix (.npy)")

    p = add("cluster", cmd_cluster, "DBSCAN pseudo-labels; --out stores them as labels")
    _cluster_flags(p)
    p = add("refine", cmd_refine, "cluster, then blend hard labels with soft assignments")
    _cluster_flags(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--sigma-threshold", type=float)

    p = add("train-scm", cmd_train_scm,
            "supervised training; PK batches resample identities with fewer than K "
            "samples with replacement")
    _train_flags(p, "easy")
    p = add("train-daprh", cmd_train_daprh, "teacher-student training on refined pseudo-labels")
    _train_flags(p, "easy")
    p.add_argument("--two-domain", action="store_true",
                   help="pretrain on a labeled source domain, adapt to the target")
    p.add_argument("--domain-loss", action="store_true",
                   help="with --two-domain: keep the source and domain-confusion terms")
    p.add_argument("--jaccard", action="store_true", help="cluster on k-reciprocal distances")
    _dbscan_flags(p)
    p = add("train-vitc", cmd_train_vitc, "cluster and camera-proxy contrastive training")
    _train_flags(p, "camera")
    _dbscan_flags(p)
    p.add_argument("--lambda-cap", type=float)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of loss gradients")
    p.add_argument("--all", action="store_true")
    p.add_argument("--loss", action="append", help="one case name (repeatable)")
    p.add_argument("--instances", type=int, default=20)

    p = add("io-roundtrip", cmd_io_roundtrip, "check embedding-file round trips")
    p.add_argument("--in", dest="input", help="round-trip this file")
    p.add_argument("--out", help="rewrite the file here and compare bytes")
    p.add_argument("--count", type=int, default=100, help="random files to test")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        quiet = getattr(args, "quiet", False)
        logging.basicConfig(level=logging.ERROR if quiet else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required (see --help)")
        return args.func(args)
    except (UsageError, ReIDError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
