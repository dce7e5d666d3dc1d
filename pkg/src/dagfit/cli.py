"""Experiment runner: generation, fitting, evaluation, verification,
confounder detection, and gradient-variance probing as subcommands.

Every run writes a ``manifest.json`` capturing the exact configuration,
seeds, inputs, output hashes and timings; re-running the same manifest in
single-threaded mode reproduces the outputs bit for bit. Heavy imports are
deferred until after the thread-count environment is fixed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CAPACITY = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _set_threads(count):
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(count))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(path):
    path = Path(path)
    if path.is_file():
        return _sha256(path)
    return {p.name: _sha256(p) for p in sorted(path.iterdir()) if p.is_file()}


def _write_manifest(out_dir, command, args, seeds, outputs, started, config=None, dataset=None):
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "arguments": args,
        "config": config,
        "seeds": seeds,
        "dataset": str(dataset) if dataset else None,
        "outputs": {str(p): _hash_tree(p) for p in outputs},
        "threads": int(os.environ.get("OMP_NUM_THREADS", "1")),
        "wall_seconds": round(time.time() - started, 3),
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _emit(payload):
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _fail(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    line = getattr(exc, "line", None)
    if line is not None:
        payload["line"] = line
    json.dump(payload, sys.stderr)
    sys.stderr.write("\n")
    return code


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dagfit",
        description="Causal structure discovery from observational and interventional data.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("DAGFIT_THREADS", "1")),
        help="BLAS thread count (default: DAGFIT_THREADS or 1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic dataset and its ground truth")
    p.add_argument("--kind", required=True,
                   choices=["bidiag", "chain", "collider", "full", "jungle", "random"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--cardinality", type=int, default=10)
    p.add_argument("--mechanism", choices=["neural", "product", "deterministic"],
                   default="neural")
    p.add_argument("--obs", type=int, default=5000)
    p.add_argument("--int", dest="int_count", type=int, default=200)
    p.add_argument("--confounders", type=int, default=0)
    p.add_argument("--edge-prob", type=float, default=0.3)
    p.add_argument("--leaf-noise", action="store_true")
    p.add_argument("--targets", type=str, default=None,
                   help="comma-separated variable names to intervene on (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="learn a graph from a dataset directory")
    p.add_argument("dataset_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON file mirroring the config fields")
    p.add_argument("--estimator", choices=["mlp", "table"], default="mlp")
    p.add_argument("--truth-cgm", default=None, help="BIF model for table-estimator mode")
    p.add_argument("--truth-graph", default=None, help="graph file for trace diagnostics")
    p.add_argument("--acyclic", action="store_true")
    p.add_argument("--confounders", action="store_true")
    p.add_argument("--tau", type=float, default=0.4)
    p.add_argument("--partial", choices=["auto", "on", "off"], default="auto")
    p.add_argument("--order-mode", choices=["auto", "greedy", "exhaustive"], default="auto")
    for name in ("epochs", "dist-iters", "graph-iters", "graph-samples", "batch-size", "seed"):
        p.add_argument(f"--{name}", type=int, default=None)
    for name in ("sparsity", "lr-model", "lr-gamma", "lr-theta", "weight-decay"):
        p.add_argument(f"--{name}", type=float, default=None)
    p.add_argument("--theta-freeze", action="store_true", default=None)

    p = sub.add_parser("eval", help="compare a predicted graph against the truth")
    p.add_argument("pred")
    p.add_argument("truth")

    p = sub.add_parser("verify", help="check the convergence conditions of a model exactly")
    p.add_argument("model", help="a .bif model file")
    p.add_argument("--sparsity", type=float, default=None)
    p.add_argument("--json-out", default=None)

    p = sub.add_parser("variance", help="compare gradient-estimator standard deviations")
    p.add_argument("dataset_dir")
    p.add_argument("--truth-cgm", default=None,
                   help="BIF model for exact estimators (default: dataset_dir/../truth_cgm.bif)")
    p.add_argument("--k-list", default="20,100,400")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional directory for the full per-edge dump")

    p = sub.add_parser("parse", help="parse a .bif network and emit graph files")
    p.add_argument("bif_file")
    p.add_argument("--out", required=True)
    return parser


def _cmd_generate(args):
    import math

    import numpy as np

    from . import bif, cgm, graphs, storage

    if args.n < 2:
        raise _usage("--n must be at least 2")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    g = graphs.gen_graph(args.kind, args.n, edge_prob=args.edge_prob, seed=args.seed,
                         cardinality=args.cardinality)
    latents = []
    full = g
    if args.confounders > 0:
        full, latents = cgm.add_latent_confounders(g, args.confounders, args.seed + 1)
    if args.mechanism == "neural":
        model = cgm.make_neural_cgm(full, args.cardinality, args.seed + 2)
    elif args.mechanism == "product":
        model = cgm.make_product_cgm(full, args.cardinality, args.seed + 2)
    else:
        model = cgm.make_deterministic_cgm(full, args.cardinality, args.seed + 2,
                                           leaf_noise=args.leaf_noise)
    targets = None
    if args.targets:
        wanted = [s.strip() for s in args.targets.split(",") if s.strip()]
        name_to_idx = {m.name: k for k, m in enumerate(full.metas)}
        targets = [name_to_idx[w] for w in wanted]
    dataset = cgm.generate_dataset(model, args.obs, args.int_count, args.seed,
                                   latent_vars=latents, targets=targets)
    ds_dir = storage.write_dataset(dataset, out / "dataset")
    observed = [i for i in range(full.n) if i not in set(latents)]
    truth_observed = graphs.CausalGraph(
        [full.metas[i] for i in observed],
        full.adj[np.ix_(observed, observed)],
    )
    outputs = []
    truth_path = out / "truth_graph.txt"
    truth_path.write_text(graphs.write_graph_text(truth_observed), encoding="utf-8")
    outputs.append(truth_path)
    if latents:
        full_path = out / "full_graph.txt"
        full_path.write_text(graphs.write_graph_text(full), encoding="utf-8")
        pairs = [sorted(int(c) for c in full.children(l)) for l in latents]
        conf_path = out / "confounded_pairs.json"
        conf_path.write_text(json.dumps(pairs) + "\n", encoding="utf-8")
        outputs += [full_path, conf_path]
    if math.prod(model.cards) <= cgm.MAX_JOINT_CELLS // 10:
        try:
            text = bif.unparse_bif(model)
        except Exception:
            text = None
        if text is not None:
            cgm_path = out / "truth_cgm.bif"
            cgm_path.write_text(text, encoding="utf-8")
            outputs.append(cgm_path)
    _write_manifest(out, "generate", vars(args) | {"out": str(out)},
                    {"seed": args.seed}, [ds_dir] + outputs, started)
    _emit({
        "schema_version": SCHEMA_VERSION,
        "dataset": str(ds_dir),
        "nodes": truth_observed.n,
        "edges": truth_observed.num_edges,
        "latents": len(latents),
    })
    return EXIT_OK


def _usage(message):
    err = SystemExit(EXIT_USAGE)
    print(f"usage error: {message}", file=sys.stderr)
    return err


def _load_fit_config(args):
    from .fitting import FitConfig

    base = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            from .errors import ConfigError

            raise ConfigError(f"config file not found: {path}")
        base = FitConfig.from_json(path.read_text(encoding="utf-8")).to_dict()
    overrides = {
        "epochs": args.epochs,
        "dist_iters": args.dist_iters,
        "graph_iters": args.graph_iters,
        "graph_samples": args.graph_samples,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "sparsity": args.sparsity,
        "lr_model": args.lr_model,
        "lr_gamma": args.lr_gamma,
        "lr_theta": args.lr_theta,
        "weight_decay": args.weight_decay,
        "theta_freeze": args.theta_freeze,
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return FitConfig.from_dict(base)


def _cmd_fit(args):
    import numpy as np

    from . import bif, confounders as conf_mod, fitting, graphs, storage
    from .errors import ConfigError
    from .estimators import TableEstimator

    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = storage.read_dataset(args.dataset_dir)
    config = _load_fit_config(args)
    estimators = None
    if args.estimator == "table":
        if not args.truth_cgm:
            raise ConfigError("--estimator table requires --truth-cgm")
        model = bif.load_bif(args.truth_cgm).cgm
        if model.graph.names != [m.name for m in dataset.metas]:
            raise ConfigError("truth model variables do not match the dataset")
        estimators = [TableEstimator(model, i) for i in range(model.n)]
    truth = None
    if args.truth_graph:
        truth = graphs.read_graph_text(Path(args.truth_graph).read_text(encoding="utf-8"))
    partial = {"auto": None, "on": True, "off": False}[args.partial]
    result = fitting.fit(dataset, config, estimators=estimators, truth_graph=truth,
                         confounders=args.confounders, partial=partial)
    outputs = []
    pred_path = out / "pred_graph.txt"
    pred_path.write_text(graphs.write_graph_text(result.graph), encoding="utf-8")
    outputs.append(pred_path)
    params_path = out / "params.npz"
    with open(params_path, "wb") as fh:
        np.savez(fh, gamma=result.params.gamma, theta=result.params.theta)
    outputs.append(params_path)
    trace_path = out / "trace.jsonl"
    with open(trace_path, "w", encoding="utf-8") as fh:
        for entry in result.trace:
            fh.write(json.dumps({"schema_version": SCHEMA_VERSION} | entry, sort_keys=True) + "\n")
    outputs.append(trace_path)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "pred_graph": str(pred_path),
        "edges": result.graph.num_edges,
    }
    if args.acyclic:
        n = dataset.n
        mode = args.order_mode
        if mode == "auto":
            mode = "exhaustive" if n <= 10 else "greedy"
        order, acyclic_graph = graphs.enforce_acyclic_order(
            result.params, mode=mode, metas=dataset.metas
        )
        acyclic_path = out / "pred_graph_acyclic.txt"
        acyclic_path.write_text(graphs.write_graph_text(acyclic_graph), encoding="utf-8")
        order_path = out / "order.json"
        order_path.write_text(json.dumps({"order": list(order.order), "mode": mode}) + "\n",
                              encoding="utf-8")
        outputs += [acyclic_path, order_path]
        summary["pred_graph_acyclic"] = str(acyclic_path)
        summary["acyclic_edges"] = acyclic_graph.num_edges
    if args.confounders:
        report = conf_mod.detect_confounders(result.split, args.tau)
        conf_path = out / "confounders.json"
        conf_path.write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
        outputs.append(conf_path)
        summary["confounders_flagged"] = len(report.flagged_pairs())
    if truth is not None:
        summary["shd"] = graphs.shd(result.graph, truth)
    _write_manifest(out, "fit", {k: v for k, v in vars(args).items()},
                    {"seed": config.seed}, outputs, started,
                    config=config.to_dict(), dataset=args.dataset_dir)
    _emit(summary)
    return EXIT_OK


def _cmd_eval(args):
    from . import graphs

    pred = graphs.read_graph_text(Path(args.pred).read_text(encoding="utf-8"))
    truth = graphs.read_graph_text(Path(args.truth).read_text(encoding="utf-8"))
    if pred.names != truth.names:
        from .errors import ParameterError

        raise ParameterError("graphs are over different variable sets")
    precision, recall = graphs.edge_precision_recall(pred, truth)
    result = {
        "schema_version": SCHEMA_VERSION,
        "shd": graphs.shd(pred, truth),
        "precision": precision,
        "recall": recall,
        "pred_edges": pred.num_edges,
        "truth_edges": truth.num_edges,
    }
    print(f"{'metric':<12}{'value':>10}", file=sys.stderr)
    for key in ("shd", "precision", "recall"):
        print(f"{key:<12}{result[key]:>10.4f}", file=sys.stderr)
    _emit(result)
    return EXIT_OK


def _cmd_verify(args):
    from . import bif, convergence

    doc = bif.load_bif(args.model)
    report = convergence.check_conditions(doc.cgm, sparsity=args.sparsity)
    print(report.to_table(names=doc.cgm.graph.names), file=sys.stderr)
    payload = {"schema_version": SCHEMA_VERSION} | report.to_json()
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    _emit(payload)
    return EXIT_OK


def _cmd_variance(args):
    import numpy as np

    from . import bif, storage
    from .errors import ConfigError
    from .estimators import TableEstimator
    from .fitting import gradient_variance_probe
    from .graphs import EdgeParams

    if args.reps < 30:
        print("usage error: --reps must be at least 30", file=sys.stderr)
        return EXIT_USAGE
    started = time.time()
    dataset = storage.read_dataset(args.dataset_dir)
    truth_path = args.truth_cgm or (Path(args.dataset_dir).parent / "truth_cgm.bif")
    if not Path(truth_path).is_file():
        raise ConfigError(
            "variance probing uses exact estimators; pass --truth-cgm or generate "
            "a dataset whose model fits in a truth_cgm.bif"
        )
    model = bif.load_bif(truth_path).cgm
    if model.graph.names != [m.name for m in dataset.metas]:
        raise ConfigError("truth model variables do not match the dataset")
    estimators = [TableEstimator(model, i) for i in range(model.n)]
    params = EdgeParams.zeros(dataset.n)
    ks = [int(s) for s in args.k_list.split(",") if s.strip()]
    rng = np.random.default_rng(args.seed)
    rows = []
    dumps = {}
    for k in ks:
        probe = gradient_variance_probe(estimators, dataset, params, k, args.reps, rng)
        ok = probe.comparable()
        ratio = probe.std_main[ok] / probe.std_baseline[ok]
        rows.append({
            "k": k,
            "edges_compared": int(ok.sum()),
            "std_main_mean": float(np.nanmean(probe.std_main[ok])),
            "std_baseline_mean": float(np.nanmean(probe.std_baseline[ok])),
            "median_std_ratio": float(np.nanmedian(ratio)),
            "frac_at_most_half": float(np.nanmean(ratio <= 0.5)),
            "mean_scale_factor": float(np.nanmean(np.abs(probe.mean_offset[ok]))),
        })
        dumps[k] = probe
    payload = {"schema_version": SCHEMA_VERSION, "reps": args.reps, "rows": rows}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for k, probe in dumps.items():
            path = out / f"variance_k{k}.npz"
            with open(path, "wb") as fh:
                np.savez(fh, std_main=probe.std_main, std_baseline=probe.std_baseline,
                         mean_main=probe.mean_main, mean_baseline=probe.mean_baseline,
                         mean_offset=probe.mean_offset)
            files.append(path)
        _write_manifest(out, "variance", vars(args), {"seed": args.seed}, files, started,
                        dataset=args.dataset_dir)
    _emit(payload)
    return EXIT_OK


def _cmd_parse(args):
    from . import bif, graphs

    started = time.time()
    doc = bif.load_bif(args.bif_file)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph_path = out / "graph.txt"
    graph_path.write_text(graphs.write_graph_text(doc.cgm.graph), encoding="utf-8")
    model_path = out / "model.bif"
    model_path.write_text(bif.unparse_bif(doc.cgm, labels=doc.labels,
                                          network_name=doc.network_name or "unknown"),
                          encoding="utf-8")
    labels_path = out / "labels.json"
    labels_path.write_text(json.dumps(doc.labels, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    _write_manifest(out, "parse", vars(args), {}, [graph_path, model_path, labels_path],
                    started)
    _emit({
        "schema_version": SCHEMA_VERSION,
        "nodes": doc.cgm.n,
        "edges": doc.cgm.graph.num_edges,
        "names": doc.cgm.graph.names,
    })
    return EXIT_OK


_HANDLERS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "variance": _cmd_variance,
    "parse": _cmd_parse,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    _set_threads(max(1, args.threads))
    from .errors import CapacityError, ConfigError, DataFormatError, ParameterError

    try:
        return _HANDLERS[args.command](args)
    except CapacityError as e:
        return _fail(e, EXIT_CAPACITY)
    except (DataFormatError, ParameterError, ConfigError, FileNotFoundError) as e:
        return _fail(e, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
