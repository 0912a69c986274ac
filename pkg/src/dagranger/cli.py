"""Command-line pipeline: build-dag, candidates, run, eval, synth.

Every default that has a counterpart in the training protocol (learning rate
1e-3, 20 epochs, minibatch 1024 pairs, 10 layers, one-hop lag) is wired here.
All randomness flows from one seed recorded in the run manifest; reruns with
the same config and seed produce byte-identical score files regardless of
worker count.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__, baselines, evaluate, graph, preprocess, score, synth, train
from .errors import ConfigError, DataError, DagrangerError, ParseError

logger = logging.getLogger(__name__)

METHODS = ("dagranger", "pearson", "pseudocell", "var-granger")


@dataclass(frozen=True)
class RunConfig:
    """Everything cmd_run needs; echoed verbatim into the manifest."""

    x_matrix: str
    y_matrix: str
    pairs: str
    outdir: str
    edges: str | None = None
    embedding: str | None = None
    pseudotime: str | None = None
    k: int = 15
    method: str = "dagranger"
    workers: int = 1
    learning_rate: float = 1e-3
    max_epochs: int = 20
    minibatch_pairs: int = 1024
    n_layers: int = 10
    lag_hops: int = 1
    convergence_numerator: float = 0.1
    seed: int = 0
    link: str = "identity"
    rank_mode: str = "f"
    var_max_lag: int = 1
    pseudocell_neighborhood: int = 50

    def __post_init__(self):
        have_edges = self.edges is not None
        have_embedding = self.embedding is not None
        if have_edges == have_embedding:
            raise ConfigError("specify exactly one DAG source: --edges or --embedding")
        if have_embedding and self.pseudotime is None:
            raise ConfigError("--embedding requires --pseudotime")
        if self.method not in METHODS + ("all",):
            raise ConfigError(f"method must be one of {METHODS + ('all',)}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class _Manifest:
    """Per-stage wall times and output checksums, written once at the end."""

    def __init__(self, config: dict, seed: int):
        self.payload = {
            "config": config,
            "seed": seed,
            "version": __version__,
            "stages": {},
        }

    def stage(self, name: str):
        manifest = self

        class _Stage:
            def __enter__(self):
                self.t0 = time.perf_counter()
                self.outputs: dict[str, str] = {}
                return self

            def add(self, path):
                self.outputs[str(path)] = _sha256(path)

            def __exit__(self, exc_type, exc, tb):
                if exc_type is None:
                    manifest.payload["stages"][name] = {
                        "seconds": time.perf_counter() - self.t0,
                        "outputs": self.outputs,
                    }
                return False

        return _Stage()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.payload, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _read_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` comments and blanks ignored."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _merged(args, file_config: dict, key: str, default, cast):
    cli_value = getattr(args, key.replace("-", "_"), None)
    if cli_value is not None:
        return cli_value
    if key in file_config:
        try:
            return cast(file_config[key])
        except ValueError as exc:
            raise ConfigError(f"config key {key}: {exc}") from exc
    return default


def _read_pairs_file(path, x_names, y_names) -> list[tuple[int, int]]:
    x_index = {name: i for i, name in enumerate(x_names)}
    y_index = {name: j for j, name in enumerate(y_names)}
    pairs: list[tuple[int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ParseError(f"{path}:{lineno}: expected x_name<TAB>y_name")
            xn, yn = parts[0], parts[1]
            if xn not in x_index:
                raise DataError(f"{path}:{lineno}: unknown x variable {xn!r}")
            if yn not in y_index:
                raise DataError(f"{path}:{lineno}: unknown y variable {yn!r}")
            pairs.append((x_index[xn], y_index[yn]))
    if not pairs:
        raise DataError(f"{path}: no candidate pairs")
    return pairs


def _build_dag_for_run(cfg: RunConfig, n_nodes: int):
    """Returns (dag, neighbor_edges, coords).

    ``neighbor_edges`` feed the pseudocell baseline: the pre-orientation kNN
    edges when the DAG is built from an embedding, otherwise the given edge
    list itself.
    """
    coords = None
    if cfg.edges is not None:
        dag = graph.read_edge_list(cfg.edges, n_nodes=n_nodes)
        neighbor_edges = dag.edges
    else:
        emb_matrix = preprocess.read_matrix(cfg.embedding)
        pt = preprocess.read_pseudotime(cfg.pseudotime)
        embedding = preprocess.Embedding(coords=emb_matrix.values, pseudotime=pt)
        neighbor_edges = preprocess.knn_graph(embedding, cfg.k)
        dag = preprocess.orient_by_pseudotime(neighbor_edges, pt)
        coords = embedding.coords
    if dag.n_nodes != n_nodes:
        raise DataError(
            f"DAG has {dag.n_nodes} nodes but matrices have {n_nodes} rows"
        )
    return dag, neighbor_edges, coords


def _score_records_dagranger(dataset, results, cfg: RunConfig) -> list[dict]:
    pair_scores = []
    for pid in sorted(results):
        rep = results[pid].report
        pair_scores.append(score.score_pair(
            pid, rep.per_node_full, rep.per_node_reduced, cfg.n_layers))
    ranking = score.rank_pairs(pair_scores, mode=cfg.rank_mode)
    rank_of = {pid: r + 1 for r, (pid, _) in enumerate(ranking.entries)}
    by_id = {s.pair_id: s for s in pair_scores}
    records = []
    for pid in sorted(results):
        s = by_id[pid]
        xi, yi = dataset.pairs[pid]
        records.append({
            "pair_id": pid,
            "x_name": dataset.x_names[xi],
            "y_name": dataset.y_names[yi],
            "method": "dagranger",
            "f_stat": s.f_stat,
            "f_pvalue": s.f_pvalue,
            "t_stat": s.t_stat,
            "t_pvalue": s.t_pvalue,
            "df1": s.df1,
            "df2": s.df2,
            "score": s.score,
            "rank": rank_of[pid],
            "flags": list(s.flags),
        })
    return records


def _attach_ranks(records: list[dict]) -> None:
    order = sorted(records, key=lambda r: (-r["score"], r["pair_id"]))
    for rank, rec in enumerate(order, start=1):
        rec["rank"] = rank


def _score_records_baseline(dataset, neighbor_edges, coords, pt, cfg: RunConfig,
                            method: str) -> list[dict]:
    records: list[dict] = []
    if method == "pseudocell":
        x_all = baselines.pseudocell_smooth(
            dataset.x_values, neighbor_edges, cfg.pseudocell_neighborhood, coords=coords)
        y_all = baselines.pseudocell_smooth(
            dataset.y_values, neighbor_edges, cfg.pseudocell_neighborhood, coords=coords)
    else:
        x_all, y_all = dataset.x_values, dataset.y_values

    for pid, (xi, yi) in enumerate(dataset.pairs):
        rec = {
            "pair_id": pid,
            "x_name": dataset.x_names[xi],
            "y_name": dataset.y_names[yi],
            "method": method,
        }
        if method in ("pearson", "pseudocell"):
            r = baselines.pearson(x_all[:, xi], y_all[:, yi])
            rec["r"] = r
            rec["score"] = abs(r)
        elif method == "var-granger":
            if pt is None:
                raise ConfigError("var-granger needs --pseudotime")
            binned = baselines.bin_by_pseudotime(x_all[:, xi], y_all[:, yi], pt)
            f, p = baselines.var_granger(binned.x_bins, binned.y_bins, cfg.var_max_lag)
            rec["f_stat"] = f
            rec["f_pvalue"] = p
            rec["score"] = math.inf if p <= 0.0 else -math.log10(p)
        records.append(rec)
    _attach_ranks(records)
    return records


def cmd_run(cfg: RunConfig) -> int:
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(asdict(cfg), cfg.seed)

    with manifest.stage("load"):
        xm = preprocess.read_matrix(cfg.x_matrix)
        ym = preprocess.read_matrix(cfg.y_matrix)
        if xm.values.shape[0] != ym.values.shape[0]:
            raise DataError("x and y matrices disagree on the node count")
        pairs = _read_pairs_file(cfg.pairs, xm.var_names, ym.var_names)
        dataset = train.Dataset(
            x_values=xm.values, y_values=ym.values,
            x_names=xm.var_names, y_names=ym.var_names,
            pairs=tuple(pairs),
        )
        pt = preprocess.read_pseudotime(cfg.pseudotime) if cfg.pseudotime else None

    with manifest.stage("dag"):
        dag, neighbor_edges, coords = _build_dag_for_run(cfg, dataset.n_nodes)
        ops = graph.lagged_operators(dag)

    methods = list(METHODS) if cfg.method == "all" else [cfg.method]
    for method in methods:
        with manifest.stage(method) as st:
            if method == "dagranger":
                tcfg = train.TrainConfig(
                    learning_rate=cfg.learning_rate,
                    max_epochs=cfg.max_epochs,
                    minibatch_pairs=cfg.minibatch_pairs,
                    n_layers=cfg.n_layers,
                    lag_hops=cfg.lag_hops,
                    convergence_numerator=cfg.convergence_numerator,
                    seed=cfg.seed,
                    link=cfg.link,
                )
                results = train.train_all(dataset, ops, tcfg, workers=cfg.workers)
                records = _score_records_dagranger(dataset, results, cfg)
            else:
                records = _score_records_baseline(
                    dataset, neighbor_edges, coords, pt, cfg, method)
            out_path = outdir / f"scores_{method.replace('-', '_')}.jsonl"
            score.write_score_records(out_path, records)
            st.add(out_path)

    manifest.write(outdir / "manifest.json")
    return 0


def cmd_build_dag(args) -> int:
    emb_matrix = preprocess.read_matrix(args.embedding)
    pt = preprocess.read_pseudotime(args.pseudotime)
    embedding = preprocess.Embedding(coords=emb_matrix.values, pseudotime=pt)
    edges = preprocess.knn_graph(embedding, args.k)
    dag = preprocess.orient_by_pseudotime(edges, pt)
    if dag.n_edges == 0:
        logger.warning("orientation kept no edges (constant pseudotime?)")
    graph.write_edge_list(args.out_edges, dag)
    ops = graph.lagged_operators(dag)
    stats = {
        "n_nodes": dag.n_nodes,
        "n_edges": dag.n_edges,
        "n_roots": int((dag.in_degree == 0).sum()),
        "max_in_degree": int(dag.in_degree.max()) if dag.n_nodes else 0,
        "a_nonzeros": int(ops.a.nnz),
    }
    with open(args.out_stats, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps(stats, sort_keys=True))
    return 0


def _read_positions(path) -> dict[str, tuple[str, float]]:
    """TSV ``name<TAB>sequence_key<TAB>position``."""
    out: dict[str, tuple[str, float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected name, key, position")
            try:
                out[parts[0]] = (parts[1], float(parts[2]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric position") from exc
    return out


def cmd_candidates(args) -> int:
    x_names = preprocess.read_matrix(args.x_matrix).var_names
    y_names = preprocess.read_matrix(args.y_matrix).var_names
    have_positions = args.x_positions is not None and args.y_positions is not None
    with open(args.out_pairs, "w", encoding="utf-8") as fh:
        if not have_positions:
            for xn in x_names:
                for yn in y_names:
                    fh.write(f"{xn}\t{yn}\n")
        else:
            xpos = _read_positions(args.x_positions)
            ypos = _read_positions(args.y_positions)
            for xn in x_names:
                if xn not in xpos:
                    continue
                xkey, xp = xpos[xn]
                for yn in y_names:
                    if yn not in ypos:
                        continue
                    ykey, yp = ypos[yn]
                    if xkey == ykey and abs(xp - yp) <= args.max_distance:
                        fh.write(f"{xn}\t{yn}\n")
    return 0


def cmd_eval(args) -> int:
    records = score.read_score_records(args.scores)
    if not records:
        raise DataError(f"{args.scores}: no score records")
    method = records[0].get("method", "unknown")
    reference = evaluate.read_reference(args.reference)
    candidates = [(r["x_name"], r["y_name"]) for r in records]
    labeled = evaluate.label_from_reference(
        candidates, reference, args.true_threshold, args.false_threshold,
        provenance=str(args.reference),
    )
    keyed = {(r["x_name"], r["y_name"]): r["score"] for r in records}
    pairs = sorted(labeled.labels)
    scores_vec = [keyed[p] for p in pairs]
    labels_vec = [labeled.labels[p] for p in pairs]
    auprc_value = evaluate.auprc(scores_vec, labels_vec)
    auroc_value = evaluate.auroc(scores_vec, labels_vec)
    evaluate.write_metric_report(
        args.out, method, auprc_value, auroc_value, labeled.n_true, labeled.n_false)
    print(json.dumps({"method": method, "auprc": auprc_value, "auroc": auroc_value}))
    return 0


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_nodes=args.n_nodes,
        n_branches=args.n_branches,
        depth=args.depth,
        k_neighbors=args.k_neighbors,
        n_x_vars=args.n_x_vars,
        n_y_vars=args.n_y_vars,
        n_causal_pairs=args.n_causal_pairs,
        lag_steps=args.lag_steps,
        coupling=args.coupling,
        noise_sd=args.noise_sd,
        nonlinearity=args.nonlinearity,
        dropout_rate=args.dropout_rate,
        seed=args.seed,
        n_candidate_pairs=args.n_candidate_pairs,
    )
    ds = synth.generate(spec)
    paths = synth.write_dataset(ds, args.outdir)
    print(json.dumps(paths, sort_keys=True))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dagranger",
        description="Granger-causal screening of variable pairs on a DAG",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dag = sub.add_parser("build-dag", help="kNN graph + pseudotime orientation")
    p_dag.add_argument("--embedding", required=True)
    p_dag.add_argument("--pseudotime", required=True)
    p_dag.add_argument("--k", type=int, default=15)
    p_dag.add_argument("--out-edges", required=True)
    p_dag.add_argument("--out-stats", required=True)

    p_cand = sub.add_parser("candidates", help="emit the candidate pair file")
    p_cand.add_argument("--x-matrix", required=True)
    p_cand.add_argument("--y-matrix", required=True)
    p_cand.add_argument("--x-positions")
    p_cand.add_argument("--y-positions")
    p_cand.add_argument("--max-distance", type=float, default=1e6)
    p_cand.add_argument("--out-pairs", required=True)

    p_run = sub.add_parser("run", help="train, score and rank all candidate pairs")
    p_run.add_argument("--config", help="flat key=value file; flags override")
    p_run.add_argument("--x-matrix")
    p_run.add_argument("--y-matrix")
    p_run.add_argument("--pairs")
    p_run.add_argument("--outdir")
    p_run.add_argument("--edges")
    p_run.add_argument("--embedding")
    p_run.add_argument("--pseudotime")
    p_run.add_argument("--k", type=int)
    p_run.add_argument("--method", choices=METHODS + ("all",))
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--learning-rate", type=float)
    p_run.add_argument("--max-epochs", type=int)
    p_run.add_argument("--minibatch-pairs", type=int)
    p_run.add_argument("--n-layers", type=int)
    p_run.add_argument("--lag-hops", type=int)
    p_run.add_argument("--convergence-numerator", type=float)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--link", choices=("identity", "exponential"))
    p_run.add_argument("--rank-mode", choices=("f", "welch"))
    p_run.add_argument("--var-max-lag", type=int)
    p_run.add_argument("--pseudocell-neighborhood", type=int)

    p_eval = sub.add_parser("eval", help="AUPRC/AUROC of a score file vs a reference")
    p_eval.add_argument("--scores", required=True)
    p_eval.add_argument("--reference", required=True)
    p_eval.add_argument("--true-threshold", type=float, default=1e-10)
    p_eval.add_argument("--false-threshold", type=float, default=0.9)
    p_eval.add_argument("--out", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark bundle")
    p_synth.add_argument("--n-nodes", type=int, required=True)
    p_synth.add_argument("--n-branches", type=int, default=1)
    p_synth.add_argument("--depth", type=int, default=10)
    p_synth.add_argument("--k-neighbors", type=int, default=15)
    p_synth.add_argument("--n-x-vars", type=int, default=10)
    p_synth.add_argument("--n-y-vars", type=int, default=5)
    p_synth.add_argument("--n-causal-pairs", type=int, default=5)
    p_synth.add_argument("--lag-steps", type=int, default=2)
    p_synth.add_argument("--coupling", type=float, default=1.0)
    p_synth.add_argument("--noise-sd", type=float, default=0.3)
    p_synth.add_argument("--nonlinearity", choices=synth.NONLINEARITIES, default="tanh")
    p_synth.add_argument("--dropout-rate", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--n-candidate-pairs", type=int)
    p_synth.add_argument("--outdir", required=True)
    return parser


def _run_config_from_args(args) -> RunConfig:
    file_config = _read_config_file(args.config) if args.config else {}
    get = lambda key, default, cast: _merged(args, file_config, key, default, cast)
    required = {}
    for key in ("x_matrix", "y_matrix", "pairs", "outdir"):
        value = get(key, None, str)
        if value is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")
        required[key] = value
    return RunConfig(
        **required,
        edges=get("edges", None, str),
        embedding=get("embedding", None, str),
        pseudotime=get("pseudotime", None, str),
        k=get("k", 15, int),
        method=get("method", "dagranger", str),
        workers=get("workers", 1, int),
        learning_rate=get("learning_rate", 1e-3, float),
        max_epochs=get("max_epochs", 20, int),
        minibatch_pairs=get("minibatch_pairs", 1024, int),
        n_layers=get("n_layers", 10, int),
        lag_hops=get("lag_hops", 1, int),
        convergence_numerator=get("convergence_numerator", 0.1, float),
        seed=get("seed", 0, int),
        link=get("link", "identity", str),
        rank_mode=get("rank_mode", "f", str),
        var_max_lag=get("var_max_lag", 1, int),
        pseudocell_neighborhood=get("pseudocell_neighborhood", 50, int),
    )


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_run_config_from_args(args))
        if args.command == "build-dag":
            return cmd_build_dag(args)
        if args.command == "candidates":
            return cmd_candidates(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "synth":
            return cmd_synth(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return 2
    except (DataError, FileNotFoundError) as exc:
        logger.error("data error: %s", exc)
        return 3
    except DagrangerError as exc:
        logger.error("internal error: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
