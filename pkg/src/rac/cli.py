"""Command-line interface: cluster, verify, synth, sim.

Exit codes: 0 success, 1 usage or I/O error, 2 internal assertion or model
assertion failure, 3 verification mismatch.  Every command prints a trailing
JSON summary (including per-phase wall times) to stdout; output files never
contain wall times, so identical seeds and flags give byte-identical files.

The RAC_LOG environment variable (error, info, debug) controls logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import zlib

import numpy as np

from .dendrogram import first_merge_difference, merge_sets_equal
from .engine import rac_run
from .graph import DissimilarityGraph
from .graph_io import (
    PointSet,
    build_epsilon_graph,
    build_knn_graph,
    load_edge_list,
    load_vectors,
    round_records,
    write_dendrogram,
    write_edge_list,
    write_records,
    write_vectors,
)
from .hac import hac_run
from .linkage import Linkage
from .sharded import run_sharded
from . import theory

log = logging.getLogger("rac")

VERIFY_MAX_DENSE = 10_000
VERIFY_MAX_SPARSE = 100_000


class UsageError(Exception):
    pass


def substream(seed: int, label: str) -> np.random.Generator:
    """Named random sub-stream derived from the single user seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(label.encode()),)))


def _setup_logging(verbosity: int) -> None:
    env = os.environ.get("RAC_LOG", "").lower()
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(env)
    if level is None:
        level = [logging.ERROR, logging.INFO, logging.DEBUG][min(verbosity, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_input_graph(args) -> DissimilarityGraph:
    if bool(args.edges) == bool(args.vectors):
        raise UsageError("exactly one of --edges or --vectors is required")
    if args.edges:
        if args.knn is not None or args.eps is not None:
            raise UsageError("--knn/--eps apply only to vector input")
        return load_edge_list(args.edges)
    if (args.knn is None) == (args.eps is None):
        raise UsageError("vector input needs exactly one of --knn or --eps")
    points = load_vectors(args.vectors, metric=args.metric)
    if args.knn is not None:
        return build_knn_graph(points, args.knn)
    return build_epsilon_graph(points, args.eps)


def _summary(command: str, **fields) -> None:
    rec = {"command": command}
    rec.update(fields)
    print(json.dumps(rec, sort_keys=True))


def _phase_totals(stats) -> dict:
    return {
        "find_rnn": sum(s.find_rnn_time for s in stats),
        "merge": sum(s.merge_time for s in stats),
        "nn_update": sum(s.nn_update_time for s in stats),
    }


# ---------------------------------------------------------------------------
# cluster
# ---------------------------------------------------------------------------


def cmd_cluster(args) -> int:
    t_start = time.perf_counter()
    g = _load_input_graph(args)
    linkage = Linkage(args.linkage)
    log.info("clustering n=%d edges=%d linkage=%s shards=%d", g.n, g.num_edges, linkage.value, args.shards)
    tstats = None
    if args.shards > 1:
        dendro, stats, tstats = run_sharded(
            g, linkage, args.shards, workers_per_shard=args.workers, keep_log=bool(args.transport_log)
        )
    else:
        dendro, stats = rac_run(g, linkage, workers=args.workers)
    dendro.validate()
    if args.out:
        write_dendrogram(dendro, args.out)
    if args.stats:
        write_records(round_records(stats, tstats), args.stats)
    if args.transport_log and tstats is not None and tstats.log is not None:
        with open(args.transport_log, "w", encoding="utf-8") as fh:
            for line in tstats.log:
                fh.write(line + "\n")
    if args.flat_k is not None:
        partition = dendro.flat_clusters(args.flat_k)
        if args.flat_out:
            with open(args.flat_out, "w", encoding="utf-8") as fh:
                for group in partition:
                    for p in group:
                        fh.write("%d\t%d\n" % (p, group[0]))
    wall = _phase_totals(stats)
    wall["total"] = time.perf_counter() - t_start
    _summary(
        "cluster",
        n=g.n,
        edges=g.num_edges,
        linkage=linkage.value,
        shards=args.shards,
        rounds=len(stats),
        merges=len(dendro.merges),
        wall_time=wall,
        out=args.out,
        stats=args.stats,
    )
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    t_start = time.perf_counter()
    g = _load_input_graph(args)
    dense = g.num_edges > g.n * g.n // 4
    cap = VERIFY_MAX_DENSE if dense else VERIFY_MAX_SPARSE
    if g.n > cap:
        raise UsageError(
            "instance too large for the sequential oracle (n=%d, %s cap %d); "
            "verify a smaller sample instead" % (g.n, "dense" if dense else "sparse", cap)
        )
    linkage = Linkage(args.linkage)
    reference = hac_run(g, linkage)
    candidates = [("rac", rac_run(g, linkage, workers=args.workers)[0])]
    if args.shards > 1:
        candidates.append(("sharded", run_sharded(g, linkage, args.shards)[0]))
    if args.corrupt_for_test and candidates[0][1].merges:
        broken = candidates[0][1]
        broken.merges = broken.merges[:-1]
    for name, dendro in candidates:
        if not merge_sets_equal(reference, dendro):
            diff = None
            if g.n <= 5000:
                diff = first_merge_difference(reference, dendro)
            print("MISMATCH %s: merge sets differ" % name)
            if diff:
                which, left, right = diff
                owner = "sequential" if which == 1 else name
                print("first differing merge (only in %s): %r | %r" % (owner, left, right))
            _summary("verify", n=g.n, linkage=linkage.value, result="mismatch", engine=name)
            return 3
    _summary(
        "verify",
        n=g.n,
        edges=g.num_edges,
        linkage=linkage.value,
        merges=len(reference.merges),
        result="identical",
        engines=[name for name, _ in candidates],
        wall_time={"total": time.perf_counter() - t_start},
    )
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    t_start = time.perf_counter()
    prefix = args.out
    records = []
    if args.generator == "negative-example":
        points = theory.gen_negative_example(args.n)
        write_vectors(points, prefix + ".vectors.tsv")
        records.append({
            "generator": "negative-example",
            "n": args.n,
            "points": points.n,
            "expected_height": args.n,
            "expected_rounds_at_least": 2 ** (args.n - 1),
        })
    elif args.generator == "stable":
        points, expected = theory.gen_stable_instance(args.depth, args.separation, seed=args.seed)
        write_vectors(points, prefix + ".vectors.tsv")
        write_dendrogram(expected, prefix + ".expected.tsv")
        stable_flag = None
        if points.n <= theory.STABLE_CHECK_MAX_POINTS:
            g = DissimilarityGraph.complete_from_points(points.vectors[:, 0])
            stable_flag = theory.is_stable_tree(g, expected, Linkage.average)
        records.append({
            "generator": "stable",
            "depth": args.depth,
            "separation": args.separation,
            "seed": args.seed,
            "points": points.n,
            "expected_height": args.depth,
            "expected_rounds": args.depth,
            "stable": stable_flag,
        })
    elif args.generator == "random-dense":
        rng = substream(args.seed, "synth-dense")
        g = DissimilarityGraph(args.n)
        for i in range(args.n):
            for j in range(i + 1, args.n):
                g.add_edge(i, j, float(rng.uniform()))
        write_edge_list(g, prefix + ".edges.tsv")
        records.append({"generator": "random-dense", "n": args.n, "seed": args.seed,
                        "edges": g.num_edges})
    elif args.generator == "random-knn":
        rng = substream(args.seed, "synth-knn")
        points = PointSet(rng.uniform(size=(args.n, args.dim)))
        g = build_knn_graph(points, args.k)
        write_edge_list(g, prefix + ".edges.tsv")
        records.append({"generator": "random-knn", "n": args.n, "k": args.k,
                        "dim": args.dim, "seed": args.seed, "edges": g.num_edges})
    else:
        raise UsageError("unknown generator %r" % args.generator)
    write_records(records, prefix + ".props.jsonl")
    _summary("synth", out=prefix, wall_time={"total": time.perf_counter() - t_start},
             **records[0])
    return 0


# ---------------------------------------------------------------------------
# sim
# ---------------------------------------------------------------------------


def cmd_sim(args) -> int:
    t_start = time.perf_counter()
    records = []
    failures = []
    if args.model == "decay":
        cfg = theory.DecayProcessConfig(args.n, args.alpha, args.sampler,
                                        trials=args.trials, seed=args.seed)
        res = theory.sim_decay_process(cfg)
        records.append({
            "model": "decay", "n": args.n, "alpha": args.alpha, "sampler": args.sampler,
            "trials": args.trials, "seed": args.seed,
            "mean_tau": res.mean, "p50": res.p50, "p99": res.p99, "bound": res.bound,
        })
        if res.mean > res.bound * 1.05:
            failures.append("mean tau %.3f exceeds bound %.3f * 1.05" % (res.mean, res.bound))
    elif args.model == "grid":
        res = theory.sim_grid_single_linkage(args.n, args.trials, seed=args.seed)
        frac = res.mean_fraction(3)
        records.extend(res.round_table())
        summary = res.summary()
        summary.update({"model": "grid", "n": args.n, "trials": args.trials, "seed": args.seed})
        records.append(summary)
        if frac < 0.30:
            failures.append(
                "mean merge fraction %.4f below the idealized 0.30 floor "
                "(the per-round uniform-rank model only holds at round 1)" % frac
            )
    elif args.model == "bounded-degree":
        res = theory.sim_bounded_degree_graph(args.n, args.degree, args.trials, seed=args.seed)
        frac = res.mean_fraction(3)
        alpha = 1.0 / (4.0 * args.degree)
        bound = float(np.log(args.n) / np.log(1.0 / (1.0 - alpha)))
        records.extend(res.round_table())
        summary = res.summary()
        summary.update({"model": "bounded-degree", "n": args.n, "degree": args.degree,
                        "trials": args.trials, "seed": args.seed, "round_bound": bound})
        records.append(summary)
        if frac < 0.9 * alpha:
            failures.append("merge fraction %.4f below 0.9/(4d) = %.4f" % (frac, 0.9 * alpha))
        if res.mean_rounds() > bound:
            failures.append("mean rounds %.2f exceeds bound %.2f" % (res.mean_rounds(), bound))
    elif args.model == "merge-prob":
        g = _partition_graph(args.shape, args.size)
        exact = theory.merge_prob_exhaustive(g)
        rows = []
        ok = True
        for (i, j), p in sorted(exact.items()):
            f = theory.merge_prob_formula(g.multiplicity[(i, j)], g.degree(i), g.degree(j))
            rows.append({"pair": [i, j], "exhaustive": str(p), "formula": str(f)})
            ok = ok and p == f
        records.append({
            "model": "merge-prob", "shape": args.shape, "size": args.size,
            "edges": g.num_edges, "pairs": rows,
            "expected_merges": str(theory.expected_merges(g)),
            "note": "denominator is d_i + d_j - d_ij: per-cluster totals already "
                    "count the shared edges once each",
        })
        if not ok:
            failures.append("closed form disagrees with exhaustive enumeration")
    else:
        raise UsageError("unknown model %r" % args.model)
    if args.out:
        write_records(records, args.out)
    # stdout carries the summary records only; per-round tables go to --out
    for rec in records:
        if rec.get("record", "summary") == "summary":
            _summary("sim", wall_time={"total": time.perf_counter() - t_start}, **rec)
    if failures:
        for f in failures:
            print("ASSERTION FAILED: %s" % f)
        return 2
    return 0


def _partition_graph(shape: str, size: int) -> "theory.ClusterPartitionGraph":
    if shape == "triangle":
        return theory.ClusterPartitionGraph(3, {(0, 1): 1, (1, 2): 1, (0, 2): 1})
    if shape == "path":
        return theory.ClusterPartitionGraph(size, {(i, i + 1): 1 for i in range(size - 1)})
    if shape == "cycle":
        mult = {(i, (i + 1) % size): 1 for i in range(size)}
        return theory.ClusterPartitionGraph(size, mult)
    if shape == "star":
        return theory.ClusterPartitionGraph(size, {(0, i): 1 for i in range(1, size)})
    if shape == "two-cluster":
        return theory.ClusterPartitionGraph(2, {(0, 1): size})
    raise UsageError("unknown shape %r" % shape)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--edges", help="edge-list input file")
    p.add_argument("--vectors", help="vector input file")
    p.add_argument("--knn", type=int, help="build a k-nearest-neighbor graph from vectors")
    p.add_argument("--eps", type=float, help="build an epsilon-ball graph from vectors")
    p.add_argument("--metric", choices=["l2", "cosine"], default="l2")
    p.add_argument("--linkage", choices=[l.value for l in Linkage], default="average")
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rac", description="hierarchical clustering via parallel reciprocal-pair merge rounds"
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="cluster a graph and write the dendrogram")
    _add_input_flags(p)
    p.add_argument("--out", help="dendrogram output path")
    p.add_argument("--stats", help="per-round stats output path (JSON lines)")
    p.add_argument("--transport-log", help="write per-batch transport log (sharded runs)")
    p.add_argument("--flat-k", type=int, help="also cut the dendrogram into k clusters")
    p.add_argument("--flat-out", help="partition output path for --flat-k")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("verify", help="check that all engines produce the same merges")
    _add_input_flags(p)
    p.add_argument("--corrupt-for-test", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="generate benchmark instances")
    p.add_argument("generator", choices=["negative-example", "stable", "random-dense", "random-knn"])
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sim", help="run a probabilistic round model")
    p.add_argument("model", choices=["decay", "grid", "bounded-degree", "merge-prob"])
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--sampler", choices=sorted(theory.SAMPLERS), default="uniform")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", choices=["triangle", "path", "cycle", "star", "two-cluster"],
                   default="triangle")
    p.add_argument("--size", type=int, default=3)
    p.add_argument("--out", help="summary records output path (JSON lines)")
    p.set_defaults(func=cmd_sim)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except AssertionError as exc:
        print("internal consistency error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
