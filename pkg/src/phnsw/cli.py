"""Command-line entry point: ``phnsw {synth,build,search,bench}``.

Every run takes one ``--seed``; it is the only source of randomness and is
echoed into every manifest and report.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import dataio
from .estimator import LAYOUT_TO_VARIANT, PHNSWIndex
from .evaluation import (
    GroundTruth, ground_truth, make_synthetic, run_bench, sweep_k, write_csv,
)
from .graph import BuildParams, graph_stats, hnsw_build
from .pca import pca_fit, pca_project_all
from .search import LayerKConfig, SearchParams, hnsw_search, phnsw_search
from .storage import (
    DDR4_PJ_PER_BIT, HBM_PJ_PER_BIT, LayoutMode, build_image, energy_estimate, size_report,
)

log = logging.getLogger("phnsw")

PCA_FILE = "pca.bin"
GRAPH_FILE = "graph.bin"
IMAGE_FILE = "image.bin"
MANIFEST_FILE = "manifest.json"
LAYOUT_NAMES = {LayoutMode.HIGH_DIM_ONLY: "std", LayoutMode.SEPARATE_LOWDIM: "sep", LayoutMode.INLINE_LOWDIM: "inline"}


class InvariantError(RuntimeError):
    pass


def _int_list(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ef", type=int, default=10, help="beam width at layer 0")
    p.add_argument("--ef-upper", type=int, default=1, help="beam width above layer 0")
    p.add_argument("--k0", type=int, default=16)
    p.add_argument("--k1", type=int, default=8)
    p.add_argument("--krest", type=int, default=3)
    p.add_argument("-K", "--results", dest="K", type=int, default=10, help="neighbors per query")


def _add_build_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--base", required=True, help=".fvecs or .bvecs base vectors")
    p.add_argument("--limit", type=int, default=None, help="use only the first N base vectors")
    p.add_argument("--dlow", type=int, default=15)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--efc", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phnsw", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic base/query pair as .fvecs")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--nq", type=int, default=100)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("build", help="fit PCA, build the graph and a storage image")
    _add_build_flags(p)
    p.add_argument("--layout", choices=["std", "sep", "inline"], default="inline")
    p.add_argument("--out", required=True, help="artifact directory")

    p = sub.add_parser("search", help="search queries against built artifacts")
    p.add_argument("--out", required=True, help="artifact directory from 'build'")
    p.add_argument("--queries", required=True)
    _add_search_flags(p)

    p = sub.add_parser("bench", help="recall / QPS / traffic / energy for variants and k sweeps")
    _add_build_flags(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth", default=None, help=".ivecs ground truth (computed and cached if omitted)")
    p.add_argument("--out", required=True, help="artifact directory (reused if it matches)")
    p.add_argument("--variants", default="std,sep,inline", help="comma list of std,sep,inline; empty for none")
    p.add_argument("--sweep-k0", type=_int_list, default=[], help="comma list of layer-0 k values")
    p.add_argument("--sweep-k1", type=_int_list, default=[], help="comma list of layer-1 k values")
    p.add_argument("--csv", default=None, help="CSV path (default: <out>/bench.csv)")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--repeats", type=int, default=5)
    _add_search_flags(p)
    return parser


def _load_base(args) -> np.ndarray:
    return dataio.read_vectors(args.base, args.limit)


def _build_artifacts(args, base: np.ndarray, out: Path, layout: LayoutMode) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    pca = pca_fit(base, args.dlow)
    timings["pca_fit_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    graph = hnsw_build(base, BuildParams(M=args.m, ef_construction=args.efc, rng_seed=args.seed))
    timings["graph_build_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    image = build_image(graph, base, pca_project_all(pca, base), layout)
    timings["image_build_s"] = time.perf_counter() - t0

    dataio.save_pca(out / PCA_FILE, pca)
    dataio.save_graph(out / GRAPH_FILE, graph)
    dataio.save_image(out / IMAGE_FILE, image)
    report = size_report(image)
    image_len = (out / IMAGE_FILE).stat().st_size
    if report.total != image_len:
        raise InvariantError(f"size report total {report.total} != image file length {image_len}")
    stats = graph_stats(graph)
    manifest = {
        "params": {
            "base": str(args.base), "limit": args.limit, "n": int(base.shape[0]),
            "d_high": int(base.shape[1]), "dlow": args.dlow, "m": args.m, "efc": args.efc,
        },
        "seed": args.seed,
        "layout": LAYOUT_NAMES[layout],
        "sizes": {
            "pca_bytes": (out / PCA_FILE).stat().st_size,
            "graph_bytes": (out / GRAPH_FILE).stat().st_size,
            "image": {**report.__dict__, "total": report.total},
            "layer_counts": stats.layer_counts,
        },
        "timings": timings,
        "files": {"pca": PCA_FILE, "graph": GRAPH_FILE, "image": IMAGE_FILE},
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base, queries = make_synthetic(args.n, args.nq, args.dim, seed=args.seed)
    dataio.write_fvecs(out / "base.fvecs", base)
    dataio.write_fvecs(out / "query.fvecs", queries)
    print(f"wrote {out / 'base.fvecs'} ({args.n} x {args.dim}) and {out / 'query.fvecs'} ({args.nq} x {args.dim}), seed {args.seed}")
    return 0


def cmd_build(args) -> int:
    base = _load_base(args)
    manifest = _build_artifacts(args, base, Path(args.out), LayoutMode.parse(args.layout))
    t = manifest["timings"]
    print(
        f"built {manifest['params']['n']} x {manifest['params']['d_high']} -> d_low {args.dlow}, "
        f"{len(manifest['sizes']['layer_counts'])} layers, layout {manifest['layout']}, "
        f"image {manifest['sizes']['image']['total']} bytes, graph {t['graph_build_s']:.1f}s, seed {args.seed}"
    )
    return 0


def _search_params(args) -> SearchParams:
    return SearchParams(
        ef_upper=args.ef_upper, ef_base=args.ef, K=args.K,
        k_config=LayerKConfig(k0=args.k0, k1=args.k1, k_rest=args.krest),
    )


def cmd_search(args) -> int:
    out = Path(args.out)
    missing = [f for f in (PCA_FILE, GRAPH_FILE, IMAGE_FILE) if not (out / f).exists()]
    if missing:
        raise FileNotFoundError(f"missing artifacts in {out}: {', '.join(missing)} (run 'phnsw build' first)")
    pca = dataio.load_pca(out / PCA_FILE)
    graph = dataio.load_graph(out / GRAPH_FILE)
    image = dataio.load_image(out / IMAGE_FILE)
    queries = dataio.read_vectors(args.queries)
    params = _search_params(args)
    for qi, q in enumerate(queries):
        if image.mode == LayoutMode.HIGH_DIM_ONLY:
            res = hnsw_search(q, graph, image, params)
        else:
            res = phnsw_search(q, graph, image, pca, params)
        for rank, (i, d) in enumerate(res.pairs()):
            print(f"{qi}\t{rank}\t{i}\t{d:.6g}")
        c = res.counters
        print(
            f"query {qi}: lowdim_evals={c.lowdim_evals} highdim_evals={c.highdim_evals} "
            f"transactions={c.traffic.transactions} bytes={c.traffic.bytes}",
            file=sys.stderr,
        )
    return 0


def _truth_for(args, base: np.ndarray, queries: np.ndarray) -> GroundTruth:
    if args.truth:
        if args.limit is not None:
            raise ValueError("--truth refers to the full base set; it cannot be combined with --limit")
        ids = dataio.read_ivecs(args.truth)
        if ids.shape[0] != queries.shape[0] or ids.shape[1] < args.K:
            raise ValueError(f"truth file has shape {ids.shape}, need {queries.shape[0]} rows x >= {args.K}")
        return GroundTruth(ids=ids[:, : args.K].astype(np.int64), distances=np.full(ids[:, : args.K].shape, np.nan))
    base_path = Path(args.base)
    tag = f".n{args.limit}" if args.limit is not None else ""
    cache = base_path.with_name(f"{base_path.stem}{tag}.{Path(args.queries).stem}.gt{args.K}.ivecs")
    if cache.exists():
        ids = dataio.read_ivecs(cache)
        if ids.shape == (queries.shape[0], args.K):
            log.info("using cached ground truth %s", cache)
            return GroundTruth(ids=ids.astype(np.int64), distances=np.full(ids.shape, np.nan))
    truth = ground_truth(base, queries, args.K)
    try:
        dataio.write_ivecs(cache, truth.ids)
    except OSError as exc:
        log.warning("could not cache ground truth at %s: %s", cache, exc)
    return truth


def _load_or_build(args, base: np.ndarray) -> PHNSWIndex:
    out = Path(args.out)
    manifest_path = out / MANIFEST_FILE
    wanted = {"n": int(base.shape[0]), "dlow": args.dlow, "m": args.m, "efc": args.efc}
    reuse = False
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        have = {key: manifest["params"].get(key) for key in wanted}
        reuse = have == wanted and manifest.get("seed") == args.seed
    if not reuse:
        log.info("building artifacts in %s", out)
        _build_artifacts(args, base, out, LayoutMode.INLINE_LOWDIM)
    pca = dataio.load_pca(out / PCA_FILE)
    graph = dataio.load_graph(out / GRAPH_FILE)
    return PHNSWIndex.from_parts(
        base, pca, graph, ef_construction=args.efc, ef=args.ef, ef_upper=args.ef_upper,
        k0=args.k0, k1=args.k1, k_rest=args.krest, n_neighbors=args.K,
    )


def _check_report(rep) -> None:
    if not 0.0 <= rep.recall_at_k <= 1.0:
        raise InvariantError(f"{rep.variant}: recall {rep.recall_at_k} outside [0, 1]")
    if rep.bound_violations:
        raise InvariantError(f"{rep.variant}: {rep.bound_violations} expansions exceeded k high-dim evaluations")
    for pj in (DDR4_PJ_PER_BIT, HBM_PJ_PER_BIT):
        if energy_estimate(rep.traffic, pj) != rep.traffic.bytes * 8 * pj:
            raise InvariantError(f"{rep.variant}: energy model inconsistent with byte count")


def cmd_bench(args) -> int:
    base = _load_base(args)
    queries = dataio.read_vectors(args.queries)
    index = _load_or_build(args, base)
    truth = _truth_for(args, base, queries)
    params = _search_params(args)
    reports = []
    by_variant = {}
    for name in [v for v in args.variants.split(",") if v.strip()]:
        variant = LAYOUT_TO_VARIANT[LayoutMode.parse(name.strip())]
        rep = run_bench(index, queries, variant, params, truth, warmup=args.warmup, repeats=args.repeats)
        _check_report(rep)
        reports.append(rep)
        by_variant[variant] = rep
    for layer, values in ((0, args.sweep_k0), (1, args.sweep_k1)):
        if values:
            points = sweep_k(index, queries, layer, values, truth=truth, warmup=args.warmup, repeats=args.repeats)
            for p in points:
                _check_report(p.report)
                reports.append(p.report)

    if "phnsw_sep" in by_variant and "phnsw_inline" in by_variant:
        sep, inl = by_variant["phnsw_sep"].traffic, by_variant["phnsw_inline"].traffic
        if sep.lowdim_bytes + sep.highdim_bytes != inl.lowdim_bytes + inl.highdim_bytes:
            raise InvariantError("sep and inline layouts fetched different low+high-dim byte totals")
        if not inl.transactions < sep.transactions:
            raise InvariantError("inline layout did not reduce transactions versus sep")

    csv_path = Path(args.csv) if args.csv else Path(args.out) / "bench.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(reports, str(csv_path))

    print(f"seed {args.seed}, {len(queries)} queries, K={args.K}; DRAM-traffic energy only (compute/SPM not modeled)")
    print(f"{'variant':<14}{'k0':>4}{'k1':>4}{'recall':>9}{'qps':>10}{'txn/q':>10}{'bytes/q':>12}{'DDR4 nJ/q':>11}{'HBM nJ/q':>10}")
    for rep in reports:
        k = rep.params["k_config"]
        print(
            f"{rep.variant:<14}{k['k0']:>4}{k['k1']:>4}{rep.recall_at_k:>9.4f}{rep.qps:>10.1f}"
            f"{rep.transactions_per_query:>10.1f}{rep.bytes_per_query:>12.0f}"
            f"{rep.energy_ddr4_pj / 1e3:>11.1f}{rep.energy_hbm_pj / 1e3:>10.1f}"
        )
    if "hnsw_std" in by_variant:
        std = by_variant["hnsw_std"].energy_ddr4_pj
        for name in ("phnsw_sep", "phnsw_inline"):
            if name in by_variant:
                print(f"{name} DRAM energy / hnsw_std: {by_variant[name].energy_ddr4_pj / std:.3f}")
    print(f"wrote {csv_path}")
    return 0


COMMANDS = {"synth": cmd_synth, "build": cmd_build, "search": cmd_search, "bench": cmd_bench}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except InvariantError as exc:
        log.error("invariant check failed: %s", exc)
        return 3
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
