"""Command-line pipeline: synth -> pretrain -> align -> build-index -> query / eval, plus bench.

Every run writes ``manifest.json`` into its ``--out`` directory. ``seghash
rerun MANIFEST --out DIR`` repeats the recorded command into a new directory
and, with ``--verify``, checks that the outputs match byte for byte.

Exit codes: 0 success, 1 user error (bad flags, missing or malformed input),
2 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .baselines import LshConfig, LshIndex, dense_rerank, hamming_scan, pack_bits
from .datasets import make_paired_embeddings
from .estimator import MODES, SegmentedHasher
from .hashnet import forward
from .index import DEFAULT_MAX_CANDIDATES, SegmentedIndex
from .pretrain import discretize
from .metrics import (
    dual_relaxed_count,
    faithfulness,
    first_relevant_rank,
    mrr,
    ndcg_at_k,
    recall_at_k,
    repair_ratio,
)
from .storage import (
    FormatError,
    atomic_write,
    load_checkpoint,
    load_embeddings,
    load_relevance,
    save_checkpoint,
    save_embeddings,
    save_index,
    save_relevance,
)
from .ternary import SegmentConfig, relax, segment

log = logging.getLogger("seghash")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
MANIFEST = "manifest.json"
MODEL_CONFIG = "model.json"
CODE_HEAD, QUERY_HEAD = "code_head.sdhm", "query_head.sdhm"
# pretrained heads kept beside the aligned ones for pre-alignment metrics
INITIAL_CODE_HEAD, INITIAL_QUERY_HEAD = "initial_code_head.sdhm", "initial_query_head.sdhm"
# outputs that carry wall-clock measurements and are exempt from byte-for-byte reruns
TIMING_OUTPUTS = {"bench.csv", "bench_summary.json"}
BENCH_SIZES = (50_000, 100_000, 200_000, 400_000)


class UserError(Exception):
    """Bad invocation or input; reported without a traceback."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{self.prog}: {message}")


# -- helpers ------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, obj):
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n").encode())


def _write_text(path: Path, text: str):
    atomic_write(path, text.encode())


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _load_model(model_dir) -> SegmentedHasher:
    model_dir = Path(model_dir)
    cfg_path = model_dir / MODEL_CONFIG
    if not cfg_path.exists():
        raise UserError(f"{model_dir} is not a model directory (no {MODEL_CONFIG}); run `seghash align` first")
    params = json.loads(cfg_path.read_text())
    code_head = load_checkpoint(model_dir / CODE_HEAD)
    query_head = load_checkpoint(model_dir / QUERY_HEAD)
    hasher = SegmentedHasher.from_heads(code_head, query_head, **params)
    if (model_dir / INITIAL_CODE_HEAD).exists():
        hasher.initial_heads_ = (
            load_checkpoint(model_dir / INITIAL_CODE_HEAD),
            load_checkpoint(model_dir / INITIAL_QUERY_HEAD),
        )
    return hasher


def _load_index(path, hasher: SegmentedHasher) -> SegmentedIndex:
    seg = hasher.segment_config_
    index = SegmentedIndex.from_bytes(Path(path).read_bytes(), threshold=seg.threshold)
    if index.cfg != seg:
        raise UserError(f"index {path} was built with {index.cfg}, model expects {seg}")
    return index


def _pairs(relevance: dict[int, set[int]]) -> tuple[np.ndarray, np.ndarray]:
    q = [qi for qi in sorted(relevance) for _ in sorted(relevance[qi])]
    c = [ci for qi in sorted(relevance) for ci in sorted(relevance[qi])]
    return np.asarray(q, dtype=np.int64), np.asarray(c, dtype=np.int64)


# -- subcommands ----------------------------------------------------------------


def cmd_synth(args, out: Path) -> dict:
    total = args.n + args.test
    code_X, query_X, _ = make_paired_embeddings(
        total, args.dim, args.clusters, args.sigma, args.cluster_std, args.center_scale, args.seed
    )
    written = {}
    splits = [("", slice(0, args.n))]
    if args.test:
        splits.append(("test_", slice(args.n, total)))
    for prefix, part in splits:
        save_embeddings(out / f"{prefix}codes.sdhe", code_X[part])
        save_embeddings(out / f"{prefix}queries.sdhe", query_X[part])
        count = part.stop - part.start
        save_relevance(out / f"{prefix}relevance.tsv", [(i, i) for i in range(count)])
        written[prefix or "train"] = count
    log.info("synthesised %s pairs into %s", written, out)
    return {"data": {"n": args.n, "test": args.test, "dim": args.dim, "clusters": args.clusters,
                     "sigma": args.sigma, "cluster_std": args.cluster_std, "center_scale": args.center_scale}}


def _pair_inputs(args):
    X = load_embeddings(args.codes)
    Y = load_embeddings(args.queries)
    if X.shape != Y.shape:
        raise UserError(f"code and query files differ in shape: {X.shape} vs {Y.shape}")
    return X, Y


def cmd_pretrain(args, out: Path) -> dict:
    X, Y = _pair_inputs(args)
    hasher = SegmentedHasher(
        n_bits=args.bits,
        hidden_size=args.hidden,
        mode="NA_NR",
        margin=args.margin,
        pretrain_epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch,
        patience=args.patience,
        validation_fraction=args.val_fraction,
        random_state=args.seed,
    ).fit(X, Y)
    code_head, query_head = hasher.initial_heads_
    save_checkpoint(out / CODE_HEAD, code_head.astype_f32())
    save_checkpoint(out / QUERY_HEAD, query_head.astype_f32())
    lines = ["epoch,loss,val_loss"] + [f"{r.epoch},{r.loss!r},{r.val_loss!r}" for r in hasher.pretrain_history_]
    _write_text(out / "loss_curve.csv", "\n".join(lines) + "\n")
    return {"loss": {"margin": args.margin, "negative_count": "all", "similarity": "cosine"},
            "train": {"bits": args.bits, "hidden": args.hidden, "epochs": args.epochs, "lr": args.lr,
                      "batch": args.batch, "patience": args.patience, "val_fraction": args.val_fraction,
                      "epochs_run": len(hasher.pretrain_history_)}}


def cmd_align(args, out: Path) -> dict:
    X, Y = _pair_inputs(args)
    pre = Path(args.pretrained)
    code_head = load_checkpoint(pre / CODE_HEAD).astype_f32()
    query_head = load_checkpoint(pre / QUERY_HEAD).astype_f32()
    params = dict(
        n_bits=code_head.n_bits,
        segment_length=args.seg_len,
        max_relaxed=args.max_relax,
        threshold=args.threshold,
        mode=args.mode,
        gamma=args.gamma,
        alternation_period=args.alt_period,
        align_epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch,
        negatives=args.negatives,
        validation_fraction=args.val_fraction,
        random_state=args.seed,
    )
    try:
        hasher = SegmentedHasher(**params).fit(X, Y, init_heads=(code_head, query_head))
    except ValueError as e:
        raise UserError(str(e)) from None
    save_checkpoint(out / CODE_HEAD, hasher.code_head_.astype_f32())
    save_checkpoint(out / QUERY_HEAD, hasher.query_head_.astype_f32())
    save_checkpoint(out / INITIAL_CODE_HEAD, code_head)
    save_checkpoint(out / INITIAL_QUERY_HEAD, query_head)
    model_params = {k: params[k] for k in ("n_bits", "segment_length", "max_relaxed", "threshold", "mode")}
    _write_json(out / MODEL_CONFIG, model_params)
    lines = ["cycle,side_trained,epoch,mean_loss,val_positive_collision_rate"] + [
        f"{r.cycle},{r.side_trained},{r.epoch},{r.mean_loss!r},{r.val_positive_collision_rate!r}"
        for r in hasher.align_log_
    ]
    _write_text(out / "convergence.csv", "\n".join(lines) + "\n")
    seg = hasher.segment_config_
    return {"seg_cfg": {"n_bits": seg.n_bits, "segment_length": seg.segment_length,
                        "max_relaxed": seg.max_relaxed, "threshold": seg.threshold},
            "align_cfg": {"mode": args.mode, "gamma": args.gamma, "alternation_period": args.alt_period,
                          "max_epochs": args.epochs, "negatives": args.negatives, "lr": args.lr,
                          "batch": args.batch, "epochs_run": len(hasher.align_log_)}}


def cmd_build_index(args, out: Path) -> dict:
    hasher = _load_model(args.model)
    X = load_embeddings(args.codes)
    if X.shape[1] != hasher.n_features_in_:
        raise UserError(f"codes have width {X.shape[1]}, model expects {hasher.n_features_in_}")
    index = SegmentedIndex.build(hasher.transform(X, "code"), hasher.segment_config_)
    save_index(out / "index.sdhi", index)
    return {"index": {"items": index.item_count, "postings_per_table": index.posting_counts()}}


def _ranked(hasher, index, Q, max_n, rerank, code_X):
    codes = hasher.transform(Q, "query")
    results = index.recall_batch(codes, max_n)
    if not rerank:
        return results, [r.ids for r in results]
    return results, [dense_rerank(q, r.ids, code_X) for q, r in zip(Q, results)]


def cmd_query(args, out: Path) -> dict:
    hasher = _load_model(args.model)
    index = _load_index(args.index, hasher)
    Q = load_embeddings(args.queries)
    code_X = None
    if args.rerank:
        if not args.codes:
            raise UserError("--rerank needs --codes to score candidates")
        code_X = load_embeddings(args.codes)
    results, ranked = _ranked(hasher, index, Q, args.candidates, args.rerank, code_X)
    lines = ["query,rank,code,hits"]
    for qi, (res, ids) in enumerate(zip(results, ranked)):
        hits = dict(res.candidates)
        for rank, cid in enumerate(ids[: args.top], start=1):
            lines.append(f"{qi},{rank},{int(cid)},{hits[int(cid)]}")
    _write_text(out / "results.csv", "\n".join(lines) + "\n")
    return {"query": {"queries": len(Q), "top": args.top, "candidates": args.candidates, "rerank": args.rerank}}


def evaluate(hasher, index, code_X, query_X, relevance, max_candidates=DEFAULT_MAX_CANDIDATES, rerank=True) -> dict:
    """Retrieval and code-quality metrics for a fitted model and its index.

    Faithfulness compares table recall with a Hamming top-`max_candidates`
    scan over the pre-alignment heads (``hasher.initial_heads_``); the repair
    ratio checks the aligned model's relaxed bits against those heads' codes.
    """
    if not relevance:
        raise UserError("relevance has no pairs to evaluate")
    qids = np.array(sorted(relevance), dtype=np.int64)
    Q = query_X[qids]
    results, ranked = _ranked(hasher, index, Q, max_candidates, rerank, code_X)
    rel_sets = [relevance[int(q)] for q in qids]
    franks = [first_relevant_rank(r, rel) for r, rel in zip(ranked, rel_sets)]

    init_code, init_query = hasher.initial_heads_
    packed_codes = pack_bits(discretize(forward(init_code, code_X)))
    packed_q = pack_bits(discretize(forward(init_query, Q)))
    hamming = [hamming_scan(q, packed_codes, max_candidates, partial=True)[0] for q in packed_q]

    pq, pc = _pairs(relevance)
    seg = hasher.segment_config_
    cb = discretize(forward(init_code, code_X[pc]))
    qb = discretize(forward(init_query, query_X[pq]))
    ct = hasher.transform(code_X[pc], "code")
    qt = hasher.transform(query_X[pq], "query")
    c_relaxed = (ct == 0).reshape(len(pc), seg.n_bits)
    q_relaxed = (qt == 0).reshape(len(pq), seg.n_bits)
    return {
        "n_queries": int(len(qids)),
        "n_codes": int(len(code_X)),
        "max_candidates": int(max_candidates),
        "rerank": bool(rerank),
        "R@1": recall_at_k(franks, 1),
        "R@5": recall_at_k(franks, 5),
        "R@10": recall_at_k(franks, 10),
        "MRR": mrr(franks),
        "N@10": ndcg_at_k(ranked, rel_sets, 10),
        "faithfulness": faithfulness([r.ids for r in results], hamming),
        "repair_ratio": _finite_or_none(repair_ratio(cb, qb, c_relaxed, q_relaxed)),
        "repair_ratio_code": _finite_or_none(repair_ratio(cb, qb, c_relaxed, q_relaxed, side="code")),
        "repair_ratio_query": _finite_or_none(repair_ratio(cb, qb, c_relaxed, q_relaxed, side="query")),
        "dual_relaxed_count": dual_relaxed_count(ct, qt),
        "mean_candidates": float(np.mean([len(r) for r in results])),
        "relevant_recalled": float(np.mean([bool(rel & set(r.ids.tolist())) for r, rel in zip(results, rel_sets)])),
    }


def cmd_eval(args, out: Path) -> dict:
    hasher = _load_model(args.model)
    index = _load_index(args.index, hasher)
    code_X = load_embeddings(args.codes)
    query_X = load_embeddings(args.queries)
    if len(code_X) != index.item_count:
        raise UserError(f"index holds {index.item_count} items but {args.codes} has {len(code_X)} rows")
    relevance = load_relevance(args.relevance, n_queries=len(query_X), n_codes=len(code_X))
    metrics = evaluate(hasher, index, code_X, query_X, relevance, args.candidates, args.rerank)
    _write_json(out / "metrics.json", metrics)
    log.info("MRR %.4f  R@1 %.4f  N@10 %.4f", metrics["MRR"], metrics["R@1"], metrics["N@10"])
    return {"eval": {"candidates": args.candidates, "rerank": args.rerank}}


# -- bench ------------------------------------------------------------------------


def synthetic_outputs(n, n_bits, seed, chunk=50_000):
    """Continuous head-like outputs in (-1, 1), generated in float32 chunks."""
    rng = np.random.default_rng(seed)
    for start in range(0, n, chunk):
        yield np.tanh(1.5 * rng.standard_normal((min(chunk, n - start), n_bits), dtype=np.float32))


def _mean_seconds(fn, items) -> float:
    fn(items[0])  # warm caches and lazy tables
    t0 = time.perf_counter()
    for x in items:
        fn(x)
    return (time.perf_counter() - t0) / len(items)


def run_bench(sizes, n_bits=128, n_queries=100, top=DEFAULT_MAX_CANDIDATES, seed=0, lsh_tables=None,
              lsh_bits=8, query_noise=0.3, methods=("table", "scan", "lsh")) -> list[dict]:
    """Mean per-query recall time of each method at each corpus size.

    The corpus of the largest size is generated once and smaller sizes use
    its prefix. Only the recall call is timed; index builds, code generation
    and bit packing happen beforehand. The scan fully sorts the distances.
    LSH defaults to n_bits / 8 tables, as many tables as segments.
    """
    if lsh_tables is None:
        lsh_tables = max(n_bits // lsh_bits, 1)
    sizes = sorted(int(s) for s in sizes)
    seg = SegmentConfig(n_bits)
    rng = np.random.default_rng(seed + 1)
    raw_chunks, trit_chunks = [], []
    for o in synthetic_outputs(sizes[-1], n_bits, seed):
        raw_chunks.append(o)
        trit_chunks.append(relax(segment(o, seg), seg.max_relaxed, seg.threshold))
    raw = np.concatenate(raw_chunks)
    trits = np.concatenate(trit_chunks)
    del raw_chunks, trit_chunks
    words = pack_bits(raw)

    rows = []
    for size in sizes:
        targets = rng.integers(0, size, size=n_queries)
        q_raw = np.tanh(np.arctanh(np.clip(raw[targets], -0.999, 0.999)) + query_noise * rng.standard_normal((n_queries, n_bits)))
        q_trits = relax(segment(q_raw, seg), seg.max_relaxed, seg.threshold)
        q_words = pack_bits(q_raw)
        timings = {}
        if "table" in methods:
            index = SegmentedIndex.build(trits[:size], seg)
            timings["table"] = _mean_seconds(lambda q: index.recall(q, top), list(q_trits))
            del index
        if "scan" in methods:
            corpus = words[:size]
            timings["scan"] = _mean_seconds(lambda q: hamming_scan(q, corpus, top), list(q_words))
        if "lsh" in methods:
            lsh = LshIndex(LshConfig(lsh_tables, lsh_bits, seed), dim=n_bits)
            codes = np.concatenate([lsh.codes(raw[s : min(s + 50_000, size)]) for s in range(0, size, 50_000)])
            lsh.index = SegmentedIndex.build(codes, lsh.seg_cfg)
            timings["lsh"] = _mean_seconds(lambda q: lsh.query(q, top), list(q_raw))
            del lsh, codes
        scan = timings.get("scan")
        for method, secs in timings.items():
            reduction = 100.0 * (1.0 - secs / scan) if scan else float("nan")
            rows.append({"size": size, "method": method, "bits": n_bits, "seconds": secs, "reduction%": reduction})
            log.info("bench size %d %s %.6f s/query", size, method, secs)
    return rows


def bench_summary(rows) -> dict:
    """Linear fit quality of scan time and the doubling growth factors of every method."""
    out = {}
    for method in sorted({r["method"] for r in rows}):
        pts = sorted((r["size"], r["seconds"]) for r in rows if r["method"] == method)
        x = np.array([p[0] for p in pts], dtype=np.float64)
        y = np.array([p[1] for p in pts])
        entry = {"sizes": x.astype(int).tolist(), "seconds": y.tolist()}
        if len(pts) >= 2:
            slope, intercept = np.polyfit(x, y, 1)
            fit = slope * x + intercept
            ss_tot = float(np.sum((y - y.mean()) ** 2))
            entry["linear_r2"] = 1.0 - float(np.sum((y - fit) ** 2)) / ss_tot if ss_tot > 0 else 1.0
            entry["growth_factors"] = [float(b / a) for a, b in zip(y[:-1], y[1:])]
        out[method] = entry
    return out


def cmd_bench(args, out: Path) -> dict:
    with threadpool_limits(limits=1):
        rows = run_bench(args.sizes, args.bits, args.n_queries, args.top, args.seed, args.lsh_tables, args.lsh_bits)
    lines = ["size,method,bits,seconds,reduction%"]
    lines += [f"{r['size']},{r['method']},{r['bits']},{r['seconds']!r},{r['reduction%']:.3f}" for r in rows]
    _write_text(out / "bench.csv", "\n".join(lines) + "\n")
    _write_json(out / "bench_summary.json", bench_summary(rows))
    return {"bench": {"sizes": list(args.sizes), "bits": args.bits, "queries": args.n_queries, "top": args.top,
                      "lsh_tables": args.lsh_tables, "lsh_bits": args.lsh_bits, "threads": 1}}


# -- manifest and rerun --------------------------------------------------------------


PATH_ARGS = ("codes", "queries", "pretrained", "model", "index", "relevance")


def _run(args) -> int:
    out = Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)
    recorded = {k: v for k, v in vars(args).items() if k not in ("func", "out", "log_level")}
    for k in PATH_ARGS:
        if recorded.get(k):
            recorded[k] = str(Path(recorded[k]).resolve())
    inputs = {}
    for k in PATH_ARGS:
        p = recorded.get(k)
        if p and Path(p).is_file():
            inputs[k] = {"path": p, "sha256": _sha256(Path(p))}
        elif p and Path(p).is_dir():
            inputs[k] = {"path": p, "files": {f.name: _sha256(f) for f in sorted(Path(p).iterdir())
                                              if f.is_file() and f.name != MANIFEST}}
    started = _now()
    configs = args.func(args, out)
    outputs = {f.name: _sha256(f) for f in sorted(out.iterdir()) if f.is_file() and f.name != MANIFEST}
    manifest = {
        "command": args.command,
        "args": recorded,
        "seed": getattr(args, "seed", None),
        "configs": configs,
        "inputs": inputs,
        "outputs": outputs,
        "timing_outputs": sorted(TIMING_OUTPUTS & outputs.keys()),
        "started_at": started,
        "finished_at": _now(),
        "git_describe": _git_describe(),
        "version": __version__,
    }
    _write_json(out / MANIFEST, manifest)
    return EXIT_OK


def cmd_rerun(args) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / MANIFEST
    try:
        manifest = json.loads(path.read_text())
        command, recorded = manifest["command"], manifest["args"]
    except (OSError, ValueError, KeyError) as e:
        raise UserError(f"cannot read manifest {path}: {e}") from None
    argv = [command, "--out", str(args.out)]
    for key, value in recorded.items():
        if key in ("command", "manifest"):
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            argv.append(flag if value else "--no-" + key.replace("_", "-"))
        elif isinstance(value, list):
            argv += [flag, *map(str, value)]
        elif value is not None:
            argv += [flag, str(value)]
    log.info("rerunning: seghash %s", " ".join(argv))
    code = main(argv, _configure_logging=False)
    if code != EXIT_OK or not args.verify:
        return code
    fresh = json.loads((Path(args.out) / MANIFEST).read_text())["outputs"]
    exempt = set(manifest.get("timing_outputs", []))
    mismatched = sorted(
        name for name in set(manifest["outputs"]) | set(fresh)
        if name not in exempt and manifest["outputs"].get(name) != fresh.get(name)
    )
    if mismatched:
        log.error("rerun outputs differ from the manifest: %s", ", ".join(mismatched))
        return EXIT_INTERNAL
    log.info("rerun reproduced %d outputs", len(fresh) - len(exempt & fresh.keys()))
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seghash", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"seghash {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)
        return p

    def seeded(p):
        p.add_argument("--seed", type=int, default=0)

    p = command("synth", cmd_synth, "generate clustered paired embeddings")
    p.add_argument("--n", type=int, default=10_000, help="training pairs")
    p.add_argument("--test", type=int, default=0, help="extra held-out pairs written with a test_ prefix")
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--clusters", type=int, default=200)
    p.add_argument("--sigma", type=float, default=0.45, help="per-modality noise scale")
    p.add_argument("--cluster-std", type=float, default=0.3, help="spread of items around their cluster center")
    p.add_argument("--center-scale", type=float, default=1.0)
    seeded(p)

    def pair_inputs(p):
        p.add_argument("--codes", required=True, help="code embeddings (SDHE)")
        p.add_argument("--queries", required=True, help="query embeddings (SDHE), row-aligned with --codes")

    p = command("pretrain", cmd_pretrain, "train both hashing heads with the contrastive loss")
    pair_inputs(p)
    p.add_argument("--bits", type=int, choices=[128, 256], default=128)
    p.add_argument("--hidden", type=int, default=1536)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--val-fraction", type=float, default=0.1)
    seeded(p)

    p = command("align", cmd_align, "iteratively align pretrained heads on segmented ternary codes")
    pair_inputs(p)
    p.add_argument("--pretrained", required=True, help="directory written by `seghash pretrain`")
    p.add_argument("--seg-len", type=int, default=16)
    p.add_argument("--max-relax", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--alt-period", type=int, default=5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--mode", choices=MODES, default="A_BR")
    p.add_argument("--negatives", choices=["fixed", "trainee"], default="fixed")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--val-fraction", type=float, default=0.1)
    seeded(p)

    p = command("build-index", cmd_build_index, "index code embeddings with a trained model")
    p.add_argument("--model", required=True, help="directory written by `seghash align`")
    p.add_argument("--codes", required=True)

    def retrieval(p, rerank_default):
        p.add_argument("--model", required=True)
        p.add_argument("--index", required=True)
        p.add_argument("--queries", required=True)
        p.add_argument("--candidates", type=int, default=DEFAULT_MAX_CANDIDATES, help="recall truncation")
        p.add_argument("--rerank", action=argparse.BooleanOptionalAction, default=rerank_default,
                       help="re-order candidates by dense similarity")

    p = command("query", cmd_query, "retrieve code ids for each query")
    retrieval(p, False)
    p.add_argument("--codes", help="code embeddings, needed for --rerank")
    p.add_argument("--top", type=int, default=10)

    p = command("eval", cmd_eval, "write retrieval metrics as JSON")
    retrieval(p, True)
    p.add_argument("--codes", required=True)
    p.add_argument("--relevance", help="TSV of query<TAB>code pairs; identity pairing when absent")

    p = command("bench", cmd_bench, "time table recall against Hamming scan and LSH, single-threaded")
    p.add_argument("--sizes", type=int, nargs="+", default=list(BENCH_SIZES))
    p.add_argument("--bits", type=int, default=128)
    p.add_argument("--n-queries", type=int, default=100, help="timed queries per size")
    p.add_argument("--top", type=int, default=DEFAULT_MAX_CANDIDATES)
    p.add_argument("--lsh-tables", type=int, help="LSH tables (default: bits / lsh-bits)")
    p.add_argument("--lsh-bits", type=int, default=8)
    seeded(p)

    p = sub.add_parser("rerun", help="repeat a recorded run from its manifest")
    p.add_argument("manifest", help="manifest.json or the directory holding it")
    p.add_argument("--out", required=True)
    p.add_argument("--verify", action="store_true", help="fail unless outputs match the manifest")
    p.set_defaults(func=None)
    return parser


def _thread_limit():
    value = os.environ.get("SEGHASH_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UserError(f"SEGHASH_THREADS must be a positive integer, got {value!r}") from None
    return threadpool_limits(limits=n)


def main(argv=None, _configure_logging=True) -> int:
    try:
        args = build_parser().parse_args(argv)
        if _configure_logging:
            logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
        with _thread_limit():
            if args.command == "rerun":
                return cmd_rerun(args)
            return _run(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except (FormatError, FileNotFoundError, IsADirectoryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
