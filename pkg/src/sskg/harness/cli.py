"""Command-line entry point: ``sskg <command> [options]``.

Every command writes one JSON document to stdout, or to ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from ..adapter import init_adapter
from ..checkpoint import CheckpointError
from ..config import ConfigError, RunConfig, TrainConfig
from ..encoder import encode, init_encoder
from ..fusion import TrainExample, example_loss_and_grads, init_decoder, init_lora, trainable_tensors
from ..kg_store import (
    KGFormatError,
    KnowledgeGraph,
    RemoteKGError,
    build_graph,
    fetch_remote_edges,
    ingest_conceptnet_dump,
    ingest_simple_tsv,
    merge,
)
from ..levi import position_matrix, serialize_levi, to_levi
from ..numerics import Rng, grad_check
from ..retrieval import STRATEGIES, build_doc_freq, retrieve, serialize
from .data import SchemaError, load_jsonl, write_jsonl
from .fixtures import toy_dataset, toy_tsv
from .pipeline import Pipeline, ablate_rank, ablate_traversal, comparison_table, run_eval, train

logger = logging.getLogger("sskg")


class CliError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------------

def _emit(doc: Any, out: Optional[str]) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _load_graph(path: str, fmt: str = "tsv", language: str = "en") -> KnowledgeGraph:
    if fmt == "conceptnet":
        return ingest_conceptnet_dump(path, language)
    return ingest_simple_tsv(path)


def _run_config(path: str) -> RunConfig:
    cfg = RunConfig.load(path)
    if not cfg.kg_path:
        raise CliError("config lacks kg_path")
    return cfg


def _datasets(cfg: RunConfig, need_eval: bool = True):
    if not cfg.train_path:
        raise CliError("config lacks train_path")
    train_set = load_jsonl(cfg.train_path, cfg.schema)
    eval_set = load_jsonl(cfg.eval_path, cfg.schema) if cfg.eval_path else train_set
    if need_eval and not eval_set:
        raise CliError("evaluation set is empty")
    return train_set, eval_set


def _corpus(path: Optional[str]) -> tuple[dict[str, int], int]:
    if not path:
        return {}, 1
    questions = [ex.question for ex in load_jsonl(path, _guess_schema(path))]
    return build_doc_freq(questions)


def _guess_schema(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return "multiple_choice" if json.loads(line).get("choices") else "open_qa"
    return "open_qa"


def _graph_view(args) -> dict:
    graph = _load_graph(args.kg, args.format, args.language)
    df, n = _corpus(args.corpus)
    topics, sub = retrieve(args.query, graph, df, n, args.hops, args.max_triples, args.max_topics)
    seq = serialize(sub, args.strategy, args.seed, topics, args.walk_steps)
    return {"graph": graph, "topics": topics, "subgraph": sub, "sequence": seq}


# -- commands --------------------------------------------------------------------------------

def cmd_ingest(args) -> dict:
    graph = _load_graph(args.kg, args.format, args.language) if args.kg else None
    if args.remote:
        if not args.entity:
            raise CliError("--remote needs --entity")
        records = fetch_remote_edges(args.entity, args.remote, args.limit, args.language)
        graph = merge(graph if graph is not None else build_graph([]), records)
    if graph is None:
        raise CliError("nothing to ingest: give --kg and/or --remote")
    doc = {"entities": graph.num_entities, "triples": graph.num_triples}
    if args.full:
        doc["graph"] = graph.to_json()
    return doc


def cmd_retrieve(args) -> dict:
    v = _graph_view(args)
    sub = v["subgraph"]
    return {
        "query": args.query,
        "topics": [{"label": lab, "score": s} for lab, (_, s) in zip(v["topics"].labels, v["topics"].topics)],
        "triples": [[h, r, t] for h, r, t, _ in sorted(sub.graph.triple_set())],
        "strategy": args.strategy,
        "seed": args.seed,
        "sequence": v["sequence"].tokens,
    }


def cmd_serialize(args) -> dict:
    v = _graph_view(args)
    levi = to_levi(v["subgraph"], v["sequence"])
    pm = position_matrix(levi, args.k)
    return {
        "sequence": v["sequence"].tokens,
        "levi_labels": serialize_levi(levi),
        "levi_edges": [list(e) for e in levi.edges],
        "positions": pm.values.tolist(),
        "k": args.k,
    }


def cmd_encode(args) -> dict:
    v = _graph_view(args)
    levi = to_levi(v["subgraph"], v["sequence"])
    labels = serialize_levi(levi)
    params = init_encoder(args.seed, args.d_g, args.layers, args.k, v["graph"].all_labels())
    emb = encode(labels, position_matrix(levi, args.k), params)
    return {"labels": labels, "shape": list(emb.shape), "embedding": emb.tolist()}


def cmd_train(args) -> dict:
    cfg = _run_config(args.config)
    train_cfg = cfg.train if args.seed is None else cfg.train.replace(seed=args.seed)
    graph = _load_graph(cfg.kg_path, cfg.kg_format, cfg.language)
    train_set, eval_set = _datasets(cfg, need_eval=False)
    ckpt = args.checkpoint or cfg.checkpoint_dir
    if not ckpt:
        raise CliError("no checkpoint directory: set checkpoint_dir or pass --checkpoint")
    pipe = Pipeline.build(graph, train_set, train_cfg, extra_texts=eval_set)
    log_path = Path(args.log) if args.log else Path(ckpt) / "train_log.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", encoding="utf-8") as fh:
        def log(rec):
            fh.write(json.dumps({k: rec[k] for k in ("step", "lr", "loss")}) + "\n")

        records = train(pipe, train_set, args.max_steps, log=log)
    pipe.save(ckpt)
    return {
        "checkpoint": str(ckpt),
        "log": str(log_path),
        "steps": len(records),
        "final_loss": records[-1]["loss"],
        "trainable_params": pipe.trainable_param_counts(),
        "config": train_cfg.to_dict(),
    }


def cmd_eval(args) -> dict:
    cfg = _run_config(args.config)
    graph = _load_graph(cfg.kg_path, cfg.kg_format, cfg.language)
    ckpt = args.checkpoint or cfg.checkpoint_dir
    if not ckpt:
        raise CliError("no checkpoint given")
    pipe = Pipeline.load(ckpt, graph)
    path = cfg.eval_path or cfg.train_path
    if not path:
        raise CliError("config lacks eval_path")
    return run_eval(load_jsonl(path, cfg.schema), pipe).to_json()


def gradcheck_report(seed: int = 0, probes: int = 20) -> dict:
    """Relative error of the composed adapter + LoRA loss on a small random fixture."""
    rng = Rng(seed)
    vocab = ["<unk>", "<eos>"] + [f"w{i}" for i in range(6)]
    dec = init_decoder(seed, vocab, 8, 2)
    ada = init_adapter(seed + 1, 6, 8)
    lora = init_lora(seed + 2, 8, 2, 4, 16.0)
    for name, t in lora.factors.items():
        if name.endswith(".B"):
            t[...] = rng.normal(t.shape, 0.05)
    ex = TrainExample(rng.normal((3, 6)), [2, 3, 4], [5, 1])
    params = trainable_tensors(ada, lora)
    names = sorted(params)
    coords = []
    for _ in range(probes):
        name = names[rng.randbelow(len(names))]
        coords.append((name, rng.randbelow(params[name].size)))

    def f(_):
        loss, grads, _ = example_loss_and_grads(ex, dec, ada, lora)
        return loss, grads

    err = grad_check(f, params, coords=coords)
    return {"seed": seed, "probes": probes, "max_rel_error": err, "passed": err < 1e-4}


def cmd_gradcheck(args) -> dict:
    return gradcheck_report(args.seed, args.probes)


def _ablation_inputs(args):
    cfg = _run_config(args.config)
    train_cfg = cfg.train if args.max_steps is None else cfg.train.replace(max_steps=args.max_steps)
    if args.seed is not None:
        train_cfg = train_cfg.replace(seed=args.seed)
    graph = _load_graph(cfg.kg_path, cfg.kg_format, cfg.language)
    train_set, eval_set = _datasets(cfg)
    return graph, train_set, eval_set, train_cfg


def cmd_ablate_traversal(args) -> dict:
    reports = ablate_traversal(*_ablation_inputs(args))
    return {"table": comparison_table(reports), "reports": {k: r.to_json() for k, r in reports.items()}}


def cmd_ablate_rank(args) -> dict:
    graph, train_set, eval_set, cfg = _ablation_inputs(args)
    reports = ablate_rank(graph, train_set, eval_set, cfg)
    return {
        "table": comparison_table(reports),
        "reports": {str(k): r.to_json() for k, r in reports.items()},
    }


def cmd_demo_data(args) -> dict:
    """Write the toy graph, its QA set and a matching config into ``--dir``."""
    root = Path(args.dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "toy.tsv").write_text(toy_tsv(), encoding="utf-8")
    write_jsonl(root / "toy_qa.jsonl", toy_dataset())
    config = {"kg_path": "toy.tsv", "train_path": "toy_qa.jsonl", "eval_path": "toy_qa.jsonl",
              "schema": "open_qa", "checkpoint_dir": "checkpoint", **TrainConfig().to_dict()}
    (root / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return {"dir": str(root), "files": ["toy.tsv", "toy_qa.jsonl", "config.json"]}


# -- parser ------------------------------------------------------------------------------------

def _graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kg", required=True, help="knowledge graph file")
    p.add_argument("--format", choices=("tsv", "conceptnet"), default="tsv")
    p.add_argument("--language", default="en")
    p.add_argument("--query", required=True)
    p.add_argument("--corpus", help="JSONL dataset whose questions define document frequencies")
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--max-triples", type=int, default=64)
    p.add_argument("--max-topics", type=int, default=5)
    p.add_argument("--strategy", choices=STRATEGIES, default="dfs")
    p.add_argument("--walk-steps", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sskg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", help="write JSON here instead of stdout")
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "load a graph file and/or remote edges; print counts")
    p.add_argument("--kg")
    p.add_argument("--format", choices=("tsv", "conceptnet"), default="tsv")
    p.add_argument("--language", default="en")
    p.add_argument("--remote", help="REST endpoint base URL")
    p.add_argument("--entity")
    p.add_argument("--limit", type=int, default=50)
    p.add_argument("--full", action="store_true", help="include the canonical graph")

    _graph_args(add("retrieve", cmd_retrieve, "ground a query and linearise its subgraph"))

    p = add("serialize", cmd_serialize, "Levi labels and relative position matrix for a query")
    _graph_args(p)
    p.add_argument("--k", type=int, default=8)

    p = add("encode", cmd_encode, "run the frozen graph encoder on a query's subgraph")
    _graph_args(p)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--d-g", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)

    p = add("train", cmd_train, "train adapter and LoRA factors; save a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--log", help="JSONL training log path")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)

    p = add("eval", cmd_eval, "evaluate a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the composed loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=20)

    for name, func in (("ablate-traversal", cmd_ablate_traversal), ("ablate-rank", cmd_ablate_rank)):
        p = add(name, func, f"{name.split('-')[1]} sweep: train and evaluate each setting")
        p.add_argument("--config", required=True)
        p.add_argument("--max-steps", type=int)
        p.add_argument("--seed", type=int)

    p = add("demo-data", cmd_demo_data, "write the toy graph, QA set and config")
    p.add_argument("--dir", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = args.func(args)
    except (CliError, ConfigError, CheckpointError, KGFormatError, SchemaError, RemoteKGError, OSError) as exc:
        print(f"sskg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    _emit(doc, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
