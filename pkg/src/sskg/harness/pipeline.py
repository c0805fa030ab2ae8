"""End-to-end pipeline: ground a question in the graph, linearise and encode
the subgraph, adapt it to the decoder width, fuse with the prompt and run the
LoRA-tuned decoder.  Also the training loop, evaluation and ablation drivers."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..adapter import AdapterParams, init_adapter
from ..checkpoint import CheckpointError
from ..config import RANK_SWEEP, TrainConfig
from ..encoder import EncoderParams, encode, init_encoder
from ..fusion import (
    DecoderParams,
    LoraDelta,
    TrainExample,
    build_text_vocab,
    dataset_loss,
    fuse,
    generate,
    graph_rows_vjp,
    init_decoder,
    init_lora,
    strip_eos,
    train_step,
)
from ..kg_store import KnowledgeGraph
from ..levi import LeviGraph, PositionMatrix, position_matrix, serialize_levi, to_levi
from ..numerics import AdamWState, Rng, warmup_lr
from ..retrieval import STRATEGIES, SubGraph, TopicSet, TraversalSequence, build_doc_freq, retrieve, serialize
from .data import QaExample, answer_tokens, render_prompt, retrieval_text
from .metrics import bleu, exact_match_acc, rouge_n

logger = logging.getLogger(__name__)

# sub-seeds derived from the run seed, one per parameter group
_ENC, _DEC, _ADA, _LORA, _SHUFFLE = 1, 2, 3, 4, 5


@dataclass
class GraphContext:
    topics: TopicSet
    subgraph: SubGraph
    sequence: TraversalSequence
    levi: LeviGraph
    labels: list[str]
    positions: PositionMatrix


@dataclass
class Pipeline:
    graph: KnowledgeGraph
    config: TrainConfig
    doc_freq: dict[str, int]
    n_docs: int
    encoder: EncoderParams
    decoder: DecoderParams
    adapter: AdapterParams
    lora: LoraDelta
    use_graph: bool = True
    _kg_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def build(
        cls,
        graph: KnowledgeGraph,
        train_examples: Sequence[QaExample],
        config: TrainConfig,
        extra_texts: Iterable[QaExample] = (),
    ) -> "Pipeline":
        """Fresh parameters seeded from ``config.seed``.

        The decoder vocabulary covers prompts and answers of ``train_examples``
        and ``extra_texts``; the TF-IDF corpus is the training questions.
        """
        doc_freq, n_docs = build_doc_freq([ex.question for ex in train_examples])
        texts = [render_prompt(ex) + answer_tokens(ex) for ex in [*train_examples, *extra_texts]]
        seed = config.seed
        encoder = init_encoder(seed + _ENC, config.d_g, config.encoder_layers, config.k, graph.all_labels())
        decoder = init_decoder(seed + _DEC, build_text_vocab(texts), config.h_size, config.decoder_layers)
        adapter = init_adapter(seed + _ADA, config.d_g, config.h_size)
        lora = init_lora(seed + _LORA, config.h_size, config.decoder_layers, config.rank, config.alpha)
        return cls(graph, config, doc_freq, n_docs, encoder, decoder, adapter, lora)

    # -- graph side -----------------------------------------------------------

    def graph_context(self, text: str, strategy: Optional[str] = None) -> GraphContext:
        cfg = self.config
        topics, sub = retrieve(text, self.graph, self.doc_freq, self.n_docs, cfg.hops, cfg.max_triples, cfg.max_topics)
        seq = serialize(sub, strategy or cfg.strategy, cfg.seed, topics, cfg.walk_steps)
        levi = to_levi(sub, seq)
        return GraphContext(topics, sub, seq, levi, serialize_levi(levi), position_matrix(levi, cfg.k))

    def kg_origin(self, example: QaExample) -> np.ndarray:
        """Frozen encoder output for the example's subgraph (cached; the encoder never changes)."""
        if not self.use_graph:
            return np.zeros((0, self.encoder.dim))
        text = retrieval_text(example)
        if text not in self._kg_cache:
            ctx = self.graph_context(text)
            self._kg_cache[text] = encode(ctx.labels, ctx.positions, self.encoder)
        return self._kg_cache[text]

    # -- text side --------------------------------------------------------------

    def train_example(self, example: QaExample) -> TrainExample:
        prompt = self.decoder.ids(render_prompt(example))
        answer = self.decoder.ids(answer_tokens(example)) + [self.decoder.eos_id]
        return TrainExample(self.kg_origin(example), prompt, answer, example.id)

    def fused_prompt(self, example: QaExample):
        ex = self.train_example(example)
        q_e = self.decoder.embedding[np.asarray(ex.prompt_ids, dtype=np.int64)]
        kg_e, _ = graph_rows_vjp(ex, q_e, self.adapter)
        return fuse(kg_e, q_e)

    def predict(self, example: QaExample) -> str:
        out = generate(self.fused_prompt(example), self.decoder, self.lora, self.config.max_new_tokens)
        return " ".join(strip_eos(out))

    # -- persistence ----------------------------------------------------------------

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        self.encoder.save(path / "encoder")
        self.decoder.save(path / "decoder")
        self.adapter.save(path / "adapter")
        self.lora.save(path / "lora")
        meta = {"config": self.config.to_dict(), "doc_freq": self.doc_freq, "n_docs": self.n_docs,
                "use_graph": self.use_graph}
        (path / "pipeline.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path, graph: KnowledgeGraph) -> "Pipeline":
        path = Path(path)
        if not (path / "pipeline.json").exists():
            raise CheckpointError(f"no pipeline checkpoint at {path}")
        meta = json.loads((path / "pipeline.json").read_text(encoding="utf-8"))
        return cls(
            graph,
            TrainConfig(**meta["config"]),
            meta["doc_freq"],
            meta["n_docs"],
            EncoderParams.load(path / "encoder"),
            DecoderParams.load(path / "decoder"),
            AdapterParams.load(path / "adapter"),
            LoraDelta.load(path / "lora"),
            meta.get("use_graph", True),
        )

    def trainable_param_counts(self) -> dict[str, int]:
        return {"adapter": self.adapter.num_params(), "lora": self.lora.num_params(),
                "lora_per_target": 2 * self.lora.rank * self.decoder.h_size}


# -- training ----------------------------------------------------------------------

def batches(n: int, batch_size: int, seed: int):
    """Endless stream of index batches: a fresh seeded shuffle per epoch."""
    rng = Rng(seed)
    while True:
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = rng.randbelow(i + 1)
            order[i], order[j] = order[j], order[i]
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def train(
    pipeline: Pipeline,
    examples: Sequence[QaExample],
    max_steps: Optional[int] = None,
    log: Optional[Callable[[dict], None]] = None,
    target_loss: Optional[float] = None,
    eval_every: int = 50,
) -> list[dict]:
    """Run AdamW steps; returns the ``{step, lr, loss}`` records.

    With ``target_loss`` set, the full training-set loss is measured every
    ``eval_every`` steps and training stops once it drops below the target.
    """
    if not examples:
        raise ValueError("no training examples")
    cfg = pipeline.config
    steps = cfg.max_steps if max_steps is None else max_steps
    data = [pipeline.train_example(ex) for ex in examples]
    state = AdamWState()
    records = []
    stream = batches(len(data), cfg.batch_size, cfg.seed + _SHUFFLE)
    for step in range(1, steps + 1):
        idx = next(stream)
        lr = warmup_lr(cfg.lr, step, cfg.warmup_steps)
        loss = train_step([data[i] for i in idx], pipeline.decoder, pipeline.adapter, pipeline.lora, state, cfg)
        rec = {"step": step, "lr": lr, "loss": loss}
        if target_loss is not None and (step % eval_every == 0 or step == steps):
            rec["train_loss"] = dataset_loss(data, pipeline.decoder, pipeline.adapter, pipeline.lora)
        records.append(rec)
        if log is not None:
            log(rec)
        if target_loss is not None and rec.get("train_loss", math.inf) < target_loss:
            break
    return records


# -- evaluation ----------------------------------------------------------------------

@dataclass
class EvalReport:
    per_example: list[dict]
    aggregates: dict
    config: dict
    strategy: str
    rank: int

    def to_json(self) -> dict:
        return {"aggregates": self.aggregates, "per_example": self.per_example, "config": self.config,
                "strategy": self.strategy, "rank": self.rank}


METRIC_KEYS = ("acc", "rouge1", "rouge2", "bleu")


def score_example(example: QaExample, prediction: str) -> dict:
    gold = " ".join(answer_tokens(example))
    r1 = rouge_n(prediction, gold, 1)["f1"]
    r2 = rouge_n(prediction, gold, 2)["f1"]
    b = bleu(prediction, [gold])
    return {
        "id": example.id,
        "prediction": prediction,
        "gold": gold,
        "acc": exact_match_acc([prediction], [gold]),
        "rouge1": r1,
        "rouge2": r2,
        "bleu": b,
        "avg_sim": (r1 + r2 + b) / 3.0,
    }


def aggregate(records: Sequence[dict]) -> dict:
    if not records:
        return {"defined": False, "n": 0, **{k: None for k in (*METRIC_KEYS, "avg_sim")}}
    agg = {"defined": True, "n": len(records)}
    for key in METRIC_KEYS:
        agg[key] = sum(r[key] for r in records) / len(records)
    agg["avg_sim"] = (agg["rouge1"] + agg["rouge2"] + agg["bleu"]) / 3.0
    return agg


def run_eval(
    dataset: Sequence[QaExample],
    pipeline: Optional[Pipeline],
    predict: Optional[Callable[[QaExample], str]] = None,
) -> EvalReport:
    """Predict and score every example; ``predict`` overrides the pipeline's generator."""
    if pipeline is None and predict is None:
        raise CheckpointError("run_eval needs a trained pipeline checkpoint")
    predict = predict or pipeline.predict
    records = [score_example(ex, predict(ex)) for ex in dataset]
    cfg = pipeline.config if pipeline is not None else None
    return EvalReport(
        records,
        aggregate(records),
        cfg.to_dict() if cfg else {},
        cfg.strategy if cfg else "",
        cfg.rank if cfg else 0,
    )


def train_and_eval(
    graph: KnowledgeGraph,
    train_set: Sequence[QaExample],
    eval_set: Sequence[QaExample],
    config: TrainConfig,
) -> tuple[EvalReport, Pipeline, list[dict]]:
    pipe = Pipeline.build(graph, train_set, config, extra_texts=eval_set)
    log = train(pipe, train_set)
    report = run_eval(eval_set, pipe)
    report.aggregates["final_train_loss"] = log[-1]["loss"] if log else None
    report.aggregates["trainable_params"] = pipe.trainable_param_counts()
    return report, pipe, log


def ablate_traversal(graph, train_set, eval_set, config: TrainConfig) -> dict[str, EvalReport]:
    """Train and evaluate once per traversal strategy with shared seeds."""
    return {s: train_and_eval(graph, train_set, eval_set, config.replace(strategy=s))[0] for s in STRATEGIES}


def ablate_rank(graph, train_set, eval_set, config: TrainConfig, ranks: Sequence[int] = RANK_SWEEP) -> dict[int, EvalReport]:
    return {r: train_and_eval(graph, train_set, eval_set, config.replace(rank=r))[0] for r in ranks}


def comparison_table(reports: dict) -> list[dict]:
    rows = []
    for key, rep in reports.items():
        row = {"setting": key}
        row.update({k: rep.aggregates.get(k) for k in (*METRIC_KEYS, "avg_sim", "final_train_loss")})
        rows.append(row)
    return rows
