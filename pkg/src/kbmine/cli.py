"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cardbuild, corpus, defmine, nertag, pipeline, topicrank

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

logger = logging.getLogger("kbmine")


def _load_config(args) -> pipeline.PipelineConfig:
    overrides = {
        "corpus_path": getattr(args, "corpus", None),
        "output_dir": getattr(args, "out", None),
        "seed": getattr(args, "seed", None),
        "final_top_k": getattr(args, "top_n", None),
        "card_k": getattr(args, "card_k", None),
        "memory_budget": getattr(args, "mem_budget", None),
    }
    if args.config:
        return pipeline.PipelineConfig.from_file(args.config, **overrides)
    cfg = pipeline.PipelineConfig()
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--corpus", help="JSONL corpus path")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--top-n", dest="top_n", type=int, help="final topic count")
    parser.add_argument("--card-k", dest="card_k", type=int, help="related items per card")
    parser.add_argument(
        "--mem-budget", dest="mem_budget", type=int, help="SVD memory budget in bytes"
    )


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    docs, errors = corpus.ingest_jsonl(cfg.corpus_path)
    for err in errors:
        print(f"line {err.line_number}: {err.reason}", file=sys.stderr)
    print(f"{len(docs)} documents, {len(errors)} errors")
    return EXIT_OK


def cmd_train_tagger(args) -> int:
    data = []
    with open(args.data, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                data.append(nertag.LabeledSentence(obj["tokens"], obj["labels"]))
    cfg = nertag.TrainConfig(
        gamma=args.gamma, epochs=args.epochs, learning_rate=args.lr, seed=args.seed or 0
    )
    model = nertag.train_tagger(data, cfg)
    model.save(args.model)
    print(f"trained on {len(data)} sentences, final loss {model.final_training_loss:.4f}")
    return EXIT_OK


def cmd_train_ranker(args) -> int:
    cfg = _load_config(args)
    state = pipeline.PipelineState.load(args.state)
    labels = topicrank.load_label_file(args.labels)
    rows = []
    for key, label in labels.items():
        cand = state.store.candidates.get(key)
        if cand is not None:
            rows.append((topicrank.compute_features(cand), label))
    model = topicrank.train_gbdt(rows, topicrank.GbdtConfig(seed=cfg.seed))
    model.save(args.model)
    scores = [topicrank.score_topic(model, f) for f, _ in rows]
    print(f"trained on {len(rows)} rows, training AUC "
          f"{topicrank.auc(scores, [y for _, y in rows]):.3f}")
    return EXIT_OK


def cmd_train_defclassifier(args) -> int:
    rows = defmine.load_training_csv(args.data)
    model = defmine.train_sentence_classifier(
        rows, defmine.ClassifierConfig(seed=args.seed or 0)
    )
    model.save(args.model)
    print(f"trained on {len(rows)} sentences")
    return EXIT_OK


def cmd_mine(args) -> int:
    cfg = _load_config(args)
    state, kb = pipeline.run_full(cfg)
    if args.state:
        state.save(args.state)
    pipeline.export_kb(kb, cfg.output_dir)
    print(f"{len(kb.cards)} cards written to {cfg.output_dir}")
    return EXIT_OK


def cmd_update(args) -> int:
    cfg = _load_config(args)
    models = pipeline.Models.load(cfg)
    state = pipeline.PipelineState.load(args.state)
    n = 0
    for event in pipeline.read_events(args.events):
        pipeline.apply_update(state, event, models)
        n += 1
    state.save(args.state)
    print(f"applied {n} events")
    return EXIT_OK


def cmd_refresh(args) -> int:
    cfg = _load_config(args)
    models = pipeline.Models.load(cfg)
    state = pipeline.PipelineState.load(args.state)
    ranked = pipeline.rank_refresh(state, cfg, models)
    for key, score in ranked.entries:
        print(f"{score:.4f}\t{key}")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load_config(args)
    models = pipeline.Models.load(cfg)
    state = pipeline.PipelineState.load(args.state)
    kb = pipeline.build_knowledge_base(state, cfg, models)
    pipeline.export_kb(kb, cfg.output_dir)
    print(f"{len(kb.cards)} cards written to {cfg.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    """Quick self-checks of the decoding, ranking and definition stages."""
    rng = np.random.default_rng(args.seed or 0)
    labelset = nertag.LabelSet(("person", "creative_work"))
    ok = 0
    trials = 200
    for _ in range(trials):
        n = int(rng.integers(1, 7))
        scores = rng.normal(size=(n, len(labelset)))
        path = nertag.viterbi_decode(scores, labelset)
        greedy = nertag.greedy_decode(scores, labelset)
        v = sum(scores[t, path[t]] for t in range(n))
        g = sum(scores[t, greedy[t]] for t in range(n))
        if labelset.is_valid_sequence(path) and v >= g - 1e-12:
            ok += 1
    print(f"viterbi validity+dominance: {ok}/{trials}")

    pos = rng.normal(1.0, 1.0, size=200)
    neg = rng.normal(0.0, 1.0, size=200)
    scores = np.concatenate([pos, neg])
    labels = np.array([1] * 200 + [0] * 200)
    print(f"auc sanity (separated gaussians): {topicrank.auc(scores, labels):.3f}")

    table5 = [
        ("Statistics is a branch of mathematics dealing with data collection, "
         "organization, analysis, interpretation, and presentation.", 1),
        ("This method is used to identifying a hyperplane which separates a "
         "positive class from the negative class.", 0),
        ("Tom is a Data Scientist at Acme Corporation working on natural "
         "language processing.", 0),
        ("The Caterpillar 797B is the biggest car I've ever seen.", 0),
    ]
    f1, p, r = defmine.eval_rule_baseline(table5)
    print(f"rule-baseline on example sentences: F1={f1:.2f} P={p:.2f} R={r:.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbmine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and count a corpus file")
    _add_common(p)

    p = sub.add_parser("train-tagger", help="train the token tagger")
    _add_common(p)
    p.add_argument("--data", required=True, help="JSONL of {tokens, labels}")
    p.add_argument("--model", required=True, help="output model path (.npz)")
    p.add_argument("--gamma", type=float, default=1.6)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.5)

    p = sub.add_parser("train-ranker", help="train the GBDT topic ranker")
    _add_common(p)
    p.add_argument("--state", required=True, help="pipeline state directory")
    p.add_argument("--labels", required=True, help="CSV key,label")
    p.add_argument("--model", required=True, help="output model path (.json)")

    p = sub.add_parser("train-defclassifier", help="train the sentence classifier")
    _add_common(p)
    p.add_argument("--data", required=True, help="CSV category,text")
    p.add_argument("--model", required=True, help="output model path (.npz)")

    p = sub.add_parser("mine", help="full batch run")
    _add_common(p)
    p.add_argument("--state", help="directory to persist pipeline state")

    p = sub.add_parser("update", help="apply a JSONL event stream")
    _add_common(p)
    p.add_argument("--state", required=True)
    p.add_argument("--events", required=True)

    p = sub.add_parser("refresh", help="recompute the ranked topic list")
    _add_common(p)
    p.add_argument("--state", required=True)

    p = sub.add_parser("export", help="rebuild and export the knowledge base")
    _add_common(p)
    p.add_argument("--state", required=True)

    p = sub.add_parser("eval", help="print decoder/ranker/definition self-checks")
    _add_common(p)
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "train-tagger": cmd_train_tagger,
    "train-ranker": cmd_train_ranker,
    "train-defclassifier": cmd_train_defclassifier,
    "mine": cmd_mine,
    "update": cmd_update,
    "refresh": cmd_refresh,
    "export": cmd_export,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
