"""End-to-end orchestration: batch runs, semi-streaming updates and
deletions, ranking refresh, and knowledge-base export.

Deletion is exact: the candidate store keeps per-document contribution
ledgers and definitions are indexed by source document, so removing a
document restores the state a batch run on the reduced corpus would
produce, and no deleted text survives in exports.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
import urllib.parse
from dataclasses import dataclass, asdict
from pathlib import Path

from . import cardbuild, corpus, defmine, nertag, topicrank

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    corpus_path: str = ""
    output_dir: str = "kb_out"
    tagger_model: str = ""            # trained TaggerModel (.npz)
    score_file: str = ""              # external scorer bypass (JSONL)
    ranker_model: str = ""            # trained GbdtModel (.json)
    def_classifier: str = ""          # trained LinearClassifier (.npz); rule-based if empty
    patterns_file: str = ""
    negative_lexicon: str = ""
    positive_lexicon: str = ""
    abbreviations_file: str = ""
    entity_types: tuple = nertag.DEFAULT_ENTITY_TYPES
    shortlist_n: int = 1000
    final_top_k: int = 100
    min_topic_score: float = 0.0
    card_k: int = 5
    conflation_tau: float | None = None
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    svd_rank: int = 16
    svd_oversampling: int = 8
    svd_power_iterations: int = 1
    svd_batch_size: int = 1024
    memory_budget: int = 512 * 1024 * 1024
    seed: int = 0

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if isinstance(cfg.entity_types, list):
            cfg.entity_types = tuple(cfg.entity_types)
        if cfg.shortlist_n < cfg.final_top_k:
            raise ValueError("shortlist_n must be >= final_top_k")
        return cfg

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class Models:
    """Loaded model bundle shared by batch and streaming paths."""

    tagger: nertag.TaggerModel | None
    external_scores: dict | None
    labelset: nertag.LabelSet
    ranker: topicrank.GbdtModel | None
    classifier: object
    patterns: tuple
    lexicon: defmine.OpinionLexicon
    abbreviations: frozenset

    @classmethod
    def load(cls, config: PipelineConfig) -> "Models":
        tagger = None
        external = None
        if config.score_file:
            external = nertag.load_external_scores(config.score_file)
            labelset = nertag.LabelSet(config.entity_types)
        elif config.tagger_model:
            tagger = nertag.TaggerModel.load(config.tagger_model)
            labelset = tagger.labelset
        else:
            raise ValueError("config needs either tagger_model or score_file")
        ranker = (
            topicrank.GbdtModel.load(config.ranker_model) if config.ranker_model else None
        )
        classifier = (
            defmine.LinearClassifier.load(config.def_classifier)
            if config.def_classifier
            else defmine.RuleClassifier()
        )
        patterns = (
            defmine.load_patterns(config.patterns_file)
            if config.patterns_file
            else defmine.DEFAULT_PATTERNS
        )
        lexicon = defmine.OpinionLexicon.load(
            config.negative_lexicon or None, config.positive_lexicon or None
        )
        abbreviations = (
            corpus.load_abbreviations(config.abbreviations_file)
            if config.abbreviations_file
            else corpus.DEFAULT_ABBREVIATIONS
        )
        return cls(
            tagger=tagger,
            external_scores=external,
            labelset=labelset,
            ranker=ranker,
            classifier=classifier,
            patterns=patterns,
            lexicon=lexicon,
            abbreviations=abbreviations,
        )


@dataclass(frozen=True)
class UpdateEvent:
    kind: str  # "upsert" | "delete"
    document: corpus.Document | None = None
    doc_id: str | None = None

    def __post_init__(self):
        if self.kind == "upsert" and self.document is None:
            raise ValueError("upsert event needs a document")
        if self.kind == "delete" and not self.doc_id:
            raise ValueError("delete event needs a doc_id")
        if self.kind not in ("upsert", "delete"):
            raise ValueError(f"unknown event kind: {self.kind}")


class PipelineState:
    """Everything needed to serve updates and rebuild the KB."""

    def __init__(self):
        self.documents: dict[str, corpus.Document] = {}
        self.store = topicrank.CandidateStore()
        self.definitions: dict[str, list[defmine.DefinitionRecord]] = {}
        self.doc_meta: dict[str, dict] = {}  # doc_id -> length/author/timestamp/title

    # -- per-document processing -------------------------------------------

    def process_document(self, doc: corpus.Document, models: Models) -> None:
        if doc.doc_id in self.documents:
            self.remove_document(doc.doc_id)
        sentences = corpus.split_sentences(doc, models.abbreviations)
        mentions: list[nertag.Mention] = []
        token_count = 0
        for sent in sentences:
            tokens = corpus.tokenize(sent)
            if not tokens:
                continue
            token_count += len(tokens)
            surfaces = [t.surface for t in tokens]
            if models.external_scores is not None:
                scores = models.external_scores.get((doc.doc_id, sent.index))
                if scores is None:
                    continue
            else:
                scores = nertag.score_tokens(models.tagger, surfaces, sent.from_title)
            labels = nertag.viterbi_decode(scores, models.labelset)
            mentions.extend(
                nertag.extract_mentions(
                    tokens,
                    labels,
                    models.labelset,
                    doc_id=doc.doc_id,
                    sentence_index=sent.index,
                    scores=scores,
                    from_title=sent.from_title,
                )
            )
        self.store.accumulate(mentions, doc)
        self.definitions[doc.doc_id] = defmine.mine_definitions(
            doc,
            models.classifier,
            models.patterns,
            models.lexicon,
            abbreviations=models.abbreviations,
        )
        self.documents[doc.doc_id] = doc
        self.doc_meta[doc.doc_id] = {
            "length": max(1, token_count),
            "author": doc.author_id,
            "timestamp": doc.timestamp,
        }

    def remove_document(self, doc_id: str) -> bool:
        known = doc_id in self.documents
        self.store.remove_doc(doc_id)
        self.definitions.pop(doc_id, None)
        self.doc_meta.pop(doc_id, None)
        self.documents.pop(doc_id, None)
        return known

    # -- persistence ---------------------------------------------------------

    def save(self, state_dir: str | Path) -> None:
        state_dir = Path(state_dir)
        state_dir.mkdir(parents=True, exist_ok=True)
        with open(state_dir / "documents.jsonl", "w", encoding="utf-8") as fh:
            for doc_id in sorted(self.documents):
                d = self.documents[doc_id]
                fh.write(
                    json.dumps(
                        {
                            "doc_id": d.doc_id,
                            "title": d.title,
                            "body": d.body,
                            "author_id": d.author_id,
                            "timestamp": d.timestamp,
                        }
                    )
                    + "\n"
                )
        self.store.save_snapshot(state_dir / "candidates.jsonl")
        self.store.save_ledger(state_dir / "ledger.json")
        with open(state_dir / "definitions.jsonl", "w", encoding="utf-8") as fh:
            for doc_id in sorted(self.definitions):
                for rec in self.definitions[doc_id]:
                    fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        with open(state_dir / "doc_meta.json", "w", encoding="utf-8") as fh:
            json.dump(self.doc_meta, fh, sort_keys=True)

    @classmethod
    def load(cls, state_dir: str | Path) -> "PipelineState":
        state_dir = Path(state_dir)
        state = cls()
        docs, errors = corpus.ingest_jsonl(state_dir / "documents.jsonl")
        if errors:
            raise ValueError(f"corrupt state: {errors[0].reason}")
        state.documents = {d.doc_id: d for d in docs}
        state.definitions = {doc_id: [] for doc_id in state.documents}
        state.store = topicrank.CandidateStore.load(
            state_dir / "candidates.jsonl", state_dir / "ledger.json"
        )
        with open(state_dir / "definitions.jsonl", "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = defmine.DefinitionRecord.from_dict(json.loads(line))
                    state.definitions.setdefault(rec.doc_id, []).append(rec)
        with open(state_dir / "doc_meta.json", "r", encoding="utf-8") as fh:
            state.doc_meta = json.load(fh)
        return state


def apply_update(state: PipelineState, event: UpdateEvent, models: Models) -> PipelineState:
    if event.kind == "upsert":
        state.process_document(event.document, models)
    else:
        if not state.remove_document(event.doc_id):
            logger.warning("delete of unknown doc_id %r ignored", event.doc_id)
    return state


def rank_refresh(state: PipelineState, config: PipelineConfig, models: Models):
    """Shortlist + rerank on current counters, no document reprocessing."""
    if not state.store.candidates:
        return topicrank.RankedTopicList(entries=[], top_k=0, min_score=config.min_topic_score)
    keys = topicrank.shortlist(state.store, config.shortlist_n)
    if models.ranker is None:
        # no ranker model: fall back to NER-frequency order with score 1.0
        entries = [(k, 1.0) for k in keys[: config.final_top_k]]
        return topicrank.RankedTopicList(
            entries=entries, top_k=config.final_top_k, min_score=0.0
        )
    return topicrank.rerank_and_filter(
        keys, state.store, models.ranker, config.final_top_k, config.min_topic_score
    )


@dataclass
class KnowledgeBase:
    cards: list[cardbuild.TopicCard]
    manifest: dict
    space: cardbuild.EmbeddingSpace | None = None


def _doc_tf_stats(state: PipelineState) -> dict[str, dict]:
    stats = {}
    for doc_id in state.documents:
        contrib = state.store.ledger.get(doc_id, {})
        stats[doc_id] = {
            "length": state.doc_meta[doc_id]["length"],
            "tf": {key: c["mentions"] for key, c in contrib.items()},
        }
    return stats


def build_knowledge_base(
    state: PipelineState, config: PipelineConfig, models: Models
) -> KnowledgeBase:
    """Ranking through card assembly on the current state."""
    ranked = rank_refresh(state, config, models)
    manifest = {
        "run_id": hashlib.sha256(
            (config.config_hash() + _corpus_snapshot_id(state)).encode()
        ).hexdigest()[:16],
        "config_hash": config.config_hash(),
        "corpus_snapshot_id": _corpus_snapshot_id(state),
        "n_documents": len(state.documents),
        "n_topics": len(ranked.entries),
        "timestamp": time.time(),
    }
    if not ranked.entries or not state.documents:
        return KnowledgeBase(cards=[], manifest=manifest)

    params = cardbuild.Bm25Params(k1=config.bm25_k1, b=config.bm25_b)
    matrix = cardbuild.build_matrix(ranked.keys(), _doc_tf_stats(state), params)
    if matrix.n_topics == 0 or matrix.n_docs == 0:
        return KnowledgeBase(cards=[], manifest=manifest)

    # clamp the sketch size to what the matrix supports
    limit = min(matrix.n_topics, matrix.n_docs)
    rank = max(1, min(config.svd_rank, limit))
    oversampling = min(config.svd_oversampling, limit - rank)
    svd_config = cardbuild.SvdConfig(
        rank=rank,
        oversampling=oversampling,
        power_iterations=config.svd_power_iterations,
        batch_size=config.svd_batch_size,
        memory_budget=config.memory_budget,
        seed=config.seed,
    )
    topic_vecs, doc_vecs, sigma, peak = cardbuild.batched_randomized_svd(matrix, svd_config)
    manifest["svd_peak_bytes"] = peak

    authorship: dict[str, list[str]] = {}
    for doc_id in matrix.doc_ids:
        authorship.setdefault(state.doc_meta[doc_id]["author"], []).append(doc_id)
    user_ids, user_vecs = cardbuild.build_user_vectors(
        authorship, matrix.doc_ids, doc_vecs
    )
    space = cardbuild.EmbeddingSpace(
        dimension=rank,
        topic_keys=list(matrix.topic_keys),
        topic_vectors=topic_vecs,
        doc_ids=list(matrix.doc_ids),
        doc_vectors=doc_vecs,
        user_ids=user_ids,
        user_vectors=user_vecs,
        singular_values=sigma,
    )

    all_sentences = []
    for doc_id in sorted(state.documents):
        doc = state.documents[doc_id]
        all_sentences.extend(
            s.text for s in corpus.split_sentences(doc, models.abbreviations)
        )
    acronym_pairs = cardbuild.extract_acronym_aliases(all_sentences)

    conflation = cardbuild.conflate_all(
        matrix.topic_keys,
        state.store.candidates,
        space,
        acronym_pairs,
        cardbuild.ConflationConfig(tau=config.conflation_tau),
    )

    definitions_by_key: dict[str, list] = {}
    for recs in state.definitions.values():
        for rec in recs:
            definitions_by_key.setdefault(rec.topic_key, []).append(rec)

    acro_by_norm: dict[str, list[str]] = {}
    for long_form, acro in acronym_pairs:
        try:
            acro_by_norm.setdefault(topicrank.normalize_key(long_form), []).append(acro)
        except ValueError:
            continue

    csr = matrix.matrix.tocsr()
    cards = []
    for canonical in sorted(conflation):
        cand = state.store.candidates[canonical]
        alias_keys = conflation[canonical]
        aliases = [state.store.candidates[k].display_name for k in alias_keys]
        norm_surfaces = {cand.norm_surface} | {
            state.store.candidates[k].norm_surface for k in alias_keys
        }
        defs = []
        for ns in norm_surfaces:
            defs.extend(definitions_by_key.get(ns, []))
        acronyms = []
        for ns in sorted(norm_surfaces):
            acronyms.extend(acro_by_norm.get(ns, []))

        i = space.topic_index[canonical]
        row = csr.getrow(i)
        bm25_by_doc = dict(zip((matrix.doc_ids[j] for j in row.indices), row.data))
        signals = {}
        for doc_id in matrix.doc_ids:
            contrib = state.store.ledger.get(doc_id, {}).get(canonical, {})
            signals[doc_id] = {
                "bm25": bm25_by_doc.get(doc_id, 0.0),
                "title": contrib.get("titles", 0) > 0,
                "timestamp": state.doc_meta[doc_id]["timestamp"],
            }
        cards.append(
            cardbuild.build_card(
                cand,
                defs,
                aliases,
                acronyms,
                space,
                config.card_k,
                signals,
            )
        )
    return KnowledgeBase(cards=cards, manifest=manifest, space=space)


def _corpus_snapshot_id(state: PipelineState) -> str:
    h = hashlib.sha256()
    for doc_id in sorted(state.documents):
        d = state.documents[doc_id]
        h.update(f"{doc_id}\x00{d.timestamp}\x00{len(d.body)}\x00".encode())
    return h.hexdigest()[:16]


def run_full(config: PipelineConfig) -> tuple[PipelineState, KnowledgeBase]:
    """Batch run: ingest, per-document extraction, ranking, embeddings, cards."""
    try:
        models = Models.load(config)
    except Exception as exc:
        raise StageError("load_models", exc) from exc
    state = PipelineState()
    try:
        docs, errors = corpus.ingest_jsonl(config.corpus_path)
        for err in errors:
            logger.warning("corpus line %d skipped: %s", err.line_number, err.reason)
    except OSError as exc:
        raise StageError("ingest", exc) from exc
    try:
        for doc in docs:
            if not doc.deleted:
                state.process_document(doc, models)
    except Exception as exc:
        raise StageError("extract", exc) from exc
    try:
        kb = build_knowledge_base(state, config, models)
    except Exception as exc:
        raise StageError("build", exc) from exc
    return state, kb


def read_events(path: str | Path):
    """JSONL event stream: {"kind": "upsert", "document": {...}} or
    {"kind": "delete", "doc_id": "..."}."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["kind"] == "upsert":
                d = obj["document"]
                yield UpdateEvent(
                    kind="upsert",
                    document=corpus.Document(
                        doc_id=str(d["doc_id"]),
                        title=str(d["title"]),
                        body=str(d["body"]),
                        author_id=str(d["author_id"]),
                        timestamp=float(d["timestamp"]),
                    ),
                )
            else:
                yield UpdateEvent(kind="delete", doc_id=obj["doc_id"])


def export_kb(kb: KnowledgeBase, out_dir: str | Path) -> list[Path]:
    """Write manifest, one JSON file per card, and the embedding files.
    The directory is staged and swapped so a failed export leaves no
    partial output and a re-export replaces the old tree."""
    out_dir = Path(out_dir)
    staging = out_dir.parent / (out_dir.name + ".staging")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    written = []
    try:
        cards_dir = staging / "cards"
        cards_dir.mkdir()
        card_index = {}
        for card in kb.cards:
            fname = urllib.parse.quote(card.key, safe="") + ".json"
            card_index[card.key] = f"cards/{fname}"
            path = cards_dir / fname
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(card.to_dict(), fh, sort_keys=True, indent=1)
            written.append(path)
        if kb.space is not None:
            cardbuild.write_embeddings(
                staging / "topics.emb", kb.space.topic_keys, kb.space.topic_vectors, "topic"
            )
            cardbuild.write_embeddings(
                staging / "docs.emb", kb.space.doc_ids, kb.space.doc_vectors, "doc"
            )
            cardbuild.write_embeddings(
                staging / "users.emb", kb.space.user_ids, kb.space.user_vectors, "user"
            )
        manifest = dict(kb.manifest)
        manifest["cards"] = card_index
        with open(staging / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if out_dir.exists():
        trash = out_dir.parent / (out_dir.name + ".old")
        if trash.exists():
            shutil.rmtree(trash)
        out_dir.rename(trash)
        staging.rename(out_dir)
        shutil.rmtree(trash)
    else:
        staging.rename(out_dir)
    return sorted(out_dir.rglob("*"))
