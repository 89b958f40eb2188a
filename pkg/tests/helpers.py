"""Shared fixtures: brute-force decoding oracle, synthetic training data,
and the planted-topic corpus used by the end-to-end tests."""

from __future__ import annotations

import json
from functools import lru_cache

import numpy as np

from kbmine import defmine, nertag, topicrank
from kbmine.defmine import DefinitionCategory

# ---------------------------------------------------------------------------
# Brute-force Viterbi oracle
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _valid_sequences(n: int, entity_types: tuple) -> np.ndarray:
    """All BIO-valid label sequences of length n, as an (S, n) int array."""
    labelset = nertag.LabelSet(entity_types)
    L = len(labelset)
    seqs = [[c] for c in range(L) if labelset.transition_ok(None, c)]
    for _ in range(n - 1):
        seqs = [s + [c] for s in seqs for c in range(L) if labelset.transition_ok(s[-1], c)]
    return np.array(seqs, dtype=np.int64)


def brute_force_decode(scores: np.ndarray, entity_types: tuple) -> list[int]:
    """Exhaustive max over valid sequences; ties resolved by the smallest
    ordinal at the latest differing position (reversed-lex minimum)."""
    n = scores.shape[0]
    seqs = _valid_sequences(n, entity_types)
    totals = scores[np.arange(n), seqs].sum(axis=1)
    best = totals.max()
    winners = seqs[totals == best]
    return list(min(map(tuple, winners), key=lambda s: s[::-1]))


# ---------------------------------------------------------------------------
# Tagger fixtures
# ---------------------------------------------------------------------------

PLANTED_TOPICS = [
    ("Contoso Falcon", "product"),
    ("Project Aurora", "project"),
    ("Fabrikam Cloud", "product"),
    ("Quantum Mesh", "project"),
    ("Atlas Engine", "product"),
    ("Nimbus Gateway", "product"),
    ("Orion Lab", "organization"),
    ("Vertex Studio", "organization"),
    ("Helios Platform", "product"),
    ("Zephyr Toolkit", "product"),
]

_CONTEXTS = [
    ("the team shipped", "last week"),
    ("we migrated", "to the new cluster"),
    ("engineers debugged", "during the outage"),
    ("the report covers", "in detail"),
    ("customers adopted", "this quarter"),
    ("we benchmarked", "against the baseline"),
    ("the demo featured", "on stage"),
    ("ops monitored", "overnight"),
]

_FILLERS = [
    "the quarterly review went smoothly for everyone involved",
    "please update the spreadsheet before the meeting tomorrow",
    "lunch will be served in the main cafeteria at noon",
    "remember to submit your timesheet by friday afternoon",
    "the printer on the third floor is working again",
]


def make_tagger_training_data(topics=PLANTED_TOPICS) -> list[nertag.LabeledSentence]:
    """Lexicon-separable labeled sentences covering every planted topic in
    every context template, plus entity-free filler."""
    data = []
    for name, etype in topics:
        parts = name.split()
        ent_labels = [f"B-{etype}"] + [f"I-{etype}"] * (len(parts) - 1)
        for before, after in _CONTEXTS:
            tokens = before.split() + parts + after.split()
            labels = ["O"] * len(before.split()) + ent_labels + ["O"] * len(after.split())
            data.append(nertag.LabeledSentence(tokens, labels))
    for filler in _FILLERS:
        tokens = filler.split()
        data.append(nertag.LabeledSentence(tokens, ["O"] * len(tokens)))
    return data


def train_fixture_tagger(seed: int = 0) -> nertag.TaggerModel:
    config = nertag.TrainConfig(gamma=1.6, epochs=8, learning_rate=0.5, seed=seed, hash_dim=1 << 16)
    return nertag.train_tagger(make_tagger_training_data(), config)


# ---------------------------------------------------------------------------
# Ranker fixture: quality depends on mentions-per-document, not frequency
# ---------------------------------------------------------------------------


def _features(ner: int, doc: int, title: int) -> topicrank.RankFeatures:
    import math

    return topicrank.RankFeatures(
        ner_freq=float(ner),
        doc_freq=float(doc),
        title_freq=float(title),
        ner_per_doc=ner / doc,
        title_per_doc=title / doc,
        title_per_ner=title / ner,
        log_ner=math.log1p(ner),
        log_doc=math.log1p(doc),
        log_title=math.log1p(title),
    )


def make_ranker_rows(n: int = 400, seed: int = 0):
    """Good topics: >= 2 mentions per document. Noise: ~1 per document but
    with comparable or larger raw frequency, so frequency alone cannot
    separate the classes."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n // 2):
        doc = int(rng.integers(5, 30))
        ratio = rng.uniform(2.0, 4.0)
        ner = max(doc, int(round(doc * ratio)))
        title = int(rng.integers(0, max(1, doc // 2)))
        rows.append((_features(ner, doc, title), 1))
    for _ in range(n // 2):
        doc = int(rng.integers(20, 120))
        ratio = rng.uniform(1.0, 1.1)
        ner = max(doc, int(round(doc * ratio)))
        title = int(rng.integers(0, 2))
        rows.append((_features(ner, doc, title), 0))
    order = rng.permutation(len(rows))
    return [rows[i] for i in order]


def train_fixture_ranker(seed: int = 0) -> topicrank.GbdtModel:
    rows = make_ranker_rows(seed=seed)
    return topicrank.train_gbdt(rows, topicrank.GbdtConfig(seed=seed))


# ---------------------------------------------------------------------------
# Definition classifier fixture
# ---------------------------------------------------------------------------

_DEF_TOPICS = [
    "Statistics", "Telemetry", "Kubernetes", "Cartography", "Entropy",
    "Photosynthesis", "Cryptography", "Thermodynamics", "Linguistics", "Topology",
]
_DEF_DESCRIPTIONS = [
    "branch of mathematics dealing with data collection and analysis",
    "automated process of recording measurements from remote equipment",
    "system for orchestrating containerized workloads across machines",
    "discipline concerned with producing accurate maps of terrain",
    "measure of disorder used across physics and information theory",
]
_PEOPLE = ["Alice", "Bob", "Carol", "Dave", "Erin"]
_JOBS = ["data scientist", "software engineer", "program manager", "research analyst"]
_OPINION_BITS = [
    "the biggest waste of time I have ever seen",
    "a terrible mess that nobody wants to maintain",
    "the worst tool our team has ever adopted",
    "an awful experience from start to finish",
]


def make_definition_rows(n: int = 500, seed: int = 0):
    """Templated (text, category) rows covering all five categories,
    including opinionated hard negatives that fool the rule baseline."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        kind = int(rng.integers(0, 5))
        topic = _DEF_TOPICS[int(rng.integers(len(_DEF_TOPICS)))]
        desc = _DEF_DESCRIPTIONS[int(rng.integers(len(_DEF_DESCRIPTIONS)))]
        if kind == 0:
            text = f"{topic} is defined as the {desc}."
            cat = DefinitionCategory.SUFFICIENT
        elif kind == 1:
            text = f"{topic} is a field of study."
            cat = DefinitionCategory.INFORMATIONAL
        elif kind == 2:
            text = f"This is a method that relies on the {desc}."
            cat = DefinitionCategory.REFERENTIAL
        elif kind == 3:
            person = _PEOPLE[int(rng.integers(len(_PEOPLE)))]
            job = _JOBS[int(rng.integers(len(_JOBS)))]
            text = f"{person} is a {job} at Acme Corporation."
            cat = DefinitionCategory.PERSONAL
        else:
            opinion = _OPINION_BITS[int(rng.integers(len(_OPINION_BITS)))]
            text = f"The {topic} rollout is {opinion}."
            cat = DefinitionCategory.NON_DEFINITION
        rows.append((text, cat))
    return rows


def binary_rows(rows):
    return [(t, 1 if c is DefinitionCategory.SUFFICIENT else 0) for t, c in rows]


# ---------------------------------------------------------------------------
# Planted corpus
# ---------------------------------------------------------------------------

PLANTED_DEFINITIONS = {
    "Contoso Falcon": "Contoso Falcon is defined as the telemetry ingestion service for cloud workloads.",
    "Project Aurora": "Project Aurora is defined as the initiative to unify search across internal portals.",
    "Atlas Engine": "Atlas Engine is defined as the rendering component behind the mapping dashboard.",
    "Orion Lab": "Orion Lab is defined as the research group that prototypes storage hardware.",
    "Helios Platform": "Helios Platform is defined as the hosting layer for partner integrations.",
}

AUTHORS = ["u_ada", "u_brin", "u_chen", "u_dara"]


def make_planted_corpus(path, n_docs: int = 200, seed: int = 0):
    """Write a JSONL corpus of n_docs documents over the planted topics.

    Each document covers one topic (mentioned in the title and twice in
    the body), is written by the author owning that topic, and carries a
    doc-unique marker sentence so deletion compliance is checkable.
    Definition sentences are planted in one document per defined topic.
    Returns {"definition_docs": {topic name: doc_id}}.
    """
    rng = np.random.default_rng(seed)
    definition_docs = {}
    pending_defs = dict(PLANTED_DEFINITIONS)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n_docs):
            topic, _ = PLANTED_TOPICS[i % len(PLANTED_TOPICS)]
            author = AUTHORS[(i % len(PLANTED_TOPICS)) % len(AUTHORS)]
            before1, after1 = _CONTEXTS[int(rng.integers(len(_CONTEXTS)))]
            before2, after2 = _CONTEXTS[int(rng.integers(len(_CONTEXTS)))]
            filler = _FILLERS[int(rng.integers(len(_FILLERS)))]
            sentences = [
                f"{before1.capitalize()} {topic} {after1}.",
                f"{filler} under ticket number {9000 + i}.",
                f"{before2.capitalize()} {topic} {after2}.",
            ]
            doc_id = f"doc{i:04d}"
            if topic in pending_defs and i >= len(PLANTED_TOPICS):
                sentences.append(pending_defs.pop(topic))
                definition_docs[topic] = doc_id
            record = {
                "doc_id": doc_id,
                "title": f"{topic} notes",
                "body": " ".join(sentences),
                "author_id": author,
                "timestamp": 1_600_000_000 + i * 3600,
            }
            fh.write(json.dumps(record) + "\n")
    assert not pending_defs, "corpus too small to place all definitions"
    return {"definition_docs": definition_docs}
