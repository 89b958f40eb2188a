"""Topic candidate aggregation, shortlisting and GBDT reranking.

Candidates are keyed by normalized surface plus entity type so that
e.g. an organization and a location sharing a name stay separate until
conflation. The store keeps a per-document contribution ledger so that
document deletion is exact.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nertag import Mention

KEY_SEP = "||"


def normalize_key(surface: str) -> str:
    """Case-fold, collapse whitespace, strip edge punctuation."""
    if not surface:
        raise ValueError("empty surface")
    s = " ".join(surface.casefold().split())
    start, end = 0, len(s)
    while start < end and not s[start].isalnum():
        start += 1
    while end > start and not s[end - 1].isalnum():
        end -= 1
    s = s[start:end]
    if not s:
        raise ValueError(f"surface normalizes to empty: {surface!r}")
    return s


def candidate_key(surface: str, entity_type: str) -> str:
    return f"{normalize_key(surface)}{KEY_SEP}{entity_type}"


@dataclass
class TopicCandidate:
    key: str
    norm_surface: str
    entity_type: str
    ner_frequency: int = 0
    document_frequency: int = 0
    title_frequency: int = 0
    doc_ids: set[str] = field(default_factory=set)
    type_histogram: Counter = field(default_factory=Counter)
    surface_counts: Counter = field(default_factory=Counter)

    @property
    def display_name(self) -> str:
        # most frequent original surface, ties by lexicographic order
        best_count = max(self.surface_counts.values())
        return min(s for s, c in self.surface_counts.items() if c == best_count)


@dataclass
class RankFeatures:
    ner_freq: float
    doc_freq: float
    title_freq: float
    ner_per_doc: float
    title_per_doc: float
    title_per_ner: float
    log_ner: float
    log_doc: float
    log_title: float

    NAMES = (
        "ner_freq",
        "doc_freq",
        "title_freq",
        "ner_per_doc",
        "title_per_doc",
        "title_per_ner",
        "log_ner",
        "log_doc",
        "log_title",
    )

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.NAMES], dtype=np.float64)


def compute_features(candidate: TopicCandidate) -> RankFeatures:
    ner = candidate.ner_frequency
    doc = candidate.document_frequency
    title = candidate.title_frequency
    if doc < 1 or ner < doc or title > ner:
        raise ValueError(f"candidate counters violate invariants: {candidate.key}")
    return RankFeatures(
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


class CandidateStore:
    """Single-writer store of topic candidates with exact per-doc ledger."""

    def __init__(self):
        self.candidates: dict[str, TopicCandidate] = {}
        self.seen_docs: set[str] = set()
        # doc_id -> key -> {"mentions": n, "titles": n, "surfaces": {surface: n}}
        self.ledger: dict[str, dict[str, dict]] = {}

    def accumulate(self, mentions: list[Mention], doc) -> None:
        """Idempotent per doc_id: a redelivered document is a no-op."""
        if doc.doc_id in self.seen_docs:
            return
        self.seen_docs.add(doc.doc_id)
        contrib: dict[str, dict] = {}
        for m in mentions:
            try:
                norm = normalize_key(m.surface)
            except ValueError:
                continue  # surface normalizes to empty: reject the mention
            key = f"{norm}{KEY_SEP}{m.entity_type}"
            c = contrib.setdefault(key, {"mentions": 0, "titles": 0, "surfaces": Counter()})
            c["mentions"] += 1
            if m.from_title:
                c["titles"] += 1
            c["surfaces"][m.surface] += 1

            cand = self.candidates.get(key)
            if cand is None:
                cand = TopicCandidate(key=key, norm_surface=norm, entity_type=m.entity_type)
                self.candidates[key] = cand
            cand.ner_frequency += 1
            if m.from_title:
                cand.title_frequency += 1
            if doc.doc_id not in cand.doc_ids:
                cand.doc_ids.add(doc.doc_id)
                cand.document_frequency += 1
            cand.type_histogram[m.entity_type] += 1
            cand.surface_counts[m.surface] += 1
        if contrib:
            self.ledger[doc.doc_id] = contrib

    def remove_doc(self, doc_id: str) -> bool:
        """Exact inverse of accumulate for one document."""
        if doc_id not in self.seen_docs:
            return False
        self.seen_docs.discard(doc_id)
        contrib = self.ledger.pop(doc_id, {})
        for key, c in contrib.items():
            cand = self.candidates[key]
            cand.ner_frequency -= c["mentions"]
            cand.title_frequency -= c["titles"]
            cand.doc_ids.discard(doc_id)
            cand.document_frequency -= 1
            cand.type_histogram[cand.entity_type] -= c["mentions"]
            for surface, n in c["surfaces"].items():
                cand.surface_counts[surface] -= n
                if cand.surface_counts[surface] <= 0:
                    del cand.surface_counts[surface]
            if cand.document_frequency <= 0:
                del self.candidates[key]
        return True

    def snapshot(self) -> dict:
        """Canonical view of all counters, suitable for equality checks."""
        out = {}
        for key in sorted(self.candidates):
            c = self.candidates[key]
            out[key] = {
                "key": c.key,
                "norm_surface": c.norm_surface,
                "entity_type": c.entity_type,
                "ner_frequency": c.ner_frequency,
                "document_frequency": c.document_frequency,
                "title_frequency": c.title_frequency,
                "doc_ids": sorted(c.doc_ids),
                "type_histogram": {k: v for k, v in sorted(c.type_histogram.items()) if v},
                "surface_counts": dict(sorted(c.surface_counts.items())),
            }
        return out

    def save_snapshot(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.snapshot().values():
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def save_ledger(self, path: str | Path) -> None:
        serializable = {
            doc_id: {
                key: {
                    "mentions": c["mentions"],
                    "titles": c["titles"],
                    "surfaces": dict(c["surfaces"]),
                }
                for key, c in contrib.items()
            }
            for doc_id, contrib in self.ledger.items()
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"ledger": serializable, "seen_docs": sorted(self.seen_docs)}, fh)

    @classmethod
    def load(cls, snapshot_path: str | Path, ledger_path: str | Path) -> "CandidateStore":
        store = cls()
        with open(snapshot_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                store.candidates[d["key"]] = TopicCandidate(
                    key=d["key"],
                    norm_surface=d["norm_surface"],
                    entity_type=d["entity_type"],
                    ner_frequency=d["ner_frequency"],
                    document_frequency=d["document_frequency"],
                    title_frequency=d["title_frequency"],
                    doc_ids=set(d["doc_ids"]),
                    type_histogram=Counter(d["type_histogram"]),
                    surface_counts=Counter(d["surface_counts"]),
                )
        with open(ledger_path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        store.seen_docs = set(data["seen_docs"])
        store.ledger = {
            doc_id: {
                key: {
                    "mentions": c["mentions"],
                    "titles": c["titles"],
                    "surfaces": Counter(c["surfaces"]),
                }
                for key, c in contrib.items()
            }
            for doc_id, contrib in data["ledger"].items()
        }
        return store


def shortlist(store: CandidateStore, n: int) -> list[str]:
    """Top-N keys by NER frequency; ties go lexicographically by key."""
    if n < 1:
        raise ValueError("N must be >= 1")
    ordered = sorted(store.candidates.values(), key=lambda c: (-c.ner_frequency, c.key))
    return [c.key for c in ordered[:n]]


# ---------------------------------------------------------------------------
# Gradient boosted trees (binary logistic)
# ---------------------------------------------------------------------------


@dataclass
class GbdtConfig:
    num_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf_count: int = 5
    seed: int = 0


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value=0.0):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = value

    @property
    def is_leaf(self):
        return self.left is None

    def predict_one(self, x):
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value

    def to_dict(self):
        if self.is_leaf:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        node = cls()
        if "value" in d:
            node.value = d["value"]
            return node
        node.feature = d["feature"]
        node.threshold = d["threshold"]
        node.left = cls.from_dict(d["left"])
        node.right = cls.from_dict(d["right"])
        return node


def _best_split(X, g, h, rows, min_leaf):
    """Max-gain axis-aligned split; gain in the usual second-order form."""
    G, H = g[rows].sum(), h[rows].sum()
    base = G * G / (H + 1e-12)
    best = (0.0, -1, 0.0)  # gain, feature, threshold
    for f in range(X.shape[1]):
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sg = g[rows][order]
        sh = h[rows][order]
        cg = np.cumsum(sg)
        ch = np.cumsum(sh)
        for i in range(min_leaf - 1, len(rows) - min_leaf):
            if sv[i] == sv[i + 1]:
                continue
            gl, hl = cg[i], ch[i]
            gr, hr = G - gl, H - hl
            gain = gl * gl / (hl + 1e-12) + gr * gr / (hr + 1e-12) - base
            if gain > best[0] + 1e-12:
                best = (gain, f, (sv[i] + sv[i + 1]) / 2.0)
    return best


def _build_tree(X, g, h, rows, depth, max_depth, min_leaf):
    node = _TreeNode()
    gsum, hsum = g[rows].sum(), h[rows].sum()
    node.value = gsum / (hsum + 1e-12)
    if depth >= max_depth or len(rows) < 2 * min_leaf:
        return node
    gain, f, thr = _best_split(X, g, h, rows, min_leaf)
    if f < 0:
        return node
    mask = X[rows, f] <= thr
    node.feature = f
    node.threshold = thr
    node.left = _build_tree(X, g, h, rows[mask], depth + 1, max_depth, min_leaf)
    node.right = _build_tree(X, g, h, rows[~mask], depth + 1, max_depth, min_leaf)
    return node


@dataclass
class GbdtModel:
    trees: list
    learning_rate: float
    base_score: float  # prior log-odds

    def raw_score(self, x: np.ndarray) -> float:
        return self.base_score + self.learning_rate * sum(
            t.predict_one(x) for t in self.trees
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "learning_rate": self.learning_rate,
                    "base_score": self.base_score,
                    "trees": [t.to_dict() for t in self.trees],
                },
                fh,
            )

    @classmethod
    def load(cls, path: str | Path) -> "GbdtModel":
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            trees=[_TreeNode.from_dict(t) for t in d["trees"]],
            learning_rate=d["learning_rate"],
            base_score=d["base_score"],
        )


def train_gbdt(
    rows: list[tuple[RankFeatures, int]], config: GbdtConfig | None = None
) -> GbdtModel:
    """Boosted logistic regression: each tree fits the negative gradient
    of log-loss with Newton leaf values."""
    config = config or GbdtConfig()
    if not rows:
        raise ValueError("no training rows")
    y = np.array([lab for _, lab in rows], dtype=np.float64)
    if len(set(y.tolist())) < 2:
        raise ValueError("training data must contain both classes")
    X = np.vstack([f.to_vector() for f, _ in rows])

    p0 = y.mean()
    base = math.log(p0 / (1.0 - p0))
    raw = np.full(len(y), base)
    trees = []
    all_rows = np.arange(len(y))
    for _ in range(config.num_trees):
        p = _sigmoid(raw)
        g = y - p  # negative gradient of log-loss
        h = p * (1.0 - p)
        tree = _build_tree(X, g, h, all_rows, 0, config.max_depth, config.min_leaf_count)
        trees.append(tree)
        raw = raw + config.learning_rate * np.array(
            [tree.predict_one(x) for x in X]
        )
    return GbdtModel(trees=trees, learning_rate=config.learning_rate, base_score=base)


def score_topic(model: GbdtModel, features: RankFeatures) -> float:
    return float(_sigmoid(model.raw_score(features.to_vector())))


@dataclass
class RankedTopicList:
    entries: list[tuple[str, float]]  # (candidate key, classifier score)
    top_k: int
    min_score: float

    def keys(self) -> list[str]:
        return [k for k, _ in self.entries]


def rerank_and_filter(
    keys: list[str],
    store: CandidateStore,
    model: GbdtModel,
    top_k: int | None = None,
    min_score: float = 0.0,
) -> RankedTopicList:
    scored = []
    for key in keys:
        cand = store.candidates[key]
        s = score_topic(model, compute_features(cand))
        if s >= min_score:
            scored.append((key, s))
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    if top_k is not None:
        scored = scored[:top_k]
    return RankedTopicList(entries=scored, top_k=top_k or len(scored), min_score=min_score)


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs both classes")
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (len(pos) * len(neg)))


def load_label_file(path: str | Path) -> dict[str, int]:
    """Ranker training labels: CSV 'key,label' with optional header."""
    labels: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.lower().startswith("key,"):
                continue
            key, _, lab = line.rpartition(",")
            labels[key] = int(lab)
    return labels
