"""Topic card construction: BM25 topic-document matrix, batched
randomized SVD embeddings, relatedness, conflation and card assembly.

The factorization streams the matrix by document-column batches and keeps
its own byte accounting so a configured memory budget is enforced (and
verifiable) rather than assumed.
"""

from __future__ import annotations

import json
import logging
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


def bm25_weight(
    tf: int, dl: int, avgdl: float, df: int, n_docs: int, params: Bm25Params
) -> float:
    """idf * tf*(k1+1) / (tf + k1*(1-b+b*dl/avgdl)) with the nonnegative
    log idf variant idf = ln(1 + (N-df+0.5)/(df+0.5))."""
    if tf < 1 or df < 1 or n_docs < df or dl < 1 or avgdl <= 0:
        raise ValueError("invalid BM25 inputs")
    idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
    denom = tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl)
    return idf * tf * (params.k1 + 1.0) / denom


@dataclass
class SparseTopicDocMatrix:
    matrix: sp.csc_matrix  # topics x docs, grouped by document column
    topic_keys: list[str]
    doc_ids: list[str]

    @property
    def n_topics(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_docs(self) -> int:
        return self.matrix.shape[1]

    def topic_row(self, key: str) -> int:
        return self.topic_keys.index(key)


def build_matrix(
    topic_keys: list[str],
    doc_stats: dict[str, dict],
    params: Bm25Params | None = None,
) -> SparseTopicDocMatrix:
    """BM25 matrix over the given topics and documents.

    doc_stats maps doc_id -> {"length": tokens, "tf": {topic_key: count}}.
    Topics absent from every document are dropped with a warning.
    """
    params = params or Bm25Params()
    doc_ids = sorted(doc_stats)
    n_docs = len(doc_ids)
    avgdl = (
        sum(max(1, doc_stats[d]["length"]) for d in doc_ids) / n_docs if n_docs else 0.0
    )
    df = {k: 0 for k in topic_keys}
    for d in doc_ids:
        for k in doc_stats[d]["tf"]:
            if k in df:
                df[k] += 1
    kept = [k for k in topic_keys if df[k] >= 1]
    for k in topic_keys:
        if df[k] == 0:
            logger.warning("topic %r absent from corpus, excluded from matrix", k)

    topic_index = {k: i for i, k in enumerate(kept)}
    rows, cols, vals = [], [], []
    for j, d in enumerate(doc_ids):
        stats = doc_stats[d]
        dl = max(1, stats["length"])
        for k, tf in stats["tf"].items():
            i = topic_index.get(k)
            if i is None or tf < 1:
                continue
            rows.append(i)
            cols.append(j)
            vals.append(bm25_weight(tf, dl, avgdl, df[k], n_docs, params))
    matrix = sp.csc_matrix(
        (vals, (rows, cols)), shape=(len(kept), n_docs), dtype=np.float64
    )
    return SparseTopicDocMatrix(matrix=matrix, topic_keys=kept, doc_ids=doc_ids)


# ---------------------------------------------------------------------------
# Batched randomized SVD
# ---------------------------------------------------------------------------


@dataclass
class SvdConfig:
    rank: int = 32
    oversampling: int = 8
    power_iterations: int = 1
    batch_size: int = 1024
    memory_budget: int = 512 * 1024 * 1024
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1 or self.oversampling < 0 or self.power_iterations < 0:
            raise ValueError("invalid SVD config")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class MemoryBudgetError(RuntimeError):
    def __init__(self, budget: int, minimum: int):
        super().__init__(
            f"memory budget {budget} bytes too small; "
            f"minimum feasible budget is {minimum} bytes (batch size 1)"
        )
        self.budget = budget
        self.minimum = minimum


class _ByteTracker:
    """Ledger of working allocations inside the factorization."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def alloc(self, nbytes: int) -> int:
        self.current += int(nbytes)
        self.peak = max(self.peak, self.current)
        return int(nbytes)

    def free(self, nbytes: int) -> None:
        self.current -= int(nbytes)


def _required_bytes(n_topics, n_docs, l, r, batch, max_batch_nnz, q) -> int:
    total = 8 * n_topics * l * 2           # Y and Q
    total += 8 * batch * l * 2             # omega block + projected block
    total += 16 * max_batch_nnz            # sparse batch slice (values + indices)
    total += 8 * l * l * 2                 # C and its eigenvectors
    if q > 0:
        total += 8 * n_docs * l            # Z for power refinement
    total += 8 * (n_topics + n_docs) * r   # output factors
    return total


def _omega_block(seed: int, cols: range, l: int) -> np.ndarray:
    """Gaussian test block, seeded per document column so results do not
    depend on the batch size."""
    block = np.empty((len(cols), l))
    for row, j in enumerate(cols):
        block[row] = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(j,))
        ).standard_normal(l)
    return block


def batched_randomized_svd(
    matrix: SparseTopicDocMatrix, config: SvdConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Two-pass streaming randomized SVD of the topic-document matrix.

    Returns (topic_vectors, doc_vectors, singular_values, peak_bytes) with
    topic vector_i = U_i * sqrt(sigma) and doc vector_j = V_j * sqrt(sigma),
    truncated to the configured rank.
    """
    M = matrix.matrix
    n_topics, n_docs = M.shape
    r = config.rank
    l = r + config.oversampling
    if l > min(n_topics, n_docs):
        raise ValueError("rank + oversampling exceeds matrix dimensions")
    batch = min(config.batch_size, n_docs)
    q = config.power_iterations

    batches = [range(s, min(s + batch, n_docs)) for s in range(0, n_docs, batch)]
    nnz_per_batch = [
        M.indptr[b.stop] - M.indptr[b.start] for b in batches
    ] or [0]
    max_nnz = max(nnz_per_batch)

    need = _required_bytes(n_topics, n_docs, l, r, batch, max_nnz, q)
    if need > config.memory_budget:
        minimum = _required_bytes(n_topics, n_docs, l, r, 1, max_nnz, q)
        raise MemoryBudgetError(config.memory_budget, minimum)

    tracker = _ByteTracker()

    def batch_cost(cols):
        nnz = M.indptr[cols.stop] - M.indptr[cols.start]
        return 16 * nnz + 8 * len(cols) * l * 2

    # pass 1: Y = M @ Omega, accumulated over document batches
    Y = np.zeros((n_topics, l))
    tracker.alloc(Y.nbytes)
    for cols in batches:
        cost = tracker.alloc(batch_cost(cols))
        Y += M[:, cols.start : cols.stop] @ _omega_block(config.seed, cols, l)
        tracker.free(cost)

    Q = None
    for _ in range(q):
        Q, _ = np.linalg.qr(Y)
        tracker.alloc(Q.nbytes)
        Z = np.zeros((n_docs, l))
        tracker.alloc(Z.nbytes)
        for cols in batches:
            cost = tracker.alloc(batch_cost(cols))
            Z[cols.start : cols.stop] = M[:, cols.start : cols.stop].T @ Q
            tracker.free(cost)
        Y[:] = 0.0
        for cols in batches:
            cost = tracker.alloc(batch_cost(cols))
            Y += M[:, cols.start : cols.stop] @ Z[cols.start : cols.stop]
            tracker.free(cost)
        tracker.free(Z.nbytes)
        tracker.free(Q.nbytes)
        del Z

    Q, _ = np.linalg.qr(Y)
    tracker.alloc(Q.nbytes)
    tracker.free(Y.nbytes)
    del Y

    # pass 2: accumulate C = (Q^T M)(Q^T M)^T batch-wise; B itself is too
    # wide to materialize, so the small eigenproblem of C stands in for the
    # dense SVD of B.
    C = np.zeros((l, l))
    tracker.alloc(C.nbytes)
    for cols in batches:
        cost = tracker.alloc(batch_cost(cols))
        Bb = Q.T @ M[:, cols.start : cols.stop]
        C += Bb @ Bb.T
        tracker.free(cost)

    evals, W = np.linalg.eigh(C)
    tracker.alloc(W.nbytes)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    W = W[:, order]
    sigma = np.sqrt(np.clip(evals[:r], 0.0, None))

    U = Q @ W[:, :r]
    tracker.alloc(U.nbytes)

    # pass 3: doc-side factor V = B^T W / sigma, batch-wise
    V = np.zeros((n_docs, r))
    tracker.alloc(V.nbytes)
    safe = np.where(sigma > 1e-12, sigma, 1.0)
    for cols in batches:
        cost = tracker.alloc(batch_cost(cols))
        Bb = Q.T @ M[:, cols.start : cols.stop]
        V[cols.start : cols.stop] = (Bb.T @ W[:, :r]) / safe
        tracker.free(cost)
    V[:, sigma <= 1e-12] = 0.0

    scale = np.sqrt(sigma)
    topic_vectors = U * scale
    doc_vectors = V * scale

    peak = tracker.peak
    if peak > config.memory_budget:
        raise MemoryBudgetError(config.memory_budget, peak)
    return topic_vectors, doc_vectors, sigma, peak


# ---------------------------------------------------------------------------
# Embedding space
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingSpace:
    dimension: int
    topic_keys: list[str]
    topic_vectors: np.ndarray
    doc_ids: list[str]
    doc_vectors: np.ndarray
    user_ids: list[str]
    user_vectors: np.ndarray
    singular_values: np.ndarray
    topic_index: dict[str, int] = field(default_factory=dict)
    doc_index: dict[str, int] = field(default_factory=dict)
    user_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.topic_index = {k: i for i, k in enumerate(self.topic_keys)}
        self.doc_index = {d: i for i, d in enumerate(self.doc_ids)}
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}

    def topic_vector(self, key: str) -> np.ndarray:
        return self.topic_vectors[self.topic_index[key]]


def user_embedding(doc_indices: list[int], doc_vectors: np.ndarray) -> np.ndarray:
    """Mean of the vectors of the documents the user authored."""
    if not doc_indices:
        raise ValueError("user has no embedded documents")
    return doc_vectors[np.asarray(doc_indices)].mean(axis=0)


def build_user_vectors(
    authorship: dict[str, list[str]], doc_ids: list[str], doc_vectors: np.ndarray
) -> tuple[list[str], np.ndarray]:
    """authorship maps user_id -> authored doc_ids; users with no embedded
    documents are omitted from the space entirely."""
    doc_index = {d: i for i, d in enumerate(doc_ids)}
    users, rows = [], []
    for user in sorted(authorship):
        idx = [doc_index[d] for d in authorship[user] if d in doc_index]
        if idx:
            users.append(user)
            rows.append(user_embedding(idx, doc_vectors))
    vectors = np.vstack(rows) if rows else np.zeros((0, doc_vectors.shape[1]))
    return users, vectors


def relatedness(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    return float(a @ b)


def top_k_related(
    query_key: str, space: EmbeddingSpace, kind: str, k: int
) -> list[tuple[str, float]]:
    """K most related ids of the given kind, descending, ties by id.
    The query topic never appears in its own related-topic list."""
    qv = space.topic_vector(query_key)
    if kind == "topic":
        ids, vectors = space.topic_keys, space.topic_vectors
    elif kind == "doc":
        ids, vectors = space.doc_ids, space.doc_vectors
    elif kind == "user":
        ids, vectors = space.user_ids, space.user_vectors
    else:
        raise ValueError(f"unknown kind: {kind}")
    if k <= 0 or len(ids) == 0:
        return []
    scores = vectors @ qv
    pairs = [
        (ids[i], float(scores[i]))
        for i in range(len(ids))
        if not (kind == "topic" and ids[i] == query_key)
    ]
    pairs.sort(key=lambda kv: (-kv[1], kv[0]))
    return pairs[:k]


DEFAULT_RERANK_WEIGHTS = {"bm25": 1.0, "title": 0.5, "recency": 0.2}


def rerank_related_docs(
    candidates: list[tuple[str, float]],
    signals: dict[str, dict],
    weights: dict[str, float] | None = None,
) -> list[tuple[str, float]]:
    """Rerank embedding-recalled documents by BM25, title presence and
    recency. Stable: equal sort keys keep the embedding order."""
    if not candidates:
        raise ValueError("no candidate documents")
    weights = weights or DEFAULT_RERANK_WEIGHTS
    bm25s = [signals[d].get("bm25", 0.0) for d, _ in candidates]
    stamps = [signals[d].get("timestamp", 0.0) for d, _ in candidates]
    max_bm25 = max(bm25s) or 1.0
    lo, hi = min(stamps), max(stamps)
    span = (hi - lo) or 1.0
    scored = []
    for (doc_id, _), bm, ts in zip(candidates, bm25s, stamps):
        s = (
            weights["bm25"] * bm / max_bm25
            + weights["title"] * (1.0 if signals[doc_id].get("title") else 0.0)
            + weights["recency"] * (ts - lo) / span
        )
        scored.append((doc_id, s))
    scored.sort(key=lambda kv: -kv[1])  # stable, preserves input order on ties
    return scored


# ---------------------------------------------------------------------------
# Acronyms and conflation
# ---------------------------------------------------------------------------

_ACRO_RE = re.compile(r"\(([A-Z]{2,6})\)")


def extract_acronym_aliases(sentences) -> list[tuple[str, str]]:
    """'Long Form (ACRO)' pairs where each acronym letter matches the
    initial of a preceding capitalized word, in order."""
    seen = set()
    out = []
    for text in sentences:
        for m in _ACRO_RE.finditer(text):
            acro = m.group(1)
            prefix_words = re.findall(r"[A-Za-z][\w'-]*", text[: m.start()])
            if len(prefix_words) < len(acro):
                continue
            tail = prefix_words[-len(acro) :]
            if all(w[0].isupper() and w[0] == c for w, c in zip(tail, acro)):
                pair = (" ".join(tail), acro)
                if pair not in seen:
                    seen.add(pair)
                    out.append(pair)
    return out


def trigram_jaccard(a: str, b: str) -> float:
    def grams(s):
        s = f"  {s} "
        return {s[i : i + 3] for i in range(len(s) - 2)}

    ga, gb = grams(a), grams(b)
    union = ga | gb
    return len(ga & gb) / len(union) if union else 0.0


@dataclass
class ConflationConfig:
    tau: float | None = None          # absolute threshold on normalized relatedness
    tau_ratio: float = 0.6            # fraction of max observed relatedness
    trigram_threshold: float = 0.4
    doc_jaccard_threshold: float = 0.3


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def conflate(
    cand_a,
    cand_b,
    space: EmbeddingSpace,
    tau: float,
    acronym_pairs: set[tuple[str, str]],
    config: ConflationConfig | None = None,
) -> bool:
    """Merge decision for one topic pair: relatedness (on normalized
    vectors) above tau AND at least one over-merge guard check passes."""
    config = config or ConflationConfig()
    va = _unit(space.topic_vector(cand_a.key))
    vb = _unit(space.topic_vector(cand_b.key))
    if relatedness(va, vb) < tau:
        return False
    na, nb = cand_a.norm_surface, cand_b.norm_surface
    if (na, nb) in acronym_pairs or (nb, na) in acronym_pairs:
        return True
    if trigram_jaccard(na, nb) >= config.trigram_threshold:
        return True
    union = cand_a.doc_ids | cand_b.doc_ids
    if union and len(cand_a.doc_ids & cand_b.doc_ids) / len(union) >= config.doc_jaccard_threshold:
        return True
    return False


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def conflate_all(
    keys: list[str],
    candidates: dict[str, "object"],
    space: EmbeddingSpace,
    acronym_pairs: list[tuple[str, str]],
    config: ConflationConfig | None = None,
) -> dict[str, list[str]]:
    """Union-find over check-passing edges; returns canonical key ->
    sorted alias keys. Canonical = highest NER frequency, ties by key."""
    config = config or ConflationConfig()
    keys = [k for k in keys if k in space.topic_index]
    if len(keys) < 2:
        return {k: [] for k in keys}

    # normalize pair surfaces the same way candidate keys are
    from .topicrank import normalize_key

    norm_pairs = set()
    for long_form, acro in acronym_pairs:
        try:
            norm_pairs.add((normalize_key(long_form), normalize_key(acro)))
        except ValueError:
            continue

    vecs = np.vstack([_unit(space.topic_vector(k)) for k in keys])
    rel = vecs @ vecs.T
    np.fill_diagonal(rel, -np.inf)
    tau = config.tau
    if tau is None:
        max_rel = float(rel.max())
        if not np.isfinite(max_rel):
            return {k: [] for k in keys}
        tau = config.tau_ratio * max_rel

    uf = _UnionFind(keys)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if rel[i, j] < tau:
                continue
            if conflate(
                candidates[keys[i]], candidates[keys[j]], space, tau, norm_pairs, config
            ):
                uf.union(keys[i], keys[j])

    groups: dict[str, list[str]] = {}
    for k in keys:
        groups.setdefault(uf.find(k), []).append(k)
    result = {}
    for members in groups.values():
        canonical = min(members, key=lambda k: (-candidates[k].ner_frequency, k))
        result[canonical] = sorted(m for m in members if m != canonical)
    return result


# ---------------------------------------------------------------------------
# Cards
# ---------------------------------------------------------------------------


@dataclass
class TopicCard:
    key: str
    display_name: str
    entity_type: str
    alternate_names: list[str]
    definitions: list[str]
    related_topics: list[tuple[str, float]]
    related_docs: list[tuple[str, float]]
    related_people: list[tuple[str, float]]

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "display_name": self.display_name,
            "entity_type": self.entity_type,
            "alternate_names": self.alternate_names,
            "definitions": self.definitions,
            "related_topics": [[k, s] for k, s in self.related_topics],
            "related_docs": [[d, s] for d, s in self.related_docs],
            "related_people": [[u, s] for u, s in self.related_people],
        }


def build_card(
    candidate,
    definitions: list,
    aliases: list[str],
    acronyms: list[str],
    space: EmbeddingSpace,
    k: int,
    doc_signals: dict[str, dict],
    max_definitions: int = 3,
    recall_factor: int = 3,
) -> TopicCard:
    """Assemble one topic card from ranked data and the embedding space."""
    defs = sorted(definitions, key=lambda r: (-r.confidence, r.doc_id, r.sentence_index))
    def_texts = [r.sentence_text for r in defs[:max_definitions]]

    related_topics = top_k_related(candidate.key, space, "topic", k)
    related_people = top_k_related(candidate.key, space, "user", k)
    doc_candidates = top_k_related(candidate.key, space, "doc", max(k * recall_factor, k))
    related_docs = []
    if doc_candidates:
        related_docs = rerank_related_docs(
            doc_candidates, {d: doc_signals.get(d, {}) for d, _ in doc_candidates}
        )[:k]

    alt = sorted(set(aliases) | set(acronyms))
    return TopicCard(
        key=candidate.key,
        display_name=candidate.display_name,
        entity_type=candidate.entity_type,
        alternate_names=alt,
        definitions=def_texts,
        related_topics=related_topics,
        related_docs=related_docs,
        related_people=related_people,
    )


# ---------------------------------------------------------------------------
# Embedding export
# ---------------------------------------------------------------------------

_MAGIC = b"KBEM"


def write_embeddings(path: str | Path, ids: list[str], matrix: np.ndarray, kind: str) -> None:
    """Binary: magic, kind (16 bytes padded ascii), n and d as LE uint64,
    then row-major LE float64; JSON row index written alongside."""
    path = Path(path)
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    n, d = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(kind.encode("ascii")[:16].ljust(16, b"\0"))
        fh.write(struct.pack("<QQ", n, d))
        fh.write(matrix.tobytes())
    index = {ids[i]: i for i in range(n)}
    with open(path.with_suffix(path.suffix + ".index.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True)


def read_embeddings(path: str | Path) -> tuple[list[str], np.ndarray, str]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not an embedding file")
        kind = fh.read(16).rstrip(b"\0").decode("ascii")
        n, d = struct.unpack("<QQ", fh.read(16))
        matrix = np.frombuffer(fh.read(n * d * 8), dtype="<f8").reshape(n, d)
    with open(path.with_suffix(path.suffix + ".index.json"), "r", encoding="utf-8") as fh:
        index = json.load(fh)
    ids = [None] * n
    for key, row in index.items():
        ids[row] = key
    return ids, matrix.copy(), kind
