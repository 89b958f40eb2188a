"""Token tagging over the BIO label set.

A hashed-feature softmax classifier scores every token against the label
set; Viterbi decoding then finds the highest-scoring *valid* BIO path.
The decoder and loss are scorer-agnostic: score matrices may also come
from an external file (see load_external_scores).
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_ENTITY_TYPES = (
    "person",
    "organization",
    "location",
    "product",
    "project",
    "field_of_study",
    "creative_work",
    "event",
)

NEG_INF = -1e30


class LabelSet:
    """O plus B-t/I-t per entity type, with a stable ordinal mapping."""

    def __init__(self, entity_types=DEFAULT_ENTITY_TYPES):
        self.entity_types = tuple(entity_types)
        labels = ["O"]
        for t in self.entity_types:
            labels.append(f"B-{t}")
            labels.append(f"I-{t}")
        self.labels = tuple(labels)
        self._index = {lab: i for i, lab in enumerate(labels)}

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        return self._index[label]

    def label(self, ordinal: int) -> str:
        return self.labels[ordinal]

    def entity_type_of(self, ordinal: int) -> str | None:
        lab = self.labels[ordinal]
        return None if lab == "O" else lab[2:]

    def is_begin(self, ordinal: int) -> bool:
        return self.labels[ordinal].startswith("B-")

    def is_inside(self, ordinal: int) -> bool:
        return self.labels[ordinal].startswith("I-")

    def transition_ok(self, prev: int | None, cur: int) -> bool:
        """Strict BIO: I-t only directly after B-t or I-t (start counts as O)."""
        if not self.is_inside(cur):
            return True
        if prev is None:
            return False
        if not (self.is_begin(prev) or self.is_inside(prev)):
            return False
        return self.entity_type_of(prev) == self.entity_type_of(cur)

    def is_valid_sequence(self, ordinals) -> bool:
        prev = None
        for cur in ordinals:
            if not self.transition_ok(prev, cur):
                return False
            prev = cur
        return True

    def transition_mask(self) -> np.ndarray:
        """mask[p, c] = True where label c may follow label p."""
        L = len(self)
        mask = np.zeros((L, L), dtype=bool)
        for p in range(L):
            for c in range(L):
                mask[p, c] = self.transition_ok(p, c)
        return mask

    def start_mask(self) -> np.ndarray:
        return np.array([self.transition_ok(None, c) for c in range(len(self))])


def focal_loss(probs: np.ndarray, gold: int, gamma: float) -> tuple[float, np.ndarray]:
    """Focal loss on the gold-class probability with gradient w.r.t. logits.

    loss = -(1-p)^gamma * log(p). gamma=0 reduces to cross-entropy.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    probs = np.asarray(probs, dtype=np.float64)
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError("probs must sum to 1")
    p = float(probs[gold])
    p = max(p, 1e-12)
    one_minus = max(1.0 - p, 0.0)
    loss = -(one_minus**gamma) * np.log(p)
    # d loss / d p, with the gamma=0 and p->1 corner cases kept finite
    if gamma == 0.0:
        dldp = -1.0 / p
    elif one_minus == 0.0:
        dldp = 0.0  # both terms vanish at p=1 for gamma > 0
    else:
        dldp = gamma * (one_minus ** (gamma - 1.0)) * np.log(p) - (one_minus**gamma) / p
    # dp/dz_k = p * (delta_k,gold - probs_k)
    grad = dldp * p * (-probs)
    grad[gold] += dldp * p
    return float(loss), grad


@dataclass
class LabeledSentence:
    tokens: list[str]
    labels: list[str]
    from_title: bool = False

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise ValueError("tokens and labels must align")


def word_shape(word: str) -> str:
    shape = []
    for ch in word:
        if ch.isupper():
            c = "X"
        elif ch.islower():
            c = "x"
        elif ch.isdigit():
            c = "9"
        else:
            c = ch
        if not shape or shape[-1] != c:
            shape.append(c)
    return "".join(shape)


def featurize(index: int, tokens: list[str], from_title: bool = False) -> list[str]:
    """Sparse feature strings for one token position."""
    word = tokens[index]
    lower = word.lower()
    feats = [
        "bias",
        f"w={lower}",
        f"shape={word_shape(word)}",
    ]
    for k in (1, 2, 3):
        if len(word) >= k:
            feats.append(f"pre{k}={lower[:k]}")
            feats.append(f"suf{k}={lower[-k:]}")
    prev = tokens[index - 1].lower() if index > 0 else "<s>"
    nxt = tokens[index + 1].lower() if index + 1 < len(tokens) else "</s>"
    feats.append(f"prev={prev}")
    feats.append(f"next={nxt}")
    if from_title:
        feats.append("title")
    return feats


def hash_features(feats: list[str], dim: int) -> np.ndarray:
    return np.array(sorted({zlib.crc32(f.encode("utf-8")) % dim for f in feats}))


@dataclass
class TaggerModel:
    weights: np.ndarray  # (hash_dim, n_labels)
    labelset: LabelSet
    gamma: float
    hash_dim: int

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            weights=self.weights,
            entity_types=np.array(self.labelset.entity_types),
            gamma=self.gamma,
            hash_dim=self.hash_dim,
        )

    @classmethod
    def load(cls, path: str | Path) -> "TaggerModel":
        data = np.load(path, allow_pickle=False)
        labelset = LabelSet(tuple(str(t) for t in data["entity_types"]))
        return cls(
            weights=data["weights"],
            labelset=labelset,
            gamma=float(data["gamma"]),
            hash_dim=int(data["hash_dim"]),
        )


@dataclass
class TrainConfig:
    gamma: float = 1.6
    epochs: int = 10
    learning_rate: float = 0.5
    seed: int = 0
    hash_dim: int = 1 << 18


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def train_tagger(
    data: list[LabeledSentence],
    config: TrainConfig | None = None,
    entity_types=DEFAULT_ENTITY_TYPES,
) -> TaggerModel:
    """SGD on per-token focal loss over hashed features. Deterministic per seed."""
    if not data:
        raise ValueError("training data is empty")
    config = config or TrainConfig()
    labelset = LabelSet(entity_types)
    for sent in data:
        ordinals = [labelset.index(lab) for lab in sent.labels]
        if not labelset.is_valid_sequence(ordinals):
            raise ValueError(f"gold sequence is not BIO-valid: {sent.labels}")

    weights = np.zeros((config.hash_dim, len(labelset)))
    rng = np.random.default_rng(config.seed)

    examples = []
    for sent in data:
        for i in range(len(sent.tokens)):
            idx = hash_features(featurize(i, sent.tokens, sent.from_title), config.hash_dim)
            examples.append((idx, labelset.index(sent.labels[i])))

    order = np.arange(len(examples))
    final_loss = 0.0
    for _ in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for ex in order:
            idx, gold = examples[ex]
            logits = weights[idx].sum(axis=0)
            probs = np.exp(_log_softmax(logits))
            loss, grad = focal_loss(probs, gold, config.gamma)
            total += loss
            weights[idx] -= config.learning_rate * grad
        final_loss = total / len(examples)

    model = TaggerModel(weights, labelset, config.gamma, config.hash_dim)
    model.final_training_loss = final_loss
    return model


def augment(
    data: list[LabeledSentence],
    mode: str,
    entity_bank: dict[str, list[str]] | None = None,
    seed: int = 0,
) -> list[LabeledSentence]:
    """Double the dataset: lowercase copies, or entity-replaced copies."""
    if mode == "lowercase":
        extra = [
            LabeledSentence([t.lower() for t in s.tokens], list(s.labels), s.from_title)
            for s in data
        ]
        return list(data) + extra
    if mode != "entity_replace":
        raise ValueError(f"unknown augmentation mode: {mode}")

    entity_bank = entity_bank or {}
    # fail fast on any type missing from the bank
    for sent in data:
        for lab in sent.labels:
            if lab.startswith("B-") and not entity_bank.get(lab[2:]):
                raise ValueError(f"entity bank has no entries for type '{lab[2:]}'")

    rng = np.random.default_rng(seed)
    extra = []
    for sent in data:
        tokens: list[str] = []
        labels: list[str] = []
        i = 0
        while i < len(sent.tokens):
            lab = sent.labels[i]
            if lab.startswith("B-"):
                etype = lab[2:]
                j = i + 1
                while j < len(sent.tokens) and sent.labels[j] == f"I-{etype}":
                    j += 1
                bank = entity_bank[etype]
                choice = bank[int(rng.integers(len(bank)))]
                repl = choice.split()
                tokens.extend(repl)
                labels.append(f"B-{etype}")
                labels.extend([f"I-{etype}"] * (len(repl) - 1))
                i = j
            else:
                tokens.append(sent.tokens[i])
                labels.append(lab)
                i += 1
        extra.append(LabeledSentence(tokens, labels, sent.from_title))
    return list(data) + extra


def score_tokens(model: TaggerModel, tokens: list[str], from_title: bool = False) -> np.ndarray:
    """Log-softmax score matrix, one row per token."""
    if not tokens:
        raise ValueError("no tokens to score")
    rows = []
    for i in range(len(tokens)):
        idx = hash_features(featurize(i, tokens, from_title), model.hash_dim)
        rows.append(_log_softmax(model.weights[idx].sum(axis=0)))
    return np.vstack(rows)


def viterbi_decode(scores: np.ndarray, labelset: LabelSet) -> list[int]:
    """Max-sum valid BIO path. Ties break toward the smallest label ordinal
    at the latest position where candidate paths differ."""
    scores = np.asarray(scores, dtype=np.float64)
    n, L = scores.shape
    if n < 1:
        raise ValueError("need at least one token")
    trans = np.where(labelset.transition_mask(), 0.0, NEG_INF)
    start = np.where(labelset.start_mask(), 0.0, NEG_INF)

    dp = start + scores[0]
    back = np.zeros((n, L), dtype=np.int64)
    for t in range(1, n):
        cand = dp[:, None] + trans  # (prev, cur)
        # argmax picks the smallest prev ordinal on ties
        back[t] = np.argmax(cand, axis=0)
        dp = cand[back[t], np.arange(L)] + scores[t]
    last = int(np.argmax(dp))
    path = [last]
    for t in range(n - 1, 0, -1):
        last = int(back[t, last])
        path.append(last)
    path.reverse()
    return path


def greedy_decode(scores: np.ndarray, labelset: LabelSet) -> list[int]:
    """Per-token argmax with invalid I-runs repaired to O (the baseline)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] < 1:
        raise ValueError("need at least one token")
    raw = np.argmax(scores, axis=1)
    out: list[int] = []
    prev: int | None = None
    o = labelset.index("O")
    for cur in raw:
        cur = int(cur)
        if labelset.is_inside(cur) and not labelset.transition_ok(prev, cur):
            cur = o
        out.append(cur)
        prev = cur
    return out


@dataclass(frozen=True)
class Mention:
    doc_id: str
    sentence_index: int
    token_start: int
    token_end: int  # exclusive
    char_start: int
    char_end: int
    surface: str
    entity_type: str
    score: float
    from_title: bool = False


def extract_mentions(
    tokens,
    labels: list[int],
    labelset: LabelSet,
    doc_id: str = "",
    sentence_index: int = 0,
    scores: np.ndarray | None = None,
    from_title: bool = False,
) -> list[Mention]:
    """One Mention per maximal B-t (I-t)* run. tokens are corpus.Token."""
    if len(labels) != len(tokens):
        raise ValueError("labels and tokens must align")
    if not labelset.is_valid_sequence(labels):
        raise ValueError("label sequence is not BIO-valid")
    mentions = []
    i = 0
    while i < len(labels):
        if labelset.is_begin(labels[i]):
            etype = labelset.entity_type_of(labels[i])
            j = i + 1
            while j < len(labels) and labelset.is_inside(labels[j]):
                j += 1
            span_tokens = tokens[i:j]
            score = 0.0
            if scores is not None:
                score = float(sum(scores[t, labels[t]] for t in range(i, j)))
            mentions.append(
                Mention(
                    doc_id=doc_id,
                    sentence_index=sentence_index,
                    token_start=i,
                    token_end=j,
                    char_start=span_tokens[0].start,
                    char_end=span_tokens[-1].end,
                    surface=" ".join(t.surface for t in span_tokens),
                    entity_type=etype,
                    score=score,
                    from_title=from_title,
                )
            )
            i = j
        else:
            i += 1
    return mentions


def load_external_scores(path: str | Path) -> dict[tuple[str, int], np.ndarray]:
    """Scorer bypass: JSONL of {doc_id, sentence_index, labels, scores}."""
    table: dict[tuple[str, int], np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            table[(obj["doc_id"], int(obj["sentence_index"]))] = np.asarray(
                obj["scores"], dtype=np.float64
            )
    return table


def load_entity_bank(path: str | Path) -> dict[str, list[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        bank = json.load(fh)
    return {str(k): [str(s) for s in v] for k, v in bank.items()}
