"""Definition mining: sentence classification, pattern extraction and
opinion filtering, composed per document by mine_definitions.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import Document, split_sentences
from .topicrank import normalize_key


class DefinitionCategory(Enum):
    SUFFICIENT = "Sufficient"
    INFORMATIONAL = "Informational"
    REFERENTIAL = "Referential"
    PERSONAL = "Personal"
    NON_DEFINITION = "NonDefinition"


CATEGORIES = tuple(DefinitionCategory)

DETERMINERS = {"a", "an", "the"}
PRONOUNS = {"it", "this", "that", "these", "those", "he", "she", "they", "we", "i", "you"}
REFERENTIAL_SUBJECTS = {"it", "this", "that", "these"}

OCCUPATION_CUES = {
    "accountant", "administrator", "analyst", "architect", "assistant",
    "ceo", "consultant", "coordinator", "cto", "designer", "developer",
    "director", "doctor", "editor", "engineer", "founder", "intern",
    "lawyer", "lead", "manager", "nurse", "officer", "president",
    "professor", "researcher", "scientist", "specialist", "student",
    "teacher", "writer",
}


@dataclass(frozen=True)
class DefinitionPattern:
    template: str
    priority: int

    @property
    def connective(self) -> str:
        m = re.match(r"\{topic\}\s*(.+?)\s*\{description\}", self.template)
        if not m or not m.group(1):
            raise ValueError(f"bad pattern template: {self.template!r}")
        return m.group(1)

    @property
    def pattern_id(self) -> str:
        return self.connective.replace(" ", "_")


DEFAULT_PATTERNS = tuple(
    DefinitionPattern(f"{{topic}} {conn} {{description}}", i)
    for i, conn in enumerate(
        ["is defined as", "is a", "is an", "refers to", "refer to", "means", "stands for"]
    )
)


def _find_connective(text: str, patterns) -> tuple[DefinitionPattern, int, int] | None:
    """First pattern (by priority) whose connective occurs; returns the
    pattern and the [start, end) of the connective match."""
    for pat in sorted(patterns, key=lambda p: p.priority):
        m = re.search(rf"\b{re.escape(pat.connective)}\b", text, flags=re.IGNORECASE)
        if m:
            return pat, m.start(), m.end()
    return None


def extract_topic(text: str, patterns=DEFAULT_PATTERNS) -> tuple[str, str] | None:
    """(topic surface, description) from the first matching pattern, or None."""
    hit = _find_connective(text, patterns)
    if hit is None:
        return None
    _, start, end = hit
    topic = text[:start].strip()
    words = topic.split()
    while words and words[0].lower() in DETERMINERS:
        words = words[1:]
    topic = " ".join(words).strip(" ,;:\"'()")
    if not topic or topic.lower() in PRONOUNS:
        return None
    description = text[end:].strip()
    if not description:
        return None
    return topic, description


class OpinionLexicon:
    def __init__(self, negative: set[str], positive: set[str]):
        self.negative = {w.lower() for w in negative}
        self.positive = {w.lower() for w in positive}
        overlap = self.negative & self.positive
        if overlap:
            raise ValueError(f"lexicon sets overlap: {sorted(overlap)[:5]}")

    @classmethod
    def load(cls, negative_path=None, positive_path=None) -> "OpinionLexicon":
        def read(path):
            words = set()
            for line in Path(path).read_text(encoding="utf-8").splitlines():
                w = line.strip()
                if w and not w.startswith(("#", ";")):
                    words.add(w.lower())
            return words

        if negative_path is None or positive_path is None:
            data = resources.files("kbmine") / "data"
            negative_path = negative_path or data / "negative_words.txt"
            positive_path = positive_path or data / "positive_words.txt"
        return cls(read(negative_path), read(positive_path))


_WORD_RE = re.compile(r"[a-z0-9']+")


def opinion_filter(text: str, lexicon: OpinionLexicon) -> tuple[bool, str | None]:
    """(keep, reason): drop when any token hits the negative set; the reason
    is the first matching word."""
    for word in _WORD_RE.findall(text.lower()):
        if word in lexicon.negative:
            return False, word
    return True, None


# ---------------------------------------------------------------------------
# Sentence classification
# ---------------------------------------------------------------------------


class RuleClassifier:
    """Pattern-and-heuristic classifier; cannot tell Informational from
    Sufficient (mirrors the binary evaluation of the rule baseline)."""

    kind = "rule-based"

    def __init__(self, patterns=DEFAULT_PATTERNS):
        self.patterns = patterns

    def classify(self, text: str) -> tuple[DefinitionCategory, float]:
        words = text.split()
        if not words:
            return DefinitionCategory.NON_DEFINITION, 0.5
        first = words[0].strip(" ,\"'()").lower()
        if first in REFERENTIAL_SUBJECTS:
            return DefinitionCategory.REFERENTIAL, 1.0

        hit = _find_connective(text, self.patterns)
        if hit is None:
            return DefinitionCategory.NON_DEFINITION, 0.5
        pat, start, end = hit
        subject = text[:start].split()
        if not subject or subject[-1].lower() in PRONOUNS:
            return DefinitionCategory.NON_DEFINITION, 0.5

        if (
            len(subject) == 1
            and subject[0][:1].isupper()
            and pat.connective in ("is a", "is an")
        ):
            head = text[end:].split()[:4]
            if any(w.strip(" ,.").lower() in OCCUPATION_CUES for w in head):
                return DefinitionCategory.PERSONAL, 1.0

        if extract_topic(text, self.patterns) is None:
            return DefinitionCategory.NON_DEFINITION, 0.5
        return DefinitionCategory.SUFFICIENT, 1.0


def _ngram_features(text: str) -> list[str]:
    words = _WORD_RE.findall(text.lower())
    feats = [f"u={w}" for w in words]
    feats += [f"b={a}_{b}" for a, b in zip(words, words[1:])]
    feats.append("bias")
    return feats


@dataclass
class ClassifierConfig:
    epochs: int = 20
    learning_rate: float = 0.2
    seed: int = 0
    hash_dim: int = 1 << 16


class LinearClassifier:
    """Multinomial logistic regression over hashed uni/bigram features."""

    kind = "linear"

    def __init__(self, weights: np.ndarray, hash_dim: int):
        self.weights = weights  # (hash_dim, 5)
        self.hash_dim = hash_dim

    def _logits(self, text: str) -> np.ndarray:
        idx = np.array(
            sorted({zlib.crc32(f.encode("utf-8")) % self.hash_dim for f in _ngram_features(text)})
        )
        return self.weights[idx].sum(axis=0)

    def classify(self, text: str) -> tuple[DefinitionCategory, float]:
        logits = self._logits(text)
        z = logits - logits.max()
        probs = np.exp(z) / np.exp(z).sum()
        k = int(np.argmax(probs))
        return CATEGORIES[k], float(probs[k])

    def save(self, path: str | Path) -> None:
        np.savez(path, weights=self.weights, hash_dim=self.hash_dim)

    @classmethod
    def load(cls, path: str | Path) -> "LinearClassifier":
        data = np.load(path, allow_pickle=False)
        return cls(weights=data["weights"], hash_dim=int(data["hash_dim"]))


def train_sentence_classifier(
    rows: list[tuple[str, DefinitionCategory]], config: ClassifierConfig | None = None
) -> LinearClassifier:
    if not rows:
        raise ValueError("no training rows")
    if len({cat for _, cat in rows}) < 2:
        raise ValueError("need at least two categories in training data")
    config = config or ClassifierConfig()
    cat_index = {c: i for i, c in enumerate(CATEGORIES)}
    rng = np.random.default_rng(config.seed)

    examples = []
    for text, cat in rows:
        idx = np.array(
            sorted({zlib.crc32(f.encode("utf-8")) % config.hash_dim for f in _ngram_features(text)})
        )
        examples.append((idx, cat_index[cat]))

    weights = np.zeros((config.hash_dim, len(CATEGORIES)))
    order = np.arange(len(examples))
    for _ in range(config.epochs):
        rng.shuffle(order)
        for ex in order:
            idx, gold = examples[ex]
            logits = weights[idx].sum(axis=0)
            z = logits - logits.max()
            probs = np.exp(z) / np.exp(z).sum()
            grad = probs.copy()
            grad[gold] -= 1.0
            weights[idx] -= config.learning_rate * grad
    return LinearClassifier(weights, config.hash_dim)


# ---------------------------------------------------------------------------
# Per-document pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DefinitionRecord:
    topic_key: str
    topic_surface: str
    sentence_text: str
    doc_id: str
    sentence_index: int
    category: DefinitionCategory
    pattern_id: str
    confidence: float

    def to_dict(self) -> dict:
        return {
            "topic_key": self.topic_key,
            "topic_surface": self.topic_surface,
            "sentence_text": self.sentence_text,
            "doc_id": self.doc_id,
            "sentence_index": self.sentence_index,
            "category": self.category.value,
            "pattern_id": self.pattern_id,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DefinitionRecord":
        d = dict(d)
        d["category"] = DefinitionCategory(d["category"])
        return cls(**d)


def mine_definitions(
    doc: Document,
    classifier,
    patterns=DEFAULT_PATTERNS,
    lexicon: OpinionLexicon | None = None,
    abbreviations=None,
) -> list[DefinitionRecord]:
    """split -> classify (keep Sufficient) -> extract topic -> opinion filter."""
    lexicon = lexicon or OpinionLexicon.load()
    kwargs = {} if abbreviations is None else {"abbreviations": abbreviations}
    records = []
    for sentence in split_sentences(doc, **kwargs):
        category, confidence = classifier.classify(sentence.text)
        if category is not DefinitionCategory.SUFFICIENT:
            continue
        extracted = extract_topic(sentence.text, patterns)
        if extracted is None:
            continue
        topic_surface, _ = extracted
        keep, _ = opinion_filter(sentence.text, lexicon)
        if not keep:
            continue
        try:
            key = normalize_key(topic_surface)
        except ValueError:
            continue
        hit = _find_connective(sentence.text, patterns)
        records.append(
            DefinitionRecord(
                topic_key=key,
                topic_surface=topic_surface,
                sentence_text=sentence.text,
                doc_id=doc.doc_id,
                sentence_index=sentence.index,
                category=category,
                pattern_id=hit[0].pattern_id,
                confidence=confidence,
            )
        )
    return records


def eval_rule_baseline(rows: list[tuple[str, int]]) -> tuple[float, float, float]:
    """(F1, precision, recall) of the rule classifier treating
    Sufficient-vs-others as the binary task."""
    labels = {lab for _, lab in rows}
    if labels != {0, 1}:
        raise ValueError("need both binary labels present")
    clf = RuleClassifier()
    tp = fp = fn = 0
    for text, label in rows:
        pred = clf.classify(text)[0] is DefinitionCategory.SUFFICIENT
        if pred and label == 1:
            tp += 1
        elif pred and label == 0:
            fp += 1
        elif not pred and label == 1:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1, precision, recall


def prf1(preds: list[int], labels: list[int]) -> tuple[float, float, float]:
    """Binary (F1, precision, recall) helper for classifier comparisons."""
    tp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 1)
    fp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 0)
    fn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 1)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1, precision, recall


def load_patterns(path: str | Path) -> tuple[DefinitionPattern, ...]:
    """Pattern file: JSON list of {template, priority}."""
    with open(path, "r", encoding="utf-8") as fh:
        items = json.load(fh)
    pats = tuple(DefinitionPattern(p["template"], int(p["priority"])) for p in items)
    for p in pats:
        p.connective  # validates the template
    return pats


def load_training_csv(path: str | Path) -> list[tuple[str, DefinitionCategory]]:
    """Classifier training data: CSV 'category,text' (text may contain commas)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            cat, _, text = line.partition(",")
            rows.append((text, DefinitionCategory(cat)))
    return rows
