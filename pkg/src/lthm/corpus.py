"""Hypertext corpora: parsing, vocabularies, and train/test link views.

A corpus file holds one JSON record per line::

    {"id": "doc-a", "tokens": ["w1", "w2"], "links": [{"pos": 1, "target": "doc-b"}]}

Each token anchors at most one link. Documents are indexed densely in file
order; links are stored against those indices.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from lthm.errors import CorpusError

#: Stand-in word for a link whose anchor word was filtered out of the vocabulary.
LINK_PLACEHOLDER = "<link>"


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words:
            raise CorpusError("vocabulary is empty")
        if len(set(self.words)) != len(self.words):
            raise CorpusError("vocabulary contains duplicate words")

    @cached_property
    def index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}

    @property
    def W(self) -> int:
        return len(self.words)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def id(self, word: str) -> int:
        return self.index[word]

    def with_placeholder(self) -> "Vocabulary":
        if LINK_PLACEHOLDER in self.index:
            return self
        return Vocabulary(self.words + (LINK_PLACEHOLDER,))

    def write(self, fp: IO[str]) -> None:
        for i, w in enumerate(self.words):
            fp.write(f"{w}\t{i}\n")

    @classmethod
    def read(cls, fp: IO[str]) -> "Vocabulary":
        pairs = []
        for lineno, line in enumerate(fp, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                word, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), word))
            except ValueError:
                raise CorpusError("expected 'word<TAB>id'", lineno) from None
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise CorpusError("vocabulary ids must be dense and start at 0")
        return cls(tuple(w for _, w in pairs))


def build_vocabulary(docs: Iterable[Sequence[str]], min_count: int = 1,
                     stopwords: Iterable[str] = ()) -> Vocabulary:
    """Keep words seen at least ``min_count`` times that are not stopwords.

    Ids go by descending frequency, ties broken lexicographically.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    stop = set(stopwords)
    counts = Counter(w for doc in docs for w in doc)
    kept = [(w, c) for w, c in counts.items() if c >= min_count and w not in stop]
    if not kept:
        raise CorpusError("vocabulary is empty after filtering")
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    return Vocabulary(tuple(w for w, _ in kept))


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[int, ...]
    # token position -> target doc_id
    link_at: Mapping[int, str] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    vocabulary: Vocabulary

    def __post_init__(self):
        if not self.documents:
            raise CorpusError("corpus has no documents")
        ids = self.doc_index
        W = self.vocabulary.W
        for doc in self.documents:
            if any(t < 0 or t >= W for t in doc.tokens):
                raise CorpusError(f"document {doc.doc_id!r} has a word id outside the vocabulary")
            for pos, target in doc.link_at.items():
                if not 0 <= pos < doc.N:
                    raise CorpusError(f"document {doc.doc_id!r}: link position out of range")
                if target not in ids:
                    raise CorpusError(f"document {doc.doc_id!r}: unknown link target {target!r}")

    @cached_property
    def doc_index(self) -> dict[str, int]:
        index = {}
        for i, doc in enumerate(self.documents):
            if doc.doc_id in index:
                raise CorpusError(f"duplicate doc id {doc.doc_id!r}")
            index[doc.doc_id] = i
        return index

    @property
    def D(self) -> int:
        return len(self.documents)

    @property
    def W(self) -> int:
        return self.vocabulary.W

    @property
    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.documents]

    @cached_property
    def doc_lengths(self) -> np.ndarray:
        return np.array([d.N for d in self.documents], dtype=np.int64)

    @cached_property
    def doc_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.doc_lengths)])

    @property
    def total_tokens(self) -> int:
        return int(self.doc_lengths.sum())

    @property
    def total_links(self) -> int:
        return sum(len(d.link_at) for d in self.documents)

    @cached_property
    def token_doc(self) -> np.ndarray:
        return np.repeat(np.arange(self.D, dtype=np.int64), self.doc_lengths)

    @cached_property
    def token_word(self) -> np.ndarray:
        return np.fromiter((t for d in self.documents for t in d.tokens),
                           dtype=np.int64, count=self.total_tokens)

    @cached_property
    def token_link(self) -> np.ndarray:
        """Target doc index per token, -1 where the token carries no link."""
        out = np.full(self.total_tokens, -1, dtype=np.int64)
        for i, doc in enumerate(self.documents):
            base = self.doc_offsets[i]
            for pos, target in doc.link_at.items():
                out[base + pos] = self.doc_index[target]
        return out

    def view(self, sources: Iterable[int] | None = None) -> "CorpusView":
        """A view exposing links from ``sources`` (all documents when None)."""
        if sources is None:
            sources = range(self.D)
        return CorpusView(self, frozenset(int(s) for s in sources))


@dataclass(frozen=True)
class CorpusView:
    """All text of ``corpus`` but only the links leaving ``visible_link_sources``."""

    corpus: Corpus
    visible_link_sources: frozenset[int]

    @cached_property
    def source_mask(self) -> np.ndarray:
        mask = np.zeros(self.corpus.D, dtype=bool)
        mask[list(self.visible_link_sources)] = True
        return mask

    @cached_property
    def token_link(self) -> np.ndarray:
        links = self.corpus.token_link.copy()
        links[~self.source_mask[self.corpus.token_doc]] = -1
        return links

    @property
    def n_links(self) -> int:
        return int((self.token_link >= 0).sum())

    def links(self) -> Iterator[tuple[int, int, int]]:
        """Yield ``(source, position, target)`` doc-index triples for visible links."""
        c = self.corpus
        for src in sorted(self.visible_link_sources):
            doc = c.documents[src]
            for pos in sorted(doc.link_at):
                yield src, pos, c.doc_index[doc.link_at[pos]]

    def link_targets(self, source: int) -> set[int]:
        doc = self.corpus.documents[source]
        if source not in self.visible_link_sources:
            return set()
        return {self.corpus.doc_index[t] for t in doc.link_at.values()}


def in_degree(view: CorpusView) -> np.ndarray:
    links = view.token_link
    return np.bincount(links[links >= 0], minlength=view.corpus.D)


def _parse_records(stream: Iterable[str]) -> list[tuple[int, str, list[str], dict[int, str]]]:
    records = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(rec, dict) or "id" not in rec or "tokens" not in rec:
            raise CorpusError("record needs 'id' and 'tokens'", lineno)
        doc_id = rec["id"]
        tokens = rec["tokens"]
        if not isinstance(doc_id, str):
            raise CorpusError("'id' must be a string", lineno)
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise CorpusError("'tokens' must be a list of strings", lineno)
        if doc_id in seen:
            raise CorpusError(f"duplicate doc id {doc_id!r} (first on line {seen[doc_id]})", lineno)
        seen[doc_id] = lineno
        links: dict[int, str] = {}
        for link in rec.get("links", []):
            pos = link.get("pos")
            target = link.get("target")
            if isinstance(pos, list):
                raise CorpusError("multi-token link anchors are not supported", lineno)
            if not isinstance(pos, int) or isinstance(pos, bool):
                raise CorpusError("link 'pos' must be an integer", lineno)
            if not isinstance(target, str):
                raise CorpusError("link 'target' must be a string", lineno)
            if not 0 <= pos < len(tokens):
                raise CorpusError(f"link position out of range: {pos} (document has {len(tokens)} tokens)", lineno)
            if pos in links:
                raise CorpusError(f"token {pos} carries more than one link", lineno)
            links[pos] = target
        records.append((lineno, doc_id, tokens, links))
    if not records:
        raise CorpusError("corpus has no documents")
    for lineno, doc_id, _, links in records:
        for target in links.values():
            if target not in seen:
                raise CorpusError(f"link target {target!r} is not a document in the corpus", lineno)
    return records


def parse_corpus(stream: Iterable[str], vocabulary: Vocabulary | None = None,
                 min_count: int = 1, stopwords: Iterable[str] = ()) -> Corpus:
    """Read line-delimited JSON records into a :class:`Corpus`.

    Without ``vocabulary`` one is built from the records. Tokens outside the
    vocabulary are dropped; a dropped token that anchors a link is replaced by
    :data:`LINK_PLACEHOLDER` so the link keeps an anchor word.
    """
    records = _parse_records(stream)
    if vocabulary is None:
        vocabulary = build_vocabulary((r[2] for r in records), min_count, stopwords)

    needs_placeholder = any(
        tokens[pos] not in vocabulary
        for _, _, tokens, links in records for pos in links
    )
    if needs_placeholder:
        vocabulary = vocabulary.with_placeholder()
    index = vocabulary.index

    documents = []
    for _, doc_id, tokens, links in records:
        ids: list[int] = []
        link_at: dict[int, str] = {}
        for pos, word in enumerate(tokens):
            if word in index:
                wid = index[word]
            elif pos in links:
                wid = index[LINK_PLACEHOLDER]
            else:
                continue
            if pos in links:
                link_at[len(ids)] = links[pos]
            ids.append(wid)
        documents.append(Document(doc_id, tuple(ids), link_at))
    return Corpus(tuple(documents), vocabulary)


def serialize_corpus(corpus: Corpus, fp: IO[str]) -> None:
    words = corpus.vocabulary.words
    for doc in corpus.documents:
        rec = {
            "id": doc.doc_id,
            "tokens": [words[t] for t in doc.tokens],
            "links": [{"pos": p, "target": doc.link_at[p]} for p in sorted(doc.link_at)],
        }
        fp.write(json.dumps(rec) + "\n")


def split_train_test(corpus: Corpus, test_fraction: float, seed: int) -> tuple[CorpusView, CorpusView]:
    """Hold out ``ceil(test_fraction * D)`` documents chosen by a seeded shuffle.

    The train view hides links leaving test documents; the test view exposes
    only those links. Both views keep every document's text.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    D = corpus.D
    # guard against 0.7 * 10 = 7.000000000000001
    n_test = math.ceil(test_fraction * D - 1e-9)
    if n_test < 1 or n_test >= D:
        raise CorpusError(f"test fraction {test_fraction} leaves an empty train or test set for D={D}")
    order = np.random.default_rng(seed).permutation(D)
    test = frozenset(int(i) for i in order[:n_test])
    train = frozenset(range(D)) - test
    return CorpusView(corpus, train), CorpusView(corpus, test)


def write_split(train: CorpusView, fp: IO[str]) -> None:
    for i, doc_id in enumerate(train.corpus.doc_ids):
        fp.write(f"{doc_id}\t{'train' if i in train.visible_link_sources else 'test'}\n")


def read_split(corpus: Corpus, fp: IO[str]) -> tuple[CorpusView, CorpusView]:
    train, test = set(), set()
    for lineno, line in enumerate(fp, 1):
        line = line.rstrip("\n")
        if not line:
            continue
        try:
            doc_id, part = line.rsplit("\t", 1)
        except ValueError:
            raise CorpusError("expected 'doc_id<TAB>train|test'", lineno) from None
        if doc_id not in corpus.doc_index:
            raise CorpusError(f"unknown doc id {doc_id!r} in split file", lineno)
        if part not in ("train", "test"):
            raise CorpusError(f"split label must be 'train' or 'test', got {part!r}", lineno)
        (train if part == "train" else test).add(corpus.doc_index[doc_id])
    return CorpusView(corpus, frozenset(train)), CorpusView(corpus, frozenset(test))
