"""Caption relationship extraction and concreteness filtering.

A deliberately small rule-based grammar stands in for a full scene-graph
parser: captions are scanned left to right for NP-connector-NP patterns, where
connectors are a fixed preposition list or verb-shaped tokens. Extracted
subject/object heads are then scored against a lemma concreteness table and
low-scoring relationships dropped.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import SchemaError

DEFAULT_THRESHOLD = 4.8

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    text: str


@dataclass(frozen=True)
class Relationship:
    """One subject -> predicate -> object extraction from a caption."""

    image_id: str
    subject: str
    predicate: str
    object: str
    concreteness: float | None = None


@dataclass(frozen=True)
class ParserLexicon:
    """Token classes the grammar keys on."""

    stopwords: frozenset[str]
    prepositions: frozenset[str]


def _read_word_file(name: str) -> frozenset[str]:
    text = resources.files("condsim.data").joinpath(name).read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


@lru_cache(maxsize=1)
def default_lexicon() -> ParserLexicon:
    return ParserLexicon(
        stopwords=_read_word_file("stopwords.txt"),
        prepositions=_read_word_file("prepositions.txt"),
    )


def load_lexicon(
    stopwords_path: str | Path | None = None,
    prepositions_path: str | Path | None = None,
) -> ParserLexicon:
    """Build a lexicon, overriding either default word list from a file."""
    base = default_lexicon()
    stop = base.stopwords
    preps = base.prepositions
    if stopwords_path is not None:
        words = Path(stopwords_path).read_text("utf-8").splitlines()
        stop = frozenset(w.strip() for w in words if w.strip())
    if prepositions_path is not None:
        words = Path(prepositions_path).read_text("utf-8").splitlines()
        preps = frozenset(w.strip() for w in words if w.strip())
    return ParserLexicon(stopwords=stop, prepositions=preps)


def _verb_shaped(token: str) -> bool:
    return token.endswith("s") or token.endswith("ing") or token.endswith("ed")


def extract_triples(text: str, lexicon: ParserLexicon | None = None) -> list[tuple[str, str, str]]:
    """Scan one caption for (subject, predicate, object) patterns.

    The scan keeps a completed left NP, a pending connector, and the NP being
    built. Verb-shaped tokens act as connectors only in connector position
    (right after a completed NP); elsewhere they are ordinary NP content, so
    "red" or "horses" can still head a phrase. A bare verb connector may
    absorb one following preposition ("sitting on").
    """
    lex = lexicon or default_lexicon()
    tokens = [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]

    triples: list[tuple[str, str, str]] = []
    left: list[str] | None = None
    conn: list[str] | None = None
    conn_open = False
    buf: list[str] = []

    def emit() -> None:
        nonlocal left, conn, buf
        assert left and conn and buf
        triples.append((left[-1], " ".join(conn), buf[-1]))
        left, buf, conn = buf, [], None

    for tok in tokens:
        if tok in lex.prepositions:
            if conn is not None and buf:
                emit()
                conn, conn_open = [tok], False
            elif conn is not None:
                if conn_open:
                    conn.append(tok)
                else:
                    conn = [tok]
                conn_open = False
            elif buf:
                left, buf = buf, []
                conn, conn_open = [tok], False
            elif left is not None:
                conn, conn_open = [tok], False
        elif tok in lex.stopwords:
            if conn is not None and buf:
                emit()
            elif conn is None and buf:
                left, buf = buf, []
        elif _verb_shaped(tok):
            if conn is None:
                if buf:
                    left, buf = buf, []
                    conn, conn_open = [tok], True
                elif left is not None:
                    conn, conn_open = [tok], True
                else:
                    buf.append(tok)
            else:
                if buf:
                    emit()
                    conn, conn_open = [tok], True
                else:
                    buf.append(tok)
        else:
            buf.append(tok)

    if conn is not None and buf and left:
        emit()
    return triples


def parse_caption(rec: CaptionRecord, lexicon: ParserLexicon | None = None) -> list[Relationship]:
    """Extract relationships from one caption; concreteness left unset."""
    return [
        Relationship(image_id=rec.image_id, subject=s, predicate=p, object=o)
        for s, p, o in extract_triples(rec.text, lexicon)
    ]


def parse_captions(
    records: Iterable[CaptionRecord], lexicon: ParserLexicon | None = None
) -> list[Relationship]:
    """Parse records in order; output order follows input order."""
    lex = lexicon or default_lexicon()
    out: list[Relationship] = []
    for rec in records:
        out.extend(parse_caption(rec, lex))
    return out


@dataclass(frozen=True)
class ConcretenessTable:
    """Lemma -> human concreteness rating in [1, 5]."""

    ratings: dict[str, float]

    def score(self, token: str) -> float:
        """Rating of the token's lemma; plural stripped when the base exists."""
        for form in (token, token.removesuffix("es"), token.removesuffix("s")):
            if form in self.ratings:
                return self.ratings[form]
        return 0.0


def load_concreteness(path: str | Path) -> ConcretenessTable:
    ratings: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise SchemaError("expected lemma<TAB>rating", str(path), lineno)
            lemma, rating_text = parts[0].strip(), parts[1].strip()
            try:
                rating = float(rating_text)
            except ValueError as exc:
                raise SchemaError(f"bad rating {rating_text!r}", str(path), lineno) from exc
            if not math.isfinite(rating) or not 1.0 <= rating <= 5.0:
                raise SchemaError(f"rating {rating} outside [1, 5]", str(path), lineno)
            ratings[lemma] = rating
    return ConcretenessTable(ratings=ratings)


def _head(entity: str) -> str:
    return entity.split()[-1]


def score_concreteness(rel: Relationship, table: ConcretenessTable) -> Relationship:
    """Mean of the subject and object head scores."""
    score = (table.score(_head(rel.subject)) + table.score(_head(rel.object))) / 2.0
    return replace(rel, concreteness=score)


def score_relationships(
    rels: Iterable[Relationship], table: ConcretenessTable
) -> list[Relationship]:
    return [score_concreteness(r, table) for r in rels]


def filter_relationships(
    rels: Sequence[Relationship], threshold: float = DEFAULT_THRESHOLD
) -> list[Relationship]:
    """Keep relationships whose concreteness is at least the threshold."""
    for rel in rels:
        if rel.concreteness is None:
            raise ValueError("filter_relationships requires scored relationships")
    return [r for r in rels if r.concreteness >= threshold]


def read_captions(path: str | Path) -> list[CaptionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", str(path), lineno) from exc
            if not isinstance(obj, dict) or not isinstance(obj.get("image_id"), str) \
                    or not isinstance(obj.get("text"), str) or not obj["text"]:
                raise SchemaError("expected {image_id, text}", str(path), lineno)
            out.append(CaptionRecord(image_id=obj["image_id"], text=obj["text"]))
    return out


def write_relationships(rels: Iterable[Relationship], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rel in rels:
            fh.write(json.dumps({
                "image_id": rel.image_id,
                "subject": rel.subject,
                "predicate": rel.predicate,
                "object": rel.object,
                "concreteness": rel.concreteness,
            }) + "\n")


def read_relationships(path: str | Path) -> list[Relationship]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", str(path), lineno) from exc
            try:
                conc = obj["concreteness"]
                rel = Relationship(
                    image_id=obj["image_id"],
                    subject=obj["subject"],
                    predicate=obj["predicate"],
                    object=obj["object"],
                    concreteness=None if conc is None else float(conc),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad relationship record: {exc}", str(path), lineno) from exc
            if not rel.subject or not rel.object:
                raise SchemaError("subject and object must be nonempty", str(path), lineno)
            out.append(rel)
    return out
