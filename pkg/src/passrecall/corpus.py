"""Document corpus, token codec, and ingestion.

Records arrive as JSON lines with ``id``, ``title``, and ``text`` (an ordered
array of passage fragments).  Fragments are merged into one complete document
per record, and a shared token codec is built over all titles and bodies so
constraints, scorers, and indexes agree on the token alphabet.

Token ids 0, 1, 2 are reserved: 0 ends a generated sequence, 1 is the index
sentinel (sorts below every real token), 2 is the unknown token.  Real tokens
start at id 3.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .storage import KIND_CORPUS, Reader, Writer

logger = logging.getLogger(__name__)

END_ID = 0
SENTINEL_ID = 1
UNK_ID = 2
FIRST_ID = 3

UNK_SURFACE = "<unk>"

# Words are runs of word characters; punctuation runs form their own tokens.
# Splitting punctuation into tokens (and normalizing text the same way) is
# what makes decode an exact inverse of encode.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]+", re.UNICODE)


def split_text(text: str) -> list[str]:
    """Segment into word runs and punctuation runs, after NFC normalization."""
    return _TOKEN_RE.findall(unicodedata.normalize("NFC", text))


class IngestError(ValueError):
    """Raised when the record stream violates corpus invariants."""


class TokenCodec:
    """Bidirectional mapping between surface strings and token ids.

    Concrete codecs differ in how they segment text; all of them share the
    reserved-id convention and the id<->surface tables.  ``encode`` never
    emits ids 0 or 1; unknown surface forms map to id 2 once the codec is
    frozen.
    """

    kind = "abstract"
    policy = "abstract"

    def __init__(self) -> None:
        self._surfaces: list[str] = []
        self._ids: dict[str, int] = {}
        self._frozen = False

    # -- vocabulary ---------------------------------------------------------

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def vocab_size(self) -> int:
        """Total id space, reserved ids included."""
        return FIRST_ID + len(self._surfaces)

    def surface(self, token_id: int) -> str:
        if token_id == UNK_ID:
            return UNK_SURFACE
        if token_id in (END_ID, SENTINEL_ID):
            raise ValueError(f"reserved id {token_id} has no surface form")
        return self._surfaces[token_id - FIRST_ID]

    def surfaces(self) -> list[str]:
        """All non-reserved surfaces in id order (id 3 first)."""
        return list(self._surfaces)

    def token_id(self, surface: str) -> int | None:
        return self._ids.get(surface)

    def vocab_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.policy.encode("utf-8"))
        for surface in self._surfaces:
            digest.update(b"\x1f")
            digest.update(surface.encode("utf-8"))
        return digest.hexdigest()

    def _install_vocab(self, surfaces: Sequence[str]) -> None:
        self._surfaces = list(surfaces)
        self._ids = {s: FIRST_ID + i for i, s in enumerate(self._surfaces)}
        self._frozen = True

    # -- text ---------------------------------------------------------------

    def normalize_text(self, text: str) -> str:
        raise NotImplementedError

    def encode(self, text: str) -> list[int]:
        raise NotImplementedError

    def decode(self, tokens: Sequence[int]) -> str:
        raise NotImplementedError


class WordCodec(TokenCodec):
    """Reference codec: word-level, whitespace and punctuation split.

    Normalization is Unicode NFC, whitespace runs collapsed to single
    spaces, punctuation runs separated into standalone tokens, case
    preserved.  Under that normalization ``decode(encode(s))`` equals
    ``normalize_text(s)`` for every string, unknowns aside.
    """

    kind = "word"
    policy = "word:nfc,ws-collapse,punct-split,case-preserve"

    def __init__(self) -> None:
        super().__init__()
        self._building: set[str] = set()

    @classmethod
    def from_vocab(cls, surfaces: Sequence[str]) -> "WordCodec":
        codec = cls()
        codec._install_vocab(surfaces)
        return codec

    @classmethod
    def build(cls, texts: Iterable[str]) -> "WordCodec":
        codec = cls()
        for text in texts:
            codec.add_text(text)
        codec.freeze()
        return codec

    def add_text(self, text: str) -> None:
        if self._frozen:
            raise ValueError("codec is frozen; cannot add vocabulary")
        self._building.update(split_text(text))

    def freeze(self) -> None:
        """Assign ids in sorted surface order and seal the vocabulary."""
        if self._frozen:
            return
        self._install_vocab(sorted(self._building))
        self._building = set()

    def normalize_text(self, text: str) -> str:
        return " ".join(split_text(text))

    def encode(self, text: str) -> list[int]:
        if not self._frozen:
            raise ValueError("codec must be frozen before encoding")
        return [self._ids.get(t, UNK_ID) for t in split_text(text)]

    def decode(self, tokens: Sequence[int]) -> str:
        return " ".join(self.surface(t) for t in tokens)


class PieceCodec(TokenCodec):
    """Subword-style codec over an explicit piece vocabulary.

    A piece whose stored surface begins with a space starts a new word;
    other pieces continue the previous one.  Encoding greedily takes the
    longest piece matching at each position, so a vocabulary containing
    " Testament", "ary", and " Capacity" segments "Testamentary Capacity"
    into three pieces.  Positions no piece covers become the unknown token
    and advance one character; round-tripping is exact only on fully
    covered text.
    """

    kind = "piece"
    policy = "piece:nfc,ws-collapse,greedy-longest,case-preserve"

    def __init__(self, pieces: Sequence[str]):
        super().__init__()
        if len(set(pieces)) != len(pieces):
            raise ValueError("duplicate pieces in vocabulary")
        self._install_vocab(pieces)
        self._max_piece_len = max((len(p) for p in pieces), default=0)

    @classmethod
    def from_vocab(cls, surfaces: Sequence[str]) -> "PieceCodec":
        return cls(surfaces)

    def normalize_text(self, text: str) -> str:
        return " ".join(unicodedata.normalize("NFC", text).split())

    def encode(self, text: str) -> list[int]:
        # Leading space so the first word can match a word-start piece.
        work = " " + self.normalize_text(text) if text.strip() else ""
        out: list[int] = []
        i = 0
        while i < len(work):
            match_id = None
            for length in range(min(self._max_piece_len, len(work) - i), 0, -1):
                candidate = self._ids.get(work[i : i + length])
                if candidate is not None:
                    match_id = candidate
                    i += length
                    break
            if match_id is None:
                out.append(UNK_ID)
                i += 1
            else:
                out.append(match_id)
        return out

    def decode(self, tokens: Sequence[int]) -> str:
        parts = []
        for t in tokens:
            if t == UNK_ID:
                parts.append(" " + UNK_SURFACE)
            else:
                parts.append(self.surface(t))
        return "".join(parts).lstrip(" ")


_CODEC_KINDS = {"word": WordCodec, "piece": PieceCodec}


@dataclass
class Document:
    """One complete document: merged fragments plus encoded title and body."""

    doc_id: str
    title: str
    title_tokens: tuple[int, ...]
    body_tokens: tuple[int, ...]
    body_text: str


@dataclass
class Corpus:
    """Immutable recall substrate: documents, title lookup, shared codec."""

    documents: list[Document]
    codec: TokenCodec
    title_index: dict[str, str] = field(default_factory=dict)
    skipped_empty: int = 0

    def __post_init__(self) -> None:
        self._by_id = {doc.doc_id: doc for doc in self.documents}

    def __len__(self) -> int:
        return len(self.documents)

    def document(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def titles(self) -> list[str]:
        return [doc.title for doc in self.documents]


def ingest_corpus(
    records: Iterable[Mapping], codec: TokenCodec | None = None
) -> Corpus:
    """Merge fragment records into complete documents and build the corpus.

    Each record needs a non-empty ``title``, an ``id``, and ``text``: an
    array of passage fragments whose array order is the document order.
    Fragments are joined with single spaces.  When ``codec`` is omitted a
    word codec is built from every title and body; a supplied codec must be
    frozen and must cover the corpus (unknown tokens in a body are an
    error, since bodies may not contain reserved ids).
    """
    staged = []
    seen_titles: dict[str, str] = {}
    seen_ids: dict[str, None] = {}
    skipped = 0

    build_codec = codec is None
    if build_codec:
        codec = WordCodec()
    elif not codec.frozen:
        raise IngestError("supplied codec must be frozen")

    for position, record in enumerate(records):
        doc_id, title, fragments = _validate_record(position, record)
        body_text = " ".join(fragments)
        norm_title = codec.normalize_text(title)
        if not norm_title:
            raise IngestError(f"record {doc_id!r}: title is empty")
        if not codec.normalize_text(body_text):
            logger.warning("record %r: empty body, skipped", doc_id)
            skipped += 1
            continue
        if norm_title in seen_titles:
            raise IngestError(
                f"duplicate title {norm_title!r} in records "
                f"{seen_titles[norm_title]!r} and {doc_id!r}"
            )
        if doc_id in seen_ids:
            raise IngestError(f"duplicate document id {doc_id!r}")
        seen_titles[norm_title] = doc_id
        seen_ids[doc_id] = None
        staged.append((doc_id, norm_title, body_text))
        if build_codec:
            codec.add_text(title)
            codec.add_text(body_text)

    if not staged:
        raise IngestError("corpus contains no usable documents")
    if build_codec:
        codec.freeze()

    documents = []
    title_index = {}
    for doc_id, title, body_text in staged:
        title_tokens = tuple(codec.encode(title))
        body_tokens = tuple(codec.encode(body_text))
        for name, tokens in (("title", title_tokens), ("body", body_tokens)):
            if any(t < FIRST_ID for t in tokens):
                raise IngestError(
                    f"record {doc_id!r}: {name} contains tokens outside the "
                    "codec vocabulary"
                )
        documents.append(
            Document(
                doc_id=doc_id,
                title=title,
                title_tokens=title_tokens,
                body_tokens=body_tokens,
                body_text=body_text,
            )
        )
        title_index[title] = doc_id

    return Corpus(
        documents=documents,
        codec=codec,
        title_index=title_index,
        skipped_empty=skipped,
    )


def _validate_record(position: int, record: Mapping) -> tuple[str, str, list[str]]:
    label = record.get("id", f"#{position}")
    if not isinstance(record.get("id"), str) or not record["id"]:
        raise IngestError(f"record {label!r}: missing or non-string 'id'")
    if not isinstance(record.get("title"), str) or not record["title"].strip():
        raise IngestError(f"record {label!r}: missing or empty 'title'")
    text = record.get("text")
    if not isinstance(text, list) or not all(isinstance(f, str) for f in text):
        raise IngestError(f"record {label!r}: 'text' must be an array of strings")
    return record["id"], record["title"], text


def iter_jsonl_records(path: str) -> Iterator[Mapping]:
    """Yield parsed JSON objects from a line-delimited file.

    Blank lines are ignored; a malformed line raises IngestError naming the
    line number.
    """
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise IngestError(f"{path}:{lineno}: record is not a JSON object")
            yield obj


def load_jsonl_corpus(path: str, codec: TokenCodec | None = None) -> Corpus:
    return ingest_corpus(iter_jsonl_records(path), codec=codec)


# -- persistence ------------------------------------------------------------


def save_corpus(corpus: Corpus, path: str) -> None:
    with open(path, "wb") as handle:
        writer = Writer(handle)
        writer.header(KIND_CORPUS)
        writer.text(corpus.codec.kind)
        writer.text(corpus.codec.policy)
        surfaces = corpus.codec.surfaces()
        writer.u64(len(surfaces))
        for surface in surfaces:
            writer.text(surface)
        writer.u64(len(corpus.documents))
        for doc in corpus.documents:
            writer.text(doc.doc_id)
            writer.text(doc.title)
            writer.text(doc.body_text)
            writer.u32_seq(doc.title_tokens)
            writer.u32_seq(doc.body_tokens)


def load_corpus(path: str) -> Corpus:
    with open(path, "rb") as handle:
        reader = Reader(handle)
        reader.header(KIND_CORPUS)
        kind = reader.text()
        policy = reader.text()
        if kind not in _CODEC_KINDS:
            raise IngestError(f"unknown codec kind {kind!r}")
        surfaces = [reader.text() for _ in range(reader.u64())]
        codec = _CODEC_KINDS[kind].from_vocab(surfaces)
        if codec.policy != policy:
            raise IngestError(
                f"codec policy mismatch: file says {policy!r}, "
                f"codec implements {codec.policy!r}"
            )
        documents = []
        title_index = {}
        for _ in range(reader.u64()):
            doc_id = reader.text()
            title = reader.text()
            body_text = reader.text()
            title_tokens = tuple(reader.u32_seq())
            body_tokens = tuple(reader.u32_seq())
            documents.append(
                Document(doc_id, title, title_tokens, body_tokens, body_text)
            )
            title_index[title] = doc_id
    return Corpus(documents=documents, codec=codec, title_index=title_index)
