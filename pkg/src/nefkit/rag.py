"""Baseline responder machinery: recursive splitting, embedding index, Q&A prompt.

Retrieval is exact cosine over every entry; the corpus here is a single
spec document, so approximate structures would only add a dependency
without buying anything.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional, Sequence, Union

from nefkit.errors import PipelineError
from nefkit.llm import ChatRequest, EmbeddingVector, Provider, RESPONSE_STRICT_STRUCTURED
from nefkit.synth import SyntheticRecord, extract_json_object
from nefkit.vectors import cosine

DEFAULT_SEPARATORS = ("\n\n", "\n", " ", "")

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_OVERLAP = 100
DEFAULT_TOP_K = 4


@dataclass(frozen=True)
class Chunk:
    text: str
    source_offset: int
    index: int


@dataclass(frozen=True)
class VectorIndex:
    entries: tuple[tuple[Chunk, EmbeddingVector], ...]
    dimension: int


def _atomic_pieces(text: str, max_len: int, separators: Sequence[str]) -> list[str]:
    """Split into pieces <= max_len, preferring the coarsest separator.

    Separators stay attached to the preceding piece so concatenating the
    pieces reproduces the input exactly. The empty-string separator
    level hard-cuts at max_len.
    """
    if len(text) <= max_len:
        return [text]
    if not separators or separators[0] == "":
        return [text[i : i + max_len] for i in range(0, len(text), max_len)]
    sep = separators[0]
    raw = text.split(sep)
    parts = [p + sep for p in raw[:-1]] + [raw[-1]]
    parts = [p for p in parts if p]
    if len(parts) == 1:
        return _atomic_pieces(text, max_len, separators[1:])
    out: list[str] = []
    for part in parts:
        if len(part) <= max_len:
            out.append(part)
        else:
            out.extend(_atomic_pieces(part, max_len, separators[1:]))
    return out


def recursive_split(
    doc: str,
    chunk_size: int,
    overlap: int = 0,
    separators: Sequence[str] = DEFAULT_SEPARATORS,
) -> list[Chunk]:
    """Split a document into chunks of at most ``chunk_size`` characters.

    Splits happen preferentially at the coarsest separator that keeps
    pieces within budget, recursing on oversize pieces. When a split was
    forced and ``overlap`` is positive, each following chunk starts with
    the last ``overlap`` characters of its predecessor. Chunks are
    lossless: :func:`reassemble` reproduces the document exactly, so
    separator characters stay inside the chunk that precedes them.
    """
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    if overlap < 0 or overlap >= chunk_size:
        raise ValueError("overlap must satisfy 0 <= overlap < chunk_size")
    if doc == "":
        return []
    if len(doc) <= chunk_size:
        return [Chunk(text=doc, source_offset=0, index=0)]

    budget = chunk_size - overlap
    pieces = _atomic_pieces(doc, budget, tuple(separators))

    chunks: list[Chunk] = []
    new_parts: list[str] = []
    new_len = 0
    new_start = 0
    pos = 0

    def emit() -> None:
        nonlocal new_parts, new_len
        prefix = ""
        if chunks and overlap:
            prev = chunks[-1].text
            prefix = prev[max(0, len(prev) - overlap):]
        text = prefix + "".join(new_parts)
        chunks.append(Chunk(text=text, source_offset=new_start - len(prefix), index=len(chunks)))
        new_parts = []
        new_len = 0

    for piece in pieces:
        if not new_parts:
            new_start = pos
        prefix_len = min(overlap, len(chunks[-1].text)) if chunks else 0
        if new_parts and prefix_len + new_len + len(piece) > chunk_size:
            emit()
            new_start = pos
        new_parts.append(piece)
        new_len += len(piece)
        pos += len(piece)
    if new_parts:
        emit()
    return chunks


def reassemble(chunks: Sequence[Chunk], overlap: int) -> str:
    """Concatenate chunks with shared overlap characters removed."""
    if not chunks:
        return ""
    parts = [chunks[0].text]
    for prev, cur in zip(chunks, chunks[1:]):
        shared = min(overlap, len(prev.text))
        parts.append(cur.text[shared:])
    return "".join(parts)


def build_index(chunks: Sequence[Chunk], provider: Provider) -> VectorIndex:
    """Embed every chunk and freeze the (chunk, vector) table."""
    if not chunks:
        raise ValueError("cannot index an empty chunk list")
    ordered = sorted(chunks, key=lambda c: c.index)
    vectors = provider.embed([c.text for c in ordered])
    dimension = vectors[0].dimension
    return VectorIndex(entries=tuple(zip(ordered, vectors)), dimension=dimension)


def retrieve(
    index: VectorIndex, query: str, k: int, provider: Provider
) -> list[tuple[Chunk, float]]:
    """Exact top-k cosine retrieval; ties break toward the lower chunk index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query_vec = provider.embed([query])[0]
    scored = [
        (chunk, cosine(query_vec.values, vec.values)) for chunk, vec in index.entries
    ]
    scored.sort(key=lambda item: (-item[1], item[0].index))
    return scored[:k]


_QA_PROMPT_TEMPLATE = """Use the following pieces of API documentation to answer the question at the end.

{context}

Answer with a single JSON object containing exactly these six fields: "request", "api_call", "description", "method", "operation", "parameters".

Question: {query}"""


@dataclass(frozen=True)
class AnswerResult:
    text: str
    record: Optional[SyntheticRecord]
    malformed: bool


def answer_query(
    index: VectorIndex, query: str, k: int, provider: Provider
) -> AnswerResult:
    """Retrieve context, ask for a six-field object, parse best-effort.

    Model replies are frequently not valid JSON; a parse failure keeps
    the raw text and sets the malformed flag instead of raising.
    """
    hits = retrieve(index, query, k, provider)
    context = "\n\n".join(chunk.text for chunk, _ in hits)
    request = ChatRequest(
        user_prompt=_QA_PROMPT_TEMPLATE.format(context=context, query=query),
        system_prompt="You answer questions about NEF REST APIs with structured JSON.",
        temperature=0.0,
        response_format=RESPONSE_STRICT_STRUCTURED,
    )
    reply = provider.chat(request)
    obj = extract_json_object(reply.text)
    if obj is not None:
        try:
            return AnswerResult(text=reply.text, record=SyntheticRecord.from_mapping(obj), malformed=False)
        except ValueError:
            pass
    return AnswerResult(text=reply.text, record=None, malformed=True)


_INDEX_MAGIC = b"NEFVIDX\x00"
_INDEX_VERSION = 1


def save_index(index: VectorIndex, sink: Union[str, Path, IO[bytes]]) -> None:
    """Persist an index: header, then per-entry chunk text and vector values.

    Little-endian throughout; text is length-prefixed UTF-8.
    """
    stream, owned = _open_w(sink)
    try:
        provider_id = index.entries[0][1].provider_id if index.entries else ""
        pid = provider_id.encode("utf-8")
        stream.write(_INDEX_MAGIC)
        stream.write(struct.pack("<HII", _INDEX_VERSION, index.dimension, len(index.entries)))
        stream.write(struct.pack("<I", len(pid)))
        stream.write(pid)
        for chunk, vec in index.entries:
            text = chunk.text.encode("utf-8")
            stream.write(struct.pack("<IQI", chunk.index, chunk.source_offset, len(text)))
            stream.write(text)
            stream.write(struct.pack(f"<{index.dimension}d", *vec.values))
    finally:
        if owned:
            stream.close()


def load_index(source: Union[str, Path, IO[bytes]]) -> VectorIndex:
    stream, owned = _open_r(source)
    try:
        magic = stream.read(len(_INDEX_MAGIC))
        if magic != _INDEX_MAGIC:
            raise PipelineError("not a vector index file (bad magic)")
        version, dimension, count = struct.unpack("<HII", stream.read(10))
        if version != _INDEX_VERSION:
            raise PipelineError(f"unsupported index version {version}")
        (pid_len,) = struct.unpack("<I", stream.read(4))
        provider_id = stream.read(pid_len).decode("utf-8")
        entries = []
        for _ in range(count):
            idx, offset, text_len = struct.unpack("<IQI", stream.read(16))
            text = stream.read(text_len).decode("utf-8")
            values = struct.unpack(f"<{dimension}d", stream.read(8 * dimension))
            entries.append(
                (
                    Chunk(text=text, source_offset=offset, index=idx),
                    EmbeddingVector(values=tuple(values), provider_id=provider_id),
                )
            )
        return VectorIndex(entries=tuple(entries), dimension=dimension)
    finally:
        if owned:
            stream.close()


def _open_w(sink: Union[str, Path, IO[bytes]]) -> tuple[IO[bytes], bool]:
    if isinstance(sink, (str, Path)):
        return open(sink, "wb"), True
    return sink, False


def _open_r(source: Union[str, Path, IO[bytes]]) -> tuple[IO[bytes], bool]:
    if isinstance(source, (str, Path)):
        return open(source, "rb"), True
    return source, False
