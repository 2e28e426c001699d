"""Text ingestion: vocabulary, fixed-length chunking, eye-tracking TSV records."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNK = "<unk>"
BOS = "<bos>"
RESERVED = (UNK, BOS)
OOV_ID = 0
BOS_ID = 1

UNIVERSAL_TAGS = (
    "ADJ", "ADP", "ADV", "CONJ", "DET", "NOUN", "NUM", "PRON", "PRT", "VERB", "X", ".",
)

EYETRACK_COLUMNS = (
    "doc_id", "token_idx", "word", "fixations", "first_pass_ms",
    "pos_tag", "launch_dist", "landing_pos", "sent_pos",
)

MISSING = ("NA", "")


class CorpusError(ValueError):
    pass


def tokenize(text, lowercase=False):
    """Whitespace tokenization; punctuation stays attached to words."""
    if lowercase:
        text = text.lower()
    return text.split()


@dataclass
class Vocabulary:
    words: list
    counts: list
    oov_id: int = OOV_ID
    bos_id: int = BOS_ID
    ids: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.ids = {w: i for i, w in enumerate(self.words)}
        if len(self.ids) != len(self.words):
            raise CorpusError("duplicate word in vocabulary")

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.ids and self.ids[word] >= len(RESERVED)

    def encode(self, tokens: Iterable[str]):
        get = self.ids.get
        return np.array([get(t, self.oov_id) for t in tokens], dtype=np.int64)

    def decode(self, ids):
        return [self.words[i] for i in ids]

    def count(self, word):
        i = self.ids.get(word)
        return 0 if i is None or i < len(RESERVED) else self.counts[i]

    @property
    def total(self):
        return sum(self.counts)

    def log_frequency(self, word):
        """Natural-log relative frequency with add-one smoothing over the vocabulary."""
        return math.log((self.count(word) + 1) / (self.total + len(self)))

    def save(self, path, header=None):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for key, value in (header or {}).items():
                fh.write(f"# {key}={value}\n")
            fh.write("id\tword\tcount\n")
            for i, (w, c) in enumerate(zip(self.words, self.counts)):
                fh.write(f"{i}\t{w}\t{c}\n")

    @classmethod
    def load(cls, path):
        words, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#") or line.startswith("id\t"):
                    continue
                i, w, c = line.rstrip("\n").split("\t")
                if int(i) != len(words):
                    raise CorpusError(f"{path}: ids are not dense at {i}")
                words.append(w)
                counts.append(int(c))
        if tuple(words[: len(RESERVED)]) != RESERVED:
            raise CorpusError(f"{path}: reserved entries missing")
        return cls(words, counts)


def build_vocab(tokens: Iterable[str], size: int) -> Vocabulary:
    """Keep the ``size`` most frequent words; ties go to the earlier first occurrence.

    Ids 0 and 1 are reserved for the unknown-word and begin-of-sequence
    symbols; the unknown entry's count is the number of OOV occurrences.
    """
    if size < 1:
        raise CorpusError("vocabulary size must be >= 1")
    counter = Counter(tokens)
    if not counter:
        raise CorpusError("cannot build a vocabulary from an empty token stream")
    # Counter preserves first-insertion order and sorted() is stable
    ranked = sorted(counter.items(), key=lambda kv: -kv[1])
    kept = [kv for kv in ranked[:size] if kv[0] not in RESERVED]
    oov = sum(c for _, c in ranked[size:])
    words = list(RESERVED) + [w for w, _ in kept]
    counts = [oov, 0] + [c for _, c in kept]
    return Vocabulary(words, counts)


@dataclass
class TokenSequence:
    ids: np.ndarray
    positions: list  # (doc_id, token offset) per position

    def __len__(self):
        return len(self.ids)


def chunk_sequences(ids: Sequence[int], n: int, doc_id=0) -> list:
    """Split one document into consecutive windows of length ``n``; the remainder is dropped."""
    if n < 2:
        raise CorpusError("sequence length must be >= 2")
    ids = np.asarray(ids, dtype=np.int64)
    out = []
    for start in range(0, len(ids) - n + 1, n):
        out.append(
            TokenSequence(ids[start : start + n].copy(), [(doc_id, start + k) for k in range(n)])
        )
    return out


def read_documents(paths, lowercase=False):
    """One document per file; returns ``[(doc_id, tokens)]`` in the given order."""
    docs = []
    for p in paths:
        p = Path(p)
        docs.append((p.stem, tokenize(p.read_text(encoding="utf-8"), lowercase)))
    return docs


# --------------------------------------------------------------------------
# eye-tracking records


@dataclass
class EyeTrackRecord:
    doc_id: str
    token_idx: int
    word: str
    fixations: list  # per reader: 0, 1 or None (missing)
    first_pass_ms: float | None
    pos_tag: str | None
    launch_dist: float | None
    landing_pos: float | None
    sent_pos: float | None
    word_length: int = 0
    log_freq: float | None = None
    prev_log_freq: float | None = None
    prev_fixated: float | None = None
    seq_index: int | None = None
    position: int | None = None

    def __post_init__(self):
        self.word_length = len(self.word)

    @property
    def fixation_prob(self):
        seen = [f for f in self.fixations if f is not None]
        return sum(seen) / len(seen) if seen else None

    @property
    def excluded(self):
        return self.fixation_prob is None


def _optional_float(text, line, column, nonneg=False):
    if text in MISSING:
        return None
    try:
        value = float(text)
    except ValueError:
        raise CorpusError(f"line {line}, column {column}: not a number: {text!r}") from None
    if not math.isfinite(value) or (nonneg and value < 0):
        raise CorpusError(f"line {line}, column {column}: invalid value {text!r}")
    return value


def _fixations(text, line):
    out = []
    for part in text.split(","):
        part = part.strip()
        if part in MISSING:
            out.append(None)
        elif part in ("0", "1"):
            out.append(int(part))
        else:
            raise CorpusError(f"line {line}, column fixations: bad indicator {part!r}")
    return out


def load_eyetrack(path) -> list:
    """Parse the eye-tracking TSV (see README for the schema).

    Records come back in file order; missing per-reader values stay ``None``.
    """
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            raise CorpusError(f"{path}: empty file")
        missing = [c for c in EYETRACK_COLUMNS if c not in header]
        if missing:
            raise CorpusError(f"{path}: line 1: missing columns {missing}")
        col = {c: header.index(c) for c in EYETRACK_COLUMNS}
        n_readers = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CorpusError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                token_idx = int(row[col["token_idx"]])
            except ValueError:
                raise CorpusError(f"line {lineno}, column token_idx: not an integer") from None
            fix = _fixations(row[col["fixations"]], lineno)
            if n_readers is None:
                n_readers = len(fix)
            elif len(fix) != n_readers:
                raise CorpusError(f"line {lineno}, column fixations: expected {n_readers} readers")
            pos = row[col["pos_tag"]]
            records.append(
                EyeTrackRecord(
                    doc_id=row[col["doc_id"]],
                    token_idx=token_idx,
                    word=row[col["word"]],
                    fixations=fix,
                    first_pass_ms=_optional_float(
                        row[col["first_pass_ms"]], lineno, "first_pass_ms", nonneg=True
                    ),
                    pos_tag=None if pos in MISSING else pos,
                    launch_dist=_optional_float(row[col["launch_dist"]], lineno, "launch_dist"),
                    landing_pos=_optional_float(row[col["landing_pos"]], lineno, "landing_pos"),
                    sent_pos=_optional_float(row[col["sent_pos"]], lineno, "sent_pos"),
                )
            )
    return records


def write_eyetrack(path, records):
    def fmt(v):
        if v is None:
            return "NA"
        return repr(float(v)) if not float(v).is_integer() else str(int(v))

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(EYETRACK_COLUMNS) + "\n")
        for r in records:
            fix = ",".join("NA" if f is None else str(f) for f in r.fixations)
            fields = [
                r.doc_id, str(r.token_idx), r.word, fix, fmt(r.first_pass_ms),
                r.pos_tag or "NA", fmt(r.launch_dist), fmt(r.landing_pos), fmt(r.sent_pos),
            ]
            fh.write("\t".join(fields) + "\n")


def group_documents(records):
    """``{doc_id: [records sorted by token_idx]}`` preserving first-appearance order of docs."""
    docs = {}
    for r in records:
        docs.setdefault(r.doc_id, []).append(r)
    for rs in docs.values():
        rs.sort(key=lambda r: r.token_idx)
    return docs


def eval_sequences(records, vocab: Vocabulary, n: int):
    """Chunk each document of ``records`` into length-``n`` sequences.

    Sets ``seq_index`` and ``position`` on every record covered by a full
    sequence (others keep ``None``). Returns ``(sequences, members)`` where
    ``members[k]`` lists the records of sequence ``k`` in order.
    """
    sequences, members = [], []
    for doc_id, rs in group_documents(records).items():
        ids = vocab.encode(r.word for r in rs)
        for r in rs:
            r.seq_index = r.position = None
        for seq in chunk_sequences(ids, n, doc_id):
            k = len(sequences)
            start = seq.positions[0][1]
            chunk = rs[start : start + n]
            for pos, r in enumerate(chunk):
                r.seq_index, r.position = k, pos
            sequences.append(seq)
            members.append(chunk)
    return sequences, members


def annotate_predictors(records, vocab: Vocabulary):
    """Fill word-frequency and previous-word predictors from the vocabulary counts."""
    for rs in group_documents(records).values():
        prev = None
        for r in rs:
            r.log_freq = vocab.log_frequency(r.word)
            if prev is None:
                r.prev_log_freq = r.prev_fixated = None
            else:
                r.prev_log_freq = vocab.log_frequency(prev.word)
                p = prev.fixation_prob
                r.prev_fixated = None if p is None else float(p >= 0.5)
            prev = r
    return records


def filter_eval_points(records, vocab: Vocabulary, n: int, boundary: int = 3):
    """Keep records usable for evaluation.

    Drops out-of-vocabulary words, the first and last ``boundary`` positions
    of each length-``n`` sequence, tokens outside any full sequence, and
    records with no reader data.
    """
    if not boundary < n / 2:
        raise CorpusError("boundary must be smaller than half the sequence length")
    eval_sequences(records, vocab, n)
    kept = []
    for r in records:
        if r.position is None or r.excluded or r.word not in vocab:
            continue
        if r.position < boundary or r.position >= n - boundary:
            continue
        kept.append(r)
    return kept


def human_fixation_rate(records, docs=None):
    """Mean aggregate fixation probability over records (optionally restricted to ``docs``)."""
    vals = [
        r.fixation_prob for r in records
        if not r.excluded and (docs is None or r.doc_id in docs)
    ]
    if not vals:
        return None
    return float(np.mean(vals))
