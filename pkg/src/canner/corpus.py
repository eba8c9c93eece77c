"""Data ingestion, tag-scheme conversion, synthetic corpora, and span scoring.

File format: UTF-8 CoNLL-style, one character per line as
``char[<TAB>tag[<TAB>seg]]``, sentences separated by blank lines. ``seg`` is
a BMES word-segmentation mark. Column counts must be consistent within a
sentence.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNK = "<unk>"
PAD = "<pad>"
SEG_MARKS = "BMES"
_SEG_RE = re.compile(r"(?:S|BM*E)*")


class DataFormatError(Exception):
    """Malformed input data (file format, tag scheme, alignment)."""


def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-":
        return tag[0], tag[2:]
    raise DataFormatError(f"malformed tag {tag!r}")


def is_valid_bioes(tags) -> bool:
    """True iff the sequence is a well-formed BIOES tagging."""
    try:
        parts = [_split_tag(t) for t in tags]
    except DataFormatError:
        return False
    open_type = None  # inside a B..E run of this type
    for prefix, typ in parts:
        if open_type is None:
            if prefix in ("I", "E"):
                return False
            if prefix == "B":
                open_type = typ
        else:
            if prefix not in ("I", "E") or typ != open_type:
                return False
            if prefix == "E":
                open_type = None
    return open_type is None


@dataclass
class Sentence:
    """A character sequence with optional BMES marks and gold BIOES tags."""

    chars: str
    seg: str | None = None
    gold: list[str] | None = None

    def __post_init__(self):
        if self.seg is not None:
            if len(self.seg) != len(self.chars):
                raise DataFormatError(
                    f"seg length {len(self.seg)} != sentence length {len(self.chars)}"
                )
            if _SEG_RE.fullmatch(self.seg) is None or any(c not in SEG_MARKS for c in self.seg):
                raise DataFormatError(f"invalid BMES sequence {self.seg!r}")
        if self.gold is not None and len(self.gold) != len(self.chars):
            raise DataFormatError(
                f"gold length {len(self.gold)} != sentence length {len(self.chars)}"
            )

    def __len__(self):
        return len(self.chars)

    def with_all_single_seg(self) -> "Sentence":
        return Sentence(self.chars, "S" * len(self.chars), self.gold)


class Vocab:
    """Character-to-id mapping with reserved UNK (0) and PAD (1)."""

    def __init__(self, chars):
        self.id_to_char = [UNK, PAD] + list(chars)
        if len(set(self.id_to_char)) != len(self.id_to_char):
            raise ValueError("duplicate entries in vocabulary")
        self.char_to_id = {c: i for i, c in enumerate(self.id_to_char)}

    def __len__(self):
        return len(self.id_to_char)

    def __contains__(self, ch):
        return ch in self.char_to_id

    def encode(self, chars) -> np.ndarray:
        unk = self.char_to_id[UNK]
        return np.array([self.char_to_id.get(c, unk) for c in chars], dtype=np.intp)


def build_vocab(sentences, min_freq: int = 1) -> Vocab:
    """Frequency-then-codepoint ordered vocabulary over a corpus."""
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for s in sentences:
        counts.update(s.chars)
    kept = [c for c, n in counts.items() if n >= min_freq]
    kept.sort(key=lambda c: (-counts[c], c))
    return Vocab(kept)


def parse_conll(path) -> list[Sentence]:
    """Parse a CoNLL-style file into sentences; errors carry line numbers."""
    path = Path(path)
    raw = path.read_bytes()
    sentences: list[Sentence] = []
    chars: list[str] = []
    tags: list[str] = []
    segs: list[str] = []
    ncols = None

    def flush(lineno):
        nonlocal ncols
        if not chars:
            return
        gold = list(tags) if ncols >= 2 else None
        seg = "".join(segs) if ncols == 3 else None
        try:
            sentences.append(Sentence("".join(chars), seg, gold))
        except DataFormatError as e:
            raise DataFormatError(f"{path}: sentence ending at line {lineno}: {e}") from e
        chars.clear()
        tags.clear()
        segs.clear()
        ncols = None

    for lineno, line_bytes in enumerate(raw.split(b"\n"), start=1):
        try:
            line = line_bytes.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataFormatError(f"{path}:{lineno}: invalid UTF-8 ({e})") from e
        line = line.rstrip("\r")
        if not line.strip():
            flush(lineno)
            continue
        cols = line.split("\t")
        if len(cols) > 3:
            raise DataFormatError(f"{path}:{lineno}: expected at most 3 columns, got {len(cols)}")
        if ncols is None:
            ncols = len(cols)
        elif len(cols) != ncols:
            raise DataFormatError(
                f"{path}:{lineno}: inconsistent column count within a sentence "
                f"({len(cols)} vs {ncols})"
            )
        if len(cols[0]) != 1:
            raise DataFormatError(f"{path}:{lineno}: token {cols[0]!r} is not a single character")
        chars.append(cols[0])
        if ncols >= 2:
            tags.append(cols[1])
        if ncols == 3:
            segs.append(cols[2])
    flush(len(raw.split(b"\n")))
    return sentences


def write_conll(sentences, path, tags=None) -> None:
    """Write sentences (optionally with replacement tags) in CoNLL format."""
    out = []
    for i, s in enumerate(sentences):
        stags = tags[i] if tags is not None else s.gold
        for j, ch in enumerate(s.chars):
            cols = [ch]
            if stags is not None:
                cols.append(stags[j])
                if s.seg is not None:
                    cols.append(s.seg[j])
            out.append("\t".join(cols))
        out.append("")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def bio_to_bioes(tags, strict: bool = True) -> list[str]:
    """Convert BIO tags to BIOES.

    Strict mode accepts only B/I/O prefixes and raises on an I that does not
    continue a same-type run. Lenient mode repairs dangling I to B and also
    accepts (and preserves) already-BIOES input, making it idempotent.
    """
    parts = [_split_tag(t) for t in tags]
    runs: list[tuple[int, int, str]] = []  # (start, end, type), end inclusive
    open_start = None
    open_type = None

    def close(end):
        nonlocal open_start, open_type
        if open_start is not None:
            runs.append((open_start, end, open_type))
            open_start = open_type = None

    for i, (prefix, typ) in enumerate(parts):
        if strict and prefix not in ("B", "I", "O"):
            raise DataFormatError(f"tag {tags[i]!r} at position {i} is not BIO")
        if prefix == "O":
            close(i - 1)
        elif prefix in ("B", "S"):
            close(i - 1)
            open_start, open_type = i, typ
            if prefix == "S":
                close(i)
        elif prefix in ("I", "E"):
            if open_type != typ:
                if strict:
                    raise DataFormatError(
                        f"tag {tags[i]!r} at position {i} does not continue a {open_type or 'O'} run"
                    )
                close(i - 1)
                open_start, open_type = i, typ
            if prefix == "E":
                close(i)
    close(len(parts) - 1)

    out = ["O"] * len(tags)
    for start, end, typ in runs:
        if start == end:
            out[start] = f"S-{typ}"
        else:
            out[start] = f"B-{typ}"
            for j in range(start + 1, end):
                out[j] = f"I-{typ}"
            out[end] = f"E-{typ}"
    return out


def bioes_from_spans(spans, length: int) -> list[str]:
    """Encode non-overlapping (start, end, type) spans as BIOES tags."""
    tags = ["O"] * length
    for start, end, typ in sorted(spans):
        if not (0 <= start <= end < length):
            raise ValueError(f"span {(start, end, typ)} outside sentence of length {length}")
        if any(t != "O" for t in tags[start:end + 1]):
            raise ValueError(f"span {(start, end, typ)} overlaps another span")
        if start == end:
            tags[start] = f"S-{typ}"
        else:
            tags[start] = f"B-{typ}"
            for j in range(start + 1, end):
                tags[j] = f"I-{typ}"
            tags[end] = f"E-{typ}"
    return tags


def bmes_from_words(words, text: str | None = None) -> str:
    """BMES marks for a word partition; checks coverage when ``text`` given."""
    if any(len(w) == 0 for w in words):
        raise DataFormatError("empty word in segmentation")
    if text is not None and "".join(words) != text:
        raise DataFormatError(
            f"segmentation {''.join(words)!r} does not cover sentence {text!r}"
        )
    marks = []
    for w in words:
        if len(w) == 1:
            marks.append("S")
        else:
            marks.append("B" + "M" * (len(w) - 2) + "E")
    return "".join(marks)


def extract_spans(tags, strict: bool = True) -> set[tuple[int, int, str]]:
    """Entity spans (start, end, type), end inclusive, from BIOES tags.

    Strict mode yields only perfectly formed spans (S, or B I* E with one
    type); malformed fragments yield nothing. Lenient mode repairs model
    output conlleval-style: any plausible start opens a run, any break
    closes it.
    """
    parts = [_split_tag(t) for t in tags]
    spans: set[tuple[int, int, str]] = set()
    n = len(parts)
    if strict:
        i = 0
        while i < n:
            prefix, typ = parts[i]
            if prefix == "S":
                spans.add((i, i, typ))
                i += 1
            elif prefix == "B":
                j = i + 1
                while j < n and parts[j] == ("I", typ):
                    j += 1
                if j < n and parts[j] == ("E", typ):
                    spans.add((i, j, typ))
                    i = j + 1
                else:
                    i += 1
            else:
                i += 1
        return spans

    run_start = None
    run_type = None
    for i, (prefix, typ) in enumerate(parts):
        if prefix == "O":
            if run_start is not None:
                spans.add((run_start, i - 1, run_type))
                run_start = run_type = None
            continue
        if prefix in ("B", "S") or run_start is None or typ != run_type:
            if run_start is not None:
                spans.add((run_start, i - 1, run_type))
            run_start, run_type = i, typ
        if prefix in ("E", "S"):
            spans.add((run_start, i, run_type))
            run_start = run_type = None
    if run_start is not None:
        spans.add((run_start, n - 1, run_type))
    return spans


@dataclass
class SpanCounts:
    gold: int = 0
    pred: int = 0
    correct: int = 0

    @property
    def precision(self) -> float:
        return 100.0 * self.correct / self.pred if self.pred else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    def add(self, other: "SpanCounts") -> None:
        self.gold += other.gold
        self.pred += other.pred
        self.correct += other.correct


@dataclass
class EvalReport:
    """Entity-level precision/recall/F1, micro-averaged, percent scale."""

    overall: SpanCounts
    per_type: dict[str, SpanCounts]
    groups: dict[str, SpanCounts] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"overall.precision={self.overall.precision:.2f}",
            f"overall.recall={self.overall.recall:.2f}",
            f"overall.f1={self.overall.f1:.2f}",
            f"overall.gold={self.overall.gold}",
            f"overall.pred={self.overall.pred}",
            f"overall.correct={self.overall.correct}",
        ]
        for name, c in sorted(self.per_type.items()):
            lines.append(
                f"type.{name}: precision={c.precision:.2f} recall={c.recall:.2f} "
                f"f1={c.f1:.2f} gold={c.gold} pred={c.pred} correct={c.correct}"
            )
        for name, c in sorted(self.groups.items()):
            lines.append(
                f"group.{name}: precision={c.precision:.2f} recall={c.recall:.2f} "
                f"f1={c.f1:.2f} gold={c.gold} pred={c.pred} correct={c.correct}"
            )
        return "\n".join(lines)

    def to_json(self) -> str:
        def enc(c: SpanCounts):
            return {
                "precision": c.precision, "recall": c.recall, "f1": c.f1,
                "gold": c.gold, "pred": c.pred, "correct": c.correct,
            }

        return json.dumps(
            {
                "overall": enc(self.overall),
                "per_type": {k: enc(v) for k, v in sorted(self.per_type.items())},
                "groups": {k: enc(v) for k, v in sorted(self.groups.items())},
            },
            sort_keys=True,
        )


def score(gold_sentences, predicted_tags, grouping: dict[str, str] | None = None,
          strict_gold: bool = True, strict_pred: bool = False) -> EvalReport:
    """Exact-span micro-averaged scoring of predictions against gold.

    ``grouping`` maps entity types to rollup group names; matching is still
    on the exact type, groups only aggregate counts.
    """
    if len(gold_sentences) != len(predicted_tags):
        raise DataFormatError(
            f"{len(gold_sentences)} gold sentences vs {len(predicted_tags)} predictions"
        )
    overall = SpanCounts()
    per_type: dict[str, SpanCounts] = {}
    for i, (sent, pred) in enumerate(zip(gold_sentences, predicted_tags)):
        if sent.gold is None:
            raise DataFormatError(f"sentence {i} has no gold tags")
        if len(pred) != len(sent):
            raise DataFormatError(
                f"sentence {i}: {len(pred)} predicted tags for {len(sent)} characters"
            )
        gold_spans = extract_spans(sent.gold, strict=strict_gold)
        pred_spans = extract_spans(pred, strict=strict_pred)
        for span in gold_spans:
            per_type.setdefault(span[2], SpanCounts()).gold += 1
        for span in pred_spans:
            per_type.setdefault(span[2], SpanCounts()).pred += 1
        for span in gold_spans & pred_spans:
            per_type[span[2]].correct += 1
    for c in per_type.values():
        overall.add(c)
    groups: dict[str, SpanCounts] = {}
    if grouping:
        for typ, c in per_type.items():
            g = grouping.get(typ)
            if g is not None:
                groups.setdefault(g, SpanCounts()).add(c)
    return EvalReport(overall, per_type, groups)


# ---------------------------------------------------------------------------
# synthetic corpus

_FILLER = "abcdefgh"
_NAMES = "uvwxyz"
_BRIDGE = "i"
_CUES = {"p": "PER", "l": "LOC", "o": "ORG"}


def gen_synthetic(seed: int, n: int, entity_rate: float = 0.35) -> list[Sentence]:
    """Templated sentences with context-determined entity types.

    Each sentence is 4-8 chunk slots; a slot becomes either a filler word
    (1-2 chars) or a cue word plus an entity word (1-3 chars). The cue is
    ``<type-char><bridge>``, so the character that decides the entity type
    sits exactly two positions before the entity start, and entity names are
    drawn from one pool shared by all types: the type is recoverable from a
    +-2 context window and from nothing less.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= entity_rate <= 1.0:
        raise ValueError("entity_rate must be in [0, 1]")
    rng = np.random.default_rng(seed)
    filler = list(_FILLER)
    names = list(_NAMES)
    cue_chars = sorted(_CUES)
    sentences = []
    for _ in range(n):
        words: list[str] = []
        types: list[str | None] = []
        for _ in range(int(rng.integers(4, 9))):
            if rng.random() < entity_rate:
                cue = cue_chars[int(rng.integers(0, len(cue_chars)))]
                words.append(cue + _BRIDGE)
                types.append(None)
                length = int(rng.integers(1, 4))
                words.append("".join(rng.choice(names, size=length)))
                types.append(_CUES[cue])
            else:
                length = int(rng.integers(1, 3))
                words.append("".join(rng.choice(filler, size=length)))
                types.append(None)
        chars = "".join(words)
        spans = []
        pos = 0
        for w, typ in zip(words, types):
            if typ is not None:
                spans.append((pos, pos + len(w) - 1, typ))
            pos += len(w)
        sentences.append(
            Sentence(chars, bmes_from_words(words), bioes_from_spans(spans, len(chars)))
        )
    return sentences
