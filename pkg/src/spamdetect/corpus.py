"""Dataset ingestion, the combined corpus, and stratified train/valid/test splits.

Four public corpora are supported:

* Ling-Spam: directory of ``*.txt`` messages (spam files start with ``spmsg``),
  or a CSV export with text + label columns; auto-detected.
* SMS spam collection: a CSV with a category column (ham/spam) and a message column.
* Enron: a tree with ``ham``/``spam`` subdirectories; mail headers are dropped.
* SpamAssassin public corpus: ``easy_ham*``/``hard_ham*``/``spam*`` subsets;
  both ham flavours collapse to one ham class.

Labels are 0 = ham, 1 = spam everywhere.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .rng import substream

HAM = 0
SPAM = 1

# Fraction of unparseable rows/files tolerated before ingestion fails outright.
SKIP_LIMIT = 0.01


class IngestError(Exception):
    """A dataset could not be ingested."""


class SplitError(Exception):
    """A corpus cannot be split as requested."""


class Source(str, Enum):
    LINGSPAM = "LingSpam"
    SPAMTEXT = "SpamText"
    ENRON = "Enron"
    SPAMASSASSIN = "SpamAssassin"


@dataclass(frozen=True)
class Sample:
    id: str
    source: Source
    text: str
    label: int


@dataclass(frozen=True)
class Corpus:
    samples: tuple[Sample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for s in self.samples:
            if s.label not in (HAM, SPAM):
                raise ValueError(f"sample {s.id!r} has label {s.label!r}, want 0 or 1")
            if not s.text:
                raise ValueError(f"sample {s.id!r} has empty text")
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def n_ham(self) -> int:
        return sum(1 for s in self.samples if s.label == HAM)

    @property
    def n_spam(self) -> int:
        return sum(1 for s in self.samples if s.label == SPAM)

    def labels(self) -> list[int]:
        return [s.label for s in self.samples]


@dataclass(frozen=True)
class CorpusSplit:
    train: Corpus
    valid: Corpus
    test: Corpus
    ratios: tuple[float, float, float]
    seed: int


# ---------------------------------------------------------------------------
# ingestion helpers
# ---------------------------------------------------------------------------

_TEXT_COLUMNS = ("text", "message", "body", "email", "sms", "v2")
_LABEL_COLUMNS = ("label", "class", "category", "spam", "v1")


def _read_file(path: Path) -> str:
    return path.read_text(encoding="utf-8", errors="replace")


def _strip_headers(raw: str) -> str:
    """Drop everything through the first blank line; keep the rest verbatim."""
    head, sep, body = raw.partition("\n\n")
    return body.strip() if sep else raw.strip()


def _check_skip_rate(skipped: int, total: int, where) -> None:
    if total and skipped / total > SKIP_LIMIT:
        raise IngestError(
            f"{skipped} of {total} entries unparseable in {where} "
            f"(limit {SKIP_LIMIT:.0%})"
        )


def _parse_label(value: str) -> int | None:
    v = value.strip().lower()
    if v in ("0", "ham"):
        return HAM
    if v in ("1", "spam"):
        return SPAM
    return None


def _pick_column(fieldnames: Sequence[str], candidates: Sequence[str]) -> str | None:
    lowered = {name.strip().lower(): name for name in fieldnames if name}
    for cand in candidates:
        if cand in lowered:
            return lowered[cand]
    return None


def _load_label_text_csv(path: Path, source: Source) -> Corpus:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        text = data.decode("latin-1")

    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames:
        raise IngestError(f"{path} has no CSV header")
    label_col = _pick_column(reader.fieldnames, _LABEL_COLUMNS)
    text_col = _pick_column(reader.fieldnames, _TEXT_COLUMNS)
    if label_col is None or text_col is None:
        raise IngestError(
            f"{path} is missing a label/category or text/message column "
            f"(found {reader.fieldnames})"
        )

    samples: list[Sample] = []
    skipped = 0
    total = 0
    for i, row in enumerate(reader, start=1):
        total += 1
        label = _parse_label(row.get(label_col) or "")
        body = (row.get(text_col) or "").strip()
        if label is None or not body:
            skipped += 1
            continue
        samples.append(Sample(id=f"row{i}", source=source, text=body, label=label))
    _check_skip_rate(skipped, total, path)
    if not samples:
        raise IngestError(f"no usable rows in {path}")
    return Corpus(tuple(samples))


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def load_lingspam(path) -> Corpus:
    """Load the Ling-Spam corpus from its directory layout or a CSV export."""
    path = Path(path)
    if path.is_file():
        return _load_label_text_csv(path, Source.LINGSPAM)
    if not path.is_dir():
        raise IngestError(f"no such directory: {path}")

    files = sorted(path.rglob("*.txt"))
    if not files:
        csvs = sorted(path.rglob("*.csv"))
        if csvs:
            return _load_label_text_csv(csvs[0], Source.LINGSPAM)
        raise IngestError(f"no Ling-Spam messages found under {path}")

    samples: list[Sample] = []
    skipped = 0
    for f in files:
        label = SPAM if f.name.startswith("spmsg") else HAM
        try:
            body = _read_file(f).strip()
        except OSError:
            skipped += 1
            continue
        if not body:
            skipped += 1
            continue
        samples.append(
            Sample(id=f.relative_to(path).as_posix(), source=Source.LINGSPAM,
                   text=body, label=label)
        )
    _check_skip_rate(skipped, len(files), path)
    if not samples:
        raise IngestError(f"no usable Ling-Spam messages under {path}")
    return Corpus(tuple(samples))


def load_sms(path) -> Corpus:
    """Load the SMS spam collection CSV (category + message columns)."""
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    return _load_label_text_csv(path, Source.SPAMTEXT)


def load_enron(path) -> Corpus:
    """Load an Enron-style tree: every mail below a ham/ or spam/ directory."""
    path = Path(path)
    if not path.is_dir():
        raise IngestError(f"no such directory: {path}")

    files: list[tuple[Path, int]] = []
    for f in sorted(path.rglob("*")):
        if not f.is_file():
            continue
        label = _label_from_ancestors(f, path)
        if label is not None:
            files.append((f, label))
    if not files:
        raise IngestError(f"no ham/spam subdirectories with mail found under {path}")

    samples: list[Sample] = []
    skipped = 0
    for f, label in files:
        try:
            body = _strip_headers(_read_file(f))
        except OSError:
            skipped += 1
            continue
        if not body:
            skipped += 1
            continue
        samples.append(
            Sample(id=f.relative_to(path).as_posix(), source=Source.ENRON,
                   text=body, label=label)
        )
    _check_skip_rate(skipped, len(files), path)
    if not samples:
        raise IngestError(f"no usable mail under {path}")
    return Corpus(tuple(samples))


def _label_from_ancestors(f: Path, root: Path) -> int | None:
    for part in f.relative_to(root).parts[:-1]:
        name = part.lower()
        if name == "ham":
            return HAM
        if name == "spam":
            return SPAM
    return None


def load_spamassassin(path) -> Corpus:
    """Load the SpamAssassin public corpus (easy_ham*, hard_ham*, spam* subsets)."""
    path = Path(path)
    if not path.is_dir():
        raise IngestError(f"no such directory: {path}")

    subsets: list[tuple[Path, int]] = []
    found = {"easy_ham": False, "hard_ham": False, "spam": False}
    for child in sorted(p for p in path.iterdir() if p.is_dir()):
        name = child.name.lower().replace("-", "_")
        if name.startswith("easy_ham"):
            subsets.append((child, HAM))
            found["easy_ham"] = True
        elif name.startswith("hard_ham"):
            subsets.append((child, HAM))
            found["hard_ham"] = True
        elif name.startswith("spam"):
            subsets.append((child, SPAM))
            found["spam"] = True
    missing = [k for k, ok in found.items() if not ok]
    if missing:
        raise IngestError(f"{path} is missing subsets: {', '.join(missing)}")

    samples: list[Sample] = []
    skipped = 0
    total = 0
    for subset, label in subsets:
        for f in sorted(subset.rglob("*")):
            if not f.is_file() or f.name == "cmds":
                continue
            total += 1
            try:
                body = _strip_headers(_read_file(f))
            except OSError:
                skipped += 1
                continue
            if not body:
                skipped += 1
                continue
            samples.append(
                Sample(id=f.relative_to(path).as_posix(), source=Source.SPAMASSASSIN,
                       text=body, label=label)
            )
    _check_skip_rate(skipped, total, path)
    if not samples:
        raise IngestError(f"no usable mail under {path}")
    return Corpus(tuple(samples))


LOADERS = {
    "lingspam": load_lingspam,
    "sms": load_sms,
    "enron": load_enron,
    "spamassassin": load_spamassassin,
}


# ---------------------------------------------------------------------------
# combine / split
# ---------------------------------------------------------------------------

def combine(corpora: Sequence[Corpus]) -> Corpus:
    """Concatenate corpora; colliding ids are re-qualified by source."""
    if not corpora:
        raise ValueError("combine needs at least one corpus")
    out: list[Sample] = []
    seen: set[str] = set()
    for corpus in corpora:
        for s in corpus.samples:
            sid = s.id
            if sid in seen:
                sid = f"{s.source.value}:{s.id}"
            base, k = sid, 2
            while sid in seen:
                sid = f"{base}#{k}"
                k += 1
            seen.add(sid)
            out.append(s if sid == s.id else replace(s, id=sid))
    return Corpus(tuple(out))


def _apportion_parts(n: int, ratios: Sequence[float]) -> list[int]:
    # Largest remainder, but the first leftover unit always goes to train.
    exact = [r * n for r in ratios]
    sizes = [math.floor(e) for e in exact]
    leftover = n - sum(sizes)
    if leftover > 0:
        sizes[0] += 1
        leftover -= 1
    order = sorted((1, 2), key=lambda i: (-(exact[i] - math.floor(exact[i])), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def _class_quota(part_sizes: Sequence[int], n_class: int, n_total: int) -> list[int]:
    # Largest remainder against each part's proportional share of the class.
    exact = [p * n_class / n_total for p in part_sizes]
    quota = [math.floor(e) for e in exact]
    leftover = n_class - sum(quota)
    order = sorted(range(len(part_sizes)), key=lambda i: (-(exact[i] - quota[i]), i))
    for i in order[:leftover]:
        quota[i] += 1
    return quota


def stratified_indices(
    labels: Sequence[int], ratios: Sequence[float], seed: int
) -> tuple[list[int], list[int], list[int]]:
    """Deterministic stratified partition of indices into train/valid/test.

    Part sizes land within one sample of the exact ratio products, and each
    part's class proportion within one sample of the corpus proportion.
    Remainder units go to train first.
    """
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or any(x <= 0.0 for x in r):
        raise SplitError(f"ratios must be three positive fractions, got {ratios}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(r)!r}")

    n = len(labels)
    by_class: dict[int, list[int]] = {HAM: [], SPAM: []}
    for i, lab in enumerate(labels):
        if lab not in by_class:
            raise SplitError(f"label {lab!r} at index {i} is not binary")
        by_class[lab].append(i)
    for lab, idxs in by_class.items():
        if len(idxs) < 3:
            raise SplitError(
                f"class {lab} has {len(idxs)} samples; need at least one per part"
            )

    part_sizes = _apportion_parts(n, r)
    spam_quota = _class_quota(part_sizes, len(by_class[SPAM]), n)
    ham_quota = [p - q for p, q in zip(part_sizes, spam_quota)]

    rng = substream(seed, "split")
    ham_order = [by_class[HAM][i] for i in rng.permutation(len(by_class[HAM]))]
    spam_order = [by_class[SPAM][i] for i in rng.permutation(len(by_class[SPAM]))]

    parts: list[list[int]] = []
    h = s = 0
    for hq, sq in zip(ham_quota, spam_quota):
        chunk = ham_order[h:h + hq] + spam_order[s:s + sq]
        h += hq
        s += sq
        parts.append(sorted(chunk))
    return parts[0], parts[1], parts[2]


def split(corpus: Corpus, ratios: Sequence[float], seed: int) -> CorpusSplit:
    """Stratified, seeded train/valid/test split of a corpus."""
    tr, va, te = stratified_indices(corpus.labels(), ratios, seed)
    pick = lambda idxs: Corpus(tuple(corpus.samples[i] for i in idxs))
    return CorpusSplit(
        train=pick(tr), valid=pick(va), test=pick(te),
        ratios=tuple(float(x) for x in ratios), seed=seed,
    )


# ---------------------------------------------------------------------------
# JSON-lines corpus cache
# ---------------------------------------------------------------------------

def save_jsonl(corpus: Corpus, path) -> None:
    """One object per sample: {id, source, label, text}; order = ingestion order."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for s in corpus.samples:
            obj = {"id": s.id, "source": s.source.value, "label": s.label, "text": s.text}
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def load_jsonl(path) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such corpus cache: {path}")
    samples = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            samples.append(
                Sample(id=obj["id"], source=Source(obj["source"]),
                       text=obj["text"], label=int(obj["label"]))
            )
    return Corpus(tuple(samples))
