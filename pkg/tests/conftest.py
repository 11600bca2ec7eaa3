import numpy as np
import pytest

from spamdetect.corpus import Corpus, Sample, Source
from spamdetect.tokenizer import Vocab

HAM_WORDS = ["meeting", "project", "schedule", "report", "budget", "quarterly",
             "agenda", "minutes", "review", "deadline", "attached", "presentation"]
SPAM_WORDS = ["winner", "prize", "lottery", "claim", "free!!!", "viagra",
              "million", "urgent", "click", "unsubscribe", "guaranteed", "cash$$$"]
FILLER_WORDS = ["please", "today", "about", "regarding", "tomorrow", "thanks"]
SHORT_WORDS = ["to", "the", "a", "of", "in", "is"]  # removed by clean()


def build_toy_vocab() -> Vocab:
    """Vocabulary covering every word the synthetic corpus can emit."""
    words = set()
    for w in HAM_WORDS + SPAM_WORDS + FILLER_WORDS:
        for piece in "".join(c if c.isalnum() else " " for c in w).split():
            words.add(piece)
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    return Vocab.from_tokens(specials + ["!", "$"] + sorted(words))


def build_keyword_corpus(n: int = 200, seed: int = 5) -> Corpus:
    """Spam/ham messages drawn from disjoint keyword pools, plus shared filler."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = i % 2
        pool = SPAM_WORDS if label else HAM_WORDS
        k = int(rng.integers(5, 9))
        words = (list(rng.choice(pool, size=k))
                 + list(rng.choice(FILLER_WORDS, size=2))
                 + list(rng.choice(SHORT_WORDS, size=2)))
        rng.shuffle(words)
        samples.append(Sample(id=f"msg{i}", source=Source.SPAMTEXT,
                              text=" ".join(words), label=int(label)))
    return Corpus(tuple(samples))


def keyword_corpus_csv_lines(n: int = 200, seed: int = 5) -> list[str]:
    """The same synthetic corpus as a category/message CSV."""
    corp = build_keyword_corpus(n=n, seed=seed)
    lines = ["category,message"]
    for s in corp.samples:
        lines.append(f"{'spam' if s.label else 'ham'},\"{s.text}\"")
    return lines


def make_separable_cache(n: int = 32, dim: int = 16, seed: int = 0, margin: float = 2.0):
    """Linearly separable synthetic embeddings: (X, y)."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(0, 1, dim)
    direction /= np.linalg.norm(direction)
    y = np.array([0] * (n // 2) + [1] * (n - n // 2))
    x = rng.normal(0, 1, (n, dim))
    x[y == 1] += margin * direction
    x[y == 0] -= margin * direction
    return x, y


@pytest.fixture
def toy_vocab():
    return build_toy_vocab()


@pytest.fixture
def keyword_corpus():
    return build_keyword_corpus()


# ---------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion
# ---------------------------------------------------------------------------

_acceptance_reports = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid:
        if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
            _acceptance_reports[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_reports:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for nodeid in sorted(_acceptance_reports):
        outcome = _acceptance_reports[nodeid].upper()
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{outcome:8s} {name}")
