"""Grid sweep over datasets, mini-batch sizes, and split ratios.

Every grid cell trains a fresh head on its dataset's cached embeddings and
records metrics in a JSON-lines journal; reruns resume from the journal.
Failed cells are recorded and never abort the sweep. Best rows (per dataset,
by F1; ties to the smaller batch, then the earlier split in spec order) are
rendered into two CSV report tables plus a plain-text view.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .corpus import stratified_indices
from .encoder import EmbeddingCache, read_cache
from .metrics import MetricsReport
from .trainer import TrainConfig, evaluate, fit

DEFAULT_BATCH_SIZES = (16, 32, 64, 128, 256, 512, 1024)
DEFAULT_SPLITS = ((0.6, 0.2, 0.2), (0.7, 0.15, 0.15), (0.8, 0.1, 0.1))
DATASETS = ("LingSpam", "SpamText", "Enron", "SpamAssassin", "Combined")


def format_ratios(ratios) -> str:
    parts = [r * 100 for r in ratios]
    if all(abs(p - round(p)) < 1e-9 for p in parts):
        return ":".join(str(int(round(p))) for p in parts)
    return ":".join(repr(float(r)) for r in ratios)


def parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(":")]
    if len(parts) != 3:
        raise ValueError(f"expected three ratio components, got {text!r}")
    total = sum(parts)
    if total <= 0:
        raise ValueError(f"ratios must be positive, got {text!r}")
    return tuple(p / total for p in parts)


@dataclass(frozen=True)
class SweepSpec:
    datasets: tuple[str, ...]
    batch_sizes: tuple[int, ...] = DEFAULT_BATCH_SIZES
    splits: tuple[tuple[float, float, float], ...] = DEFAULT_SPLITS
    epochs: int = 200
    seeds: tuple[int, ...] = (0,)
    seq_len: int = 64
    lr: float = 3e-4

    def __post_init__(self):
        if not self.datasets or not self.batch_sizes or not self.splits or not self.seeds:
            raise ValueError("datasets, batch_sizes, splits, and seeds must be non-empty")
        if any(b < 2 for b in self.batch_sizes):
            raise ValueError(f"batch sizes must be >= 2, got {self.batch_sizes}")

    def cells(self) -> list[tuple[str, int, tuple[float, float, float], int]]:
        return [
            (ds, batch, split, seed)
            for seed in self.seeds
            for ds in self.datasets
            for batch in self.batch_sizes
            for split in self.splits
        ]


@dataclass
class SweepCell:
    dataset: str
    batch: int
    split: tuple[float, float, float]
    seed: int
    status: str                      # "ok" | "failed"
    metrics: MetricsReport | None = None
    best_epoch: int | None = None
    seconds: float = 0.0
    error: str | None = None

    def key(self) -> tuple:
        return (self.dataset, self.batch, format_ratios(self.split), self.seed)

    def to_record(self) -> dict:
        return {
            "dataset": self.dataset,
            "batch": self.batch,
            "split": format_ratios(self.split),
            "seed": self.seed,
            "status": self.status,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "best_epoch": self.best_epoch,
            "seconds": self.seconds,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, obj: dict) -> "SweepCell":
        return cls(
            dataset=obj["dataset"],
            batch=obj["batch"],
            split=parse_ratios(obj["split"]),
            seed=obj["seed"],
            status=obj["status"],
            metrics=MetricsReport.from_dict(obj["metrics"]) if obj.get("metrics") else None,
            best_epoch=obj.get("best_epoch"),
            seconds=obj.get("seconds", 0.0),
            error=obj.get("error"),
        )


@dataclass
class SweepResult:
    spec: SweepSpec
    cells: list[SweepCell] = field(default_factory=list)

    def best_rows(self) -> dict[str, SweepCell]:
        """Per-dataset argmax by F1; ties to smaller batch, then earlier split."""
        split_rank = {format_ratios(s): i for i, s in enumerate(self.spec.splits)}
        best: dict[str, SweepCell] = {}
        for ds in self.spec.datasets:
            ok = [c for c in self.cells if c.dataset == ds and c.status == "ok"]
            if not ok:
                continue
            best[ds] = min(
                ok,
                key=lambda c: (-c.metrics.f1, c.batch,
                               split_rank.get(format_ratios(c.split), len(split_rank)),
                               c.seed),
            )
        return best


def _run_cell(dataset, batch, split, seed, spec: SweepSpec, cache: EmbeddingCache) -> SweepCell:
    started = time.perf_counter()
    try:
        tr, va, te = stratified_indices(cache.labels.tolist(), split, seed)
        config = TrainConfig(lr=spec.lr, epochs=spec.epochs, batch_size=batch,
                             seed=seed, ratios=split)
        params, history = fit(cache.subset(tr), cache.subset(va), config)
        report = evaluate(params, cache.subset(te))
        return SweepCell(dataset=dataset, batch=batch, split=split, seed=seed,
                         status="ok", metrics=report,
                         best_epoch=history.best_epoch,
                         seconds=time.perf_counter() - started)
    except Exception as exc:  # record and keep sweeping
        return SweepCell(dataset=dataset, batch=batch, split=split, seed=seed,
                         status="failed", error=str(exc),
                         seconds=time.perf_counter() - started)


def run_sweep(
    spec: SweepSpec,
    caches: Mapping[str, "EmbeddingCache | str | Path"],
    journal_path=None,
    workers: int = 1,
) -> SweepResult:
    """Execute every grid cell not already present in the journal."""
    result = SweepResult(spec=spec)
    done: set[tuple] = set()
    if journal_path is not None:
        journal_path = Path(journal_path)
        if journal_path.exists():
            with journal_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    cell = SweepCell.from_record(json.loads(line))
                    result.cells.append(cell)
                    done.add(cell.key())

    loaded: dict[str, EmbeddingCache | None] = {}
    for ds in spec.datasets:
        src = caches.get(ds)
        if src is None:
            loaded[ds] = None
            continue
        if isinstance(src, EmbeddingCache):
            loaded[ds] = src
            continue
        try:
            loaded[ds] = read_cache(src)
        except Exception:
            loaded[ds] = None

    pending = []
    for dataset, batch, split, seed in spec.cells():
        key = (dataset, batch, format_ratios(split), seed)
        if key in done:
            continue
        pending.append((dataset, batch, split, seed))

    journal_fh = journal_path.open("a", encoding="utf-8") if journal_path else None

    def record(cell: SweepCell):
        result.cells.append(cell)
        if journal_fh is not None:
            journal_fh.write(json.dumps(cell.to_record()) + "\n")
            journal_fh.flush()

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = []
                for dataset, batch, split, seed in pending:
                    cache = loaded[dataset]
                    if cache is None:
                        record(SweepCell(dataset=dataset, batch=batch, split=split,
                                         seed=seed, status="failed",
                                         error="missing embedding cache"))
                        continue
                    futures.append(pool.submit(_run_cell, dataset, batch, split,
                                               seed, spec, cache))
                for fut in futures:
                    record(fut.result())
        else:
            for dataset, batch, split, seed in pending:
                cache = loaded[dataset]
                if cache is None:
                    record(SweepCell(dataset=dataset, batch=batch, split=split,
                                     seed=seed, status="failed",
                                     error="missing embedding cache"))
                    continue
                record(_run_cell(dataset, batch, split, seed, spec, cache))
    finally:
        if journal_fh is not None:
            journal_fh.close()

    return result


TABLE2_HEADER = ("Dataset", "Minibatch size", "Distribution", "Highest f1-score", "Accuracy")
TABLE3_HEADER = ("Dataset", "Minibatch size", "Distribution", "Precision", "Recall")


def render_tables(result: SweepResult, out_dir) -> dict[str, Path]:
    """Write table2.csv / table3.csv (full precision) and a plain-text view."""
    if not result.cells:
        raise ValueError("cannot render tables from an empty sweep result")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best = result.best_rows()

    rows2, rows3 = [], []
    for ds in result.spec.datasets:
        cell = best.get(ds)
        if cell is None:
            continue
        m = cell.metrics
        dist = format_ratios(cell.split)
        rows2.append((ds, cell.batch, dist, repr(m.f1), repr(m.accuracy)))
        rows3.append((ds, cell.batch, dist, repr(m.precision), repr(m.recall)))

    paths = {}
    for name, header, rows in (("table2.csv", TABLE2_HEADER, rows2),
                               ("table3.csv", TABLE3_HEADER, rows3)):
        path = out_dir / name
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(str(v) for v in row) + "\n")
        paths[name] = path

    text_path = out_dir / "tables.txt"
    with text_path.open("w", encoding="utf-8") as fh:
        for title, header, rows in (
            ("Best F1 and accuracy per dataset", TABLE2_HEADER, rows2),
            ("Corresponding precision and recall", TABLE3_HEADER, rows3),
        ):
            fh.write(title + "\n")
            widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
                      for i, h in enumerate(header)]
            fh.write("  ".join(h.ljust(w) for h, w in zip(header, widths)) + "\n")
            for row in rows:
                fh.write("  ".join(str(v).ljust(w) for v, w in zip(row, widths)) + "\n")
            fh.write("\n")
    paths["tables.txt"] = text_path
    return paths
