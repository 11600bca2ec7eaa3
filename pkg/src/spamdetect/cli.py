"""Command-line pipeline: ingest, embed, train, eval, sweep, classify.

Flag values override --config file entries, which override built-in defaults.
Exit codes: 0 success, 1 runtime failure, 2 usage error. The resolved
configuration is echoed next to every output for provenance, and output
directories are guarded with a lock file against concurrent runs.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import encoder as encoder_mod
from . import head as head_mod
from . import sweep as sweep_mod
from . import trainer as trainer_mod
from .preprocess import clean
from .sweep import format_ratios, parse_ratios
from .tokenizer import encode, load_vocab

DEFAULTS = {
    "seed": 0,
    "seq_len": 64,
    "batch_size": 128,
    "epochs": 200,
    "lr": 3e-4,
    "split": "80:10:10",
    "cache_dir": ".",
}


class UsageError(Exception):
    """Bad invocation (missing inputs, unknown names); exits with status 2."""


@contextlib.contextmanager
def output_lock(target: Path):
    """Reject concurrent runs writing to the same output; stale locks are stolen."""
    lock = target / ".lock" if target.is_dir() else target.with_suffix(target.suffix + ".lock")
    lock.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        try:
            pid = int(lock.read_text().strip())
            os.kill(pid, 0)
            alive = True
        except (ValueError, OSError):
            alive = False
        if alive:
            raise RuntimeError(f"another run (pid in {lock}) holds this output") from None
        lock.unlink()
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _resolve(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise UsageError(f"no such config file: {path}")
        cfg.update(json.loads(path.read_text(encoding="utf-8")))
    for key, value in vars(args).items():
        if key in ("config", "command", "func") or value is None:
            continue
        cfg[key] = value
    return cfg


def _echo_config(cfg: dict, command: str, out: Path) -> None:
    record = {"command": command}
    record.update({k: v for k, v in cfg.items() if not callable(v)})
    if out.is_dir():
        target = out / "run_config.json"
    else:
        target = out.with_suffix(out.suffix + ".run.json")
    target.write_text(json.dumps(record, indent=2, default=str) + "\n", encoding="utf-8")


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such {what}: {p}")
    return p


def _load_weights(cfg) -> encoder_mod.EncoderWeights:
    weights_dir = _require_file(cfg["weights"], "weights directory")
    return encoder_mod.load_weights(weights_dir)


def _split_cache(cache, cfg):
    ratios = parse_ratios(cfg["split"])
    return corpus_mod.stratified_indices(cache.labels.tolist(), ratios, cfg["seed"])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = _resolve(args)
    loader = corpus_mod.LOADERS[cfg["dataset"]]
    src = _require_file(cfg["src"], "source path")
    out = Path(cfg.get("out") or Path(cfg["cache_dir"]) / f"{cfg['dataset']}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    loaded = loader(src)
    corpus_mod.save_jsonl(loaded, out)
    _echo_config(cfg, "ingest", out)
    print(f"{len(loaded)} total, {loaded.n_spam} spam, {loaded.n_ham} ham")
    print(f"wrote {out}")
    return 0


def cmd_embed(args) -> int:
    cfg = _resolve(args)
    corpus_path = _require_file(cfg["corpus"], "corpus cache")
    vocab = load_vocab(_require_file(cfg["vocab"], "vocabulary file"))
    weights = _load_weights(cfg)
    out = Path(cfg.get("out") or Path(cfg["cache_dir"]) / (Path(cfg["corpus"]).stem + ".embc"))
    out.parent.mkdir(parents=True, exist_ok=True)
    loaded = corpus_mod.load_jsonl(corpus_path)
    with output_lock(out):
        cache = encoder_mod.embed_corpus(
            loaded.samples, weights, vocab, cfg["seq_len"], out,
            clean_text=not cfg.get("no_clean", False),
            pooled=not cfg.get("raw_cls", False),
            strip_accents=cfg.get("strip_accents", True),
            progress=not cfg.get("quiet", False),
        )
    _echo_config(cfg, "embed", out)
    print(f"embedded {len(cache)} samples (d_model={cache.d_model}, "
          f"seq_len={cache.seq_len}) -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    cache = encoder_mod.read_cache(_require_file(cfg["cache"], "embedding cache"))
    out = Path(cfg.get("out") or "train_out")
    out.mkdir(parents=True, exist_ok=True)
    config = trainer_mod.TrainConfig(
        lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        seed=cfg["seed"], ratios=parse_ratios(cfg["split"]),
    )
    with output_lock(out):
        _echo_config(cfg, "train", out)
        tr, va, te = _split_cache(cache, cfg)
        params, history = trainer_mod.fit(
            cache.subset(tr), cache.subset(va), config,
            log_path=out / "train_log.jsonl", checkpoint_dir=out / "head",
        )
        (out / "history.json").write_text(json.dumps({
            "train_loss": history.train_loss,
            "valid_loss": history.valid_loss,
            "valid_accuracy": history.valid_accuracy,
            "best_epoch": history.best_epoch,
        }, indent=2) + "\n", encoding="utf-8")
        x_train, y_train = cache.subset(tr)
        logp, _ = head_mod.forward(x_train, params, head_mod.HeadState(mode="eval"))
        train_acc = float((logp.argmax(axis=1) == y_train).mean())
    print(f"best epoch {history.best_epoch}, "
          f"valid loss {history.valid_loss[history.best_epoch - 1]:.6f}")
    print(f"train accuracy {train_acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    cache = encoder_mod.read_cache(_require_file(cfg["cache"], "embedding cache"))
    ckpt_dir = _require_file(cfg["checkpoint"], "head checkpoint")
    params, _ = trainer_mod.load_head_checkpoint(ckpt_dir)
    tr, va, te = _split_cache(cache, cfg)
    part = {"train": tr, "valid": va, "test": te,
            "all": list(range(len(cache)))}[cfg.get("part", "test")]
    report = trainer_mod.evaluate(params, cache.subset(part))
    print(report.to_json())
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
        _echo_config(cfg, "eval", out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    caches = {}
    for item in cfg.get("cache", []) or []:
        if "=" not in item:
            raise UsageError(f"--cache expects NAME=PATH, got {item!r}")
        name, _, path = item.partition("=")
        caches[name] = _require_file(path, f"embedding cache for {name}")
    if not caches:
        raise UsageError("sweep needs at least one --cache NAME=PATH")

    datasets = tuple(cfg.get("datasets") or caches.keys())
    spec = sweep_mod.SweepSpec(
        datasets=datasets,
        batch_sizes=tuple(cfg.get("batch_sizes") or sweep_mod.DEFAULT_BATCH_SIZES),
        splits=tuple(parse_ratios(s) for s in cfg.get("splits") or
                     [format_ratios(r) for r in sweep_mod.DEFAULT_SPLITS]),
        epochs=cfg["epochs"],
        seeds=tuple(cfg.get("seeds") or (cfg["seed"],)),
        seq_len=cfg["seq_len"],
        lr=cfg["lr"],
    )
    out = Path(cfg.get("out") or "sweep_out")
    out.mkdir(parents=True, exist_ok=True)
    with output_lock(out):
        _echo_config(cfg, "sweep", out)
        result = sweep_mod.run_sweep(spec, caches, journal_path=out / "journal.jsonl",
                                     workers=cfg.get("workers", 1))
        sweep_mod.render_tables(result, out)
    ok = sum(1 for c in result.cells if c.status == "ok")
    failed = len(result.cells) - ok
    print(f"{ok} cells ok, {failed} failed; reports in {out}")
    for ds, cell in result.best_rows().items():
        print(f"best[{ds}]: batch {cell.batch}, split {format_ratios(cell.split)}, "
              f"f1 {cell.metrics.f1:.4f}, accuracy {cell.metrics.accuracy:.4f}")
    return 0


def cmd_classify(args) -> int:
    cfg = _resolve(args)
    vocab = load_vocab(_require_file(cfg["vocab"], "vocabulary file"))
    weights = _load_weights(cfg)
    params, _ = trainer_mod.load_head_checkpoint(
        _require_file(cfg["checkpoint"], "head checkpoint"))

    if cfg.get("text") is not None:
        texts = [cfg["text"]]
    elif cfg.get("file"):
        texts = _require_file(cfg["file"], "input file").read_text(
            encoding="utf-8").splitlines()
    else:
        raise UsageError("classify needs --text or --file")

    state = head_mod.HeadState(mode="eval")
    for raw in texts:
        text = clean(raw) if not cfg.get("no_clean", False) else raw
        tok = encode(text, vocab, cfg["seq_len"])
        vec = encoder_mod.encode_cls(tok, weights,
                                     pooled=not cfg.get("raw_cls", False))
        logp, _ = head_mod.forward(vec[None, :], params, state)
        probs = np.exp(logp[0])
        verdict = "spam" if int(logp[0].argmax()) == 1 else "ham"
        print(f"{verdict} ham={probs[0]:.4f} spam={probs[1]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _str_list(text: str) -> list[str]:
    return [x for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its entries")
    common.add_argument("--seed", type=int)
    common.add_argument("--seq-len", dest="seq_len", type=int)
    common.add_argument("--batch-size", dest="batch_size", type=int)
    common.add_argument("--split", help="train:valid:test ratios, e.g. 80:10:10")
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--weights", help="encoder checkpoint directory")
    common.add_argument("--vocab", help="vocabulary file (one token per line)")
    common.add_argument("--cache-dir", dest="cache_dir")
    common.add_argument("--out", help="output file or directory")

    parser = argparse.ArgumentParser(
        prog="spamdetect",
        description="Spam/ham classification pipeline over frozen encoder features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="load a dataset into a corpus cache")
    p.add_argument("--dataset", required=True, choices=sorted(corpus_mod.LOADERS))
    p.add_argument("--src", required=True, help="dataset directory or CSV file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", parents=[common],
                       help="embed a corpus cache into [CLS] feature vectors")
    p.add_argument("--corpus", required=True, help="corpus cache (JSON lines)")
    p.add_argument("--no-clean", dest="no_clean", action="store_true", default=None,
                   help="skip short-word removal")
    p.add_argument("--raw-cls", dest="raw_cls", action="store_true", default=None,
                   help="use the raw position-0 state instead of the pooler output")
    p.add_argument("--quiet", action="store_true", default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", parents=[common], help="train the classifier head")
    p.add_argument("--cache", required=True, help="embedding cache")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained head")
    p.add_argument("--cache", required=True, help="embedding cache")
    p.add_argument("--checkpoint", required=True, help="head checkpoint directory")
    p.add_argument("--part", choices=("train", "valid", "test", "all"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common],
                       help="grid sweep over batch sizes and splits")
    p.add_argument("--cache", action="append", metavar="NAME=PATH",
                   help="embedding cache per dataset (repeatable)")
    p.add_argument("--datasets", type=_str_list, help="comma-separated subset to run")
    p.add_argument("--batch-sizes", dest="batch_sizes", type=_int_list,
                   help="comma-separated batch sizes")
    p.add_argument("--splits", type=_str_list,
                   help="comma-separated ratio triples, e.g. 60:20:20,70:15:15")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    p.add_argument("--workers", type=int, help="parallel cells (default 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("classify", parents=[common], help="classify raw text")
    p.add_argument("--checkpoint", required=True, help="head checkpoint directory")
    p.add_argument("--text", help="one message to classify")
    p.add_argument("--file", help="file with one message per line")
    p.add_argument("--no-clean", dest="no_clean", action="store_true", default=None)
    p.add_argument("--raw-cls", dest="raw_cls", action="store_true", default=None)
    p.set_defaults(func=cmd_classify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (corpus_mod.IngestError, corpus_mod.SplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
