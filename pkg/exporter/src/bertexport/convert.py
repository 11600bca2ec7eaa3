"""Export upstream BERT checkpoints into the engine's neutral tensor format.

Output directory contents:
    manifest.json  {"format_version": 1, "dtype": "f32", "byte_order": "little",
                    "config": {...}, "tensors": [{name, shape, offset}, ...],
                    "source_checkpoint": ..., "sha256": {...}}
    weights.bin    row-major little-endian float32 payloads, no padding
    vocab.txt      one token per line, id = line index

The upstream-to-neutral name mapping ships as name_map.json: schema drift is
a data edit, not a code edit. Linear weights are transposed from torch's
(out, in) to (in, out); the token-type embedding contributes only its row 0
(single-segment classification); half-precision sources are upcast to float32.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"
VOCAB_NAME = "vocab.txt"

# upstream config.json key -> neutral config key
_CONFIG_KEYS = {
    "num_hidden_layers": "num_layers",
    "num_attention_heads": "num_heads",
    "hidden_size": "d_model",
    "intermediate_size": "d_ff",
    "vocab_size": "vocab_size",
    "max_position_embeddings": "max_position",
    "layer_norm_eps": "layer_norm_eps",
}


class ExportError(Exception):
    """The source checkpoint cannot be converted."""


def _load_name_map() -> dict:
    with resources.files("bertexport").joinpath("name_map.json").open("r") as fh:
        return json.load(fh)


def schema_entries(num_layers: int) -> list[dict]:
    """Mapping entries in canonical output order, layer templates expanded."""
    name_map = _load_name_map()
    entries = list(name_map["embeddings"])
    for i in range(num_layers):
        for template in name_map["per_layer"]:
            entries.append({
                "source": template["source"].format(i=i),
                "target": template["target"].format(i=i),
                "transform": template["transform"],
            })
    entries.extend(name_map["pooler"])
    return entries


def expected_shapes(config: dict) -> dict[str, tuple[int, ...]]:
    d, f = config["d_model"], config["d_ff"]
    shapes = {
        "embeddings.word": (config["vocab_size"], d),
        "embeddings.position": (config["max_position"], d),
        "embeddings.segment": (d,),
        "embeddings.norm.scale": (d,),
        "embeddings.norm.shift": (d,),
        "pooler.weight": (d, d),
        "pooler.bias": (d,),
    }
    for i in range(config["num_layers"]):
        p = f"layer.{i}."
        shapes.update({
            p + "attn.q.weight": (d, d), p + "attn.q.bias": (d,),
            p + "attn.k.weight": (d, d), p + "attn.k.bias": (d,),
            p + "attn.v.weight": (d, d), p + "attn.v.bias": (d,),
            p + "attn.out.weight": (d, d), p + "attn.out.bias": (d,),
            p + "attn.norm.scale": (d,), p + "attn.norm.shift": (d,),
            p + "ff.in.weight": (d, f), p + "ff.in.bias": (f,),
            p + "ff.out.weight": (f, d), p + "ff.out.bias": (d,),
            p + "ff.norm.scale": (d,), p + "ff.norm.shift": (d,),
        })
    return shapes


# ---------------------------------------------------------------------------
# source loading
# ---------------------------------------------------------------------------

def _normalize_key(key: str) -> str:
    if key.startswith("bert."):
        key = key[len("bert."):]
    # old TF-converted checkpoints name layer-norm params gamma/beta
    key = key.replace(".LayerNorm.gamma", ".LayerNorm.weight")
    key = key.replace(".LayerNorm.beta", ".LayerNorm.bias")
    return key


def _read_state_dict(model_dir: Path) -> dict[str, torch.Tensor]:
    safetensors_path = model_dir / "model.safetensors"
    bin_path = model_dir / "pytorch_model.bin"
    if safetensors_path.is_file():
        from safetensors.torch import load_file
        state = load_file(safetensors_path)
    elif bin_path.is_file():
        state = torch.load(bin_path, map_location="cpu", weights_only=True)
    else:
        raise ExportError(
            f"{model_dir} holds neither model.safetensors nor pytorch_model.bin")
    return {_normalize_key(k): v for k, v in state.items()}


def _load_local(model_dir: Path):
    config_path = model_dir / "config.json"
    vocab_path = model_dir / VOCAB_NAME
    if not config_path.is_file():
        raise ExportError(f"missing {config_path}")
    if not vocab_path.is_file():
        raise ExportError(f"missing {vocab_path}")
    upstream = json.loads(config_path.read_text(encoding="utf-8"))
    try:
        config = {ours: upstream[theirs] for theirs, ours in _CONFIG_KEYS.items()}
    except KeyError as exc:
        raise ExportError(f"config.json is missing {exc}") from exc
    return _read_state_dict(model_dir), config, vocab_path.read_bytes()


def _load_from_hub(model_id: str):
    try:
        from transformers import AutoTokenizer, BertModel
    except ImportError as exc:
        raise ExportError(
            f"{model_id!r} is not a local directory and transformers is not "
            f"installed to fetch it") from exc
    try:
        model = BertModel.from_pretrained(model_id)
        tokenizer = AutoTokenizer.from_pretrained(model_id)
    except Exception as exc:
        raise ExportError(f"cannot fetch checkpoint {model_id!r}: {exc}") from exc
    config = {ours: getattr(model.config, theirs) for theirs, ours in _CONFIG_KEYS.items()}
    vocab = sorted(tokenizer.get_vocab().items(), key=lambda kv: kv[1])
    vocab_bytes = ("\n".join(tok for tok, _ in vocab) + "\n").encode("utf-8")
    state = {_normalize_key(k): v for k, v in model.state_dict().items()}
    return state, config, vocab_bytes


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _transform(tensor: torch.Tensor, kind: str) -> np.ndarray:
    arr = tensor.detach().to(torch.float32)
    if kind == "transpose":
        arr = arr.t()
    elif kind == "row0":
        arr = arr[0]
    elif kind != "none":
        raise ExportError(f"unknown transform {kind!r} in name map")
    return np.ascontiguousarray(arr.numpy(), dtype="<f4")


def export(model: str, out_dir) -> Path:
    """Convert a checkpoint (local directory or hub id) into out_dir."""
    source = Path(model)
    if source.is_dir():
        state, config, vocab_bytes = _load_local(source)
    else:
        state, config, vocab_bytes = _load_from_hub(model)

    shapes = expected_shapes(config)
    entries = []
    blobs = []
    offset = 0
    for item in schema_entries(config["num_layers"]):
        if item["source"] not in state:
            raise ExportError(
                f"source checkpoint is missing {item['source']!r} "
                f"(schema slot {item['target']!r})")
        arr = _transform(state[item["source"]], item["transform"])
        want = shapes[item["target"]]
        if arr.shape != want:
            raise ExportError(
                f"{item['target']!r} has shape {tuple(arr.shape)}, want {want}")
        entries.append({"name": item["target"], "shape": list(arr.shape),
                        "offset": offset})
        data = arr.tobytes()
        blobs.append(data)
        offset += len(data)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = b"".join(blobs)
    (out_dir / WEIGHTS_NAME).write_bytes(payload)
    (out_dir / VOCAB_NAME).write_bytes(vocab_bytes)
    if len(vocab_bytes.decode("utf-8").splitlines()) != config["vocab_size"]:
        raise ExportError(
            f"vocabulary has {len(vocab_bytes.decode('utf-8').splitlines())} "
            f"lines, config says {config['vocab_size']}")

    manifest = {
        "format_version": 1,
        "dtype": "f32",
        "byte_order": "little",
        "config": config,
        "tensors": entries,
        "source_checkpoint": str(model),
        "sha256": {
            WEIGHTS_NAME: hashlib.sha256(payload).hexdigest(),
            VOCAB_NAME: hashlib.sha256(vocab_bytes).hexdigest(),
        },
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n",
                                         encoding="utf-8")
    return out_dir


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

@dataclass
class VerifyReport:
    ok: bool
    problems: list[str] = field(default_factory=list)

    def __str__(self) -> str:
        if self.ok:
            return "PASS"
        return "FAIL\n" + "\n".join(f"  - {p}" for p in self.problems)


def verify(out_dir, spot_checks: int = 3, seed: int = 0) -> VerifyReport:
    """Re-hash the export, check shapes/offsets, spot-decode a few tensors."""
    out_dir = Path(out_dir)
    problems: list[str] = []
    manifest_path = out_dir / MANIFEST_NAME
    if not manifest_path.is_file():
        return VerifyReport(ok=False, problems=[f"missing {manifest_path}"])
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    for name in (WEIGHTS_NAME, VOCAB_NAME):
        path = out_dir / name
        if not path.is_file():
            problems.append(f"missing {path}")
            continue
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        recorded = manifest.get("sha256", {}).get(name)
        if digest != recorded:
            problems.append(f"{name}: sha256 {digest} != recorded {recorded}")
    if problems:
        return VerifyReport(ok=False, problems=problems)

    config = manifest["config"]
    shapes = expected_shapes(config)
    payload = (out_dir / WEIGHTS_NAME).read_bytes()
    seen = {}
    expected_offset = 0
    for entry in manifest["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name in seen:
            problems.append(f"duplicate tensor {name!r}")
        seen[name] = entry
        if name not in shapes:
            problems.append(f"unexpected tensor {name!r}")
            continue
        if shape != shapes[name]:
            problems.append(f"{name!r}: shape {shape}, want {shapes[name]}")
        if offset != expected_offset:
            problems.append(f"{name!r}: offset {offset}, want {expected_offset}")
        expected_offset = offset + 4 * int(np.prod(shape))
    missing = set(shapes) - set(seen)
    if missing:
        problems.append(f"missing tensors: {sorted(missing)}")
    if expected_offset != len(payload):
        problems.append(
            f"payload size {len(payload)} != manifest extent {expected_offset}")

    vocab_lines = (out_dir / VOCAB_NAME).read_text(encoding="utf-8").splitlines()
    if len(vocab_lines) != config["vocab_size"]:
        problems.append(
            f"vocab has {len(vocab_lines)} lines, config says {config['vocab_size']}")

    if not problems:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(manifest["tensors"]),
                           size=min(spot_checks, len(manifest["tensors"])),
                           replace=False)
        for pick in picks:
            entry = manifest["tensors"][int(pick)]
            count = int(np.prod(entry["shape"]))
            arr = np.frombuffer(payload, dtype="<f4", count=count,
                                offset=entry["offset"])
            if not np.isfinite(arr).all():
                problems.append(f"{entry['name']!r} decodes to non-finite values")

    return VerifyReport(ok=not problems, problems=problems)
