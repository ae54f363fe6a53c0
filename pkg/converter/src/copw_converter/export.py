"""Export a PyTorch checkpoint into a COPW weight container.

The container stores conv weights as [K, K, in, out] and fc weights as
[in, out]; PyTorch keeps [out, in, K, K] and [out, in], so each mapped
tensor carries the axis permutation that moves it into container order.
Values are copied bit-exactly: float32 in, float32 out, no casting.

COPW layout (little-endian, no padding):
    "COPW" | version u32 = 1 | entry_count u32 |
    per entry: name_len u32, name UTF-8, ndim u32, dims u32 each,
               payload f32 row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import yaml

MAGIC = b"COPW"
VERSION = 1

_BN_SUFFIXES = (".gamma", ".beta", ".mean", ".var")


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class MappedTensor:
    source: str
    name: str
    permute: tuple[int, ...] | None = None
    squeeze: bool = False  # drop length-1 axes after permuting (depthwise [M,1,K,K])


@dataclass(frozen=True)
class ExportMap:
    tensors: tuple[MappedTensor, ...]
    ignore: frozenset[str]


def load_export_map(text: str) -> ExportMap:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ExportError(f"map file is not valid YAML: {e}") from e
    if not isinstance(doc, dict) or "tensors" not in doc:
        raise ExportError("map file must contain a 'tensors' mapping")
    mapped = []
    names = set()
    for source, spec in doc["tensors"].items():
        if isinstance(spec, str):
            spec = {"name": spec}
        if not isinstance(spec, dict) or "name" not in spec:
            raise ExportError(f"map entry {source!r} needs a target 'name'")
        permute = spec.get("permute")
        if permute is not None:
            permute = tuple(int(a) for a in permute)
        name = spec["name"]
        if name in names:
            raise ExportError(f"two checkpoint tensors map to {name!r}")
        names.add(name)
        mapped.append(MappedTensor(source=source, name=name, permute=permute,
                                   squeeze=bool(spec.get("squeeze", False))))
    ignore = frozenset(doc.get("ignore") or [])
    return ExportMap(tensors=tuple(mapped), ignore=ignore)


def _flat_state_dict(checkpoint) -> dict[str, torch.Tensor]:
    if isinstance(checkpoint, dict) and "state_dict" in checkpoint:
        checkpoint = checkpoint["state_dict"]
    if not isinstance(checkpoint, dict):
        raise ExportError("checkpoint is not a state dict")
    return {k: v for k, v in checkpoint.items() if isinstance(v, torch.Tensor)}


def convert_checkpoint(checkpoint, export_map: ExportMap) -> dict[str, np.ndarray]:
    """Mapped, permuted float32 arrays in map order."""
    state = _flat_state_dict(checkpoint)
    unmapped = [k for k in state
                if k not in export_map.ignore
                and all(m.source != k for m in export_map.tensors)]
    if unmapped:
        raise ExportError(
            f"unmapped checkpoint tensors {sorted(unmapped)}; map or ignore them"
        )

    out: dict[str, np.ndarray] = {}
    for m in export_map.tensors:
        if m.source not in state:
            raise ExportError(f"checkpoint has no tensor {m.source!r}")
        t = state[m.source]
        if t.dtype != torch.float32:
            raise ExportError(
                f"tensor {m.source!r} has unsupported dtype {t.dtype}; "
                "only float32 checkpoints are exported"
            )
        arr = t.detach().cpu().numpy()
        if m.permute is not None:
            if sorted(m.permute) != list(range(arr.ndim)):
                raise ExportError(
                    f"tensor {m.source!r}: permutation {m.permute} is not a "
                    f"bijection on {arr.ndim} axes"
                )
            arr = np.transpose(arr, m.permute)
        if m.squeeze:
            arr = arr.reshape([d for d in arr.shape if d != 1] or [1])
        out[m.name] = np.ascontiguousarray(arr, dtype="<f4")
    return out


def write_copw(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def _layer_entries(tensors: dict[str, np.ndarray]) -> list[dict]:
    """Group tensors by layer and infer kind/shape fields from ranks."""
    layers: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in tensors.items():
        base, dot, part = name.rpartition(".")
        if dot and ("." + part) in _BN_SUFFIXES + (".bias",):
            layers.setdefault(base, {})["." + part] = arr
        else:
            layers.setdefault(name, {})["main"] = arr

    entries = []
    for layer, parts in layers.items():
        main = parts.get("main")
        if main is None:
            if set(parts) >= set(_BN_SUFFIXES):
                n = parts[".gamma"].shape[0]
                entries.append({"name": layer, "kind": "batch_norm",
                                "in_channels": int(n), "out_channels": int(n)})
                continue
            raise ExportError(f"layer {layer!r} has only auxiliary tensors {sorted(parts)}")
        entry: dict[str, object]
        if main.ndim == 4:
            k1, k2, m, n = main.shape
            if k1 != k2:
                raise ExportError(f"layer {layer!r}: non-square kernel {k1}x{k2}")
            kind = "pointwise_conv" if k1 == 1 else "conv"
            entry = {"name": layer, "kind": kind, "kernel": int(k1),
                     "in_channels": int(m), "out_channels": int(n),
                     "stride": 1, "padding": "same"}
        elif main.ndim == 3:
            k1, k2, m = main.shape
            if k1 != k2:
                raise ExportError(f"layer {layer!r}: non-square kernel {k1}x{k2}")
            entry = {"name": layer, "kind": "depthwise_conv", "kernel": int(k1),
                     "in_channels": int(m), "out_channels": int(m),
                     "stride": 1, "padding": "same"}
        elif main.ndim == 2:
            m, n = main.shape
            entry = {"name": layer, "kind": "fc",
                     "in_channels": int(m), "out_channels": int(n)}
        else:
            raise ExportError(f"layer {layer!r}: cannot infer a kind from rank {main.ndim}")
        if ".bias" in parts:
            entry["bias"] = True
        entries.append(entry)
    return entries


def manifest_skeleton(tensors: dict[str, np.ndarray]) -> str:
    """Draft manifest with inferred shapes, chained in container order.

    Strides, paddings, pooling folds, skip wiring, and the input spatial
    size cannot be recovered from a flat checkpoint and are left at
    placeholder values for hand completion.
    """
    entries = _layer_entries(tensors)
    for cur, nxt in zip(entries, entries[1:]):
        cur["successors"] = [nxt["name"]]
    if entries:
        entries[-1]["successors"] = []
    doc = {
        "input_spatial": 1,
        "input_channels": int(entries[0]["in_channels"]) if entries else 1,
        "layers": entries,
    }
    header = (
        "# draft manifest generated from a checkpoint: shapes are inferred,\n"
        "# but input_spatial, strides, paddings, pooling folds, and skip\n"
        "# wiring must be completed by hand before planning.\n"
    )
    return header + yaml.safe_dump(doc, sort_keys=False)


def export_checkpoint(checkpoint_path: str, map_path: str,
                      out_path: str, manifest_out: str | None = None) -> int:
    """Read, convert, and write; returns the number of exported tensors."""
    checkpoint = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    with open(map_path, "r", encoding="utf-8") as f:
        export_map = load_export_map(f.read())
    tensors = convert_checkpoint(checkpoint, export_map)
    with open(out_path, "wb") as f:
        f.write(write_copw(tensors))
    if manifest_out:
        with open(manifest_out, "w", encoding="utf-8") as f:
            f.write(manifest_skeleton(tensors))
    return len(tensors)
