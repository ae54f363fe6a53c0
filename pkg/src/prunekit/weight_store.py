"""Bit-exact weight containers and tensor slicing.

Container layout (little-endian, no padding):
    magic "COPW" | version u32 = 1 | entry_count u32 |
    per entry: name_len u32, name UTF-8, ndim u32, ndim x dim u32,
               payload product(dims) x f32 row-major.

Payload floats are never transformed on read or write, so NaN and
denormal bit patterns survive a round trip unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContainerError
from .model_graph import ModelGraph

MAGIC = b"COPW"
VERSION = 1


@dataclass(frozen=True)
class WeightTensor:
    name: str
    data: np.ndarray  # float32, shape == dims

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class WeightContainer:
    entries: dict[str, WeightTensor]

    def __iter__(self):
        return iter(self.entries.values())

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> WeightTensor:
        try:
            return self.entries[name]
        except KeyError:
            raise ContainerError(f"container has no tensor {name!r}") from None


def tensor(name: str, data: np.ndarray) -> WeightTensor:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim < 1:
        raise ContainerError(f"tensor {name!r} must have at least one dimension")
    return WeightTensor(name=name, data=arr)


def container(tensors) -> WeightContainer:
    entries: dict[str, WeightTensor] = {}
    for t in tensors:
        if t.name in entries:
            raise ContainerError(f"duplicate tensor name {t.name!r}")
        entries[t.name] = t
    return WeightContainer(entries=entries)


def read_container(stream: bytes) -> WeightContainer:
    """Decode a container; write_container(read_container(b)) == b."""
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(stream):
            raise ContainerError(
                f"truncated stream: needed {n} bytes for {what} at offset {off}, "
                f"have {len(stream) - off}"
            )
        chunk = stream[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ContainerError("bad magic: not a COPW container")
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    count = struct.unpack("<I", take(4, "entry count"))[0]

    tensors = []
    for i in range(count):
        name_len = struct.unpack("<I", take(4, f"entry {i} name length"))[0]
        try:
            name = take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise ContainerError(f"entry {i}: name is not valid UTF-8") from e
        ndim = struct.unpack("<I", take(4, f"{name!r} ndim"))[0]
        if ndim < 1:
            raise ContainerError(f"entry {name!r}: ndim must be >= 1")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name!r} dims"))
        if any(d < 1 for d in dims):
            raise ContainerError(f"entry {name!r}: non-positive dimension in {dims}")
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = take(4 * n_elem, f"{name!r} payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(dims)
        tensors.append(WeightTensor(name=name, data=data))
    if off != len(stream):
        raise ContainerError(f"{len(stream) - off} trailing bytes after last entry")
    return container(tensors)


def write_container(c: WeightContainer) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(c.entries))]
    for t in c:
        name = t.name.encode("utf-8")
        out.append(struct.pack("<I", len(name)))
        out.append(name)
        out.append(struct.pack("<I", t.data.ndim))
        out.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(out)


def slice_tensor(t: WeightTensor, axis: int, remove) -> WeightTensor:
    """Drop the given indices along one axis, preserving order and bits."""
    if not 0 <= axis < t.data.ndim:
        raise ContainerError(f"tensor {t.name!r}: axis {axis} out of range")
    size = t.data.shape[axis]
    remove = sorted(set(remove))
    bad = [i for i in remove if not 0 <= i < size]
    if bad:
        raise ContainerError(
            f"tensor {t.name!r}: indices {bad} out of range for axis {axis} "
            f"of length {size}"
        )
    if len(remove) >= size:
        raise ContainerError(f"tensor {t.name!r}: cannot remove all {size} indices")
    if not remove:
        return t
    data = np.delete(t.data, remove, axis=axis)
    return WeightTensor(name=t.name, data=np.ascontiguousarray(data))


# ---------------------------------------------------------------------------
# graph/container consistency

_BN_SUFFIXES = (".gamma", ".beta", ".mean", ".var")


def expected_dims(graph: ModelGraph, name: str) -> dict[str, tuple[int, ...]]:
    """Tensor names and dims a layer contributes to its container."""
    l = graph.layer(name)
    if l.kind == "batch_norm":
        return {name + sfx: (l.out_channels,) for sfx in _BN_SUFFIXES}
    if l.kind == "fc":
        dims: tuple[int, ...] = (l.in_channels, l.out_channels)
    elif l.kind == "depthwise_conv":
        dims = (l.kernel, l.kernel, l.in_channels)
    else:
        dims = (l.kernel, l.kernel, l.in_channels, l.out_channels)
    out = {name: dims}
    if l.bias:
        out[name + ".bias"] = (l.out_channels,)
    return out


def validate_container(graph: ModelGraph, c: WeightContainer) -> None:
    """Check every layer has its tensors with the dims the graph requires."""
    for l in graph.layers:
        for tname, dims in expected_dims(graph, l.name).items():
            if tname not in c:
                raise ContainerError(f"missing tensor {tname!r} for layer {l.name!r}")
            got = c[tname].dims
            if got != dims:
                raise ContainerError(
                    f"tensor {tname!r} has dims {got}, graph requires {dims}"
                )
