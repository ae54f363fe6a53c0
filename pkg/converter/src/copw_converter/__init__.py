"""PyTorch checkpoint to COPW container exporter."""

from .export import (
    ExportError,
    ExportMap,
    MappedTensor,
    convert_checkpoint,
    export_checkpoint,
    load_export_map,
    manifest_skeleton,
    write_copw,
)

__version__ = "0.1.0"
