"""Export flat weight dumps per (layer, revision) for histogram analysis.

Dump layout matches the scanner's reader: 8-byte magic ``WTSDUMP1``, a
little-endian uint64 element count, then float32 values.  A manifest JSON
``{"layer": ..., "epochs": [{"epoch": N, "file": ...}]}`` ties the dumps of
one layer to their training epochs.
"""

from __future__ import annotations

import fnmatch
import json
import os
import re
import struct

import numpy as np
import torch
from transformers import AutoModelForCausalLM

from .session import BridgeError, _resolve_source

__all__ = ["select_parameters", "export_weights", "write_manifest", "epoch_from_revision"]

DUMP_MAGIC = b"WTSDUMP1"


def write_dump(path, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype="<f4").ravel()
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<Q", arr.size))
        fh.write(arr.tobytes())


def select_parameters(model, layer_selector: str) -> dict[str, torch.Tensor]:
    """Named parameters matching an fnmatch pattern (or exact name)."""
    matches = {
        name: param
        for name, param in model.named_parameters()
        if name == layer_selector or fnmatch.fnmatch(name, layer_selector)
    }
    if not matches:
        raise BridgeError(f"no parameters match selector {layer_selector!r}")
    return matches


def export_weights(
    model_id: str,
    revision: str | None,
    layer_selector: str,
    out_dir: str,
    epoch: int,
) -> dict:
    """Dump the selected layer of one revision; returns the manifest entry.

    When the selector matches several parameters their flattened values are
    concatenated in name order.
    """
    source, hub_revision = _resolve_source(model_id, revision or "main")
    try:
        model = AutoModelForCausalLM.from_pretrained(source, revision=hub_revision)
    except (OSError, ValueError, EnvironmentError) as exc:
        raise BridgeError(f"cannot load {model_id!r} at revision {revision!r}: {exc}") from exc
    params = select_parameters(model, layer_selector)
    flat = np.concatenate(
        [params[name].detach().cpu().numpy().ravel() for name in sorted(params)]
    )
    os.makedirs(out_dir, exist_ok=True)
    filename = f"{_slug(layer_selector)}-epoch{epoch}.wts"
    write_dump(os.path.join(out_dir, filename), flat)
    return {"epoch": int(epoch), "file": filename, "count": int(flat.size)}


def write_manifest(out_dir: str, layer_selector: str, entries: list[dict]) -> str:
    """Write the layer manifest with epochs sorted ascending."""
    entries = sorted(entries, key=lambda e: e["epoch"])
    doc = {
        "layer": _slug(layer_selector),
        "epochs": [{"epoch": e["epoch"], "file": e["file"]} for e in entries],
    }
    path = os.path.join(out_dir, f"{_slug(layer_selector)}-manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def epoch_from_revision(revision: str, fallback: int) -> int:
    """Trailing integer of a revision name (``step3000`` -> 3000)."""
    match = re.search(r"(\d+)\s*$", revision)
    return int(match.group(1)) if match else fallback


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "layer"
