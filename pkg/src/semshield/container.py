"""Binary dump container for attention maps, regions, masks and latents.

One file per generation, readable from any language.  Byte layout
(all integers little-endian, unsigned):

====================  =======================================================
bytes                 content
====================  =======================================================
0..7                  magic ``b"SEMSHLD1"``
8..11                 u32 entry count
per entry:
  4 bytes             u32 name length ``n``
  n bytes             entry name, UTF-8 (e.g. ``cross/t0/block0``)
  4 bytes             dtype tag, ASCII: ``f32 ``, ``u8  `` or ``json``
  4 bytes             u32 ndim (0 for json)
  4*ndim bytes        u32 dimension sizes, C order
  8 bytes             u64 payload byte length
  payload             little-endian C-order array data, or UTF-8 JSON text
====================  =======================================================

Float arrays are stored as little-endian 32-bit floats; boolean masks as
single bytes (0/1).  Naming convention used by the pipeline dumps:

* ``cross/t{step}/{layer}`` and ``self/t{step}/{layer}`` — attention maps;
* ``region/{k}`` and ``anchor/{k}`` — per-concept masks (1-based k);
* ``mask/protection`` — the additive mask with blocked entries as 1;
* ``latent/x_noise``, ``latent/final`` — start noise and final latent;
* ``meta`` — JSON: prompt, grids per layer, token pieces, config snapshot.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import MissingRecord

MAGIC = b"SEMSHLD1"

_TAG_F32 = b"f32 "
_TAG_U8 = b"u8  "
_TAG_JSON = b"json"


def write_container(path: str | Path, entries: dict[str, np.ndarray | dict | list]):
    """Write named arrays/JSON documents to one container file."""
    blobs = []
    for name, value in entries.items():
        name_b = name.encode("utf-8")
        if isinstance(value, (dict, list)):
            payload = json.dumps(value, ensure_ascii=False).encode("utf-8")
            tag, shape = _TAG_JSON, ()
        else:
            arr = np.asarray(value)
            if arr.dtype == bool or arr.dtype == np.uint8:
                arr = arr.astype(np.uint8)
                tag = _TAG_U8
            else:
                arr = arr.astype("<f4")
                tag = _TAG_F32
            payload = np.ascontiguousarray(arr).tobytes()
            shape = arr.shape
        head = struct.pack("<I", len(name_b)) + name_b + tag
        head += struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
        head += struct.pack("<Q", len(payload))
        blobs.append(head + payload)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blobs)))
        for b in blobs:
            fh.write(b)


def read_container(path: str | Path) -> dict:
    """Read a container back into {name: ndarray | parsed-JSON}."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise MissingRecord(f"{path}: not a semshield container")
    count = struct.unpack_from("<I", data, 8)[0]
    off = 12
    out: dict = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        tag = data[off : off + 4]
        off += 4
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        (plen,) = struct.unpack_from("<Q", data, off)
        off += 8
        payload = data[off : off + plen]
        off += plen
        if tag == _TAG_JSON:
            out[name] = json.loads(payload.decode("utf-8"))
        elif tag == _TAG_U8:
            out[name] = np.frombuffer(payload, dtype=np.uint8).reshape(shape).copy()
        elif tag == _TAG_F32:
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        else:
            raise MissingRecord(f"{path}: unknown dtype tag {tag!r}")
    return out


def dump_generation(path: str | Path, result, config_snapshot: dict | None = None):
    """Serialize a :class:`~semshield.pipeline.GenerationResult`."""
    entries: dict = {}
    grids: dict[str, list[int]] = {}
    for label, records in (("p1", result.records_pass1), ("", result.records_pass2)):
        for rec in records:
            prefix = f"{label}cross" if label else "cross"
            sprefix = f"{label}self" if label else "self"
            entries[f"{prefix}/t{rec.step}/{rec.layer}"] = rec.cross.values
            entries[f"{sprefix}/t{rec.step}/{rec.layer}"] = rec.self_map.values
            grids[rec.layer] = list(rec.grid)
    if result.regions is not None:
        for i, (anchor, region) in enumerate(
            zip(result.regions.anchors, result.regions.regions), start=1
        ):
            entries[f"anchor/{i}"] = anchor
            entries[f"region/{i}"] = region
    if result.mask is not None:
        entries["mask/protection"] = (result.mask.values < 0).astype(np.uint8)
    entries["latent/x_noise"] = result.x_noise
    entries["latent/final"] = result.latent
    meta = {
        "prompt": result.parsed.raw,
        "token_count": result.parsed.token_count,
        "special_tokens": sorted(result.parsed.special_token_indices),
        "concepts": [
            {
                "index": c.index,
                "surface": c.concept.surface,
                "span": [c.concept.start, c.concept.end],
                "attributes": [
                    {"surface": a.surface, "span": [a.start, a.end]}
                    for a in c.attributes
                ],
            }
            for c in result.parsed.concepts
        ],
        "layer_grids": grids,
        "region_grid": list(result.regions.grid) if result.regions else None,
        "diagnostics": {
            k: v for k, v in result.diagnostics.items() if _jsonable(v)
        },
        "config": config_snapshot or {},
    }
    entries["meta"] = meta
    write_container(path, entries)


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False
