"""Binary checkpoint format for trained models.

Layout::

    b"FOURIERF1\\n"                 magic
    b"<\\n"                          endianness tag: '<' little, '>' big
    <header length, 8-byte ASCII decimal>\\n
    <JSON header>                   kind, dims, ranks, app_dim, decoder shape,
                                    render config, arrays [{name, shape, offset}]
    <raw float64 payload>           every array row-major, back to back

Offsets are in bytes from the start of the payload.
"""

import json
import sys

import numpy as np

from .field import CPField, GridDims, VMField
from .render import Decoder, RadianceModel, RenderConfig

MAGIC = b"FOURIERF1\n"
_FIELDS = {"cp": CPField, "vm": VMField}


def save_checkpoint(path, model, meta=None):
    params = model.params
    tag = "<" if sys.byteorder == "little" else ">"
    arrays, offset = [], 0
    for name, arr in params.items():
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "kind": model.field.kind,
        "dims": model.field.dims.to_dict(),
        "ranks": model.field.ranks,
        "app_dim": model.field.app_dim,
        "density_shift": model.field.density_shift,
        "use_viewdirs": model.decoder.use_viewdirs,
        "render": model.render_config.to_dict(),
        "arrays": arrays,
        "meta": meta or {},
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(tag.encode() + b"\n")
        fh.write(f"{len(blob):08d}\n".encode())
        fh.write(blob)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype=tag + "f8").tobytes())


def load_checkpoint(path):
    """Return ``(model, meta)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a FOURIERF1 checkpoint")
        tag = fh.readline().strip().decode()
        if tag not in ("<", ">"):
            raise ValueError(f"{path}: bad endianness tag {tag!r}")
        size = int(fh.readline())
        header = json.loads(fh.read(size))
        payload = fh.read()
    params = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(payload, dtype=tag + "f8", count=count, offset=entry["offset"])
        params[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    d = header["dims"]
    dims = GridDims(*d["shape"], tuple(d["aabb_min"]), tuple(d["aabb_max"]))
    field_params = {k: v for k, v in params.items() if not k.startswith("decoder.")}
    field = _FIELDS[header["kind"]](dims, field_params, header["app_dim"],
                                    header["density_shift"])
    decoder = Decoder(params["decoder.w1"], params["decoder.w2"], header["use_viewdirs"])
    r = header["render"]
    cfg = RenderConfig(r["near"], r["far"], r["n_samples"], tuple(r["background"]),
                       r["jitter"], r["early_stop"], r["weight_threshold"], r["chunk"])
    return RadianceModel(field, decoder, cfg), header["meta"]
