"""Binary model files.

Layout, all integers little-endian::

    b"SZAD1"                  magic
    uint32                    manifest length in bytes
    manifest                  UTF-8 JSON: format version, kind, metadata,
                              and the name and shape of every block
    float64 blocks            row-major, in manifest order
    uint32                    CRC32 of everything above

The manifest carries everything that is not an array (configs, subject
ids, training history) so one file restores a model completely.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .adaptation import AdaptationConfig, AdaptationModel, EpochRecord
from .errors import CorruptModelError
from .features import Normalizer
from .gbtree import GbtModel, Tree
from .nn import DenseNet, Layer

MAGIC = b"SZAD1"
FORMAT_VERSION = 1


def _pack(kind, meta, blocks):
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "blocks": [{"name": name, "shape": list(a.shape)} for name, a in blocks],
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = [MAGIC, struct.pack("<I", len(head)), head]
    for _, a in blocks:
        body.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    payload = b"".join(body)
    return payload + struct.pack("<I", zlib.crc32(payload))


def _unpack(data, path):
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptModelError(f"{path}: bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(data) < len(MAGIC) + 8:
        raise CorruptModelError(f"{path}: CRC mismatch (file truncated)")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise CorruptModelError(f"{path}: CRC mismatch")
    (n_head,) = struct.unpack("<I", payload[5:9])
    try:
        manifest = json.loads(payload[9:9 + n_head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelError(f"{path}: unreadable manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CorruptModelError(
            f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
    offset = 9 + n_head
    blocks = {}
    for spec in manifest["blocks"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > len(payload):
            raise CorruptModelError(f"{path}: block {spec['name']} runs past the end")
        blocks[spec["name"]] = np.frombuffer(payload, dtype="<f8", count=n // 8,
                                             offset=offset).reshape(shape).astype(np.float64)
        offset += n
    if offset != len(payload):
        raise CorruptModelError(f"{path}: {len(payload) - offset} unexpected trailing bytes")
    return manifest["kind"], manifest["meta"], blocks


def _net_blocks(prefix, net):
    out = []
    for k, layer in enumerate(net.layers):
        out.append((f"{prefix}.{k}.W", layer.W))
        out.append((f"{prefix}.{k}.b", layer.b))
    return out


def _net_from(prefix, acts, role, blocks):
    layers = [Layer(blocks[f"{prefix}.{k}.W"], blocks[f"{prefix}.{k}.b"], a)
              for k, a in enumerate(acts)]
    return DenseNet(layers, role)


def _adaptation_payload(m: AdaptationModel):
    blocks = []
    for i in range(len(m.subjects)):
        blocks += _net_blocks(f"enc{i}", m.encoders[i])
        blocks += _net_blocks(f"dec{i}", m.decoders[i])
        blocks += [(f"norm{i}.mean", m.normalizers[i].mean),
                   (f"norm{i}.std", m.normalizers[i].std)]
    blocks += _net_blocks("disc", m.discriminator)
    cfg = asdict(m.config)
    cfg["disc_hidden"] = list(m.config.disc_hidden)
    meta = {
        "subjects": list(m.subjects),
        "config": cfg,
        "activations": {
            "encoder": m.encoders[0].activations,
            "decoder": m.decoders[0].activations,
            "discriminator": m.discriminator.activations,
        },
        "history": [asdict(r) for r in m.history],
        "initial": asdict(m.initial) if m.initial is not None else None,
    }
    return _pack("adaptation", meta, blocks)


def _gbt_payload(m: GbtModel):
    blocks = [(f"tree{k}", t.as_array()) for k, t in enumerate(m.trees)]
    blocks.append(("train_loss", np.asarray(m.train_loss, dtype=np.float64)))
    meta = {"base_score": m.base_score, "learning_rate": m.learning_rate,
            "n_features": m.n_features, "n_trees": len(m.trees)}
    return _pack("gbt", meta, blocks)


def model_bytes(model) -> bytes:
    if isinstance(model, AdaptationModel):
        return _adaptation_payload(model)
    if isinstance(model, GbtModel):
        return _gbt_payload(model)
    raise TypeError(f"cannot serialise {type(model).__name__}")


def save_model(path, model):
    Path(path).write_bytes(model_bytes(model))


def load_model(path):
    """Read an adaptation or boosted-tree model written by :func:`save_model`."""
    data = Path(path).read_bytes()
    kind, meta, blocks = _unpack(data, path)
    if kind == "gbt":
        trees = [Tree.from_array(blocks[f"tree{k}"]) for k in range(meta["n_trees"])]
        return GbtModel(base_score=float(meta["base_score"]),
                        learning_rate=float(meta["learning_rate"]),
                        n_features=int(meta["n_features"]), trees=trees,
                        train_loss=blocks["train_loss"].tolist())
    if kind != "adaptation":
        raise CorruptModelError(f"{path}: unknown model kind {kind!r}")
    acts = meta["activations"]
    subjects = meta["subjects"]
    n = len(subjects)
    model = AdaptationModel(
        subjects=subjects,
        encoders=[_net_from(f"enc{i}", acts["encoder"], "encoder", blocks) for i in range(n)],
        decoders=[_net_from(f"dec{i}", acts["decoder"], "decoder", blocks) for i in range(n)],
        discriminator=_net_from("disc", acts["discriminator"], "discriminator", blocks),
        normalizers=[Normalizer(blocks[f"norm{i}.mean"], blocks[f"norm{i}.std"])
                     for i in range(n)],
        config=AdaptationConfig(**meta["config"]),
        history=[EpochRecord(**r) for r in meta["history"]],
        initial=EpochRecord(**meta["initial"]) if meta["initial"] else None,
    )
    return model
