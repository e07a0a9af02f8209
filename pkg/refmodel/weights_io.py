"""
Binary artifact codec shared by weight and subspace files.

Layout: b"RSUB" | version u8 | header length u32 | UTF-8 JSON header |
section count u32 | per section: name length u16, name, ndim u8, dims u32×ndim,
row-major little-endian float32 data | 8-byte BLAKE2b checksum of everything before it.
"""
import hashlib
import json
import logging
import struct
from collections import OrderedDict

import numpy as np

from errors import WeightFormatError, WeightShapeError, WeightTruncatedError
from file_helpers import atomic_write_bytes, read_bytes
from refmodel.transformer import ModelConfig, ReferenceModel, param_shapes

logger = logging.getLogger(__name__)

MAGIC = b"RSUB"
FORMAT_VERSION = 1
CHECKSUM_BYTES = 8


def _checksum(payload):
    return hashlib.blake2b(payload, digest_size=CHECKSUM_BYTES).digest()


def encode_sections(header, sections):
    parts = [MAGIC, struct.pack("<B", FORMAT_VERSION)]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(header_bytes)))
    parts.append(header_bytes)
    parts.append(struct.pack("<I", len(sections)))
    for name, array in sections.items():
        array = np.ascontiguousarray(array, dtype="<f4")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.tobytes(order="C"))
    payload = b"".join(parts)
    return payload + _checksum(payload)


class _Reader:
    def __init__(self, payload, path):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, count):
        end = self.offset + count
        if end > len(self.payload):
            raise WeightTruncatedError(f"{self.path} ends inside a record", path=str(self.path),
                                       offset=self.offset, size=len(self.payload))
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_sections(payload, path="<bytes>"):
    """
    :return: (header dict, OrderedDict name → float32 array)
    :raises WeightFormatError: bad magic, unknown version, malformed header or checksum mismatch.
    :raises WeightTruncatedError: the payload stops before the declared content.
    """
    if len(payload) < len(MAGIC) + 1:
        raise WeightTruncatedError(f"{path} is too short to be an artifact", path=str(path))
    if payload[:len(MAGIC)] != MAGIC:
        raise WeightFormatError(f"{path} does not start with the RSUB magic", path=str(path))
    reader = _Reader(payload, path)
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<B")
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"{path} has format version {version}, expected {FORMAT_VERSION}",
                                path=str(path), version=version)
    (header_length,) = reader.unpack("<I")
    try:
        header = json.loads(reader.take(header_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFormatError(f"{path} has a malformed header: {e}", path=str(path))

    sections = OrderedDict()
    (count,) = reader.unpack("<I")
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8", errors="replace")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
        sections[name] = data

    stored = reader.take(CHECKSUM_BYTES)
    if reader.offset != len(payload):
        raise WeightFormatError(f"{path} has trailing bytes after the checksum", path=str(path))
    if stored != _checksum(payload[:-CHECKSUM_BYTES]):
        raise WeightFormatError(f"{path} failed its checksum", path=str(path))
    return header, sections


def write_artifact(path, header, sections):
    atomic_write_bytes(path, encode_sections(header, sections))


def read_artifact(path):
    return decode_sections(read_bytes(path), path)


def save_weights(model, path):
    header = {"kind": "model", "config": model.config.to_dict()}
    write_artifact(path, header, model.arrays())
    logger.info(f"📂 Weights saved to {path}")


def load_weights(path, expected_config=None):
    """
    :param expected_config: when given, the stored config must match it exactly.
    :raises WeightShapeError: config or parameter shapes disagree.
    """
    header, sections = read_artifact(path)
    if header.get("kind") != "model" or "config" not in header:
        raise WeightFormatError(f"{path} is not a model weight file", path=str(path), kind=header.get("kind"))
    stored_config = ModelConfig.from_dict(header["config"])
    if expected_config is not None and stored_config != expected_config:
        raise WeightShapeError(f"{path} holds a model for a different config",
                               path=str(path), stored=json.dumps(stored_config.to_dict()),
                               expected=json.dumps(expected_config.to_dict()))
    expected_shapes = param_shapes(stored_config)
    if list(sections) != list(expected_shapes):
        raise WeightShapeError(f"{path} parameter sections do not match its config", path=str(path))
    for name, shape in expected_shapes.items():
        if tuple(sections[name].shape) != shape:
            raise WeightShapeError(f"{path}: parameter {name} has shape {sections[name].shape}, expected {shape}",
                                   path=str(path), parameter=name)
    logger.debug(f"📂 Weights loaded from {path}")
    return ReferenceModel(stored_config, sections)
