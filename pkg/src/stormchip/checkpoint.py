"""Checkpoint files and annotation output.

Checkpoint layout: a UTF-8 text header followed by a raw parameter
blob.  The header starts with the magic line STRMCHP1, then a version
line, the input shape, a layer count, one line per layer, and an "end"
line.  The blob holds every parameter tensor as little-endian 32-bit
floats in layer order, weights before biases, row-major.  The header
alone is enough to rebuild the network, so load(save(net)) reproduces
both the architecture and (for float32 networks) the exact parameter
bits.
"""

import numpy as np

from .net import LayerSpec, Network

MAGIC = "STRMCHP1"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def _layer_line(spec):
    parts = [spec.kind]
    if spec.kind == "conv3x3":
        parts.append(f"out={spec.out_channels}")
        parts.append(f"pad={spec.padding}")
    elif spec.kind == "dense":
        parts.append(f"out={spec.out_units}")
    elif spec.kind == "dropout":
        parts.append(f"rate={spec.dropout_rate!r}")
    if spec.activation_kind:
        parts.append(f"act={spec.activation_kind}")
    if spec.alpha is not None:
        parts.append(f"alpha={spec.alpha!r}")
    return " ".join(parts)


def _parse_layer_line(line):
    tokens = line.split()
    kind = tokens[0]
    kwargs = {}
    for token in tokens[1:]:
        key, _, value = token.partition("=")
        if key == "out" and kind == "conv3x3":
            kwargs["out_channels"] = int(value)
        elif key == "out" and kind == "dense":
            kwargs["out_units"] = int(value)
        elif key == "pad":
            kwargs["padding"] = int(value)
        elif key == "rate":
            kwargs["dropout_rate"] = float(value)
        elif key == "act":
            kwargs["activation_kind"] = value
        elif key == "alpha":
            kwargs["alpha"] = float(value)
        else:
            raise CheckpointError(f"unknown layer attribute {token!r}")
    try:
        return LayerSpec(kind, **kwargs)
    except ValueError as exc:
        raise CheckpointError(f"bad layer line {line!r}: {exc}") from exc


def save_checkpoint(net, path):
    """Write the architecture header and float32 parameter blob."""
    lines = [MAGIC,
             f"version {VERSION}",
             "input " + " ".join(str(e) for e in net.input_shape),
             f"layers {len(net.layers)}"]
    lines.extend(_layer_line(spec) for spec in net.layers)
    lines.append("end")
    blob = b"".join(par[name].astype("<f4", copy=False).tobytes()
                    for par in net.params for name in ("w", "b") if name in par)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        fh.write(blob)


def load_checkpoint(path):
    """Rebuild the network described by a checkpoint file."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    marker = b"\nend\n"
    pos = data.find(marker)
    if pos < 0 or not data.startswith(MAGIC.encode()):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic or missing header)")
    header = data[:pos].decode()
    blob = data[pos + len(marker):]
    lines = header.splitlines()
    if lines[0] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {lines[0]!r}")
    if lines[1] != f"version {VERSION}":
        raise CheckpointError(f"{path}: unsupported {lines[1]!r}")
    if not lines[2].startswith("input ") or not lines[3].startswith("layers "):
        raise CheckpointError(f"{path}: malformed header")
    input_shape = tuple(int(tok) for tok in lines[2].split()[1:])
    n_layers = int(lines[3].split()[1])
    layer_lines = lines[4:]
    if len(layer_lines) != n_layers:
        raise CheckpointError(f"{path}: header lists {len(layer_lines)} layers, "
                              f"expected {n_layers}")
    specs = [_parse_layer_line(line) for line in layer_lines]
    net = Network(specs, input_shape, dtype=np.float32)
    expected = 4 * net.total_params()
    if len(blob) != expected:
        raise CheckpointError(f"{path}: parameter blob is {len(blob)} bytes, "
                              f"expected {expected}")
    offset = 0
    for par in net.params:
        for name in ("w", "b"):
            if name not in par:
                continue
            count = par[name].size
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            par[name][...] = values.reshape(par[name].shape)
            offset += 4 * count
    return net


def write_annotations(rows, scores, threshold, path):
    """CSV of id,lon,lat,probability,predicted_label for each building.

    A probability at or above the threshold annotates damaged.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if len(rows) != scores.size:
        raise ValueError(f"{len(rows)} rows vs {scores.size} scores")
    with open(path, "w", newline="") as fh:
        fh.write("id,lon,lat,probability,predicted_label\n")
        for row, score in zip(rows, scores):
            label = "damaged" if score >= threshold else "undamaged"
            fh.write(f"{row.id},{row.lon:.9f},{row.lat:.9f},{score:.6f},{label}\n")
