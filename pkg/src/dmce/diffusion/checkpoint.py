"""Binary checkpoint container for denoiser networks.

Layout (little-endian throughout)::

    8 bytes   magic b"DMCKPT01"
    u8        role tag (see ROLES)
    u32 x 11  s_init, s_max, ramp[0..5], n_rx, n_tx, t_max
    u32       total parameter count
    f32 ...   parameters, tensors in ``DenoiserNetwork.params`` order, each C-contiguous
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import Architecture, DenoiserNetwork

CHECKPOINT_MAGIC = b"DMCKPT01"
ROLES = {"dm": 0, "sure-denoiser": 1, "sure-dm": 2}
_ROLE_NAMES = {v: k for k, v in ROLES.items()}
_HEADER = struct.Struct("<8sB11II")


class CheckpointError(ValueError):
    pass


def encode_checkpoint(net: DenoiserNetwork, t_max: int, role: str = "dm") -> bytes:
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}; expected one of {sorted(ROLES)}")
    a = net.arch
    header = _HEADER.pack(CHECKPOINT_MAGIC, ROLES[role], a.s_init, a.s_max, *a.ramp,
                          net.n_rx, net.n_tx, t_max, net.n_params)
    body = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in net.params.values())
    return header + body


def decode_checkpoint(blob: bytes) -> tuple[DenoiserNetwork, int, str]:
    """Returns ``(net, t_max, role)``; the network is float32."""
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint truncated inside the header")
    fields = _HEADER.unpack_from(blob)
    magic, role_tag = fields[0], fields[1]
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if role_tag not in _ROLE_NAMES:
        raise CheckpointError(f"unknown role tag {role_tag}")
    s_init, s_max = fields[2], fields[3]
    ramp = fields[4:10]
    n_rx, n_tx, t_max, n_params = fields[10:14]
    net = DenoiserNetwork(Architecture(s_init=s_init, s_max=s_max, ramp=ramp), n_rx=n_rx, n_tx=n_tx)
    if n_params != net.n_params:
        raise CheckpointError(f"header declares {n_params} parameters, architecture has {net.n_params}")
    payload = blob[_HEADER.size:]
    if len(payload) != 4 * n_params:
        raise CheckpointError(f"payload holds {len(payload)} bytes, expected {4 * n_params}")
    flat = np.frombuffer(payload, dtype="<f4")
    offset = 0
    for k, v in net.params.items():
        net.params[k] = flat[offset:offset + v.size].reshape(v.shape).astype(np.float32)
        offset += v.size
    return net, t_max, _ROLE_NAMES[role_tag]


def save_checkpoint(path, net: DenoiserNetwork, t_max: int, role: str = "dm") -> None:
    blob = encode_checkpoint(net, t_max, role)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc


def load_checkpoint(path, expect_role: str | None = None) -> tuple[DenoiserNetwork, int, str]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    try:
        net, t_max, role = decode_checkpoint(blob)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if expect_role is not None and role != expect_role:
        raise CheckpointError(f"{path}: role is {role!r}, expected {expect_role!r}")
    return net, t_max, role
