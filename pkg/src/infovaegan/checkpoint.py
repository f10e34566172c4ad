"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"IVGN"  u8 version
    u32 section count
    per section:
        u16 name length, name (utf-8)
        u8 ndim, ndim x u64 extents
        u64 payload length in bytes, payload (float64, little-endian)
    u64 checksum: 8-byte BLAKE2b digest of every preceding byte

Integers that do not fit a float64 exactly (the PCG64 state) are stored as
32-bit words.
"""

from __future__ import annotations

import hashlib
import struct
from collections.abc import Iterable
from pathlib import Path

import numpy as np

from .distributions import LAWS, PriorConfig
from .model import GENERATOR_INPUT_ORDER, NETWORKS, ModelBundle
from .nn import AdamState, DenseLayer, Mlp
from .training import TrainState

MAGIC = b"IVGN"
VERSION = 1
_ORDER_CODES = {"z": 0.0, "d": 1.0, "c": 2.0}


class CheckpointError(ValueError):
    pass


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def encode_sections(sections: Iterable[tuple[str, np.ndarray]]) -> bytes:
    sections = list(sections)
    out = bytearray(MAGIC)
    out += struct.pack("<BI", VERSION, len(sections))
    for name, arr in sections:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        payload = np.ascontiguousarray(arr).tobytes()
        out += struct.pack("<Q", len(payload)) + payload
    out += _checksum(bytes(out))
    return bytes(out)


def decode_sections(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < len(MAGIC) + 5 + 8 or data[:4] != MAGIC:
        raise CheckpointError("not an IVGN checkpoint")
    body, tail = data[:-8], data[-8:]
    if _checksum(body) != tail:
        raise CheckpointError("checkpoint checksum mismatch")
    version, count = struct.unpack_from("<BI", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 9
    sections: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            (length,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            arr = np.frombuffer(body[pos : pos + length], dtype="<f8").astype(np.float64)
            pos += length
            sections[name] = arr.reshape(shape)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated or malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointError("trailing bytes after last section")
    return sections


# ---------------------------------------------------------------------------


def _words(value: int, n: int) -> list[float]:
    return [float((value >> (32 * i)) & 0xFFFFFFFF) for i in range(n)]


def _unwords(words) -> int:
    return sum(int(w) << (32 * i) for i, w in enumerate(words))


def rng_to_array(rng: np.random.Generator) -> np.ndarray:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError(f"unsupported bit generator {st['bit_generator']}")
    return np.array(
        _words(st["state"]["state"], 4) + _words(st["state"]["inc"], 4)
        + [float(st["has_uint32"]), float(st["uinteger"])]
    )


def rng_from_array(arr: np.ndarray) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": _unwords(arr[:4]), "inc": _unwords(arr[4:8])},
        "has_uint32": int(arr[8]),
        "uinteger": int(arr[9]),
    }
    return np.random.Generator(bg)


def _net_sections(name: str, net: Mlp) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, layer in enumerate(net.layers):
        out.append((f"{name}/{i}/weights", layer.weights))
        out.append((f"{name}/{i}/bias", layer.bias))
    return out


def bundle_sections(bundle: ModelBundle) -> list[tuple[str, np.ndarray]]:
    p = bundle.prior
    out = [
        ("generator_input_order", np.array([_ORDER_CODES[k] for k in GENERATOR_INPUT_ORDER])),
        ("prior", np.array([p.z_dim, p.c_dim, p.K, LAWS.index(p.continuous_law), p.tau], dtype=float)),
    ]
    for name in NETWORKS:
        out += _net_sections(name, bundle.network(name))
    return out


def state_sections(state: TrainState) -> list[tuple[str, np.ndarray]]:
    out = bundle_sections(state.bundle)
    for key in sorted(state.optimizers):
        opt = state.optimizers[key]
        out.append((f"optim/{key}/hyper", np.array([opt.t, opt.lr, opt.beta1, opt.beta2, opt.eps])))
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            out.append((f"optim/{key}/{i}/m", m))
            out.append((f"optim/{key}/{i}/v", v))
    out.append(("rng", rng_to_array(state.rng)))
    out.append(("counters", np.array(
        [state.stage_one_done, state.stage_two_done, state.records_done], dtype=float)))
    return out


def _load_net(sections: dict, name: str, head: str, splits=()) -> Mlp:
    layers = []
    i = 0
    while f"{name}/{i}/weights" in sections:
        layers.append(DenseLayer(sections[f"{name}/{i}/weights"], sections[f"{name}/{i}/bias"]))
        i += 1
    if not layers:
        raise CheckpointError(f"checkpoint has no {name} network")
    return Mlp(layers, head, tuple(splits))


def bundle_from_sections(sections: dict) -> ModelBundle:
    order = tuple(sections["generator_input_order"])
    if order != tuple(_ORDER_CODES[k] for k in GENERATOR_INPUT_ORDER):
        raise CheckpointError(f"unsupported generator input order {order}")
    z_dim, c_dim, K, law, tau = sections["prior"]
    prior = PriorConfig(int(z_dim), int(c_dim), int(K), LAWS[int(law)], float(tau))
    return ModelBundle(
        generator=_load_net(sections, "generator", "sigmoid"),
        critic=_load_net(sections, "critic", "none"),
        encoder_u=_load_net(sections, "encoder_u", "split", (prior.K, prior.c_dim, prior.c_dim)),
        encoder_z=_load_net(sections, "encoder_z", "split", (prior.z_dim, prior.z_dim)),
        prior=prior,
    )


def state_from_sections(sections: dict) -> TrainState:
    bundle = bundle_from_sections(sections)
    optimizers = {}
    keys = sorted({name.split("/")[1] for name in sections if name.startswith("optim/")})
    for key in keys:
        t, lr, b1, b2, eps = sections[f"optim/{key}/hyper"]
        m, v = [], []
        i = 0
        while f"optim/{key}/{i}/m" in sections:
            m.append(sections[f"optim/{key}/{i}/m"])
            v.append(sections[f"optim/{key}/{i}/v"])
            i += 1
        optimizers[key] = AdamState(float(lr), float(b1), float(b2), float(eps), m, v, int(t))
    s1, s2, rec = (int(v) for v in sections["counters"])
    return TrainState(bundle, optimizers, rng_from_array(sections["rng"]), s1, s2, rec)


def save_state(state: TrainState, path: Path) -> bytes:
    data = encode_sections(state_sections(state))
    Path(path).write_bytes(data)
    return data


def load_state(path: Path) -> TrainState:
    return state_from_sections(decode_sections(Path(path).read_bytes()))


def load_bundle(path: Path) -> ModelBundle:
    return bundle_from_sections(decode_sections(Path(path).read_bytes()))
