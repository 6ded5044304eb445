"""TrajectorySet and its on-disk container ("UPST").

Layout::

    b"UPST"  u32 version  u32 header_len  utf-8 JSON header
    little-endian float32 payload, [traj][time][channel][space...]
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"UPST"
VERSION = 1

FAMILIES = (
    "advection",
    "burgers",
    "diffusion_sorption",
    "reaction_diffusion_1d",
    "reaction_diffusion_2d",
    "shallow_water",
    "external",
)


class ContainerError(ValueError):
    pass


@dataclass
class TrajectorySet:
    family: str
    dim: int
    coefficients: dict[str, float]
    channels: list[str]
    data: np.ndarray  # [num_traj, T, C, n] or [num_traj, T, C, n, n], float32
    domain: list[tuple[float, float]]
    times: list[float]
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        expected = 3 + self.dim
        if self.data.ndim != expected:
            raise ValueError(f"{self.family}: data must have rank {expected}, got shape {self.data.shape}")
        if self.data.shape[2] != len(self.channels):
            raise ValueError("channel count does not match data")
        if len(self.times) != self.data.shape[1]:
            raise ValueError("times do not match the number of stored timesteps")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"{self.family}: data contains NaN/Inf")

    @property
    def num_traj(self) -> int:
        return self.data.shape[0]

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def n(self) -> int:
        return self.data.shape[-1]

    def header(self) -> dict:
        return {
            "family": self.family,
            "d": self.dim,
            "n": self.n,
            "T": self.T,
            "num_traj": self.num_traj,
            "channels": list(self.channels),
            "coefficients": dict(self.coefficients),
            "domain": [list(b) for b in self.domain],
            "times": list(self.times),
            "seed": self.seed,
            "extra": self.extra,
        }

    def subset(self, index) -> "TrajectorySet":
        return TrajectorySet(
            self.family, self.dim, dict(self.coefficients), list(self.channels),
            self.data[index], list(self.domain), list(self.times), self.seed, dict(self.extra),
        )


def write_trajectories(ts: TrajectorySet, path: str | os.PathLike) -> None:
    header = json.dumps(ts.header(), sort_keys=True).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        f.write(ts.data.astype("<f4").tobytes())
    os.replace(tmp, path)


def _read_prefix(f, path) -> dict:
    magic = f.read(4)
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r}, not a UPST trajectory file")
    raw = f.read(8)
    if len(raw) < 8:
        raise ContainerError(f"{path}: truncated before header length")
    version, hlen = struct.unpack("<II", raw)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    body = f.read(hlen)
    if len(body) < hlen:
        raise ContainerError(f"{path}: truncated header ({len(body)} of {hlen} bytes)")
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt JSON header: {exc}") from exc


def read_header(path: str | os.PathLike) -> dict:
    """Metadata only; the payload is not read."""
    with open(path, "rb") as f:
        return _read_prefix(f, path)


def read_trajectories(path: str | os.PathLike) -> TrajectorySet:
    with open(path, "rb") as f:
        hdr = _read_prefix(f, path)
        shape = (hdr["num_traj"], hdr["T"], len(hdr["channels"])) + (hdr["n"],) * hdr["d"]
        count = int(np.prod(shape))
        payload = f.read(count * 4)
        if len(payload) != count * 4:
            raise ContainerError(f"{path}: truncated payload ({len(payload)} of {count * 4} bytes)")
        if f.read(1):
            raise ContainerError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return TrajectorySet(
        family=hdr["family"],
        dim=hdr["d"],
        coefficients=hdr["coefficients"],
        channels=hdr["channels"],
        data=data,
        domain=[tuple(b) for b in hdr["domain"]],
        times=hdr["times"],
        seed=hdr.get("seed"),
        extra=hdr.get("extra", {}),
    )
