"""Weighted random linear encoding of local data into parity rows.

Only :class:`EncodedShard` objects ever leave a device. The generator matrix,
the weights and the systematic index set stay in :class:`EncoderPrivateState`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .delay import DeviceProfile, as_generator, return_probability

GENERATOR_FAMILIES = ("gaussian", "bernoulli")

_HEADER = struct.Struct("<qqq")


@dataclass
class LocalDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]} entries"
            )

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


@dataclass
class EncoderPrivateState:
    generator: np.ndarray
    weights: np.ndarray
    systematic_set: np.ndarray


@dataclass
class EncodedShard:
    parity_features: np.ndarray
    parity_labels: np.ndarray
    device_id: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.parity_features.shape


@dataclass
class CompositeParity:
    X_tilde: np.ndarray
    y_tilde: np.ndarray
    contributor_count: int

    @property
    def c(self) -> int:
        return self.X_tilde.shape[0]


def choose_systematic_set(ell: int, load: int, rng=None) -> np.ndarray:
    """Uniformly random, sorted subset of ``load`` row indices out of ``ell``."""
    if not 0 <= load <= ell:
        raise ValueError(f"load must lie in [0, {ell}], got {load}")
    rng = as_generator(rng)
    return np.sort(rng.choice(ell, size=load, replace=False))


def build_weights(
    profile: DeviceProfile,
    assigned_load: int,
    t_star: float,
    systematic_set,
    n_points: int | None = None,
) -> np.ndarray:
    """Diagonal of the weight matrix.

    Systematic points get ``sqrt(Pr{T >= t_star})`` evaluated at the assigned
    load; punctured points get weight one.
    """
    n_points = profile.ell if n_points is None else n_points
    idx = np.asarray(systematic_set, dtype=int)
    if assigned_load == 0 and idx.size:
        raise ValueError("a device with zero load cannot have systematic points")
    if idx.size != assigned_load:
        raise ValueError(
            f"systematic set has {idx.size} indices but load is {assigned_load}"
        )
    w = np.ones(n_points)
    if assigned_load > 0:
        miss = 1.0 - return_probability(profile, assigned_load, t_star)
        w[idx] = np.sqrt(max(miss, 0.0))
    return w


def draw_generator(c: int, ell: int, family: str = "gaussian", rng=None) -> np.ndarray:
    """Random ``c x ell`` generator with zero-mean, unit-variance entries.

    ``"bernoulli"`` draws fair coin flips and maps them to +-1.
    """
    rng = as_generator(rng)
    if family == "gaussian":
        return rng.standard_normal((c, ell))
    if family == "bernoulli":
        return 2.0 * rng.integers(0, 2, size=(c, ell)) - 1.0
    raise ValueError(f"unknown generator family {family!r}; use one of {GENERATOR_FAMILIES}")


def encode_with_generator(
    data: LocalDataset, weights, generator: np.ndarray, device_id: int = 0
) -> EncodedShard:
    """Apply an explicit generator to the weighted local data."""
    weights = np.asarray(weights, dtype=float)
    generator = np.asarray(generator, dtype=float)
    if generator.ndim != 2 or generator.shape[1] != len(data):
        raise ValueError(
            f"generator must have {len(data)} columns, got shape {generator.shape}"
        )
    if weights.shape != (len(data),):
        raise ValueError(f"expected {len(data)} weights, got shape {weights.shape}")
    gw = generator * weights
    return EncodedShard(gw @ data.X, gw @ data.y, device_id)


def encode_local(
    data: LocalDataset,
    weights,
    c: int,
    generator_family: str | Callable = "gaussian",
    rng=None,
    systematic_set=None,
    device_id: int = 0,
) -> tuple[EncodedShard, EncoderPrivateState]:
    """Encode one device's data into ``c`` parity rows.

    Args:
        data: Local features and labels.
        weights: Diagonal of the weight matrix, one entry per local point.
        c: Number of parity rows. Zero gives an empty shard.
        generator_family: ``"gaussian"``, ``"bernoulli"`` or a callable
            ``(c, ell, rng) -> ndarray``.
        rng: Random stream for the generator.
        systematic_set: Recorded in the private state only.
        device_id: Written into the shard header.

    Returns:
        The shard to upload and the state that stays on the device.
    """
    if len(data) == 0:
        raise ValueError("cannot encode an empty dataset")
    if c < 0:
        raise ValueError(f"c must be nonnegative, got {c}")
    rng = as_generator(rng)
    if callable(generator_family):
        G = np.asarray(generator_family(c, len(data), rng), dtype=float)
    else:
        G = draw_generator(c, len(data), generator_family, rng)
    shard = encode_with_generator(data, weights, G, device_id)
    sys_set = np.array([], dtype=int) if systematic_set is None else np.asarray(systematic_set)
    return shard, EncoderPrivateState(G, np.asarray(weights, dtype=float), sys_set)


def accumulate_parity(shards: Sequence[EncodedShard]) -> CompositeParity:
    """Sum parity shards entrywise into the server's composite parity."""
    if not shards:
        raise ValueError("no shards to accumulate")
    shape = shards[0].parity_features.shape
    X = np.zeros(shape)
    y = np.zeros(shape[0])
    for s in shards:
        if s.parity_features.shape != shape or s.parity_labels.shape != (shape[0],):
            raise ValueError(
                f"shard from device {s.device_id} has shape "
                f"{s.parity_features.shape}, expected {shape}"
            )
        X += s.parity_features
        y += s.parity_labels
    return CompositeParity(X, y, len(shards))


def serialize_shard(shard: EncodedShard) -> bytes:
    """Little-endian header ``(c, d, device_id)`` then float64 rows, then labels."""
    if not isinstance(shard, EncodedShard):
        raise TypeError(f"only EncodedShard may leave a device, got {type(shard).__name__}")
    c, d = shard.parity_features.shape
    features = np.ascontiguousarray(shard.parity_features, dtype="<f8")
    labels = np.ascontiguousarray(shard.parity_labels, dtype="<f8")
    return _HEADER.pack(c, d, shard.device_id) + features.tobytes() + labels.tobytes()


def deserialize_shard(payload: bytes) -> EncodedShard:
    c, d, device_id = _HEADER.unpack_from(payload)
    expected = _HEADER.size + 8 * c * (d + 1)
    if len(payload) != expected:
        raise ValueError(f"payload has {len(payload)} bytes, expected {expected}")
    body = np.frombuffer(payload, dtype="<f8", offset=_HEADER.size)
    X = body[: c * d].reshape(c, d).astype(float)
    y = body[c * d :].astype(float)
    return EncodedShard(X, y, int(device_id))
