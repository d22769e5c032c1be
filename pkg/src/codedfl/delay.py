"""Round-trip delay model for a federated client.

A device that is assigned ``load`` points spends ``load * a`` seconds of
deterministic compute, an exponential amount of stochastic compute with rate
``mu / load``, and ``N * tau`` seconds on each of the download and upload legs,
where ``N`` is geometric on ``{1, 2, ...}`` with success probability ``1 - p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tail mass of the retransmission count below which the CDF sum is truncated.
_TAIL_CUTOFF = 1e-17


def as_generator(rng=None) -> np.random.Generator:
    """Coerce ``None``, an int seed or a Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class DeviceProfile:
    """Compute and link parameters of one device.

    Attributes:
        device_id: Identifier of the device.
        a: Deterministic compute time per point (seconds).
        mu: Memory access rate (1/seconds); stochastic compute has rate mu/load.
        tau: Time to move one packet across the link (seconds).
        p: Packet erasure probability.
        ell: Number of local points held by the device.
        is_server: True for the server pseudo-device, whose load is capped by
            the parity budget instead of ``ell``.
    """

    device_id: int
    a: float
    mu: float
    tau: float = 0.0
    p: float = 0.0
    ell: int = 0
    is_server: bool = False

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.tau >= 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")
        if not 0 <= self.p < 1:
            raise ValueError(f"p must lie in [0, 1), got {self.p}")
        if self.ell < 0:
            raise ValueError(f"ell must be nonnegative, got {self.ell}")

    def gamma(self, load: int) -> float:
        """Rate of the stochastic compute component at ``load`` points."""
        return self.mu / load

    def to_dict(self) -> dict:
        return {
            "device_id": int(self.device_id),
            "a": float(self.a),
            "mu": float(self.mu),
            "tau": float(self.tau),
            "p": float(self.p),
            "ell": int(self.ell),
            "is_server": bool(self.is_server),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        return cls(**d)


@dataclass(frozen=True)
class DelaySample:
    """One realisation of a device's round-trip delay."""

    compute_fixed: float
    compute_stochastic: float
    n_down: int
    n_up: int
    total: float


def _check_load(profile: DeviceProfile, load: int) -> None:
    if load < 0:
        raise ValueError(f"load must be nonnegative, got {load}")
    if not profile.is_server and load > profile.ell:
        raise ValueError(
            f"load {load} exceeds the {profile.ell} points held by device "
            f"{profile.device_id}"
        )


def sample_delay(profile: DeviceProfile, load: int, rng=None) -> DelaySample:
    """Draw one round-trip delay for ``profile`` processing ``load`` points."""
    _check_load(profile, load)
    rng = as_generator(rng)
    if load > 0:
        fixed = load * profile.a
        stochastic = float(rng.exponential(load / profile.mu))
    else:
        fixed = stochastic = 0.0
    n_down = int(rng.geometric(1.0 - profile.p))
    n_up = int(rng.geometric(1.0 - profile.p))
    total = fixed + stochastic + (n_down + n_up) * profile.tau
    return DelaySample(fixed, stochastic, n_down, n_up, total)


def sample_total_delays(
    profile: DeviceProfile, load: int, size: int, rng=None
) -> np.ndarray:
    """Vectorised draw of ``size`` independent total delays."""
    _check_load(profile, load)
    rng = as_generator(rng)
    if load > 0:
        compute = load * profile.a + rng.exponential(load / profile.mu, size)
    else:
        compute = np.zeros(size)
    n = rng.geometric(1.0 - profile.p, size) + rng.geometric(1.0 - profile.p, size)
    return compute + n * profile.tau


def expected_delay(profile: DeviceProfile, load: int) -> float:
    """Mean round-trip delay: ``load*(a + 1/mu) + 2*tau/(1-p)``."""
    if load < 0:
        raise ValueError(f"load must be nonnegative, got {load}")
    return load * (profile.a + 1.0 / profile.mu) + 2.0 * profile.tau / (1.0 - profile.p)


def _retransmission_pmf(p: float, k_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Support ``k = 2..k_max`` and pmf of the sum of two iid geometrics."""
    k = np.arange(2, k_max + 1)
    return k, (k - 1) * p ** (k - 2) * (1.0 - p) ** 2


def _tail_cutoff(p: float) -> int:
    # Pr{N_down + N_up > k} = p^k + k (1-p) p^(k-1)
    if p == 0:
        return 2
    k = 2
    while p**k + k * (1 - p) * p ** (k - 1) > _TAIL_CUTOFF:
        k *= 2
    lo, hi = k // 2, k
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if p**mid + mid * (1 - p) * p ** (mid - 1) > _TAIL_CUTOFF:
            lo = mid
        else:
            hi = mid
    return hi


def _compute_cdf(loads: np.ndarray, a: float, mu: float, slack: np.ndarray) -> np.ndarray:
    """Pr{loads*a + Exp(mu/loads) <= slack}, broadcasting ``loads`` over ``slack``."""
    loads = np.asarray(loads, dtype=float)
    x = slack - loads * a
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(loads > 0, mu / np.where(loads > 0, loads, 1.0), np.inf)
        cdf = np.where(x > 0, -np.expm1(-rate * np.maximum(x, 0.0)), 0.0)
    return np.where((loads == 0) & (x >= 0), 1.0, cdf)


def return_probabilities(profile: DeviceProfile, loads, t: float) -> np.ndarray:
    """Vectorised ``Pr{T <= t}`` over an array of loads."""
    loads = np.atleast_1d(np.asarray(loads, dtype=float))
    if t < 0:
        return np.zeros(loads.shape)
    if np.isinf(t):
        return np.ones(loads.shape)
    if profile.tau == 0:
        return _compute_cdf(loads, profile.a, profile.mu, np.float64(t))
    cutoff = _tail_cutoff(profile.p)
    with np.errstate(over="ignore"):
        ratio = t / profile.tau
    k_max = cutoff if ratio >= cutoff else int(np.floor(ratio))
    if k_max < 2:
        return np.zeros(loads.shape)
    k, pmf = _retransmission_pmf(profile.p, k_max)
    slack = t - k * profile.tau
    cdf = _compute_cdf(loads[:, None], profile.a, profile.mu, slack[None, :])
    return np.clip(cdf @ pmf, 0.0, 1.0)


def return_probability(profile: DeviceProfile, load: int, t: float) -> float:
    """Probability that a device with ``load`` points returns within ``t``.

    The compute delay is convolved with the negative-binomial count of
    download plus upload transmissions.
    """
    if load < 0:
        raise ValueError(f"load must be nonnegative, got {load}")
    return float(return_probabilities(profile, [load], t)[0])
