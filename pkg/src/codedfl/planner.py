"""Load and redundancy planning from the statistical delay model.

Each device (and the server, treated as one extra device holding parity
rows) picks the load that maximises its expected return by a deadline. The
deadline is the smallest one at which the summed expected return covers all
raw points.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .delay import DeviceProfile, return_probabilities

logger = logging.getLogger(__name__)

# Relative shortfall tolerated when the aggregate return only reaches m
# asymptotically (for example a parity budget of zero).
RETURN_RTOL = 1e-9


class PlanningError(RuntimeError):
    """Base class for planner failures."""


class PlanInfeasibleError(PlanningError):
    """The caps leave the expected aggregate return short of m for every t."""

    def __init__(self, message: str, binding: str):
        super().__init__(message)
        self.binding = binding


class NonconvergentSearchError(PlanningError):
    """Deadline bracketing failed."""


@dataclass
class LoadPlan:
    """Result of the deadline search.

    ``per_device_load`` lists the systematic load of each client in profile
    order, ``server_parity_count`` is the number of parity rows ``c``.
    """

    per_device_load: list[int]
    server_parity_count: int
    epoch_deadline: float
    tolerance: float
    parity_cap: int
    expected_aggregate_return: float
    redundancy_delta: float
    total_points: int
    device_ids: list[int] = field(default_factory=list)

    @property
    def c(self) -> int:
        return self.server_parity_count

    @property
    def t_star(self) -> float:
        return self.epoch_deadline

    @property
    def overshoot(self) -> float:
        return self.expected_aggregate_return - self.total_points

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_device_load"] = [int(v) for v in self.per_device_load]
        d["device_ids"] = [int(v) for v in self.device_ids]
        if not np.isfinite(self.epoch_deadline):
            d["epoch_deadline"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LoadPlan":
        d = dict(d)
        if d.get("epoch_deadline") is None:
            d["epoch_deadline"] = float("inf")
        return cls(**d)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "LoadPlan":
        return cls.from_dict(json.loads(text))


@dataclass
class ReturnCurve:
    device_id: int
    deadline: float
    load_values: np.ndarray
    expected_returns: np.ndarray


def expected_return(profile: DeviceProfile, load: int, t: float) -> float:
    """Expected number of points whose gradient arrives by ``t``."""
    if load == 0:
        return 0.0
    return float(load * return_probabilities(profile, [load], t)[0])


def return_curve(profile: DeviceProfile, t: float, cap: int) -> ReturnCurve:
    """Expected return over loads ``0..cap`` at deadline ``t``."""
    loads = np.arange(cap + 1)
    returns = loads * return_probabilities(profile, loads, t)
    return ReturnCurve(profile.device_id, t, loads, returns)


def _best_load(profile: DeviceProfile, t: float, cap: int) -> tuple[int, float]:
    curve = return_curve(profile, t, cap)
    # argmax returns the first maximiser, i.e. the smallest load on ties
    best = int(np.argmax(curve.expected_returns))
    return best, float(curve.expected_returns[best])


def optimal_device_load(profile: DeviceProfile, t: float, cap: int) -> int:
    """Load in ``0..cap`` that maximises the expected return by ``t``."""
    if cap < 0:
        raise ValueError(f"cap must be nonnegative, got {cap}")
    return _best_load(profile, t, cap)[0]


def _device_cap(profile: DeviceProfile) -> int:
    return int(profile.ell)


def _aggregate(profiles, server, server_cap, fixed_c, t):
    loads = []
    total = 0.0
    for prof in profiles:
        load, ret = _best_load(prof, t, _device_cap(prof))
        loads.append(load)
        total += ret
    if fixed_c is None:
        c, ret = _best_load(server, t, server_cap)
    else:
        c, ret = fixed_c, expected_return(server, fixed_c, t)
    return total + ret, loads, c


def _search(
    profiles: Sequence[DeviceProfile],
    server: DeviceProfile,
    server_cap: int,
    fixed_c: int | None,
    eps: float,
    t_resolution: float,
    max_doublings: int,
) -> LoadPlan:
    if not profiles or sum(p.ell for p in profiles) == 0:
        raise ValueError("at least one device must hold data")
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    m = int(sum(p.ell for p in profiles))
    target = m * (1.0 - RETURN_RTOL)

    reachable = m + (server_cap if fixed_c is None else fixed_c)
    if reachable < target:
        raise PlanInfeasibleError(
            f"total caps {reachable} < m = {m}", binding="parity_cap"
        )

    hi = max(t_resolution, 1.0)
    agg_hi = _aggregate(profiles, server, server_cap, fixed_c, hi)
    for _ in range(max_doublings):
        if agg_hi[0] >= target:
            break
        hi *= 2.0
        agg_hi = _aggregate(profiles, server, server_cap, fixed_c, hi)
    else:
        raise NonconvergentSearchError(
            f"expected return {agg_hi[0]:.6g} < m = {m} at t = {hi:.6g}"
        )

    lo, prev = 0.0, -np.inf
    while hi - lo > t_resolution and agg_hi[0] > m + eps:
        mid = 0.5 * (lo + hi)
        agg_mid = _aggregate(profiles, server, server_cap, fixed_c, mid)
        if agg_mid[0] < prev - 1e-9 * m:
            raise NonconvergentSearchError(
                "aggregate expected return is not monotone in the deadline"
            )
        if agg_mid[0] >= target:
            hi, agg_hi = mid, agg_mid
        else:
            lo, prev = mid, agg_mid[0]

    total, loads, c = agg_hi
    if total > m + eps:
        logger.info("expected return overshoots m + eps by %.3g", total - m - eps)
    return LoadPlan(
        per_device_load=loads,
        server_parity_count=int(c),
        epoch_deadline=float(hi),
        tolerance=float(eps),
        parity_cap=int(server_cap if fixed_c is None else fixed_c),
        expected_aggregate_return=float(total),
        redundancy_delta=c / m,
        total_points=m,
        device_ids=[int(p.device_id) for p in profiles],
    )


def plan(
    profiles: Sequence[DeviceProfile],
    server_profile: DeviceProfile,
    c_up: int | None = None,
    eps: float = 1.0,
    t_resolution: float = 1e-3,
    max_doublings: int = 64,
) -> LoadPlan:
    """Smallest deadline whose expected aggregate return covers every point.

    Args:
        profiles: Client devices.
        server_profile: Server pseudo-device computing on parity rows.
        c_up: Parity budget; defaults to the total number of raw points.
        eps: Accepted overshoot of the expected return above m.
        t_resolution: Bisection stops once the bracket is narrower than this.
        max_doublings: Bound on the upper-bracket doubling.

    Returns:
        The plan at the deadline found by bisection.
    """
    m = int(sum(p.ell for p in profiles))
    if c_up is None:
        c_up = m
    if c_up < 0:
        raise PlanInfeasibleError(f"parity cap {c_up} is negative", binding="parity_cap")
    return _search(profiles, server_profile, int(c_up), None, eps, t_resolution, max_doublings)


def plan_with_fixed_delta(
    profiles: Sequence[DeviceProfile],
    server_profile: DeviceProfile,
    delta: float,
    eps: float = 1.0,
    t_resolution: float = 1e-3,
    max_doublings: int = 64,
) -> LoadPlan:
    """Like :func:`plan` but with the server processing ``round(delta*m)`` rows."""
    if not 0 <= delta < 1:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    m = int(sum(p.ell for p in profiles))
    c = int(round(delta * m))
    return _search(profiles, server_profile, c, c, eps, t_resolution, max_doublings)
