"""Epoch-synchronous simulation of coded and uncoded federated learning.

Time is simulated, never measured: every device delay is drawn from the
delay model and the server clock advances by the epoch duration. Uncoded
epochs last until the slowest device returns; coded epochs last exactly the
planned deadline.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .delay import DeviceProfile, as_generator, sample_delay
from .encoder import (
    CompositeParity,
    LocalDataset,
    accumulate_parity,
    build_weights,
    choose_systematic_set,
    encode_local,
)
from .planner import LoadPlan
from .trainer import (
    DIVERGENCE_NMSE,
    DivergenceError,
    ModelState,
    aggregate_and_step,
    nmse,
    parity_gradient,
    systematic_gradient,
)

TRACE_COLUMNS = (
    "run_id",
    "mode",
    "delta",
    "nu_comp",
    "nu_link",
    "epoch",
    "cumulative_time_s",
    "nmse",
    "returns",
)


@dataclass
class HeterogeneityConfig:
    """Device population; the defaults are the 24-device setup at zero heterogeneity."""

    n_devices: int = 24
    nu_comp: float = 0.0
    nu_link: float = 0.0
    base_mac_rate: float = 1.536e6
    base_link_rate: float = 216e3
    model_dim: int = 500
    points_per_device: int = 300
    erasure_prob: float = 0.1
    header_overhead: float = 0.1
    bits_per_value: int = 32
    server_mac_multiplier: float = 10.0
    assignment_seed: int = 0

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValueError("n_devices must be positive")
        for name in ("nu_comp", "nu_link"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if not 0 <= self.erasure_prob < 1:
            raise ValueError(f"erasure_prob must lie in [0, 1), got {self.erasure_prob}")

    @property
    def packet_bits(self) -> float:
        """Bits in one model or gradient packet, header included."""
        return (1.0 + self.header_overhead) * self.bits_per_value * self.model_dim

    @property
    def total_points(self) -> int:
        return self.n_devices * self.points_per_device

    def mac_rates(self) -> np.ndarray:
        return self._ranked(self.nu_comp, self.base_mac_rate, 0)

    def link_rates(self) -> np.ndarray:
        return self._ranked(self.nu_link, self.base_link_rate, 1)

    def _ranked(self, nu: float, base: float, which: int) -> np.ndarray:
        rng = np.random.default_rng(self.assignment_seed)
        perms = [rng.permutation(self.n_devices) for _ in range(2)]
        return (1.0 - nu) ** perms[which] * base


def build_profiles(config: HeterogeneityConfig) -> tuple[list[DeviceProfile], DeviceProfile]:
    """Device profiles and the server pseudo-device for ``config``."""
    macs = config.mac_rates()
    links = config.link_rates()
    d = config.model_dim
    profiles = []
    for i in range(config.n_devices):
        a = d / macs[i]
        profiles.append(
            DeviceProfile(
                device_id=i,
                a=a,
                mu=2.0 / a,
                tau=config.packet_bits / links[i],
                p=config.erasure_prob,
                ell=config.points_per_device,
            )
        )
    a_server = d / (config.server_mac_multiplier * config.base_mac_rate)
    server = DeviceProfile(
        device_id=config.n_devices, a=a_server, mu=2.0 / a_server, is_server=True
    )
    return profiles, server


@dataclass
class SyntheticProblem:
    X: np.ndarray
    y: np.ndarray
    beta_true: np.ndarray
    noise: np.ndarray
    snr_db: float
    datasets: list[LocalDataset] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def realized_snr(self) -> float:
        signal = self.X @ self.beta_true
        return float(signal @ signal) / float(self.noise @ self.noise)


def partition(X: np.ndarray, y: np.ndarray, n_parts: int) -> list[LocalDataset]:
    """Contiguous, near-equal split of the rows into ``n_parts`` datasets."""
    bounds = np.linspace(0, X.shape[0], n_parts + 1).round().astype(int)
    return [LocalDataset(X[lo:hi], y[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:])]


def synthesize_problem(
    n_devices: int,
    points_per_device: int,
    d: int,
    snr_db: float = 0.0,
    rng=None,
    noise_reference: str = "signal",
) -> SyntheticProblem:
    """Gaussian linear-regression instance split evenly across devices.

    Args:
        n_devices: Number of devices.
        points_per_device: Rows per device.
        d: Model dimension.
        snr_db: Target SNR; ``math.inf`` gives noiseless labels.
        rng: Seed or Generator.
        noise_reference: ``"signal"`` sets the noise variance to
            ``||beta||^2 / snr`` so that ``E||X beta||^2 / E||z||^2 = snr``;
            ``"entry"`` sets it to ``1 / snr``, relative to the unit variance
            of one feature entry.

    Returns:
        The problem, with ``datasets`` holding the per-device split.
    """
    if min(n_devices, points_per_device, d) < 1:
        raise ValueError("dimensions must be positive")
    rng = as_generator(rng)
    m = n_devices * points_per_device
    beta = rng.standard_normal(d)
    X = rng.standard_normal((m, d))
    if math.isinf(snr_db) and snr_db > 0:
        noise = np.zeros(m)
    else:
        snr = 10.0 ** (snr_db / 10.0)
        if noise_reference == "signal":
            var = float(beta @ beta) / snr
        elif noise_reference == "entry":
            var = 1.0 / snr
        else:
            raise ValueError(f"unknown noise_reference {noise_reference!r}")
        noise = rng.standard_normal(m) * math.sqrt(var)
    y = X @ beta + noise
    return SyntheticProblem(X, y, beta, noise, snr_db, partition(X, y, n_devices))


@dataclass
class StopRule:
    max_epochs: int = 1000
    nmse_target: float | None = None


@dataclass
class EpochTrace:
    """What happened in one epoch.

    ``delays`` holds each device's sampled round-trip time (NaN for idle
    devices), ``packets`` the number of packet transmissions it made.
    """

    epoch: int
    deadline: float
    delays: np.ndarray
    returned: np.ndarray
    packets: np.ndarray
    epoch_duration: float
    cumulative_time: float
    nmse: float

    @property
    def num_returns(self) -> int:
        return int(self.returned.sum())


@dataclass
class RunTrace:
    """Sequence of epoch traces plus the state before the first epoch."""

    mode: str
    start_time: float
    initial_nmse: float
    epochs: list[EpochTrace]
    beta: np.ndarray
    delta: float = 0.0
    loads: list[int] = field(default_factory=list)

    def __iter__(self) -> Iterator[EpochTrace]:
        return iter(self.epochs)

    def __len__(self) -> int:
        return len(self.epochs)

    def __getitem__(self, i):
        return self.epochs[i]

    @property
    def times(self) -> np.ndarray:
        return np.array([self.start_time] + [e.cumulative_time for e in self.epochs])

    @property
    def nmses(self) -> np.ndarray:
        return np.array([self.initial_nmse] + [e.nmse for e in self.epochs])

    @property
    def durations(self) -> np.ndarray:
        return np.array([e.epoch_duration for e in self.epochs])


def _simulate(
    datasets: Sequence[LocalDataset],
    profiles: Sequence[DeviceProfile],
    loads: Sequence[int],
    systematic_sets: Sequence[np.ndarray],
    parity: CompositeParity | None,
    deadline: float,
    start_time: float,
    learning_rate: float,
    stop: StopRule,
    rng: np.random.Generator,
    beta_true: np.ndarray | None,
    beta0: np.ndarray | None,
    mode: str,
) -> RunTrace:
    d = datasets[0].n_features
    m = sum(len(ds) for ds in datasets)
    state = ModelState(np.zeros(d) if beta0 is None else np.asarray(beta0, float), learning_rate)
    err0 = nmse(state.beta, beta_true) if beta_true is not None else math.nan
    traces = []
    clock = start_time
    n = len(profiles)
    for r in range(stop.max_epochs):
        delays = np.full(n, np.nan)
        packets = np.zeros(n, dtype=int)
        for i, (prof, load) in enumerate(zip(profiles, loads)):
            if load == 0:
                continue
            s = sample_delay(prof, load, rng)
            delays[i] = s.total
            packets[i] = s.n_down + s.n_up
        active = ~np.isnan(delays)
        returned = active & (delays <= deadline)
        if math.isinf(deadline):
            duration = float(delays[active].max()) if active.any() else 0.0
        else:
            duration = deadline
        received = [
            systematic_gradient(datasets[i], systematic_sets[i], state.beta, source=int(i))
            for i in np.flatnonzero(returned)
        ]
        parity_grad = parity_gradient(parity, state.beta) if parity is not None else None
        state = aggregate_and_step(state, received, parity_grad, m)
        clock += duration
        err = nmse(state.beta, beta_true) if beta_true is not None else math.nan
        traces.append(
            EpochTrace(r, deadline, delays, returned, packets, duration, clock, err)
        )
        if err > DIVERGENCE_NMSE:
            raise DivergenceError(f"NMSE {err:.3g} exceeds {DIVERGENCE_NMSE:g} at epoch {r}")
        if stop.nmse_target is not None and err <= stop.nmse_target:
            break
    return RunTrace(mode, start_time, err0, traces, state.beta, loads=list(loads))


def _streams(rng) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (encoding, delay) streams, so delay draws do not depend on c."""
    enc, delay = as_generator(rng).spawn(2)
    return enc, delay


def _problem_parts(problem) -> tuple[list[LocalDataset], np.ndarray | None]:
    if isinstance(problem, SyntheticProblem):
        return problem.datasets, problem.beta_true
    return list(problem), None


def run_uncoded(
    problem,
    profiles: Sequence[DeviceProfile],
    learning_rate: float,
    stop: StopRule | None = None,
    rng=None,
    beta0=None,
) -> RunTrace:
    """Wait-for-all federated gradient descent.

    ``problem`` is a :class:`SyntheticProblem` or a sequence of
    :class:`LocalDataset` (NMSE is then NaN).
    """
    datasets, beta_true = _problem_parts(problem)
    _check_consistent(datasets, profiles)
    stop = stop or StopRule()
    _, delay_rng = _streams(rng)
    loads = [len(ds) for ds in datasets]
    full = [np.arange(n) for n in loads]
    return _simulate(datasets, profiles, loads, full, None, math.inf, 0.0,
                     learning_rate, stop, delay_rng, beta_true, beta0, "uncoded")


def _check_consistent(datasets, profiles) -> None:
    if len(datasets) != len(profiles):
        raise ValueError(f"{len(datasets)} datasets for {len(profiles)} profiles")
    for ds, prof in zip(datasets, profiles):
        if len(ds) != prof.ell:
            raise ValueError(
                f"device {prof.device_id} holds {len(ds)} points but its profile says {prof.ell}"
            )


def parity_upload_delay(profiles: Sequence[DeviceProfile], c: int, d: int) -> float:
    """One-off time for every device to upload ``c`` parity rows in parallel.

    A parity row carries ``d + 1`` values against ``d`` for a gradient packet,
    and each transmission is inflated by the expected retransmissions.
    """
    if c == 0:
        return 0.0
    return max(
        c * prof.tau * (d + 1) / d / (1.0 - prof.p) for prof in profiles if prof.ell > 0
    )


@dataclass
class CodedSetup:
    """Device-side encoding products for one coded run."""

    systematic_sets: list[np.ndarray]
    weights: list[np.ndarray]
    parity: CompositeParity | None


def encode_population(
    datasets: Sequence[LocalDataset],
    profiles: Sequence[DeviceProfile],
    plan: LoadPlan,
    rng=None,
    generator_family: str = "gaussian",
) -> CodedSetup:
    """Each device picks its systematic set, weights its data and encodes."""
    rng = as_generator(rng)
    sets, weights, shards = [], [], []
    for ds, prof, load in zip(datasets, profiles, plan.per_device_load):
        idx = choose_systematic_set(len(ds), int(load), rng)
        w = build_weights(prof, int(load), plan.t_star, idx, len(ds))
        sets.append(idx)
        weights.append(w)
        if plan.c > 0:
            shard, _ = encode_local(ds, w, plan.c, generator_family, rng, idx, prof.device_id)
            shards.append(shard)
    parity = accumulate_parity(shards) if shards else None
    return CodedSetup(sets, weights, parity)


def run_coded(
    problem,
    profiles: Sequence[DeviceProfile],
    server_profile: DeviceProfile,
    plan: LoadPlan,
    learning_rate: float,
    stop: StopRule | None = None,
    rng=None,
    generator_family: str = "gaussian",
    include_parity_upload: bool = True,
    beta0=None,
) -> RunTrace:
    """Coded federated learning with deadline ``plan.t_star``.

    Training starts once all parity has been uploaded. In each epoch the
    server combines its parity gradient with the device gradients that
    arrived by the deadline. An infinite deadline waits for every device.
    """
    datasets, beta_true = _problem_parts(problem)
    _check_consistent(datasets, profiles)
    if len(plan.per_device_load) != len(profiles):
        raise ValueError(
            f"plan has {len(plan.per_device_load)} loads for {len(profiles)} devices"
        )
    if plan.device_ids and list(plan.device_ids) != [p.device_id for p in profiles]:
        raise ValueError("plan was computed for a different device population")
    for load, prof in zip(plan.per_device_load, profiles):
        if not 0 <= load <= prof.ell:
            raise ValueError(f"load {load} infeasible for device {prof.device_id}")
    stop = stop or StopRule()
    enc_rng, delay_rng = _streams(rng)
    setup = encode_population(datasets, profiles, plan, enc_rng, generator_family)
    d = datasets[0].n_features
    start = parity_upload_delay(profiles, plan.c, d) if include_parity_upload else 0.0
    run = _simulate(datasets, profiles, plan.per_device_load, setup.systematic_sets,
                    setup.parity, plan.t_star, start, learning_rate, stop, delay_rng,
                    beta_true, beta0, "coded")
    run.delta = plan.redundancy_delta
    return run


def convergence_time(run: RunTrace, target: float) -> float:
    """First simulated time at which NMSE reaches ``target``.

    Interpolates linearly between consecutive epochs; ``inf`` if never.
    """
    times, errs = run.times, run.nmses
    hit = np.flatnonzero(errs <= target)
    if hit.size == 0:
        return math.inf
    j = int(hit[0])
    if j == 0:
        return float(times[0])
    e0, e1 = errs[j - 1], errs[j]
    frac = (e0 - target) / (e0 - e1)
    return float(times[j - 1] + frac * (times[j] - times[j - 1]))


def convergence_epoch(run: RunTrace, target: float) -> int | None:
    """Number of epochs needed to reach ``target``, or None."""
    hit = np.flatnonzero(run.nmses <= target)
    return int(hit[0]) if hit.size else None


def coding_gain(uncoded: RunTrace, coded: RunTrace, target: float) -> float:
    """Ratio of uncoded to coded convergence time."""
    return convergence_time(uncoded, target) / convergence_time(coded, target)


def parity_bits(plan: LoadPlan, config: HeterogeneityConfig) -> float:
    """Expected bits spent uploading parity, retransmissions included."""
    row_bits = (1.0 + config.header_overhead) * config.bits_per_value * (config.model_dim + 1)
    return config.n_devices * plan.c * row_bits / (1.0 - config.erasure_prob)


def exchanged_bits(run: RunTrace, config: HeterogeneityConfig, n_epochs: int | None = None) -> float:
    """Model and gradient bits moved during the first ``n_epochs`` epochs."""
    epochs = run.epochs if n_epochs is None else run.epochs[:n_epochs]
    return float(sum(int(e.packets.sum()) for e in epochs)) * config.packet_bits


def communication_load(
    plan: LoadPlan,
    config: HeterogeneityConfig,
    coded: RunTrace,
    uncoded: RunTrace,
    nmse_target: float,
) -> float:
    """Coded-to-uncoded ratio of bits transferred until ``nmse_target`` is reached."""
    r_coded = convergence_epoch(coded, nmse_target)
    r_uncoded = convergence_epoch(uncoded, nmse_target)
    if r_coded is None or r_uncoded is None:
        return math.nan
    coded_bits = parity_bits(plan, config) + exchanged_bits(coded, config, r_coded)
    return coded_bits / exchanged_bits(uncoded, config, r_uncoded)


def time_to_receive(delays: np.ndarray, loads: Sequence[int], points: float) -> float:
    """Time at which the returned loads first add up to ``points``."""
    delays = np.asarray(delays, dtype=float)
    loads = np.asarray(loads, dtype=float)
    active = ~np.isnan(delays) & (loads > 0)
    order = np.argsort(delays[active])
    cum = np.cumsum(loads[active][order])
    k = np.searchsorted(cum, points - 1e-9)
    if k >= cum.size:
        return math.inf
    return float(delays[active][order][k])


def write_trace_csv(
    runs: Sequence[tuple[str, RunTrace]],
    config: HeterogeneityConfig,
    stream,
) -> None:
    """Write one row per epoch (plus the epoch-0 starting point) to ``stream``."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for run_id, run in runs:
        writer.writerow([run_id, run.mode, f"{run.delta:.6g}", config.nu_comp,
                         config.nu_link, 0, f"{run.start_time:.9g}",
                         f"{run.initial_nmse:.9g}", 0])
        for e in run.epochs:
            writer.writerow([run_id, run.mode, f"{run.delta:.6g}", config.nu_comp,
                             config.nu_link, e.epoch + 1, f"{e.cumulative_time:.9g}",
                             f"{e.nmse:.9g}", e.num_returns])


def read_trace_csv(stream) -> list[dict]:
    rows = list(csv.DictReader(stream))
    for row in rows:
        for key in ("delta", "nu_comp", "nu_link", "cumulative_time_s", "nmse"):
            row[key] = float(row[key])
        for key in ("epoch", "returns"):
            row[key] = int(row[key])
    return rows


def manifest(config: HeterogeneityConfig, seed: int, plan: LoadPlan | None = None, **extra) -> dict:
    out = {"config": asdict(config), "seed": int(seed)}
    if plan is not None:
        out["plan"] = plan.to_dict()
    out.update(extra)
    return out


def trace_csv_text(runs, config) -> str:
    buf = io.StringIO()
    write_trace_csv(runs, config, buf)
    return buf.getvalue()


def manifest_json(*args, **kwargs) -> str:
    return json.dumps(manifest(*args, **kwargs), indent=2, sort_keys=True)
