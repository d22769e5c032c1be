"""Coded federated learning for linear regression under simulated stragglers."""

from .delay import (
    DelaySample,
    DeviceProfile,
    expected_delay,
    return_probabilities,
    return_probability,
    sample_delay,
    sample_total_delays,
)
from .encoder import (
    CompositeParity,
    EncodedShard,
    EncoderPrivateState,
    LocalDataset,
    accumulate_parity,
    build_weights,
    deserialize_shard,
    encode_local,
    serialize_shard,
)
from .estimator import CodedFederatedRegressor
from .netsim import (
    EpochTrace,
    HeterogeneityConfig,
    RunTrace,
    StopRule,
    SyntheticProblem,
    build_profiles,
    coding_gain,
    communication_load,
    convergence_time,
    run_coded,
    run_uncoded,
    synthesize_problem,
)
from .planner import (
    LoadPlan,
    NonconvergentSearchError,
    PlanInfeasibleError,
    expected_return,
    optimal_device_load,
    plan,
    plan_with_fixed_delta,
)
from .trainer import (
    DivergenceError,
    ModelState,
    PartialGradient,
    aggregate_and_step,
    nmse,
    parity_gradient,
    systematic_gradient,
)

__version__ = "0.1.0"
