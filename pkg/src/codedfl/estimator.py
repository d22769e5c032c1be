"""scikit-learn compatible wrapper around the coded federated training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .delay import DeviceProfile
from .netsim import (
    HeterogeneityConfig,
    StopRule,
    build_profiles,
    partition,
    run_coded,
    run_uncoded,
)
from .planner import plan, plan_with_fixed_delta


def _with_sizes(profiles: list[DeviceProfile], sizes: list[int]) -> list[DeviceProfile]:
    return [
        DeviceProfile(p.device_id, p.a, p.mu, p.tau, p.p, n) for p, n in zip(profiles, sizes)
    ]


class CodedFederatedRegressor(RegressorMixin, BaseEstimator):
    """Linear least-squares regression trained by simulated coded federated learning.

    The rows of ``X`` are split contiguously over ``n_devices`` simulated
    clients whose compute and link speeds follow ``HeterogeneityConfig``.
    Training runs full-batch gradient descent under the simulated delays.

    Parameters
    ----------
    n_devices : int
        Number of simulated clients.
    delta : float or None
        Coding redundancy ``c / m``. ``0`` trains uncoded (wait-for-all);
        ``None`` lets the planner choose ``c`` under ``c_up``.
    c_up : int or None
        Parity budget when ``delta`` is None.
    learning_rate : float
        Step size ``mu`` in ``beta -= (mu / m) * grad``.
    max_epochs : int
        Number of epochs to run.
    nu_comp, nu_link : float
        Compute and link heterogeneity factors.
    generator_family : {"gaussian", "bernoulli"}
        Distribution of generator entries.
    random_state : int or None
        Seed for device ranks, encoding and delays.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    plan_ : LoadPlan or None
    history_ : RunTrace
    training_time_ : float
        Simulated wall-clock seconds, parity upload included.
    """

    def __init__(
        self,
        n_devices=24,
        delta=0.0,
        c_up=None,
        learning_rate=0.0085,
        max_epochs=500,
        nu_comp=0.0,
        nu_link=0.0,
        generator_family="gaussian",
        random_state=None,
    ):
        self.n_devices = n_devices
        self.delta = delta
        self.c_up = c_up
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.nu_comp = nu_comp
        self.nu_link = nu_link
        self.generator_family = generator_family
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True, dtype=np.float64)
        if self.n_devices < 1 or self.n_devices > X.shape[0]:
            raise ValueError(
                f"n_devices={self.n_devices} needs at least as many rows, "
                f"got n_samples={X.shape[0]}"
            )
        seed = np.random.SeedSequence(self.random_state)
        assign_seed = int(seed.generate_state(1)[0])
        hc = HeterogeneityConfig(
            n_devices=self.n_devices,
            nu_comp=self.nu_comp,
            nu_link=self.nu_link,
            model_dim=X.shape[1],
            assignment_seed=assign_seed,
        )
        datasets = partition(X, y, self.n_devices)
        profiles, server = build_profiles(hc)
        profiles = _with_sizes(profiles, [len(ds) for ds in datasets])
        stop = StopRule(self.max_epochs)
        rng = np.random.default_rng(seed)
        if self.delta == 0:
            self.plan_ = None
            self.history_ = run_uncoded(datasets, profiles, self.learning_rate, stop, rng)
        else:
            if self.delta is None:
                self.plan_ = plan(profiles, server, self.c_up)
            else:
                self.plan_ = plan_with_fixed_delta(profiles, server, self.delta)
            self.history_ = run_coded(datasets, profiles, server, self.plan_,
                                      self.learning_rate, stop, rng, self.generator_family)
        self.coef_ = self.history_.beta
        self.n_epochs_ = len(self.history_)
        self.training_time_ = float(self.history_.times[-1])
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return X @ self.coef_
