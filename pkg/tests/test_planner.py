import json
import math

import numpy as np
import pytest

from codedfl.delay import DeviceProfile, return_probability
from codedfl.netsim import HeterogeneityConfig, build_profiles
from codedfl.planner import (
    LoadPlan,
    PlanInfeasibleError,
    expected_return,
    optimal_device_load,
    plan,
    plan_with_fixed_delta,
    return_curve,
)


def aggregate(profiles, server, c_up, t):
    """Brute-force aggregate expected return, scanning loads one at a time."""
    total = 0.0
    for prof in profiles:
        total += max(expected_return(prof, l, t) for l in range(prof.ell + 1))
    return total + max(expected_return(server, l, t) for l in range(c_up + 1))


@pytest.fixture(scope="module")
def hetero_population():
    return build_profiles(HeterogeneityConfig(nu_comp=0.2, nu_link=0.2))


def test_expected_return_limits(fastest):
    assert expected_return(fastest, 0, 1.0) == 0.0
    assert expected_return(fastest, 300, 1e4) == pytest.approx(300)
    assert expected_return(fastest, 300, math.inf) == 300


def test_return_curve_rises_then_decays(fastest):
    curve = return_curve(fastest, 0.7, 3000)
    r = curve.expected_returns
    peak = int(np.argmax(r))
    assert 0 < peak < 3000
    assert np.all(np.diff(r[: peak + 1]) >= -1e-9)
    assert np.all(np.diff(r[peak:]) <= 1e-9)
    assert r[-1] < 1e-6
    # near-linear growth for small loads
    assert r[10] == pytest.approx(10, rel=1e-3)


def test_zero_deadline_gives_zero_load(fastest):
    assert optimal_device_load(fastest, 0.0, 300) == 0


def test_cap_one_two_point_scan(fastest):
    t_min = fastest.a + 2 * fastest.tau
    assert optimal_device_load(fastest, t_min * 0.99, 1) == 0
    assert optimal_device_load(fastest, t_min * 1.5, 1) == 1


def test_argmax_matches_brute_force(fastest):
    for t in (0.3, 0.5, 0.7):
        scan = [expected_return(fastest, l, t) for l in range(301)]
        best = optimal_device_load(fastest, t, 300)
        assert best == int(np.argmax(scan))
        assert expected_return(fastest, best, t) >= max(scan) - 1e-12


def test_single_uncoded_device_keeps_all_data():
    prof = DeviceProfile(0, a=1e-3, mu=1e3, tau=0.0, p=0.0, ell=50)
    server = DeviceProfile(1, a=1e-4, mu=1e4, is_server=True)
    result = plan([prof], server, c_up=0)
    assert result.per_device_load == [50]
    assert result.c == 0
    p = return_probability(prof, 50, result.t_star)
    assert 1 - p < 1e-8
    assert result.expected_aggregate_return >= 50 * (1 - 1e-9)


def test_homogeneous_devices_get_equal_loads():
    profiles, server = build_profiles(HeterogeneityConfig(n_devices=8))
    result = plan(profiles, server, c_up=400)
    assert len(set(result.per_device_load)) == 1


def test_plan_invariants(hetero_population):
    profiles, server = hetero_population
    result = plan(profiles, server, c_up=2016, eps=1.0)
    m = result.total_points
    assert m == 7200
    assert m <= result.expected_aggregate_return <= m + 1.0
    assert result.redundancy_delta == pytest.approx(result.c / m)
    assert result.c <= result.parity_cap
    assert all(0 <= l <= p.ell for l, p in zip(result.per_device_load, profiles))
    assert aggregate(profiles, server, 2016, result.t_star) == pytest.approx(
        result.expected_aggregate_return, rel=1e-12
    )
    # within eps of m, so a visibly shorter deadline falls short
    assert aggregate(profiles, server, 2016, 0.95 * result.t_star) < m


def test_preset_budget_delta_in_operating_range(hetero_population):
    profiles, server = hetero_population
    result = plan(profiles, server, c_up=round(0.28 * 7200))
    assert 0 < result.redundancy_delta <= 0.3


def test_unbounded_budget_pushes_everything_to_server(hetero_population):
    profiles, server = hetero_population
    result = plan(profiles, server)
    assert result.parity_cap == 7200
    assert result.t_star < 1.0


def test_aggregate_return_nondecreasing_in_deadline(hetero_population):
    profiles, server = hetero_population
    ts = np.linspace(0, 40, 30)
    values = [aggregate(profiles, server, 500, t) for t in ts]
    assert np.all(np.diff(values) >= -1e-9)


def test_fixed_delta_zero_is_uncoded(hetero_population):
    profiles, server = hetero_population
    result = plan_with_fixed_delta(profiles, server, 0.0)
    assert result.c == 0
    assert result.per_device_load == [300] * 24


def test_fixed_delta_parity_count(hetero_population):
    profiles, server = hetero_population
    result = plan_with_fixed_delta(profiles, server, 0.13)
    assert result.c == 936
    assert result.redundancy_delta == pytest.approx(0.13)


def test_more_parity_shortens_deadline(hetero_population):
    profiles, server = hetero_population
    t1 = plan_with_fixed_delta(profiles, server, 0.1).t_star
    t2 = plan_with_fixed_delta(profiles, server, 0.2).t_star
    assert t2 <= t1


def test_plan_is_deterministic(hetero_population):
    profiles, server = hetero_population
    a = plan_with_fixed_delta(profiles, server, 0.16)
    b = plan_with_fixed_delta(profiles, server, 0.16)
    assert a == b


def test_negative_budget_is_infeasible(hetero_population):
    profiles, server = hetero_population
    with pytest.raises(PlanInfeasibleError) as err:
        plan(profiles, server, c_up=-5)
    assert err.value.binding == "parity_cap"


def test_invalid_delta(hetero_population):
    profiles, server = hetero_population
    with pytest.raises(ValueError):
        plan_with_fixed_delta(profiles, server, 1.0)


def test_plan_json_roundtrip(hetero_population):
    profiles, server = hetero_population
    result = plan_with_fixed_delta(profiles, server, 0.13)
    doc = json.loads(result.to_json())
    assert set(doc) >= {"per_device_load", "server_parity_count", "epoch_deadline",
                        "tolerance", "parity_cap", "expected_aggregate_return",
                        "redundancy_delta"}
    assert LoadPlan.from_json(result.to_json()) == result


def test_infinite_deadline_serialises_as_null():
    p = LoadPlan([3], 0, math.inf, 1.0, 0, 3.0, 0.0, 3, [0])
    assert json.loads(p.to_json())["epoch_deadline"] is None
    assert LoadPlan.from_json(p.to_json()).t_star == math.inf
