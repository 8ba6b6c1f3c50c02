import math

import numpy as np
import pytest

from nlheat.diagnostics import (
    HarnackParams,
    build_ledger,
    deviation_decay_rate,
    discrete_spectral_gap,
    harnack_field,
    harnack_monitor,
    log_identity_residual,
    stability_compare,
    steady_extract,
    steady_oracle,
    steady_residual,
)
from nlheat.errors import (
    ConfigurationError,
    DegenerateStateError,
    DomainError,
    GridMismatchError,
    NotConvergedError,
    PositivityLossError,
)
from nlheat.flow import FlowSpec, ForcingSpec
from nlheat.integrators import TimeControls, Trajectory, run
from nlheat.manifold import ScalarField, TorusGrid, l2_norm, laplacian

from conftest import perturbed


@pytest.fixture(scope="module")
def const_nonlinear():
    g = TorusGrid.line(64)
    spec = FlowSpec.nonlinear(g.constant(1.0), 3)
    return spec, run(spec, TimeControls(t_end=1.0))


@pytest.fixture(scope="module")
def const_linear():
    g = TorusGrid.line(64)
    spec = FlowSpec.linear(g.constant(1.0))
    return spec, run(spec, TimeControls(t_end=1.0))


def linear_run(n, dt, t_end, amp=0.1):
    g = TorusGrid.line(n)
    spec = FlowSpec.linear(perturbed(g, amp))
    return spec, run(spec, TimeControls(dt=dt, t_end=t_end))


class TestLedger:
    def test_constant_nonlinear(self, const_nonlinear):
        spec, traj = const_nonlinear
        led = build_ledger(traj, spec)
        assert np.all(led.lam == 1.0)
        assert np.all(led.cum_ut_sq == 0.0)
        assert led.max_residual == 0.0

    def test_constant_linear(self, const_linear):
        spec, traj = const_linear
        led = build_ledger(traj, spec)
        for col in (led.lam, led.dirichlet, led.extra, led.cum_ut_sq, led.u_dot_ut, led.identity_residual):
            assert np.all(col == 0.0)
        assert np.allclose(led.mass, 1.0, atol=1e-15)

    def test_linear_residual_is_first_order(self):
        r = [build_ledger(traj, spec).max_residual for spec, traj in
             (linear_run(128, 1e-3, 1.0), linear_run(128, 5e-4, 1.0))]
        assert 1.7 <= r[0] / r[1] <= 2.3

    def test_forced_residual_small(self):
        g = TorusGrid.line(128)
        A = ForcingSpec(g.sample(lambda x: 1 + np.cos(2 * np.pi * x)))
        spec = FlowSpec.linear(g.constant(1.0), A)
        led = build_ledger(run(spec, TimeControls(dt=1e-3, t_end=1.0)), spec)
        assert led.max_residual < 1e-2
        assert np.max(np.abs(led.u_dot_ut)) < 1e-10

    def test_coarse_stamps_rejected(self, line64):
        spec = FlowSpec.linear(perturbed(line64))
        traj = run(spec, TimeControls(dt=1e-3, t_end=0.1, record_every=20))
        with pytest.raises(ConfigurationError):
            build_ledger(traj, spec)

    def test_grid_mismatch(self, const_linear):
        _, traj = const_linear
        other = FlowSpec.linear(TorusGrid.line(32).constant(1.0))
        with pytest.raises(GridMismatchError):
            build_ledger(traj, other)


class TestHarnack:
    def test_constant_nonlinear_is_zero(self, const_nonlinear):
        spec, traj = const_nonlinear
        for a in (1.5, 2.0, 5.0):
            F = harnack_field(traj, traj.index_of(1.0), spec, HarnackParams(a=a))
            assert np.all(F.values == 0.0)

    def test_constant_linear_is_zero(self, const_linear):
        spec, traj = const_linear
        assert np.all(harnack_field(traj, traj.index_of(1.0), spec).values == 0.0)

    def test_grid_self_convergence(self):
        sups = []
        for n in (128, 256):
            spec, traj = linear_run(n, 1e-3, 0.5)
            sups.append(harnack_field(traj, traj.index_of(0.5), spec).max())
        assert abs(sups[0] - sups[1]) < 0.1 * abs(sups[1])

    def test_preconditions(self, const_nonlinear):
        spec, traj = const_nonlinear
        with pytest.raises(DomainError):
            harnack_field(traj, traj.index_of(0.05), spec)
        with pytest.raises(DomainError):
            harnack_field(traj, -1, spec, HarnackParams(K=1.0))
        for bad in (dict(a=1.0), dict(K=-1.0), dict(t_floor=0.0)):
            with pytest.raises(DomainError):
                HarnackParams(**bad)

    def test_nonpositive_state(self, line64):
        spec = FlowSpec.linear(line64.constant(1.0))
        vals = np.ones((3, 64))
        vals[2, 5] = -0.1
        traj = Trajectory(line64, [0.0, 0.5, 1.0], vals, [0.0, 0.0, 0.0], 0.5)
        with pytest.raises(PositivityLossError):
            harnack_field(traj, 2, spec)

    def test_monitor_on_power_flow(self):
        g = TorusGrid.line(128)
        spec = FlowSpec.nonlinear(perturbed(g, 0.5), 2)
        traj = run(spec, TimeControls(t_end=2.0, record_every=10))
        rep = harnack_monitor(traj, spec)
        assert rep.t[0] >= 0.1 and rep.t[-1] == pytest.approx(2.0)
        assert rep.all_finite
        assert np.all(rep.min_u > 0)


class TestLogIdentity:
    def test_constant_runs(self, const_nonlinear, const_linear):
        for spec, traj in (const_nonlinear, const_linear):
            assert log_identity_residual(traj, traj.index_of(0.5), spec) <= 1e-10

    def test_self_convergence(self):
        r = []
        for n, dt in ((64, 1e-3), (128, 5e-4)):
            spec, traj = linear_run(n, dt, 0.2)
            r.append(log_identity_residual(traj, traj.index_of(0.1), spec))
        assert r[0] / r[1] >= 1.8

    def test_power_flow_sanity(self):
        g = TorusGrid.line(128)
        spec = FlowSpec.nonlinear(perturbed(g, 0.5), 2)
        traj = run(spec, TimeControls(t_end=2.0))
        res = [log_identity_residual(traj, i, spec) for i in range(traj.index_of(0.1), len(traj) - 1)]
        assert np.all(np.isfinite(res)) and max(res) < 1

    def test_boundary_stamps(self, const_linear):
        spec, traj = const_linear
        for i in (0, len(traj) - 1, -1):
            with pytest.raises(DomainError):
                log_identity_residual(traj, i, spec)


class TestSteady:
    def test_constant_nonlinear(self, const_nonlinear):
        spec, traj = const_nonlinear
        rep = steady_extract(traj, spec)
        assert rep.lambda_inf == 1.0
        assert rep.residual_l2 == 0.0
        assert np.all(rep.u_inf.values == 1.0)

    def test_linear_ground_state(self):
        spec, traj = linear_run(128, 1e-3, 2.0)
        rep = steady_extract(traj, spec)
        assert np.max(np.abs(rep.u_inf.values - 1)) <= 1e-4
        assert rep.lambda_inf <= 1e-6
        assert rep.residual_l2 <= 1e-4

    def test_short_or_unsettled_tail(self):
        spec, traj = linear_run(64, 1e-3, 0.5)
        with pytest.raises(NotConvergedError):
            steady_extract(traj, spec)
        spec, traj = linear_run(64, 1e-2, 1.0, amp=0.5)
        with pytest.raises(NotConvergedError) as info:
            steady_extract(traj, spec, tail_tol=1e-12)
        assert info.value.tail_variation > 1e-12

    @pytest.mark.parametrize("c", [1.0, 0.25, 3.0])
    def test_oracle_constant_forcing(self, c):
        g = TorusGrid.line(64)
        u, lam = steady_oracle(g.constant(c))
        assert lam == pytest.approx(-c, rel=1e-9)
        assert u.allclose(1.0, atol=1e-9)

    def test_oracle_cosine_forcing_residual(self):
        g = TorusGrid.line(256)
        A = g.sample(lambda x: 1 + np.cos(2 * np.pi * x))
        u, lam = steady_oracle(A)
        assert l2_norm(laplacian(u) + u * lam + A) <= 1e-9
        assert abs(l2_norm(u) - 1) <= 1e-10
        assert u.min() >= 0

    def test_oracle_2d(self):
        g = TorusGrid.square(16)
        x, y = g.coords()
        A = ScalarField(g, 1 + 0.5 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y))
        u, lam = steady_oracle(A)
        spec = FlowSpec.linear(u, ForcingSpec(A))
        assert steady_residual(u, lam, spec) <= 1e-9

    def test_oracle_rejects_bad_forcing(self, line64):
        with pytest.raises(DomainError):
            steady_oracle(line64.zeros())
        with pytest.raises(GridMismatchError):
            steady_oracle(line64.constant(1.0), TorusGrid.line(32))

    def test_forced_flow_reaches_oracle(self):
        g = TorusGrid.line(128)
        A = ForcingSpec(g.sample(lambda x: 1 + np.cos(2 * np.pi * x)))
        spec = FlowSpec.linear(g.constant(1.0), A)
        rep = steady_extract(run(spec, TimeControls(t_end=10.0, record_every=10)), spec)
        u, lam = steady_oracle(A.spatial)
        assert rep.residual_l2 <= 1e-3
        assert abs(rep.lambda_inf - lam) <= 1e-3
        assert l2_norm(rep.u_inf - u) <= 1e-3


class TestStability:
    def test_identical_runs_are_degenerate(self):
        _, traj = linear_run(64, 1e-3, 0.1)
        with pytest.raises(DegenerateStateError):
            stability_compare(traj, traj)

    def test_stamp_mismatch(self):
        _, a = linear_run(64, 1e-3, 0.1)
        _, b = linear_run(64, 1e-3, 0.2, amp=0.2)
        with pytest.raises(GridMismatchError):
            stability_compare(a, b)

    def test_linear_pair_contracts(self):
        g = TorusGrid.line(128)
        spec = FlowSpec.linear(perturbed(g, 0.1))
        other = spec.with_initial(g.sample(lambda x: 1 + 0.1 * np.sin(2 * np.pi * x) + 0.05 * np.cos(2 * np.pi * x)))
        c = TimeControls(t_end=0.25)
        rep = stability_compare(run(spec, c), run(other, c))
        assert rep.fitted_C_l2 < 0
        assert rep.bound_holds

    def test_nonlinear_pair(self):
        g = TorusGrid.line(128)
        spec = FlowSpec.nonlinear(perturbed(g, 0.1), 3)
        other = spec.with_initial(perturbed(g, 0.1) + g.sample(lambda x: 0.05 * np.cos(2 * np.pi * x)))
        c = TimeControls(t_end=0.25)
        rep = stability_compare(run(spec, c), run(other, c))
        assert math.isfinite(rep.fitted_C_l2) and math.isfinite(rep.fitted_C_h1)
        assert rep.bound_holds


class TestSpectral:
    def test_gap_value(self):
        g = TorusGrid.line(128)
        h = 1 / 128
        assert discrete_spectral_gap(g) == pytest.approx(2 / h**2 * (1 - math.cos(2 * math.pi * h)))
        assert discrete_spectral_gap(TorusGrid.line(4096)) == pytest.approx(4 * math.pi**2, rel=1e-6)

    def test_decay_rate_matches_gap(self):
        spec, traj = linear_run(128, 1e-3, 2.0)
        rate = deviation_decay_rate(traj)
        gap = discrete_spectral_gap(spec.grid)
        assert abs(rate - gap) <= 0.05 * gap

    def test_decay_rate_needs_deviation(self, const_linear):
        with pytest.raises(DegenerateStateError):
            deviation_decay_rate(const_linear[1])
