import numpy as np
import pytest

from twoswitch.channel import ChannelProbabilities, PuTopology, probabilities
from twoswitch.closed_loop import ClosedLoopModel
from twoswitch.errors import ValidationError
from twoswitch.separation import separation_demo


def demo_model(v=0.0, w=1.0):
    # scalar integrator with unit gains; no process noise by default
    return ClosedLoopModel(A=[[1.0]], B=[[1.0]], C=[[1.0]], V=[[v]], W=[[w]],
                           x1=[0.0], P1=[[1.0]], Q=[[1.0]], R=[[0.0]], QN=[[1.0]])


XG = np.linspace(-2.0, 2.0, 41)
PG = np.linspace(0.1, 4.0, 21)
UG = np.linspace(-3.0, 3.0, 801)

P_HALF = probabilities(PuTopology(h=1, m=1, o=1, inactivity=(0.5, 0.8, 0.8)))
P_ONE = probabilities(PuTopology(h=0, m=2, o=1, inactivity=(0.8, 0.8, 0.8)))


@pytest.fixture(scope="module")
def dp_half():
    return separation_demo(demo_model(), P_HALF, horizon=3,
                           xhat_grid=XG, p_grid=PG, u_grid=UG)


@pytest.fixture(scope="module")
def dp_one():
    return separation_demo(demo_model(), P_ONE, horizon=3,
                           xhat_grid=XG, p_grid=PG, u_grid=UG)


class TestTerminalAndStructure:
    def test_one_step_value_matches_analytic(self):
        # with one control step to go, V = 2(xhat^2 + P) - p * xhat^2 when
        # the control is live, and u* = -xhat regardless of P
        res = separation_demo(demo_model(), P_HALF, horizon=1,
                              xhat_grid=XG, p_grid=PG, u_grid=UG)
        step = res.final()
        XH, PP = np.meshgrid(XG, PG, indexing="ij")
        expect = 2.0 * (XH**2 + PP) - P_HALF.p * XH**2
        assert np.max(np.abs(step.value - expect)) < 1e-2
        # the argmin of the shallow quadratic is softer than the value
        assert np.max(np.abs(step.u_star + XH)) < 5e-2
        silent = 2.0 * (XH**2 + PP)
        assert np.max(np.abs(step.value_silent - silent)) < 1e-2

    def test_values_finite_and_ordered(self, dp_half):
        for step in dp_half.steps:
            assert np.all(np.isfinite(step.value))
            # acting can never be worse than the silent branch's no-op
            # at the same information state by more than quadrature noise
            assert np.all(step.value <= step.value_silent + 1e-6)

    def test_grid_validation(self):
        with pytest.raises(ValidationError):
            separation_demo(demo_model(), P_HALF, 2, [0.0, 1.0], PG)
        with pytest.raises(ValidationError):
            separation_demo(demo_model(), P_HALF, 2, XG, [0.1, 0.2])
        with pytest.raises(ValidationError):
            separation_demo(demo_model(), P_HALF, 0, XG, PG)

    def test_rejects_multivariate_model(self):
        model = ClosedLoopModel(A=np.eye(2), B=np.eye(2), C=np.eye(2),
                                V=np.eye(2), W=np.eye(2),
                                x1=np.zeros(2), P1=np.eye(2))
        with pytest.raises(ValidationError):
            separation_demo(model, P_HALF, 2, XG, PG)


class TestSeparationFailure:
    def test_policy_depends_on_covariance_when_p_below_one(self, dp_half):
        step = dp_half.final()
        spread = (step.u_star.max(axis=1) - step.u_star.min(axis=1)).max()
        assert spread > 10 * dp_half.u_resolution

    def test_policy_linear_when_p_one(self, dp_one):
        step = dp_one.final()
        nz = XG != 0
        med = np.median(step.u_star[nz] / XG[nz][:, None])
        deviation = np.abs(step.u_star - med * XG[:, None]).max()
        assert deviation < dp_one.u_resolution
        assert med == pytest.approx(-1.0, abs=1e-3)

    def test_covariance_dependence_grows_with_horizon(self, dp_half):
        spreads = [
            (s.u_star.max(axis=1) - s.u_star.min(axis=1)).max()
            for s in dp_half.steps
        ]
        assert spreads[-1] > spreads[0]


class TestCsvExport:
    def test_round_trip_columns(self, tmp_path, dp_one):
        path = tmp_path / "dp.csv"
        dp_one.write_csv(path)
        header, first = path.read_text().splitlines()[:2]
        assert header == "steps_to_go,xhat,P,u_star,value"
        assert len(first.split(",")) == 5
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + 3 * len(XG) * len(PG)
