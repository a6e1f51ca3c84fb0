import numpy as np
import pytest

from flexbat import lp
from flexbat.errors import MalformedProblem
from flexbat.geometry import VirtualBattery, battery_to_hpolytope
from flexbat.projection import LiftedPolytope, build_app


def test_one_variable_bound():
    """minimize -x s.t. x <= 10, x >= 0 -> x = 10, objective -10."""
    prob = lp.LpProblem(objective=[-1.0], a_in=[[1.0]], b_in=[10.0], lower=[0.0])
    sol = lp.solve_lp(prob)
    assert sol.status == lp.OPTIMAL
    assert sol.x[0] == pytest.approx(10.0, abs=1e-9)
    assert sol.objective_value == pytest.approx(-10.0, abs=1e-9)


def test_contradictory_bounds_infeasible():
    prob = lp.LpProblem(objective=[0.0], a_in=[[1.0]], b_in=[-1.0], lower=[0.0])
    assert lp.solve_lp(prob).status == lp.INFEASIBLE


def test_unbounded():
    prob = lp.LpProblem(objective=[-1.0], lower=[0.0])
    assert lp.solve_lp(prob).status == lp.UNBOUNDED


def test_example1_app_instance_objective():
    """The full affine-rule LP of the worked 2-D example optimizes to s = 0.15."""
    lifted = LiftedPolytope(
        b=np.array([[-0.5, -1.0], [0.6, 1.0], [-1.0, -1.0]]),
        c=np.array([-9.0, 10.0, -10.0]), m=1, m_tilde=1)
    nominal = battery_to_hpolytope(VirtualBattery([-0.5], [1.0], -0.5, 1.0))
    sol = lp.solve_lp(build_app(lifted, nominal))
    assert sol.status == lp.OPTIMAL
    assert sol.objective_value == pytest.approx(0.15, abs=1e-8)


def test_check_feasible_box():
    prob = lp.LpProblem(objective=[0.0], lower=[0.0], upper=[1.0])
    assert lp.check_feasible(prob).feasible


def test_check_feasible_contradiction():
    prob = lp.LpProblem(objective=[0.0], a_in=[[1.0], [-1.0]], b_in=[0.0, -1.0])
    assert not lp.check_feasible(prob).feasible


def test_check_feasible_single_load_system():
    """Charging system of one load (window {1,2}, p=1, E=[1,1]) at u=(0.5, 0.5).

    Hand check: x = (0.5, 0.5) satisfies both column sums, the energy
    interval, and the rate bounds.
    """
    prob = lp.LpProblem(
        objective=np.zeros(2),
        a_in=[[1.0, 1.0], [-1.0, -1.0]], b_in=[1.0, -1.0],
        a_eq=np.eye(2), b_eq=[0.5, 0.5],
        lower=np.zeros(2), upper=np.ones(2))
    res = lp.check_feasible(prob)
    assert res.feasible
    assert lp.primal_violations(prob, res.x) <= 1e-7


def test_malformed_dimension_mismatch():
    with pytest.raises(MalformedProblem):
        lp.LpProblem(objective=[1.0, 2.0], a_in=[[1.0]], b_in=[1.0])


def test_malformed_nonfinite():
    with pytest.raises(MalformedProblem):
        lp.LpProblem(objective=[np.nan])
    with pytest.raises(MalformedProblem):
        lp.LpProblem(objective=[1.0], a_in=[[np.inf]], b_in=[1.0])


def _random_bounded_problem(rng, n_vars, n_in, n_eq):
    x0 = rng.uniform(-1, 1, n_vars)
    a_in = rng.normal(size=(n_in, n_vars))
    b_in = a_in @ x0 + rng.uniform(0.1, 2.0, n_in)
    a_eq = rng.normal(size=(n_eq, n_vars))
    b_eq = a_eq @ x0
    return lp.LpProblem(
        objective=rng.normal(size=n_vars),
        a_in=a_in, b_in=b_in, a_eq=a_eq, b_eq=b_eq,
        lower=np.full(n_vars, -10.0), upper=np.full(n_vars, 10.0))


def test_duality_gap_on_random_instances():
    """Primal and dual objectives agree within 1e-6 on solvable instances."""
    rng = np.random.default_rng(1234)
    for _ in range(30):
        n = int(rng.integers(2, 51))
        prob = _random_bounded_problem(rng, n, int(rng.integers(1, 12)),
                                       int(rng.integers(0, min(n, 4))))
        sol = lp.solve_lp(prob)
        assert sol.status == lp.OPTIMAL
        assert lp.primal_violations(prob, sol.x) <= 1e-7
        gap = abs(sol.objective_value - lp.dual_objective_value(prob, sol))
        assert gap <= 1e-6 * max(1.0, abs(sol.objective_value))


def test_farkas_certificate_on_infeasible_instances():
    """Every infeasible verdict is backed by y >= 0, y@R = 0, y@h < 0."""
    rng = np.random.default_rng(99)
    checked = 0
    for _ in range(20):
        n = int(rng.integers(1, 8))
        base = _random_bounded_problem(rng, n, int(rng.integers(1, 6)), 0)
        # contradict one random direction: v.x <= -1 and -v.x <= -1
        v = rng.normal(size=n)
        a_in = np.vstack([base.a_in, v, -v])
        b_in = np.concatenate([base.b_in, [-1.0, -1.0]])
        prob = lp.LpProblem(objective=base.objective, a_in=a_in, b_in=b_in,
                            lower=base.lower, upper=base.upper)
        assert lp.solve_lp(prob).status == lp.INFEASIBLE
        cert = lp.farkas_certificate(prob)
        assert cert is not None
        y, rows, rhs = cert
        assert np.all(y >= -1e-12)
        assert np.max(np.abs(y @ rows)) <= 1e-8
        assert y @ rhs < -1e-8
        checked += 1
    assert checked == 20


def test_farkas_certificate_none_when_feasible():
    prob = lp.LpProblem(objective=[0.0], lower=[0.0], upper=[1.0])
    assert lp.farkas_certificate(prob) is None


def test_determinism_identical_bytes():
    rng = np.random.default_rng(5)
    prob = _random_bounded_problem(rng, 20, 8, 3)
    a = lp.solve_lp(prob)
    b = lp.solve_lp(prob)
    assert a.x.tobytes() == b.x.tobytes()
    assert a.objective_value == b.objective_value


def test_format_lp_dump(tmp_path):
    prob = lp.LpProblem(objective=[1.0, 0.0], a_in=[[1.0, 2.0]], b_in=[3.0],
                        lower=[0.0, 0.0], name="demo")
    text = lp.format_lp(prob)
    assert "Minimize" in text and "Subject To" in text and "demo" in text
    lp.set_dump_dir(str(tmp_path))
    try:
        lp.solve_lp(prob)
    finally:
        lp.set_dump_dir(None)
    dumped = list(tmp_path.glob("demo_*.lp"))
    assert dumped and "Subject To" in dumped[0].read_text()
