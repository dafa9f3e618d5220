import numpy as np
import pytest

from madsbo.errors import BaselineUnavailable
from madsbo.higp import default_gamma
from madsbo.hypergrad import estimate_hypergradient, local_hypergradients, naive_local_average
from madsbo.netgraph import build_complete, build_ring
from madsbo.oracle import SampleStreams
from madsbo.problems import (ConstantMap, LinearMap, QuadraticBilevel, SquaredDistance,
                             dsco_linear_instance, dsco_wrap, make_problem, quad_instance,
                             scalar_reference)
from madsbo.reference import ground_truth_hypergradient


class YFreeUpper(QuadraticBilevel):
    """f_i(x, y) = c_i^T x, independent of y."""

    def __init__(self, B, a, c):
        super().__init__(B, a)
        self.c = np.asarray(c, dtype=float)  # p x n

    def _grad_fx(self, X, Y, sample):
        return self.c.copy()

    def _grad_fy(self, X, Y, sample):
        return np.zeros((self.q, self.n))

    def lower_solution(self, x):
        return self.Bbar @ np.asarray(x, dtype=float)

    def hypergradient(self, x):
        return self.c.mean(axis=1)


def det_estimate(prob, x, W=None, N=300):
    W = W or build_complete(prob.n)
    X, Y = prob.tile(x, prob.lower_solution(np.asarray(x, dtype=float)))
    gamma = default_gamma(W, 1.0, 1.0)
    return estimate_hypergradient(W, prob, X, Y, gamma, N)


def test_scalar_reference_values():
    prob = scalar_reference()
    assert prob.lower_solution([1.0])[0] == 2.0
    assert prob.hypergradient([1.0])[0] == 0.0
    assert prob.hypergradient([2.0])[0] == 4.0


@pytest.mark.parametrize("x,expected", [(1.0, 0.0), (2.0, 4.0)])
def test_scalar_estimate_at_consensus(x, expected):
    est = det_estimate(scalar_reference(), [x], N=100)
    assert est.ubar[0] == pytest.approx(expected, abs=1e-6)
    np.testing.assert_array_equal(est.ubar, est.u.mean(axis=1))


def test_y_free_upper_gives_zero_z():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((3, 2, 2))
    c = rng.standard_normal((2, 3))
    prob = YFreeUpper(B, np.zeros((2, 3)), c)
    est = det_estimate(prob, np.ones(2), W=build_ring(3, 0.4), N=10)
    assert np.all(est.z == 0)
    np.testing.assert_array_equal(est.u, c)


def test_naive_mismatch_scalar():
    prob = scalar_reference()
    np.testing.assert_allclose(local_hypergradients(prob, np.array([[1.0, 1.0]])), [[1.0, -3.0]])
    assert naive_local_average(prob, [1.0])[0] == pytest.approx(-1.0, abs=1e-8)
    assert prob.hypergradient([1.0])[0] == 0.0


def test_naive_equals_global_when_homogeneous():
    prob = quad_instance(n=4, p=3, q=3, heterogeneity=0.0, seed=2)
    x = np.array([0.4, -1.0, 2.0])
    np.testing.assert_allclose(naive_local_average(prob, x), prob.hypergradient(x), atol=1e-10)
    A = np.array([[1.0, 2.0], [0.5, -1.0], [0.0, 1.0]])
    inner = [LinearMap(A)] * 3
    outer = [SquaredDistance(c) for c in ([1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0])]
    dsco = dsco_wrap(inner, outer)
    x = np.array([0.3, 0.7])
    np.testing.assert_allclose(naive_local_average(dsco, x), dsco.hypergradient(x), atol=1e-10)


def test_naive_unavailable_for_logreg():
    prob = make_problem("logreg", p=3, n=2, samples_per_node=10)
    with pytest.raises(BaselineUnavailable):
        naive_local_average(prob, np.zeros(3))


def test_ground_truth_examples():
    assert ground_truth_hypergradient(scalar_reference(), [2.0])[0] == pytest.approx(4.0)
    rng = np.random.default_rng(1)
    prob = YFreeUpper(rng.standard_normal((2, 2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    np.testing.assert_array_equal(ground_truth_hypergradient(prob, [1.0, 2.0]), [0.0, 0.0])
    consts = dsco_wrap([ConstantMap([1.0, 2.0], 3), ConstantMap([-1.0, 0.5], 3)],
                       [SquaredDistance([0.0, 0.0])] * 2, p=3)
    np.testing.assert_array_equal(ground_truth_hypergradient(consts, np.ones(3)), np.zeros(3))
    np.testing.assert_allclose(consts.lower_solution(np.ones(3)), [0.0, 1.25])


def test_dsco_linear_closed_form():
    rng = np.random.default_rng(3)
    As = [rng.standard_normal((3, 2)) for _ in range(4)]
    prob = dsco_wrap([LinearMap(A) for A in As], [SquaredDistance(np.zeros(3))] * 4)
    Abar = np.mean(As, axis=0)
    x = rng.standard_normal(2)
    np.testing.assert_allclose(prob.hypergradient(x), Abar.T @ Abar @ x, atol=1e-12)
    assert np.all(prob.hypergradient(np.zeros(2)) == 0)


CLOSED_FORM = {
    "scalar": lambda: scalar_reference(),
    "quadratic": lambda: quad_instance(n=8, p=5, q=5, heterogeneity=1.0, seed=1),
    "dsco-linear": lambda: dsco_linear_instance(n=4, p=3, q=4, seed=0),
    "dsco-tanh": lambda: dsco_linear_instance(n=4, p=3, q=4, seed=0, nonlinear=True),
}


@pytest.mark.parametrize("name", sorted(CLOSED_FORM))
def test_estimator_matches_closed_form_and_reference(name):
    prob = CLOSED_FORM[name]()
    rng = np.random.default_rng(5)
    for _ in range(3):
        x = rng.standard_normal(prob.p)
        truth = prob.hypergradient(x)
        np.testing.assert_allclose(ground_truth_hypergradient(prob, x), truth, rtol=1e-10,
                                   atol=1e-12)
        est = det_estimate(prob, x, N=300).ubar
        assert np.linalg.norm(est - truth) <= 1e-5 * max(np.linalg.norm(truth), 1e-12)


def test_stochastic_mean_matches_deterministic_estimate():
    prob = quad_instance(n=4, p=3, q=3, sigma_f=0.5, sigma_g1=0.5, sigma_g2=0.5, seed=7)
    W = build_ring(4, 0.4)
    gamma = default_gamma(W, 1.0, 1.0)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 4))
    Y = rng.standard_normal((3, 4))
    det = estimate_hypergradient(W, prob, X, Y, gamma, 20).ubar
    ubars = np.array([estimate_hypergradient(W, prob, X, Y, gamma, 20, SampleStreams(s, 4)).ubar
                      for s in range(600)])
    se = ubars.std(axis=0, ddof=1) / np.sqrt(len(ubars))
    assert np.all(np.abs(ubars.mean(axis=0) - det) <= 5 * se)


def test_bias_decays_geometrically_in_N():
    prob = quad_instance(n=8, p=4, q=4, sigma_f=0.1, sigma_g1=0.1, sigma_g2=0.1, seed=8)
    W = build_ring(8, 0.4)
    gamma = default_gamma(W, 1.0, 1.0)
    x = np.array([1.0, -0.5, 0.3, 0.8])
    X, Y = prob.tile(x, prob.lower_solution(x))
    truth = prob.hypergradient(x)
    Ns = np.arange(2, 26, 3)
    bias = []
    for N in Ns:
        ubars = [estimate_hypergradient(W, prob, X, Y, gamma, int(N), SampleStreams(s, 8)).ubar
                 for s in range(200)]
        bias.append(np.linalg.norm(np.mean(ubars, axis=0) - truth))
    ratio = np.exp(np.polyfit(Ns, np.log(bias), 1)[0])
    assert ratio < 1
    assert bias[-1] < 0.2 * bias[0]


def test_mismatch_on_heterogeneous_testbed():
    prob = quad_instance(n=8, p=5, q=5, heterogeneity=1.0, seed=1)
    x = np.ones(5)
    truth = prob.hypergradient(x)
    assert np.linalg.norm(naive_local_average(prob, x) - truth) >= 0.5
    assert np.linalg.norm(det_estimate(prob, x).ubar - truth) <= 1e-5
