import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madsbo.errors import DivergedError
from madsbo.higp import QuadOracle, default_gamma, fixed_quad_oracle, higp_run, tracking_radius
from madsbo.hypergrad import estimate_hypergradient
from madsbo.netgraph import CommCounter, build_complete, build_ring
from madsbo.oracle import SampleStreams
from madsbo.problems import make_problem, quad_instance
from madsbo.reference import higp_solve_reference


def random_spd(rng, q, lo, hi):
    Q, _ = np.linalg.qr(rng.standard_normal((q, q)))
    return Q @ np.diag(rng.uniform(lo, hi, q)) @ Q.T


def test_scalar_trace():
    W = build_complete(1)
    res = higp_run(W, fixed_quad_oracle([[[2.0]]], [[4.0]]), 0.25, 3, record=True)
    assert [float(z[0, 0]) for z in res.z_history] == [0.0, 1.0, 1.5, 1.75]
    z_star = higp_solve_reference(np.array([[2.0]]), np.array([4.0]))[0]
    assert z_star == pytest.approx(2.0, rel=1e-14)


def test_zero_rhs_is_fixed_point():
    W = build_ring(5, 0.4)
    H = np.stack([np.eye(3) * (i + 1) for i in range(5)])
    res = higp_run(W, fixed_quad_oracle(H, np.zeros((3, 5))), 0.05, 20, record=True)
    assert all(np.all(z == 0) for z in res.z_history)


def test_two_agent_identity_mean_converges_at_half():
    """gamma = 0.5 drives the average to (1, 1) but leaves a persistent disagreement.

    The disagreement mode of the complete graph (mixing eigenvalue 0) with unit
    curvature has iteration eigenvalues 0.5 and -1 at this stepsize.
    """
    W = build_complete(2)
    H = np.stack([np.eye(2), np.eye(2)])
    B = np.array([[2.0, 0.0], [0.0, 2.0]])
    res = higp_run(W, fixed_quad_oracle(H, B), 0.5, 200)
    np.testing.assert_allclose(res.z.mean(axis=1), [1.0, 1.0], atol=1e-12)
    assert np.linalg.norm(res.z[:, 0] - res.z[:, 1]) > 0.1
    assert tracking_radius(0.0, 1.0, 0.5) == pytest.approx(1.0)


def test_two_agent_identity_agents_converge_inside_stable_range():
    W = build_complete(2)
    H = np.stack([np.eye(2), np.eye(2)])
    B = np.array([[2.0, 0.0], [0.0, 2.0]])
    for gamma in (0.25, default_gamma(W, 1.0, 1.0)):
        res = higp_run(W, fixed_quad_oracle(H, B), gamma, 200)
        np.testing.assert_allclose(res.z, np.ones((2, 2)), atol=1e-10)


def test_reference_solver():
    b = np.array([0.3, -2.0, 5.0])
    np.testing.assert_array_equal(higp_solve_reference(np.eye(3), b), b)
    np.testing.assert_allclose(higp_solve_reference(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])
    with pytest.raises(ValueError):
        higp_solve_reference(np.diag([1.0, -1.0]), [1.0, 1.0])
    with pytest.raises(ValueError):
        higp_solve_reference(np.array([[1.0, 0.5], [0.0, 1.0]]), [1.0, 1.0])


def test_random_spd_complete_graph_matches_direct_solve():
    # eigenvalues of the local Hessians in [2, 2.5]; gamma = 0.1 / L
    rng = np.random.default_rng(1)
    n, q = 4, 5
    H = np.stack([random_spd(rng, q, 2.0, 2.5) for _ in range(n)])
    B = rng.standard_normal((q, n))
    z_star = higp_solve_reference(H.mean(axis=0), B.mean(axis=1))
    res = higp_run(build_complete(n), fixed_quad_oracle(H, B), 0.1 / 2.5, 200)
    assert np.max(np.abs(res.z - z_star[:, None])) <= 1e-6


def test_geometric_convergence_on_ring():
    rng = np.random.default_rng(2)
    n, q = 8, 6
    H = np.stack([random_spd(rng, q, 1.0, 2.0) for _ in range(n)])
    B = rng.standard_normal((q, n))
    W = build_ring(8, 0.4)
    z_star = higp_solve_reference(H.mean(axis=0), B.mean(axis=1))
    res = higp_run(W, fixed_quad_oracle(H, B), default_gamma(W, 1.0, 2.0), 300, record=True)
    errs = np.array([np.linalg.norm(z.mean(axis=1) - z_star) for z in res.z_history])
    t = np.arange(20, 200)
    ratio = np.exp(np.polyfit(t, np.log(errs[t]), 1)[0])
    assert ratio < 1
    assert errs[-1] < 1e-8


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 8), q=st.integers(1, 5), seed=st.integers(0, 2**31), N=st.integers(1, 60))
def test_tracking_identity_noiseless(n, q, seed, N):
    rng = np.random.default_rng(seed)
    H = np.stack([random_spd(rng, q, 0.5, 2.0) for _ in range(n)])
    B = 3 * rng.standard_normal((q, n))
    W = build_ring(n, 0.4) if n > 1 else build_complete(1)
    res = higp_run(W, fixed_quad_oracle(H, B), default_gamma(W, 0.5, 2.0), N)
    assert len(res.tracking_gaps) == N + 1
    assert max(res.tracking_gaps) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), sigma=st.floats(0.0, 2.0), N=st.integers(1, 40))
def test_tracking_identity_stochastic(seed, sigma, N):
    prob = quad_instance(n=6, p=3, q=4, sigma_f=sigma, sigma_g1=sigma, sigma_g2=sigma, seed=3)
    W = build_ring(6, 0.4)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((3, 6))
    Y = rng.standard_normal((4, 6))
    est = estimate_hypergradient(W, prob, X, Y, 0.1, N, SampleStreams(seed, 6))
    assert max(est.higp.tracking_gaps) <= 1e-10


def test_one_hv_call_per_round_and_comm():
    calls = []

    def hv(t, Z):
        calls.append(t)
        return Z

    W = build_ring(4, 0.5)
    comm = CommCounter()
    higp_run(W, QuadOracle(hv=hv, rhs=lambda t: np.ones((2, 4))), 0.1, 7, comm=comm)
    assert calls == list(range(1, 8))
    assert comm.scalars == 7 * 2 * W.directed_edges * 2


def test_expected_value_consensus_over_seeds():
    prob = quad_instance(n=8, p=3, q=4, sigma_f=0.5, sigma_g1=0.5, sigma_g2=0.5, seed=6)
    W = build_ring(8, 0.4)
    gamma = default_gamma(W, 1.0, 1.0)
    x = np.array([0.5, -0.3, 0.2])
    X, Y = prob.tile(x, prob.lower_solution(x))
    z_star = (Y[:, 0] - prob.a.mean(axis=1))
    zs = []
    for s in range(300):
        zs.append(estimate_hypergradient(W, prob, X, Y, gamma, 80, SampleStreams(s, 8)).z)
    zs = np.array(zs)
    mean = zs.mean(axis=0)
    se = zs.std(axis=0, ddof=1) / np.sqrt(len(zs))
    assert np.all(np.abs(mean - z_star[:, None]) <= 5 * se + 1e-8)


def test_diverges_loudly_beyond_stability_boundary():
    W = build_ring(4, 0.5)
    H = np.stack([np.eye(2)] * 4)
    with pytest.raises(DivergedError) as exc:
        higp_run(W, fixed_quad_oracle(H, np.ones((2, 4))), 2.0 / 1.0 + 0.5, 500)
    assert exc.value.where == "higp"
    assert exc.value.index >= 1


def test_nonfinite_detected():
    W = build_complete(1)
    quad = QuadOracle(hv=lambda t, Z: Z * np.nan, rhs=lambda t: np.ones((1, 1)))
    with pytest.raises(DivergedError):
        higp_run(W, quad, 0.1, 3)


def test_argument_validation():
    W = build_ring(3, 0.4)
    quad = fixed_quad_oracle(np.stack([np.eye(2)] * 3), np.ones((2, 3)))
    with pytest.raises(ValueError):
        higp_run(W, quad, 0.0, 3)
    with pytest.raises(ValueError):
        higp_run(W, quad, 0.1, 0)
    with pytest.raises(ValueError):
        higp_run(W, fixed_quad_oracle(np.stack([np.eye(2)] * 3), np.ones((2, 4))), 0.1, 3)


def test_logreg_hessian_rayleigh_quotients_in_declared_range():
    prob = make_problem("logreg", p=6, n=4, samples_per_node=60, seed=1)
    c = prob.declared_constants()
    rng = np.random.default_rng(0)
    with prob.uncounted():
        for _ in range(50):
            X = rng.uniform(prob.lam_min, 0.0, (6, 4))
            Y = rng.standard_normal((6, 4))
            V = rng.standard_normal((6, 4))
            HV = prob.hess_gyy_vec(X, Y, V)
            rq = np.sum(V * HV, axis=0) / np.sum(V * V, axis=0)
            assert np.all(rq >= c["mu_g"] * (1 - 1e-12))
            assert np.all(rq <= c["L_g1"] * (1 + 1e-12))


def test_default_gamma_is_stable_on_rings():
    for n in (3, 4, 8, 12):
        for w in (0.2, 0.4, 0.6):
            W = build_ring(n, w)
            g = default_gamma(W, 1.0, 1.0)
            modes = np.linalg.eigvalsh(W.w)
            assert max(tracking_radius(m, 1.0, g) for m in modes) < 1


def test_default_half_over_L_is_unstable_on_ring8():
    """The common 0.5 / L choice has a mode with radius > 1 on ring(8, 0.4)."""
    W = build_ring(8, 0.4)
    modes = np.linalg.eigvalsh(W.w)
    assert max(tracking_radius(m, 1.0, 0.5) for m in modes) > 1
    g = default_gamma(W, 1.0, 1.0)
    assert 0.05 <= g <= 0.15


def test_tracking_radius_matches_simulation():
    # two agents, unit curvature: the simulated disagreement decays at the predicted rate
    W = build_ring(2, 0.3)
    mu_w = float(np.linalg.eigvalsh(W.w)[0])
    gamma = 0.2
    H = np.stack([np.eye(1), np.eye(1)])
    B = np.array([[1.0, -1.0]])
    res = higp_run(W, fixed_quad_oracle(H, B), gamma, 80, record=True)
    dis = np.array([abs(z[0, 0] - z[0, 1]) for z in res.z_history])
    t = np.arange(30, 80)
    rate = np.exp(np.polyfit(t, np.log(dis[t]), 1)[0])
    assert rate == pytest.approx(tracking_radius(mu_w, 1.0, gamma), rel=1e-3)
