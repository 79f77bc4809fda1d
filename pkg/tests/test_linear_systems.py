import math

import numpy as np
import pytest

from collect_estimate.linear_systems import (GraphSpec, LinearNetworkModel, complete_graph,
                                             elapsed_cost, elapsed_cost_closed,
                                             elapsed_cost_sum, elapsed_cost_table,
                                             estimate_from_last, estimate_only_cost,
                                             finite_horizon_schedule, kalman_like_update,
                                             load_adjacency, monte_carlo_elapsed_cost,
                                             riccati_step, schedule_grid_csv, schedule_objective,
                                             spectral_vectorize, star_graph,
                                             y_space_value_iteration)


def test_graph_builders():
    assert complete_graph(3).tolist() == [[0, 1, 1], [1, 0, 1], [1, 1, 0]]
    s = star_graph(4)
    assert s.sum() == 6 and s[0, 1:].tolist() == [1, 1, 1] and s[1:, 1:].sum() == 0
    with pytest.raises(ValueError):
        GraphSpec(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        GraphSpec(complete_graph(3), D=4)


def test_load_adjacency_formats(tmp_path):
    edges = tmp_path / "e.csv"
    edges.write_text("i,j\n0,1\n1,2\n")
    assert load_adjacency(str(edges)).tolist() == [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    dense = tmp_path / "d.csv"
    np.savetxt(dense, star_graph(5), delimiter=",")
    assert np.array_equal(load_adjacency(str(dense)), star_graph(5))


@pytest.mark.parametrize("n", [3, 5, 9])
def test_complete_graph_mode(n):
    A = 0.8
    (mode,) = spectral_vectorize(GraphSpec(complete_graph(n), (0.0, A / (n - 1))))
    assert mode.eigenvalue == pytest.approx(n - 1)
    assert mode.A == pytest.approx(A)
    assert np.allclose(mode.v, 1.0)


@pytest.mark.parametrize("n", [3, 5, 9])
def test_star_graph_mode_magnitude(n):
    A = 0.8
    (mode,) = spectral_vectorize(GraphSpec(star_graph(n), (0.0, A / (n - 1))))
    assert mode.eigenvalue == pytest.approx(math.sqrt(n - 1))
    assert abs(mode.A) == pytest.approx(A / math.sqrt(n - 1))
    assert np.mean(mode.v**2) == pytest.approx(1.0)
    assert mode.v[np.argmax(np.abs(mode.v))] > 0


def test_from_graph_noise_covariance():
    n, sigma2 = 6, 2.5
    model = LinearNetworkModel.from_graph(GraphSpec(complete_graph(n), (0.0, 0.1)), sigma2)
    assert model.noise_cov[0, 0] == pytest.approx(sigma2 / n)
    with pytest.raises(ValueError):
        LinearNetworkModel([[0.5]], [[-1.0]])
    with pytest.raises(ValueError):
        LinearNetworkModel([[0.5, 0], [0, 0.5]], [[1.0, 0.2], [0.0, 1.0]])


def test_estimators():
    A = np.array([[0.5, 0.2], [0.0, 0.9]])
    x = np.array([1.0, -1.0])
    assert np.allclose(estimate_from_last(x, 3, A), np.linalg.matrix_power(A, 3) @ x)
    assert np.allclose(kalman_like_update(x, [9.0, 9.0], 0, A), [9.0, 9.0])
    assert np.allclose(kalman_like_update(x, None, 2, A), A @ x)
    with pytest.raises(ValueError):
        kalman_like_update([1.0], None, 1, A)


def test_elapsed_cost_monotone_and_limit():
    A = np.array([[0.6, 0.2], [0.2, 0.5]])
    W = np.array([[1.0, 0.1], [0.1, 0.4]])
    vals = [elapsed_cost_sum(y, A, W) for y in range(60)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    limit = float(np.trace(np.linalg.solve(np.eye(2) - A.T @ A, W)))
    assert vals[-1] == pytest.approx(limit, rel=1e-12)
    assert elapsed_cost_closed(0, A, W) == 0.0


def test_elapsed_cost_forms_and_fee():
    sym = LinearNetworkModel([[0.7]], [[1.0]], fee=2.0)
    assert elapsed_cost(3, 1, sym) == pytest.approx(1 + 0.49 + 0.7**4 + 2.0)
    skew = LinearNetworkModel([[0.5, 1.0], [0.0, 0.5]], np.eye(2))
    assert not skew.stable_symmetric
    assert elapsed_cost(4, 0, skew) == elapsed_cost_sum(4, skew.A, skew.noise_cov)
    assert elapsed_cost(4, 0, sym, form="sum") == pytest.approx(elapsed_cost(4, 0, sym))
    with pytest.raises(ValueError):
        elapsed_cost(-1, 0, sym)
    tab = elapsed_cost_table(sym, 5, tau=2)
    assert tab[0, 0] == pytest.approx(elapsed_cost_sum(2, sym.A, sym.noise_cov))
    assert tab[3, 1] == pytest.approx(elapsed_cost_sum(5, sym.A, sym.noise_cov) + 2.0)


@pytest.mark.parametrize("noise", ["gaussian", "uniform", "centered_exponential"])
def test_monte_carlo_elapsed_cost(noise):
    model = LinearNetworkModel.from_graph(GraphSpec(star_graph(5), (0.0, 0.9 / 4), D=2), 3.0)
    for y in (1, 4):
        mean, se = monte_carlo_elapsed_cost(model, y, samples=200_000, noise=noise, seed=y)
        want = elapsed_cost_sum(y, model.A, model.noise_cov)
        assert abs(mean - want) <= 3 * se


def _y_bellman(c, q, gamma, V):
    k = len(V) - 1
    nxt = np.append(V[1:], V[0])
    return c[:, 0] + gamma * nxt, c[:, 1] + (1 - q) * gamma * nxt + q * gamma * V[0]


def test_y_space_fixed_point_and_threshold_shape():
    model = LinearNetworkModel([[0.9]], [[1.0]], q=0.9, gamma=0.85, fee=3.0)
    sol = y_space_value_iteration(model, 60, tol=1e-12)
    b0, b1 = _y_bellman(sol.costs, model.q, model.gamma, sol.value)
    assert np.abs(b0 - sol.v0).max() < 1e-10 and np.abs(b1 - sol.v1).max() < 1e-10
    # the last columns feel the wrap V(k+1) := V(0); check the shape away from it
    act = sol.action[:50]
    assert sol.threshold > 0
    assert np.all(act[: sol.threshold] == 0) and np.all(act[sol.threshold:] == 1)


def test_free_reliable_collection_collects_after_any_blank():
    model = LinearNetworkModel([[0.8]], [[1.0]], q=1.0, gamma=0.9, fee=0.0)
    sol = y_space_value_iteration(model, 10)
    k = 10
    assert np.all(sol.action[1:k] == 1)


def test_zero_noise_never_collects():
    model = LinearNetworkModel([[0.8]], [[0.0]], q=0.9, gamma=0.9, fee=0.5)
    assert y_space_value_iteration(model, 20).threshold == -1


def test_estimate_only_cost_closed_vs_series():
    model = LinearNetworkModel([[0.6, 0.1], [0.1, 0.3]], [[1.0, 0.2], [0.2, 0.5]], gamma=0.8)
    series = sum(0.8**y * elapsed_cost_sum(y, model.A, model.noise_cov) for y in range(300))
    assert estimate_only_cost(model) == pytest.approx(series, rel=1e-10)
    skew = LinearNetworkModel([[0.5, 0.4], [0.0, 0.5]], np.eye(2), gamma=0.8)
    series = sum(0.8**y * elapsed_cost_sum(y, skew.A, skew.noise_cov) for y in range(300))
    assert estimate_only_cost(skew) == pytest.approx(series, rel=1e-9)


def test_riccati_step_scalar():
    P = riccati_step(2.0, 1, 0.9, 1.0, 1.0, 0.5)
    assert P[0, 0] == pytest.approx(0.81 * 2.0 * 0.5 / 2.5 + 1.0)
    assert riccati_step(2.0, 0, 0.9, 1.0)[0, 0] == pytest.approx(0.81 * 2 + 1)
    # perfect measurement of a zero-covariance state: no warning, no change
    assert riccati_step(0.0, 1, 0.9, 1.0)[0, 0] == pytest.approx(1.0)
    with pytest.warns(RuntimeWarning):
        out = riccati_step(np.diag([1.0, 0.0]), 1, np.eye(2), np.eye(2), np.eye(2),
                           np.zeros((2, 2)))
    assert np.allclose(out, np.eye(2))


def test_schedule_objective_and_cap():
    obj = schedule_objective((1, 0), 0.9, 1.0, 1.0, 0.5, gamma=0.5, fee=2.0)
    P1 = 1.0  # measuring P=0 then predicting
    P2 = 0.81 * P1 + 1.0
    assert obj == pytest.approx(P1 + 2.0 + 0.5 * P2)
    with pytest.raises(ValueError):
        finite_horizon_schedule(0.9, 1.0, H=23)
    assert finite_horizon_schedule(0.9, 1.0, H=0) == ((), 0.0)


def test_schedule_grid_csv(tmp_path):
    path = tmp_path / "g.csv"
    text = schedule_grid_csv([{"y": 0, "action": 1}, {"y": 1, "action": 0}], path)
    assert text.splitlines()[0] == "y,action" and path.read_text() == text
