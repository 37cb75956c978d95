import numpy as np

from layoutkit import lbfgs


def quadratic(h):
    def fun(x):
        return 0.5 * x @ (h @ x), h @ x

    return fun


def rosenbrock(x):
    a, b = 1.0, 100.0
    f = (a - x[0]) ** 2 + b * (x[1] - x[0] ** 2) ** 2
    g = np.array(
        [
            -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] ** 2),
            2.0 * b * (x[1] - x[0] ** 2),
        ]
    )
    return f, g


def test_quadratic_exact():
    h = np.diag([1.0, 4.0, 9.0])
    res = lbfgs.minimize(quadratic(h), np.array([3.0, -2.0, 1.0]))
    assert res.converged
    assert np.max(np.abs(res.x)) < 1e-8
    assert np.max(np.abs(res.grad)) < 1e-9


def test_ill_conditioned_quadratic():
    rng = np.random.default_rng(5)
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    h = q @ np.diag(np.logspace(0, 5, 8)) @ q.T
    res = lbfgs.minimize(quadratic(h), rng.standard_normal(8), max_iter=500)
    assert res.converged
    assert np.max(np.abs(res.x)) < 1e-6


def test_rosenbrock():
    res = lbfgs.minimize(rosenbrock, np.array([-1.2, 1.0]))
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-7)


def test_history_one_still_works():
    res = lbfgs.minimize(rosenbrock, np.array([-1.2, 1.0]), history=1, max_iter=2000)
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)


def test_max_iter_flagged():
    res = lbfgs.minimize(rosenbrock, np.array([-1.2, 1.0]), max_iter=2)
    assert not res.converged


def test_already_at_minimum():
    h = np.eye(2)
    res = lbfgs.minimize(quadratic(h), np.zeros(2))
    assert res.converged
    assert res.iterations == 0
