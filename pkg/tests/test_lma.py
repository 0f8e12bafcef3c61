import numpy as np

from tileproc.lma import levenberg_marquardt

X = np.linspace(-3, 3, 25)


def exp_model(p, idx):
    a, k = p[:, :1], p[:, 1:2]
    e = np.exp(-k * X[None, :] ** 2)
    jac = np.stack([e, -a * X[None, :] ** 2 * e], axis=-1)
    return a * e, jac


def test_recovers_parameters_batched():
    true = np.array([[1.0, 0.5], [2.0, 0.2], [0.3, 1.5]])
    data, _ = exp_model(true, np.arange(3))
    p, conv, it = levenberg_marquardt(exp_model, np.ones((3, 2)), data, max_iter=100)
    assert conv.all()
    np.testing.assert_allclose(p, true, atol=1e-8)
    assert np.all(it >= 1)


def test_weights_ignore_outliers():
    true = np.array([[1.0, 0.5]])
    data, _ = exp_model(true, np.arange(1))
    data = data.copy()
    data[0, 3] += 10.0
    w = np.ones_like(data)
    w[0, 3] = 0.0
    p, conv, _ = levenberg_marquardt(exp_model, np.array([[0.8, 0.8]]), data, w, max_iter=100)
    np.testing.assert_allclose(p, true, atol=1e-8)


def test_linear_problem_one_step():
    def line(p, idx):
        vals = p[:, :1] + p[:, 1:2] * X[None, :]
        jac = np.stack([np.ones_like(vals), np.broadcast_to(X, vals.shape)], axis=-1)
        return vals, jac

    data = (0.5 - 2.0 * X)[None, :]
    p, conv, _ = levenberg_marquardt(line, np.zeros((1, 2)), data, max_iter=50)
    np.testing.assert_allclose(p[0], [0.5, -2.0], atol=1e-9)


def test_model_sees_active_indices():
    seen = []

    def model(p, idx):
        seen.append(np.array(idx))
        return exp_model(p, idx)

    data, _ = exp_model(np.array([[1.0, 0.5], [1.0, 0.5]]), np.arange(2))
    start = np.array([[1.0, 0.5], [0.5, 1.0]])  # first item already exact
    levenberg_marquardt(model, start, data, max_iter=30)
    assert list(seen[0]) == [0, 1]
    assert any(len(s) == 1 and s[0] == 1 for s in seen[1:])


def test_non_convergence_reported():
    true = np.array([[1.0, 0.5]])
    data, _ = exp_model(true, np.arange(1))
    _, conv, it = levenberg_marquardt(exp_model, np.array([[5.0, 3.0]]), data, max_iter=1)
    assert not conv[0] and it[0] == 1
