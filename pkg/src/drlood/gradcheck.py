"""Central finite-difference checks for the reverse-mode gradients."""
from dataclasses import dataclass

import numpy as np

from drlood.numerics import GradientTape, backward, forward, init_mlp, softmax_cross_entropy

STEP = 1e-5
REL_TOL = 1e-4
ABS_TOL = 1e-7
NEAR_ZERO = 1e-5


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    passed: bool


def numeric_gradient(f, array, step=STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def compare(name, analytic, numeric, rel_tol=REL_TOL, abs_tol=ABS_TOL):
    """Entries whose magnitude exceeds ``NEAR_ZERO`` must agree to ``rel_tol``
    relatively; the rest to ``abs_tol`` absolutely."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    abs_err = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    big = scale > NEAR_ZERO
    rel_err = np.where(big, abs_err / np.where(big, scale, 1.0), 0.0)
    ok = np.where(big, rel_err <= rel_tol, abs_err <= abs_tol)
    return GradCheckResult(name, float(rel_err.max(initial=0.0)), float(abs_err.max(initial=0.0)),
                           int(a.size), bool(ok.all()))


def check_parameter_gradients(name, net, loss_fn, step=STEP):
    """Compare tape gradients of ``loss_fn(net, tape)`` with finite differences.

    ``loss_fn`` must build its graph on the given tape (or none) and return
    the scalar loss.
    """
    tape = GradientTape()
    loss_fn(net, tape)
    grads = backward(tape)
    net = net.copy()
    numeric = [numeric_gradient(lambda: loss_fn(net, None), p, step) for p in net.parameters()]
    return compare(name, grads.parameters(), numeric)


def check_input_gradient(name, f_with_grad, f, x, step=STEP):
    """``f_with_grad(x)`` returns the analytic input gradient of scalar ``f(x)``."""
    x = np.array(x, dtype=np.float64)
    analytic = f_with_grad(x)
    numeric = numeric_gradient(lambda: f(x), x, step)
    return compare(name, [analytic], [numeric])


def random_classification_case(rng, max_dim=8, max_layers=3):
    """A random net with at most ``max_layers`` layers and dims at most ``max_dim``, plus a batch."""
    n_layers = int(rng.integers(1, max_layers + 1))
    dims = [int(d) for d in rng.integers(2, max_dim + 1, size=n_layers + 1)]
    net = init_mlp(dims, int(rng.integers(2**31)))
    for b in net.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    X = rng.normal(size=(int(rng.integers(1, 6)), dims[0]))
    y = rng.integers(0, dims[-1], size=len(X))
    return net, X, y


def ce_loss_fn(X, y):
    def fn(net, tape):
        return softmax_cross_entropy(forward(net, X, tape=tape), y, tape=tape)
    return fn


def random_aux_case(rng, max_dim=6):
    """A frozen pretrained net, an auxiliary net, a PSD covariance, epsilon and a batch."""
    dim, hidden, k = (int(v) for v in rng.integers(2, max_dim + 1, size=3))
    pre = init_mlp([dim, hidden, k], int(rng.integers(2**31))).freeze()
    aux = init_mlp([dim, hidden, k], int(rng.integers(2**31)))
    A = rng.normal(size=(k, k))
    sigma = A @ A.T / k
    epsilon = float(rng.choice([1e-3, 1e-2, 0.1]))
    X = rng.normal(size=(int(rng.integers(1, 6)), dim))
    y = rng.integers(0, k, size=len(X))
    return pre, aux, sigma, epsilon, X, y


def aux_loss_fn(pretrained_net, sigma, epsilon, X, y):
    from drlood.auxiliary import constrained_loss

    def fn(net, tape):
        return constrained_loss(net, pretrained_net, sigma, epsilon, X, y, tape=tape)
    return fn


def odin_objective(net, temperature):
    """The ODIN perturbation objective and its analytic gradient, as functions of x."""
    from drlood.detectors import odin_input_gradient
    from drlood.numerics import log_softmax

    def f(x):
        return float(np.sum(np.max(log_softmax(forward(net, x) / temperature), axis=1)))
    return (lambda x: odin_input_gradient(net, x, temperature)), f


def run_suite(rng, n_cases=10):
    """Cross-entropy, auxiliary-loss and ODIN checks on ``n_cases`` random instances each."""
    results = []
    for i in range(n_cases):
        net, X, y = random_classification_case(rng)
        results.append(check_parameter_gradients(f"cross_entropy[{i}]", net, ce_loss_fn(X, y)))
        pre, aux, sigma, eps, Xa, ya = random_aux_case(rng)
        results.append(check_parameter_gradients(f"aux_loss[{i}]", aux, aux_loss_fn(pre, sigma, eps, Xa, ya)))
        temperature = float(rng.choice([1.0, 10.0, 1000.0]))
        grad_fn, f = odin_objective(net, temperature)
        results.append(check_input_gradient(f"odin_input[{i}]", grad_fn, f, rng.normal(size=X.shape)))
    return results
