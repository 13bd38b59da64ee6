"""Central finite-difference checks of the analytic network gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .losses import DeepFSpec, deepf_loss, deepf_value, xent_loss
from .nn import Network, init_network

STEP = 1e-5
TOLERANCE = 1e-5
# instances closer than this to a ReLU or argmax kink are redrawn
KINK_MARGIN = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|) over one parameter array."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_gradient(f: Callable[[], float], params: Sequence[np.ndarray], step: float = STEP) -> list[np.ndarray]:
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = f()
            flat[i] = orig - step
            minus = f()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * step)
        out.append(g)
    return out


def _loss_and_grads(net: Network, x, y, loss: str, spec: DeepFSpec | None, flip_sign: bool = False):
    q = net.forward(x)
    if loss == "xent":
        value, gz = xent_loss(q, y)
        grads = net.backward_logits(gz)
    else:
        value, gq = deepf_loss(q, y, spec)
        grads = net.backward(-gq if flip_sign else gq)
    return value, grads


def _near_kink(net: Network, x: np.ndarray, margin: float) -> bool:
    net.forward(x)
    _, pre, q = net._cache
    for layer, z in zip(net.layers[:-1], pre[:-1]):
        if np.any(np.abs(z) < margin):
            return True
    top2 = np.sort(q, axis=1)[:, -2:]
    return bool(np.any(top2[:, 1] - top2[:, 0] < margin))


@dataclass
class CheckResult:
    seed: int
    activation: str
    loss: str
    beta: float | None
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def random_instance(seed: int, activation: str, max_tries: int = 200):
    """A small random network and batch away from non-differentiable points."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        d, k, b = rng.integers(2, 6), rng.integers(2, 5), rng.integers(3, 9)
        hidden = list(rng.integers(2, 6, size=rng.integers(1, 3)))
        net = init_network([d, *hidden, k], activation, seed=int(rng.integers(2**31)))
        for p in net.parameters():
            p += rng.normal(scale=0.3, size=p.shape)
        x = rng.normal(size=(b, d))
        y = rng.integers(0, k, size=b)
        if not _near_kink(net, x, KINK_MARGIN):
            return net, x, y
    raise RuntimeError(f"could not draw a kink-free instance for seed {seed}")


def check_instance(seed: int, activation: str, loss: str, beta: float | None = None,
                   step: float = STEP, flip_sign: bool = False) -> CheckResult:
    net, x, y = random_instance(seed, activation)
    spec = DeepFSpec(beta=beta) if loss == "deepf" else None
    _, analytic = _loss_and_grads(net, x, y, loss, spec, flip_sign)
    if loss == "deepf":
        m = np.argmax(net.forward(x), axis=1)
        f = lambda: deepf_value(net.forward(x), y, spec, max_index=m)
    else:
        f = lambda: xent_loss(net.forward(x), y)[0]
    numeric = numeric_gradient(f, net.parameters(), step)
    err = max(relative_error(a, n) for a, n in zip(analytic, numeric))
    return CheckResult(seed, activation, loss, beta, err)


def run_suite(n_instances: int = 20, seed: int = 0, activations=("relu", "leaky_relu"),
              betas=(0.5, 1.0, 2.0, 4.0), flip_sign: bool = False) -> list[CheckResult]:
    """Both losses on ``n_instances`` random instances per activation.

    Instance ``i`` of the deep-F check cycles through ``betas``.
    """
    results = []
    for act in activations:
        for i in range(n_instances):
            s = seed * 100_003 + i
            results.append(check_instance(s, act, "xent"))
            results.append(check_instance(s, act, "deepf", betas[i % len(betas)], flip_sign=flip_sign))
    return results
