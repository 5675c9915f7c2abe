"""Central-difference gradient checks for every differentiable op.

Each case builds float64 inputs from a seeded generator and a scalar
objective ``sum(op(inputs) * R)`` with a fixed random projection ``R``, so the
full Jacobian is exercised. Inputs are kept away from kinks (ReLU at zero,
max-pool ties) by construction.
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Iterable, Optional

import numpy as np

from . import ops
from .tensor import Tensor

STEP = 1e-3
DEFAULT_TOL = 1e-4
BATCHNORM_TOL = 1e-3


@dataclasses.dataclass
class OpReport:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.sign(x) * (margin + np.abs(x))


def _distinct(rng, shape, spacing=0.05):
    n = int(np.prod(shape))
    return (rng.permutation(n) * spacing + rng.uniform(0, 0.2 * spacing, n)).reshape(shape) - n * spacing / 2


def _projected(fn, rng):
    """Wrap ``fn`` so it returns the scalar ``sum(fn(...) * R)``."""
    cache = {}

    def objective(*tensors):
        out = fn(*tensors)
        if out.size == 1:
            return out.reshape(())
        if "R" not in cache:
            cache["R"] = rng.standard_normal(out.shape)
        return ops.sum(ops.mul(out, cache["R"]))

    return objective


def _cases() -> dict[str, tuple[Callable, float]]:
    """name -> (builder(rng) -> (objective, inputs), tolerance)."""
    cases: dict[str, tuple[Callable, float]] = {}

    def case(name, tol=DEFAULT_TOL):
        def deco(builder):
            cases[name] = (builder, tol)
            return builder
        return deco

    @case("conv2d")
    def _(rng):
        x = rng.standard_normal((2, 3, 5, 5))
        w = rng.standard_normal((4, 3, 3, 3)) * 0.5
        b = rng.standard_normal(4)
        return (lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding="same")), [x, w, b]

    @case("conv2d_stride2")
    def _(rng):
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((2, 3, 3, 3)) * 0.5
        return (lambda x, w: ops.conv2d(x, w, stride=2)), [x, w]

    @case("conv2d_5x5_single_out")
    def _(rng):
        x = rng.standard_normal((3, 8, 4, 6))
        w = rng.standard_normal((1, 8, 5, 5)) * 0.3
        b = rng.standard_normal(1)
        return (lambda x, w, b: ops.conv2d(x, w, b)), [x, w, b]

    @case("channel_pool_max")
    def _(rng):
        return (lambda x: ops.channel_pool(x, "max")), [_distinct(rng, (2, 4, 3, 3))]

    @case("channel_pool_avg")
    def _(rng):
        return (lambda x: ops.channel_pool(x, "avg")), [rng.standard_normal((2, 4, 3, 3))]

    @case("frobenius_reduce")
    def _(rng):
        f = rng.standard_normal((4, 8, 6))
        p = rng.uniform(0, 1, (8, 6))
        return ops.frobenius_reduce, [f, p]

    @case("frobenius_reduce_batched")
    def _(rng):
        f = rng.standard_normal((2, 1, 3, 4, 2, 5))
        p = rng.uniform(0, 1, (2, 3, 3, 2, 5))
        return ops.frobenius_reduce, [f, p]

    @case("softmax")
    def _(rng):
        return (lambda x: ops.softmax(x, axis=-1)), [rng.standard_normal((3, 5))]

    @case("batchnorm2d", BATCHNORM_TOL)
    def _(rng):
        x = rng.standard_normal((2, 3, 4, 4))
        g = rng.uniform(0.5, 1.5, 3)
        b = rng.standard_normal(3)
        return (lambda x, g, b: ops.batchnorm2d(x, g, b, ops.BatchNormState(3, dtype=np.float64))), [x, g, b]

    @case("batchnorm2d_eval", BATCHNORM_TOL)
    def _(rng):
        state = ops.BatchNormState(3, dtype=np.float64)
        state.running_mean = rng.standard_normal(3)
        state.running_var = rng.uniform(0.5, 2, 3)
        x = rng.standard_normal((2, 3, 3, 3))
        return (lambda x, g, b: ops.batchnorm2d(x, g, b, state, mode="eval")), [
            x, rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)]

    @case("layernorm")
    def _(rng):
        x = rng.standard_normal((2, 3, 2, 4))
        return (lambda x, g, b: ops.layernorm(x, g, b, n_axes=3)), [
            x, rng.uniform(0.5, 1.5, (3, 2, 4)), rng.standard_normal((3, 2, 4))]

    @case("relu")
    def _(rng):
        return ops.relu, [_away_from_zero(rng, (3, 7))]

    @case("sigmoid")
    def _(rng):
        return ops.sigmoid, [rng.standard_normal((3, 7)) * 2]

    @case("exp")
    def _(rng):
        return ops.exp, [rng.standard_normal((3, 4))]

    @case("add")
    def _(rng):
        return ops.add, [rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 1))]

    @case("sub")
    def _(rng):
        return ops.sub, [rng.standard_normal((2, 3, 4)), rng.standard_normal((4,))]

    @case("mul")
    def _(rng):
        return ops.mul, [rng.standard_normal((2, 3, 4)), rng.standard_normal((1, 3, 1))]

    @case("scale")
    def _(rng):
        return (lambda x: ops.scale(x, -2.5)), [rng.standard_normal((4, 3))]

    @case("maxpool2")
    def _(rng):
        return ops.maxpool2, [_distinct(rng, (2, 2, 4, 6))]

    @case("upsample_nearest2")
    def _(rng):
        return ops.upsample_nearest2, [rng.standard_normal((2, 2, 3, 2))]

    @case("concat")
    def _(rng):
        return (lambda a, b: ops.concat([a, b], axis=1)), [
            rng.standard_normal((2, 2, 3)), rng.standard_normal((2, 3, 3))]

    @case("reshape_transpose")
    def _(rng):
        return (lambda x: ops.transpose(ops.reshape(x, (4, 6)), (1, 0))), [rng.standard_normal((2, 3, 4))]

    @case("sum_mean")
    def _(rng):
        return (lambda x: ops.add(ops.sum(x, axis=1), ops.mean(x, axis=1))), [rng.standard_normal((3, 5))]

    @case("broadcast_to")
    def _(rng):
        return (lambda x: ops.broadcast_to(x, (3, 4, 5))), [rng.standard_normal((4, 1))]

    @case("cross_entropy")
    def _(rng):
        logits = rng.standard_normal((2, 4, 3, 3))
        labels = rng.integers(0, 4, (2, 3, 3))
        labels[0, 0, :] = 255
        labels[1, 2, 1] = 255
        return (lambda z: ops.cross_entropy(z, labels, ignore_label=255)), [logits]

    @case("uncertainty_loss")
    def _(rng):
        y = rng.standard_normal((2, 4, 4))
        mask = rng.uniform(size=(2, 4, 4)) > 0.3
        mask[0, 0, 0] = True
        return (lambda m, s: ops.uncertainty_loss(m, s, y, mask)), [
            rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4)) * 0.5]

    return cases


OP_CASES = _cases()


def numeric_grads(objective, inputs: list[np.ndarray], h: float = STEP) -> list[np.ndarray]:
    grads = []
    for k, x in enumerate(inputs):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = objective(*[Tensor(a) for a in inputs]).item()
            flat[i] = orig - h
            fm = objective(*[Tensor(a) for a in inputs]).item()
            flat[i] = orig
            g.reshape(-1)[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grads(objective, inputs: list[np.ndarray]) -> list[np.ndarray]:
    tensors = [Tensor(a.copy(), requires_grad=True) for a in inputs]
    objective(*tensors).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_op(name: str, seed: int, broken: bool = False) -> float:
    builder, _ = OP_CASES[name]
    rng = np.random.default_rng(seed)
    fn, inputs = builder(rng)
    inputs = [np.asarray(a, dtype=np.float64) for a in inputs]
    objective = _projected(fn, rng)
    ana = analytic_grads(objective, inputs)
    if broken:
        ana = [a * 1.05 + 1e-3 for a in ana]
    num = numeric_grads(objective, inputs)
    return max(relative_error(a, n) for a, n in zip(ana, num))


def run_suite(seed: int = 0, n_seeds: int = 5, broken: Optional[Iterable[str]] = None,
              names: Optional[Iterable[str]] = None) -> list[OpReport]:
    """Check every registered op over ``n_seeds`` consecutive seeds."""
    broken = set(broken or ())
    unknown = broken - set(OP_CASES)
    if unknown:
        raise KeyError(f"unknown op(s) {sorted(unknown)}")
    reports = []
    for name in (names or OP_CASES):
        _, tol = OP_CASES[name]
        worst = max(check_op(name, seed + s, broken=name in broken) for s in range(n_seeds))
        reports.append(OpReport(name, worst, tol))
    return reports
