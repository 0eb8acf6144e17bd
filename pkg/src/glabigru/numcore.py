"""Small dense numeric core shared by the model and the optimizer.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Randomness
comes from ``numpy.random.Generator`` over PCG64: a given seed always
produces the same stream, and every consumer draws from its own generator
(see :func:`spawn_rngs`) so adding draws in one place never shifts another.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NumericError, UsageError

DTYPE = np.float64

Params = dict[str, np.ndarray]


def _floating(x) -> np.ndarray:
    """As an array, keeping float64 or wider dtypes and promoting the rest."""
    x = np.asarray(x)
    return x.astype(np.result_type(x.dtype, DTYPE), copy=False)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent generators derived from one seed, in a fixed order."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = _floating(logits)
    if logits.size == 0:
        raise UsageError("softmax of an empty vector")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Gradient wrt logits given the gradient wrt softmax outputs."""
    return probs * (dprobs - probs @ dprobs)


def sigmoid(x):
    """Overflow-free logistic function for scalars or arrays."""
    x = _floating(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def gaussian_init(shape, std: float, rng: np.random.Generator) -> np.ndarray:
    if not std > 0:
        raise UsageError(f"gaussian_init needs std > 0, got {std}")
    return rng.normal(0.0, std, size=shape).astype(DTYPE, copy=False)


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


def clone_params(params: Mapping[str, np.ndarray]) -> Params:
    return {k: v.copy() for k, v in params.items()}


def zeros_like_params(params: Mapping[str, np.ndarray]) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


@dataclass
class GradReport:
    """Outcome of a finite-difference check.

    ``errors`` holds the max relative error per parameter tensor and
    ``samples`` the checked ``(flat index, analytic, numeric)`` triples.
    """

    errors: dict[str, float]
    tolerance: float
    samples: dict[str, list[tuple[int, float, float]]] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(
    loss_and_grad: Callable[[Params], tuple[float, Mapping[str, np.ndarray]]],
    params: Params,
    h: float = 1e-5,
    tol: float = 1e-4,
    n_samples: int | None = 64,
    rng: np.random.Generator | None = None,
    numeric_loss: Callable[[Params], float] | None = None,
) -> GradReport:
    """Compare analytic gradients with central differences.

    ``loss_and_grad`` maps parameters to ``(loss, grads)``.  Up to
    ``n_samples`` coordinates per tensor are checked (all of them when
    ``n_samples`` is None or the tensor is small).  ``params`` is perturbed
    in place and restored afterwards.

    ``numeric_loss`` optionally replaces the loss used for the differences,
    e.g. the same function evaluated in extended precision: in float64 the
    rounding of a loss near 3 alone contributes ~1e-11 to every difference
    quotient, which swamps coordinates whose true gradient is below ~1e-7.
    """
    if not 1e-7 <= h <= 1e-3:
        raise UsageError(f"step h={h} outside [1e-7, 1e-3]")
    rng = rng if rng is not None else make_rng(0)

    loss0, grads = loss_and_grad(params)
    loss1, _ = loss_and_grad(params)
    if loss0 != loss1:
        raise NumericError(
            f"loss is not deterministic ({loss0!r} vs {loss1!r}); "
            "disable dropout or fix the rng before checking gradients"
        )

    f = numeric_loss if numeric_loss is not None else (lambda p: loss_and_grad(p)[0])

    errors: dict[str, float] = {}
    samples: dict[str, list[tuple[int, float, float]]] = {}
    for name, theta in params.items():
        g = np.asarray(grads[name]).reshape(-1)
        if n_samples is None or theta.size <= n_samples:
            idx = np.arange(theta.size)
        else:
            idx = np.sort(rng.choice(theta.size, size=n_samples, replace=False))
        worst = 0.0
        rows = []
        for i in idx:
            old = theta.flat[i]
            theta.flat[i] = plus = old + h
            fp = f(params)
            theta.flat[i] = minus = old - h
            fm = f(params)
            theta.flat[i] = old
            # the step actually taken, which float64 rounding makes differ from 2h
            num = float((fp - fm) / (np.longdouble(plus) - np.longdouble(minus)))
            worst = max(worst, relative_error(g[i], num))
            rows.append((int(i), float(g[i]), float(num)))
        errors[name] = worst
        samples[name] = rows
    return GradReport(errors=errors, tolerance=tol, samples=samples)
