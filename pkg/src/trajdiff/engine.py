"""Dense float64 array primitives with tape-based reverse-mode differentiation.

Values are plain ``numpy.ndarray``s.  Each primitive validates shapes, computes
its result in float64, verifies the output is finite, and (when a ``Tape`` is
active on the current thread) records a vector-Jacobian closure so that
``Tape.gradients`` can run the chain rule backwards.  Outside a tape the
primitives are just checked numpy calls, which is what inference uses.

The primitive set is deliberately closed: it is exactly what the encoder,
denoiser, and scorer need, plus two structural ops (``reshape``/``expand``)
for token-wise feature concatenation.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "EngineError",
    "ShapeError",
    "NumericError",
    "Tape",
    "matmul",
    "add",
    "mul",
    "concat_last",
    "softmax_last",
    "layer_norm_last",
    "gelu",
    "scale",
    "reduce_sum",
    "reduce_mean",
    "mse",
    "cross_entropy_soft",
    "dropout_apply",
    "reshape",
    "expand",
    "primitive",
    "PRIMITIVE_KINDS",
    "gradient_check",
    "GradCheckReport",
]

LAYER_NORM_EPS = 1e-5

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class EngineError(Exception):
    """Base class for array-engine failures."""


class ShapeError(EngineError):
    """Operand shapes do not conform for the requested primitive."""


class NumericError(EngineError):
    """A primitive produced NaN or Inf."""


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications for one forward pass.

    A tape is single-owner: enter it as a context manager on one thread,
    run the forward pass inside, then call :meth:`gradients` exactly once.
    """

    def __init__(self) -> None:
        self._records: list[tuple[np.ndarray, tuple[np.ndarray, ...], Callable]] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: np.ndarray, inputs: tuple[np.ndarray, ...], vjp: Callable) -> None:
        self._records.append((out, inputs, vjp))
        self._produced.add(id(out))

    def gradients(self, loss: np.ndarray, sources: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Gradient of a scalar ``loss`` w.r.t. every array in ``sources``.

        Consumes the tape.  Sources that did not influence the loss get a
        zero gradient of their own shape.
        """
        if self._consumed:
            raise EngineError("tape already consumed")
        if np.ndim(loss) != 0 and np.size(loss) != 1:
            raise ShapeError(f"loss must be a scalar, got shape {np.shape(loss)}")
        if id(loss) not in self._produced:
            raise EngineError("loss was not produced on this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss)}
        source_ids = {id(arr) for arr in sources.values()}
        for out, inputs, vjp in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, dinp in zip(inputs, vjp(g)):
                if dinp is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + dinp
                else:
                    grads[key] = dinp
        out = {}
        for name, arr in sources.items():
            g = grads.get(id(arr))
            out[name] = np.zeros_like(arr) if g is None else np.reshape(g, arr.shape)
        del source_ids
        self._records.clear()
        return out


# --------------------------------------------------------------------------
# Primitive plumbing
# --------------------------------------------------------------------------

def _as_f64(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


def _finish(kind: str, out: np.ndarray, inputs: tuple[np.ndarray, ...], vjp: Callable) -> np.ndarray:
    # 0-d results degrade to numpy scalars under arithmetic; rewrap so the
    # tape can link record outputs to downstream inputs by object identity
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{kind} produced non-finite values")
    tape = _active_tape()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------
# Primitives
# --------------------------------------------------------------------------

def matmul(a, b, transpose_a: bool = False, transpose_b: bool = False) -> np.ndarray:
    """Matrix product with optional transposes on the last two axes.

    Leading (batch) axes follow numpy broadcasting; operands must be at
    least 2-D.
    """
    a = _as_f64(a, "a")
    b = _as_f64(b, "b")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got a{a.shape} @ b{b.shape}")
    ae = np.swapaxes(a, -1, -2) if transpose_a else a
    be = np.swapaxes(b, -1, -2) if transpose_b else b
    if ae.shape[-1] != be.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: a{a.shape}"
            f"{'^T' if transpose_a else ''} @ b{b.shape}{'^T' if transpose_b else ''}"
        )
    try:
        out = np.matmul(ae, be)
    except ValueError as e:
        raise ShapeError(f"matmul batch dims incompatible: a{a.shape} @ b{b.shape}: {e}") from None

    def vjp(g):
        dae = np.matmul(g, np.swapaxes(be, -1, -2))
        dbe = np.matmul(np.swapaxes(ae, -1, -2), g)
        da = np.swapaxes(dae, -1, -2) if transpose_a else dae
        db = np.swapaxes(dbe, -1, -2) if transpose_b else dbe
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _finish("matmul", out, (a, b), vjp)


def add(a, b) -> np.ndarray:
    """Elementwise sum with numpy broadcasting."""
    a = _as_f64(a, "a")
    b = _as_f64(b, "b")
    try:
        out = a + b
    except ValueError:
        raise ShapeError(f"add shapes not broadcastable: a{a.shape} + b{b.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finish("add", out, (a, b), vjp)


def mul(a, b) -> np.ndarray:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a = _as_f64(a, "a")
    b = _as_f64(b, "b")
    try:
        out = a * b
    except ValueError:
        raise ShapeError(f"elementwise-mul shapes not broadcastable: a{a.shape} * b{b.shape}") from None

    def vjp(g):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return _finish("elementwise-mul", out, (a, b), vjp)


def concat_last(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate along the last axis; leading axes must match exactly."""
    if not parts:
        raise ShapeError("concat-last-axis needs at least one operand")
    arrs = tuple(_as_f64(p, f"part{i}") for i, p in enumerate(parts))
    lead = arrs[0].shape[:-1]
    for i, arr in enumerate(arrs):
        if arr.shape[:-1] != lead:
            raise ShapeError(
                f"concat-last-axis leading shapes differ: part0 {arrs[0].shape} vs part{i} {arr.shape}"
            )
    out = np.concatenate(arrs, axis=-1)
    widths = [arr.shape[-1] for arr in arrs]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[..., offsets[i]:offsets[i + 1]] for i in range(len(arrs)))

    return _finish("concat-last-axis", out, arrs, vjp)


def softmax_last(a) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    a = _as_f64(a, "a")
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _finish("softmax-last-axis", out, (a,), vjp)


def layer_norm_last(a, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean and (eps-stabilized) unit variance."""
    a = _as_f64(a, "a")
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = (a - mu) * inv

    def vjp(g):
        n = a.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gx),)

    return _finish("layer-normalize-last-axis", out, (a,), vjp)


def gelu(a) -> np.ndarray:
    """Exact (erf-based) Gaussian error linear unit."""
    a = _as_f64(a, "a")
    cdf = 0.5 * (1.0 + erf(a * _INV_SQRT2))
    out = a * cdf

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a * a)
        return (g * (cdf + a * pdf),)

    return _finish("gelu", out, (a,), vjp)


def scale(a, c: float) -> np.ndarray:
    """Multiply by a python scalar constant."""
    a = _as_f64(a, "a")
    c = float(c)
    out = a * c

    def vjp(g):
        return (g * c,)

    return _finish("scale", out, (a,), vjp)


def reduce_sum(a) -> np.ndarray:
    """Sum of all elements (scalar)."""
    a = _as_f64(a, "a")
    out = np.asarray(a.sum())

    def vjp(g):
        return (np.broadcast_to(g, a.shape),)

    return _finish("sum", out, (a,), vjp)


def reduce_mean(a) -> np.ndarray:
    """Mean of all elements (scalar)."""
    a = _as_f64(a, "a")
    out = np.asarray(a.mean())
    inv_n = 1.0 / a.size

    def vjp(g):
        return (np.broadcast_to(g * inv_n, a.shape),)

    return _finish("mean", out, (a,), vjp)


def mse(a, b) -> np.ndarray:
    """Mean squared error over all elements (scalar)."""
    a = _as_f64(a, "a")
    b = _as_f64(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"mse shapes differ: a{a.shape} vs b{b.shape}")
    diff = a - b
    out = np.asarray(np.mean(diff * diff))
    coef = 2.0 / a.size

    def vjp(g):
        d = g * coef * diff
        return d, -d

    return _finish("mse", out, (a, b), vjp)


def cross_entropy_soft(logits, targets) -> np.ndarray:
    """Cross-entropy of softmax(logits) against soft target distributions.

    The last axis indexes the distribution; the loss is averaged over all
    leading (row) axes.  Targets are expected to be non-negative; they are
    treated as given (no implicit normalization).
    """
    logits = _as_f64(logits, "logits")
    targets = _as_f64(targets, "targets")
    if logits.shape != targets.shape:
        raise ShapeError(
            f"cross-entropy-with-soft-targets shapes differ: logits{logits.shape} vs targets{targets.shape}"
        )
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    rows = max(1, logits.size // logits.shape[-1])
    out = np.asarray(-(targets * logp).sum() / rows)

    def vjp(g):
        p = np.exp(logp)
        tsum = targets.sum(axis=-1, keepdims=True)
        dlogits = (p * tsum - targets) * (g / rows)
        dtargets = -logp * (g / rows)
        return dlogits, dtargets

    return _finish("cross-entropy-with-soft-targets", out, (logits, targets), vjp)


def dropout_apply(a, mask) -> np.ndarray:
    """Apply a caller-supplied dropout mask (already scaled by 1/keep).

    The mask is data, not a differentiable input; pass masks drawn from a
    seeded generator to keep training deterministic.
    """
    a = _as_f64(a, "a")
    mask = _as_f64(mask, "mask")
    try:
        out = a * mask
    except ValueError:
        raise ShapeError(f"dropout-mask-apply shapes not broadcastable: a{a.shape} * mask{mask.shape}") from None

    def vjp(g):
        return (_unbroadcast(g * mask, a.shape), None)

    return _finish("dropout-mask-apply", out, (a, mask), vjp)


def reshape(a, shape) -> np.ndarray:
    """Structural reshape (gradient reshapes back)."""
    a = _as_f64(a, "a")
    try:
        out = np.reshape(a, shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None

    def vjp(g):
        return (np.reshape(g, a.shape),)

    return _finish("reshape", out, (a,), vjp)


def expand(a, shape) -> np.ndarray:
    """Structural broadcast to ``shape`` (gradient sums over broadcast axes)."""
    a = _as_f64(a, "a")
    try:
        out = np.array(np.broadcast_to(a, shape))
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {tuple(shape)}") from None

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return _finish("expand", out, (a,), vjp)


PRIMITIVE_KINDS = {
    "matmul": matmul,
    "add": add,
    "elementwise-mul": mul,
    "concat-last-axis": lambda *parts: concat_last(parts),
    "softmax-last-axis": softmax_last,
    "layer-normalize-last-axis": layer_norm_last,
    "gelu": gelu,
    "scale": scale,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "mse": mse,
    "cross-entropy-with-soft-targets": cross_entropy_soft,
    "dropout-mask-apply": dropout_apply,
}


def primitive(kind: str, inputs: Sequence, attrs: dict | None = None) -> np.ndarray:
    """Uniform dispatch used by tests and tooling; ``attrs`` become kwargs."""
    try:
        fn = PRIMITIVE_KINDS[kind]
    except KeyError:
        raise ShapeError(f"unknown primitive kind {kind!r}; known: {sorted(PRIMITIVE_KINDS)}") from None
    return fn(*inputs, **(attrs or {}))


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------

class GradCheckReport:
    """Result of comparing analytic gradients against central differences."""

    def __init__(self, max_rel_error: float, per_param: dict[str, float], tolerance: float):
        self.max_rel_error = max_rel_error
        self.per_param = per_param
        self.tolerance = tolerance
        self.passed = max_rel_error < tolerance

    def __repr__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, tol={self.tolerance:g})"


def _rel_error(a: float, n: float) -> float:
    if abs(a) < 1e-8 and abs(n) < 1e-8:
        return 0.0
    return abs(a - n) / max(abs(a), abs(n))


def gradient_check(
    closure: Callable[[dict[str, np.ndarray]], np.ndarray],
    params: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: int = 8,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Check analytic gradients of ``closure`` against central finite differences.

    ``closure`` must map the parameter dict to a scalar loss deterministically
    (fix dropout masks and any noise).  Up to ``max_entries`` coordinates per
    parameter are probed, chosen by a seeded generator.
    """
    rng = rng or np.random.default_rng(0)
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    ref1 = float(np.asarray(closure(params)))
    ref2 = float(np.asarray(closure(params)))
    if ref1 != ref2:
        raise EngineError(f"non-deterministic closure: {ref1!r} != {ref2!r}")

    with Tape() as tape:
        loss = closure(params)
    analytic = tape.gradients(loss, params)

    per_param: dict[str, float] = {}
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
        errs = 0.0
        for i in idx:
            probe = flat.copy()
            probe[i] = flat[i] + step
            plus = float(np.asarray(closure({**params, name: probe.reshape(value.shape)})))
            probe[i] = flat[i] - step
            minus = float(np.asarray(closure({**params, name: probe.reshape(value.shape)})))
            numeric = (plus - minus) / (2.0 * step)
            errs = max(errs, _rel_error(float(analytic[name].reshape(-1)[i]), numeric))
        per_param[name] = errs
        worst = max(worst, errs)
    return GradCheckReport(worst, per_param, tolerance)
