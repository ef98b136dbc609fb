"""Finite-difference verification of reverse-mode gradients.

Checks run in 64-bit: the caller builds the model with dtype=np.float64 so
that central differences with h=1e-5 resolve relative errors near 1e-4
without drowning in round-off.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward

REL_TOL = 1e-4
_FLOOR = 1e-6


def numeric_gradient_entry(loss_fn: Callable[[], float], param: Parameter,
                           flat_index: int, h: float = 1e-5) -> float:
    """Central difference of loss_fn with respect to one entry of param."""
    flat = param.value.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + h
    f_plus = loss_fn()
    flat[flat_index] = orig - h
    f_minus = loss_fn()
    flat[flat_index] = orig
    return (f_plus - f_minus) / (2.0 * h)


def relative_error(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric), _FLOOR)
    return abs(analytic - numeric) / denom


def _pick_indices(size: int, max_entries: int | None, rng: np.random.Generator) -> np.ndarray:
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_entries, replace=False))


def check_gradients(build_loss: Callable[[], Tensor],
                    params: Sequence[Parameter],
                    h: float = 1e-5,
                    max_entries_per_param: int | None = None,
                    seed: int = 0) -> list[dict]:
    """Compare reverse-mode gradients of build_loss against central differences.

    build_loss must construct a fresh scalar graph from the current parameter
    values each call. Returns one report per parameter:
    {"name", "checked", "max_rel_err", "worst_index", "analytic", "numeric"}.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    backward(loss)
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
                for p in params}

    def loss_value() -> float:
        return float(build_loss().data)

    rng = np.random.default_rng(seed)
    reports = []
    for p in params:
        a_flat = analytic[p.name].reshape(-1)
        idx = _pick_indices(a_flat.size, max_entries_per_param, rng)
        worst = {"max_rel_err": -1.0, "worst_index": -1, "analytic": 0.0, "numeric": 0.0}
        for i in idx:
            num = numeric_gradient_entry(loss_value, p, int(i), h=h)
            err = relative_error(float(a_flat[i]), num)
            if err > worst["max_rel_err"]:
                worst = {"max_rel_err": err, "worst_index": int(i),
                         "analytic": float(a_flat[i]), "numeric": num}
        reports.append({"name": p.name, "checked": int(idx.size), **worst})
    return reports


def max_error(reports: list[dict]) -> float:
    return max(r["max_rel_err"] for r in reports)


def format_report(reports: list[dict], tol: float = REL_TOL) -> str:
    lines = []
    width = max(len(r["name"]) for r in reports)
    for r in reports:
        status = "ok" if r["max_rel_err"] <= tol else "FAIL"
        lines.append(f"{r['name']:<{width}}  checked={r['checked']:>4d}  "
                     f"max_rel_err={r['max_rel_err']:.3e}  "
                     f"(analytic={r['analytic']:+.6e} numeric={r['numeric']:+.6e})  {status}")
    lines.append(f"overall max relative error: {max_error(reports):.3e} (tolerance {tol:.0e})")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# the full self-check suite: every op, plus end-to-end models in 64-bit
# ---------------------------------------------------------------------------


def _param(name: str, shape, rng) -> Parameter:
    return Parameter(name, rng.normal(0.0, 1.0, size=shape), dtype=np.float64)


def op_cases() -> list[tuple[str, list[Parameter], "object"]]:
    """(name, params, build_loss) triples covering every differentiable op.
    Each loss contracts the op output against a frozen random weighting so
    every output element influences the scalar."""
    from . import tensor as T

    cases = []

    def case(name, shapes, build):
        rng = np.random.default_rng(100 + len(cases))
        params = [_param(f"{name}.p{i}", s, rng) for i, s in enumerate(shapes)]
        probe = build(*[q.tensor for q in params])
        w = np.random.default_rng(200 + len(cases)).normal(0.0, 1.0, size=probe.data.shape)

        def loss_fn(params=params, build=build, w=w):
            out = build(*[q.tensor for q in params])
            return T.reduce_sum(T.mul(out, T.constant(w)))

        cases.append((name, params, loss_fn))

    case("add", [(3, 4), (3, 4)], T.add)
    case("sub", [(3, 4), (3, 4)], T.sub)
    case("mul", [(3, 4), (3, 4)], T.mul)
    case("neg", [(3, 4)], T.neg)
    case("scale", [(3, 4)], lambda a: T.scale(a, -1.7))
    case("shift", [(3, 4)], lambda a: T.shift(a, 0.3))
    case("matmul2d", [(3, 4), (4, 5)], T.matmul)
    case("matmul_batched", [(2, 3, 4), (2, 4, 5)], T.matmul)
    case("matmul_broadcast", [(2, 3, 4), (4, 5)], T.matmul)
    case("reshape", [(3, 4)], lambda a: T.reshape(a, (2, 6)))
    case("transpose", [(2, 3, 4)], lambda a: T.transpose(a, (2, 0, 1)))
    case("broadcast_to", [(1, 4)], lambda a: T.broadcast_to(a, (3, 4)))
    case("gather_rows", [(5, 3)], lambda a: T.gather_rows(a, np.array([0, 2, 2, 4])))
    case("take_per_row", [(4, 5)], lambda a: T.take_per_row(a, np.array([1, 0, 4, 2])))
    case("concat", [(2, 3), (4, 3)], lambda a, b: T.concat([a, b], axis=0))
    case("stack", [(2, 3), (2, 3)], lambda a, b: T.stack([a, b], axis=1))
    case("softmax", [(3, 5)], lambda a: T.softmax(a, axis=-1))
    case("log_softmax", [(3, 5)], lambda a: T.log_softmax(a, axis=-1))
    case("layernorm", [(4, 6), (6,), (6,)], T.layernorm)
    case("gelu", [(3, 4)], T.gelu)
    case("cos", [(3, 4)], T.cos)
    case("reduce_sum_all", [(3, 4)], lambda a: T.reduce_sum(a))
    case("reduce_sum_axis", [(3, 4)], lambda a: T.reduce_sum(a, axis=0))
    case("reduce_mean_all", [(3, 4)], lambda a: T.reduce_mean(a))
    case("reduce_mean_axis", [(2, 3, 4)], lambda a: T.reduce_mean(a, axis=1, keepdims=True))
    return cases


def check_ops(h: float = 1e-5) -> list[dict]:
    reports = []
    for _name, params, build_loss in op_cases():
        reports.extend(check_gradients(build_loss, params, h=h))
    return reports


def check_lmae_end_to_end(max_entries_per_param: int = 4, h: float = 1e-5) -> list[dict]:
    """Tiny autoencoder (8x8 frames, P=4, T=2, d_enc=16) in float64: check
    every parameter group against central differences."""
    from .model import LMAEConfig, LongitudinalMAE

    cfg = LMAEConfig(image_size=8, patch_size=4, channels=1, temporal_variant="time_aware",
                     d_enc=16, enc_depth=2, enc_heads=2, d_dec=8, dec_depth=1, dec_heads=2)
    model = LongitudinalMAE(cfg, seed=3, dtype=np.float64)
    rng = np.random.default_rng(7)
    frames = rng.uniform(0.0, 1.0, size=(2, 8, 8, 1))
    times = np.array([0.0, 1.3])
    visible = rng.random((2, cfg.grid_side, cfg.grid_side)) < 0.5
    visible.reshape(-1)[0] = True
    visible.reshape(-1)[-1] = False

    def build_loss():
        return model.forward_loss(frames, times, visible)

    return check_gradients(build_loss, list(model.store), h=h,
                           max_entries_per_param=max_entries_per_param, seed=11)


def check_classifier_end_to_end(max_entries_per_param: int = 4, h: float = 1e-5) -> list[dict]:
    """Tiny classifier under cross-entropy in float64."""
    from .finetune import ClassifierConfig, SeverityClassifier, cross_entropy

    cfg = ClassifierConfig(image_size=8, patch_size=4, channels=1,
                           temporal_variant="time_aware", d_model=16, depth=2, heads=2)
    model = SeverityClassifier(cfg, seed=5, dtype=np.float64)
    rng = np.random.default_rng(13)
    frames = rng.uniform(0.0, 1.0, size=(3, 2, 8, 8, 1))
    times = np.cumsum(rng.uniform(0.5, 2.0, size=(3, 2)), axis=1)
    targets = np.array([0, 3, 4])

    def build_loss():
        return cross_entropy(model.logits(frames, times), targets)

    return check_gradients(build_loss, list(model.store), h=h,
                           max_entries_per_param=max_entries_per_param, seed=17)


def full_suite() -> tuple[list[dict], bool]:
    """Everything cmd gradcheck runs; returns (reports, all_passed)."""
    reports = check_ops()
    reports += check_lmae_end_to_end()
    reports += check_classifier_end_to_end()
    return reports, max_error(reports) <= REL_TOL
