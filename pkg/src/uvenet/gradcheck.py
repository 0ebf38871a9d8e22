"""Central finite-difference gradient checks for every engine op and a micro UVENet graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import engine as E
from . import model as M

OP_TOL = 1e-4
COMPOSITE_TOL = 1e-3
STEP = 1e-6
DENOM_FLOOR = 1e-6


@dataclass
class CheckResult:
    op: str
    worst_rel_err: float
    tol: float
    points: int

    @property
    def passed(self) -> bool:
        return bool(self.worst_rel_err < self.tol)

    def to_dict(self) -> dict:
        return {"op": self.op, "worst_rel_err": self.worst_rel_err, "tol": self.tol, "points": self.points, "passed": self.passed}


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), DENOM_FLOOR)


def check_function(fn: Callable[..., E.Tensor], arrays: Sequence[np.ndarray], rng: np.random.Generator,
                   n_points: int = 10, wrt: Sequence[int] | None = None, h: float = STEP) -> tuple[float, int]:
    """Worst relative error between tape gradients and central differences.

    ``fn`` maps float64 tensors to a single-element tensor. ``n_points``
    coordinates are sampled per differentiated input (all of them if fewer).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    with E.precision(np.float64):
        leaves = [E.Tensor(a, requires_grad=True) for a in arrays]
        with E.Tape() as tape:
            out = fn(*leaves)
        tape.backward(out)
        worst, count = 0.0, 0
        for i in wrt:
            a = arrays[i]
            g = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
            size = a.size
            picks = np.arange(size) if size <= n_points else rng.choice(size, n_points, replace=False)
            for flat in picks:
                idx = np.unravel_index(int(flat), a.shape)
                orig = a[idx]
                a[idx] = orig + h
                fp = fn(*[E.Tensor(x) for x in arrays]).item()
                a[idx] = orig - h
                fm = fn(*[E.Tensor(x) for x in arrays]).item()
                a[idx] = orig
                worst = max(worst, rel_error(float(g[idx]), (fp - fm) / (2 * h)))
                count += 1
    return worst, count


def _proj(y: E.Tensor, r: np.ndarray) -> E.Tensor:
    return E.sum_all(E.mul(y, E.Tensor(r)))


def op_cases(rng: np.random.Generator):
    """(name, fn, arrays, tol) for every differentiable op."""
    n = rng.standard_normal

    def projected(op, out_shape):
        r = n(out_shape)
        return lambda *ts: _proj(op(*ts), r)

    cases = []
    x = n((2, 4, 6, 6))
    cases.append(("conv2d", projected(lambda a, w, b: E.conv2d(a, w, b, 1, 1, 1), (2, 3, 6, 6)), [x, n((3, 4, 3, 3)), n(3)], OP_TOL))
    cases.append(("conv2d", projected(lambda a, w, b: E.conv2d(a, w, b, 2, 1, 2), (2, 4, 3, 3)), [x, n((4, 2, 3, 3)), n(4)], OP_TOL))
    cases.append(("conv2d", projected(lambda a, w, b: E.conv2d(a, w, b, 1, 3, 4), (2, 4, 6, 6)), [x, n((4, 1, 7, 7)), n(4)], OP_TOL))
    cases.append(("conv2d", projected(lambda a, w, b: E.conv2d(a, w, b, 2, 0, 1), (2, 5, 3, 3)), [x, n((5, 4, 2, 2)), n(5)], OP_TOL))
    cases.append(("depthwise_separable", projected(lambda a, dw, pw: E.depthwise_separable(a, dw, pw), (2, 3, 6, 6)),
                  [x, n((4, 1, 3, 3)), n((3, 4, 1, 1))], OP_TOL))
    cases.append(("instance_norm", projected(lambda a, g, b: E.instance_norm(a, g, b), (2, 4, 6, 6)), [x, n(4), n(4)], OP_TOL))
    cases.append(("gelu", projected(E.gelu, (2, 4, 6, 6)), [x], OP_TOL))
    cases.append(("sigmoid", projected(E.sigmoid, (2, 4, 6, 6)), [x], OP_TOL))
    cases.append(("bilinear_upsample", projected(lambda a: E.bilinear_upsample(a, 2), (2, 4, 12, 12)), [x], OP_TOL))
    cases.append(("bilinear_upsample", projected(lambda a: E.bilinear_upsample(a, 4), (2, 4, 24, 24)), [x], OP_TOL))
    cases.append(("pixel_shuffle", projected(lambda a: E.pixel_shuffle(a, 2), (2, 1, 12, 12)), [x], OP_TOL))
    cases.append(("spatial_shift", projected(lambda a: E.spatial_shift(a, 2, -1), (2, 4, 6, 6)), [x], OP_TOL))
    x8 = n((1, 8, 5, 5))
    cases.append(("grouped_shift", projected(lambda a: M.grouped_shift(a, 1), (1, 8, 5, 5)), [x8], OP_TOL))
    cases.append(("global_avg_pool", projected(E.global_avg_pool, (2, 4, 1, 1)), [x], OP_TOL))
    cases.append(("max_pool2d", projected(E.max_pool2d, (2, 4, 3, 3)), [x], OP_TOL))
    cases.append(("concat_channels", projected(lambda a, b: E.concat_channels([a, b]), (2, 6, 6, 6)), [x, n((2, 2, 6, 6))], OP_TOL))
    r_split = [n((2, 1, 6, 6)) for _ in range(4)]
    cases.append(("split_channels", lambda a: E.add(E.add(_proj(E.split_channels(a, 4)[0], r_split[0]), _proj(E.split_channels(a, 4)[2], r_split[2])),
                                                     _proj(E.split_channels(a, 4)[3], r_split[3])), [x], OP_TOL))
    cases.append(("fold_frames", projected(lambda a: E.fold_frames(a, 2), (1, 8, 6, 6)), [x], OP_TOL))
    cases.append(("add", projected(E.add, (2, 4, 6, 6)), [x, n((2, 4, 1, 1))], OP_TOL))
    cases.append(("mul", projected(E.mul, (2, 4, 6, 6)), [x, n((2, 4, 1, 1))], OP_TOL))
    cases.append(("scale", projected(lambda a: E.scale(a, 2.5), (2, 4, 6, 6)), [x], OP_TOL))
    cases.append(("clamp", projected(lambda a: E.clamp(a, -0.5, 0.5), (2, 4, 6, 6)), [x], OP_TOL))
    cases.append(("crop", projected(lambda a: E.crop(a, 4, 5), (2, 4, 4, 5)), [x], OP_TOL))
    cases.append(("sum", E.sum_all, [x], OP_TOL))
    cases.append(("mean", E.mean_all, [x], OP_TOL))
    cases.append(("l1_loss", lambda a, b: E.l1_loss(a, b), [x, n(x.shape)], OP_TOL))
    # composition through instance norm is less well conditioned
    cases.append(("conv_norm_gelu", projected(lambda a, w: E.gelu(E.instance_norm(E.conv2d(a, w, None, 1, 1), E.Tensor(np.ones(3)), E.Tensor(np.zeros(3)))), (2, 3, 6, 6)),
                  [x, n((3, 4, 3, 3))], COMPOSITE_TOL))
    return cases


MICRO_CONFIG = M.ModelConfig(T=3, dims=(16, 32, 64, 128), depths=(1, 1, 1, 1), shift_len=1, decoder_dim=8, grm_dim=8)


def check_end_to_end(rng: np.random.Generator, n_points: int = 24, config: M.ModelConfig = MICRO_CONFIG,
                     size: int = 16) -> tuple[float, int]:
    """Random parameter coordinates of the full model on a T-frame size x size window."""
    params32 = M.init_params(config, int(rng.integers(1 << 30)))
    names = list(params32)
    frames = rng.random((1, config.T, 3, size, size))
    r = rng.standard_normal((1, 3, size, size))
    h = STEP
    with E.precision(np.float64):
        params = M.cast_params(params32, np.float64)
        # perturb norm affines away from their 1/0 init so their gradients are generic
        for k, p in params.items():
            if ".norm." in k:
                p.data += 0.1 * rng.standard_normal(p.shape)

        def loss(ps):
            return E.mean_all(E.mul(M.forward(frames, ps, config, clamp=False), E.Tensor(r)))

        with E.Tape() as tape:
            out = loss(params)
        tape.backward(out)
        worst, count = 0.0, 0
        for _ in range(n_points):
            name = names[int(rng.integers(len(names)))]
            p = params[name]
            idx = np.unravel_index(int(rng.integers(p.data.size)), p.shape)
            g = p.grad[idx] if p.grad is not None else 0.0
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = loss(params).item()
            p.data[idx] = orig - h
            fm = loss(params).item()
            p.data[idx] = orig
            worst = max(worst, rel_error(float(g), (fp - fm) / (2 * h)))
            count += 1
    return worst, count


def run_suite(seed: int = 0, n_points: int = 10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    merged: dict[str, CheckResult] = {}
    for name, fn, arrays, tol in op_cases(rng):
        err, pts = check_function(fn, arrays, rng, n_points)
        prev = merged.get(name)
        if prev is None:
            merged[name] = CheckResult(name, err, tol, pts)
        else:
            prev.worst_rel_err = max(prev.worst_rel_err, err)
            prev.points += pts
    err, pts = check_end_to_end(rng)
    merged["uvenet_end_to_end"] = CheckResult("uvenet_end_to_end", err, COMPOSITE_TOL, pts)
    return list(merged.values())


def format_report(results: Sequence[CheckResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status} {r.op:<22} worst_rel_err={r.worst_rel_err:.3e} tol={r.tol:.0e} points={r.points}")
    return "\n".join(lines)
