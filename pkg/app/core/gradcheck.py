"""
Central-difference gradient checks.

``grad_check`` compares the analytic gradient of a scalar function against
``(f(x + h) - f(x - h)) / 2h`` coordinate by coordinate. ``run_suite`` covers
every tensor op, every model module on small instances and one end-to-end
loss on a 32x32 model. Checks run with GELU so no activation kink sits within
``h`` of a pre-activation.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import CONFIG
from app.core.attention import AttentionParams, mhsa
from app.core.cgd import CGNet, DecoderParams, ScmParams, decode, scm_channel, scm_spatial
from app.core.cpg import (
    AlignParams,
    CrossModalParams,
    EnhanceParams,
    cross_modal_attention,
    mvcm_align,
    mvcm_enhance,
)
from app.core.csg import GuidanceFeature, GuidanceParams, guide
from app.core.encoders import FeaturePyramidFusion, VisualLevels, encode_text, fuse_fpn
from app.core.losses import total_loss
from app.core.run_config import EncoderConfig, ModelConfig
from app.core.tensor import (
    OPS,
    ParameterSet,
    Tensor,
    add,
    backward,
    bilinear_resize,
    channel_affine,
    concat,
    conv2d,
    conv3x3,
    div,
    exp,
    gelu,
    hadamard,
    inject_gradient_fault,
    linear,
    log,
    matmul,
    narrow,
    pad,
    permute,
    pixel_shuffle,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    split,
    sub,
    tanh,
)
from app.exceptions.custom_exceptions import UsageError, VerificationError

logger = logging.getLogger(__name__)

MAX_ELEMENTS = 4096
_TINY = 1e-30


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tol: float
    checked: int
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _coordinates(inputs: Sequence[Tensor], max_checks: Optional[int], rng: np.random.Generator) -> List[Tuple[int, int]]:
    """Every coordinate, or at least one per tensor topped up at random to ``max_checks``"""
    if max_checks is None:
        return [(i, j) for i, t in enumerate(inputs) for j in range(t.size)]
    coords = [(i, int(rng.integers(t.size))) for i, t in enumerate(inputs)]
    sizes = np.array([t.size for t in inputs])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for flat in rng.choice(offsets[-1], size=max(0, min(max_checks, offsets[-1]) - len(coords)), replace=False):
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        coords.append((i, int(flat - offsets[i])))
    return sorted(set(coords))


def grad_check(
    f: Callable[..., Tensor],
    inputs: Union[Tensor, Sequence[Tensor]],
    h: Optional[float] = None,
    tol: Optional[float] = None,
    name: str = "grad_check",
    max_checks: Optional[int] = None,
    seed: int = 0,
    floor: Optional[float] = None,
) -> GradCheckReport:
    """Compare analytic and central-difference gradients of scalar ``f(*inputs)``.

    The error is the largest per-coordinate ``|a - n| / max(|a|, |n|, floor)``
    over the checked coordinates, so a wrong small gradient is not hidden by a
    large one elsewhere. Without ``max_checks`` every coordinate is checked and the
    inputs may hold at most 4096 values in total.
    """
    h = CONFIG["gradcheck_step"] if h is None else h
    tol = CONFIG["gradcheck_tol"] if tol is None else tol
    inputs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    if not inputs:
        raise UsageError("grad_check needs at least one input tensor")
    if any(not t.requires_grad for t in inputs):
        raise UsageError("grad_check inputs must require grad")
    total = sum(t.size for t in inputs)
    if max_checks is None and total > MAX_ELEMENTS:
        raise UsageError(f"grad_check: {total} input values exceeds {MAX_ELEMENTS}; pass max_checks to sample")

    for t in inputs:
        t.zero_grad()
    loss = f(*inputs)
    if loss.ndim != 0:
        raise UsageError(f"grad_check: f must return a scalar, got shape {loss.shape}")
    backward(loss)
    analytic_grads = [t.grad.copy() for t in inputs]

    analytic, numeric = [], []
    for i, flat in _coordinates(inputs, max_checks, np.random.default_rng(seed)):
        values = inputs[i].values
        pos = np.unravel_index(flat, values.shape)
        original = values[pos]
        values[pos] = original + h
        plus = f(*inputs).item()
        values[pos] = original - h
        minus = f(*inputs).item()
        values[pos] = original
        numeric.append((plus - minus) / (2 * h))
        analytic.append(analytic_grads[i][pos])

    a = np.array(analytic)
    n = np.array(numeric)
    floor = CONFIG["gradcheck_floor"] if floor is None else floor
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(floor, _TINY))
    error = float((np.abs(a - n) / denom).max())
    report = GradCheckReport(name=name, max_rel_error=error, tol=tol, checked=len(a), passed=error <= tol)
    level = logging.INFO if report.passed else logging.WARNING
    logger.log(
        level,
        f"[grad_check] - {name}: rel_error={error:.3e} tol={tol:.0e} over {len(a)} coords "
        f"{'PASS' if report.passed else 'FAIL'}",
    )
    return report


def perturb_parameters(params: ParameterSet, seed: int, std: float = 0.1) -> None:
    """Add gaussian noise to every trainable parameter (moves zero-init tensors off zero)"""
    rng = np.random.default_rng(seed)
    for param in params.trainable():
        param.tensor.values = np.asarray(param.tensor.values + rng.normal(0.0, std, size=param.shape))


def random_functional(out_fn: Callable[..., Union[Tensor, Sequence[Tensor]]], seed: int = 0) -> Callable[..., Tensor]:
    """Scalar sum(out * R) with fixed random weights R per output (R drawn on first call)"""
    rng = np.random.default_rng(seed)
    weights: List[Tensor] = []

    def f(*args) -> Tensor:
        outputs = out_fn(*args)
        outputs = [outputs] if isinstance(outputs, Tensor) else list(outputs)
        if not weights:
            weights.extend(Tensor(rng.standard_normal(o.shape)) for o in outputs)
        total = None
        for out, weight in zip(outputs, weights):
            term = reduce_sum(hadamard(out, weight))
            total = term if total is None else add(total, term)
        return total

    return f


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------


def _leaf(rng: np.random.Generator, *shape, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    values = rng.standard_normal(shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(values, requires_grad=True)


def _away_from_zero(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape), requires_grad=True)


def _op_cases(rng: np.random.Generator):
    """(name, out_fn, inputs) for every differentiable op"""
    x4 = lambda: _leaf(rng, 2, 3, 4, 4)
    return [
        ("add", lambda a, b: add(a, b), [x4(), _leaf(rng, 2, 3, 1, 1)]),
        ("sub", lambda a, b: sub(a, b), [x4(), x4()]),
        ("hadamard", lambda a, b: hadamard(a, b), [x4(), _leaf(rng, 2, 3, 1, 1)]),
        ("div", lambda a, b: div(a, b), [x4(), _leaf(rng, 2, 3, 4, 4, low=0.5, high=2.0)]),
        ("scale", lambda a: scale(a, -2.5), [x4()]),
        ("exp", exp, [x4()]),
        ("log", log, [_leaf(rng, 2, 3, 4, 4, low=0.2, high=3.0)]),
        ("sigmoid", sigmoid, [x4()]),
        ("softplus", softplus, [x4()]),
        ("tanh", tanh, [x4()]),
        ("relu", relu, [_away_from_zero(rng, 2, 3, 4, 4)]),
        ("gelu", gelu, [x4()]),
        ("sum", lambda a: reduce_sum(a, axis=(2, 3), keepdims=True), [x4()]),
        ("mean", lambda a: reduce_mean(a, axis=1), [x4()]),
        ("reshape", lambda a: reshape(a, (2, 48)), [x4()]),
        ("permute", lambda a: permute(a, (0, 2, 3, 1)), [x4()]),
        ("pixel_shuffle", lambda a: pixel_shuffle(a, 2), [_leaf(rng, 1, 8, 3, 3)]),
        ("concat", lambda a, b: concat([a, b], axis=1), [x4(), _leaf(rng, 2, 2, 4, 4)]),
        ("narrow", lambda a: narrow(a, 2, 1, 2), [x4()]),
        ("split", lambda a: split(a, 1, 3), [_leaf(rng, 1, 6, 3, 3)]),
        ("matmul", lambda a, b: matmul(a, b), [_leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 5)]),
        ("linear", lambda a, w, b: linear(a, w, b), [_leaf(rng, 2, 5, 4), _leaf(rng, 3, 4), _leaf(rng, 3)]),
        ("softmax", lambda a: softmax(a, axis=-1), [_leaf(rng, 2, 3, 6)]),
        ("pad", lambda a: pad(a, 2, "replicate"), [_leaf(rng, 1, 2, 3, 3)]),
        ("resize_up", lambda a: bilinear_resize(a, 5, 7), [_leaf(rng, 1, 2, 3, 4)]),
        ("resize_down", lambda a: bilinear_resize(a, 4, 3), [_leaf(rng, 1, 2, 6, 6)]),
        (
            "conv2d",
            lambda a, w, b: conv2d(a, w, b, stride=2, padding=1),
            [_leaf(rng, 2, 3, 7, 7), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)],
        ),
        ("conv3x3", lambda a, w: conv3x3(a, w), [_leaf(rng, 1, 2, 5, 5), _leaf(rng, 3, 2, 3, 3)]),
        ("channel_affine", channel_affine, [x4(), _leaf(rng, 3), _leaf(rng, 3)]),
    ]


def _small_encoder() -> EncoderConfig:
    return EncoderConfig(text_dim=8, visual_dim=8, backbone_channels=[8, 8, 16, 16], prompt_side=32, detector_side=32)


def _module_cases(rng: np.random.Generator, seed: int):
    """(name, out_fn, inputs, max_checks) for every model module on a tiny instance"""
    enc = _small_encoder()
    heads = 2
    text = encode_text(["blob"], enc)
    cases = []

    def with_params(params, features):
        perturb_parameters(params, seed)
        return list(features) + [p.tensor for p in params.trainable()]

    params = ParameterSet(seed=seed).scope("mhsa")
    attention = AttentionParams.create(params, 8)
    tokens = [_leaf(rng, 1, 5, 8), _leaf(rng, 1, 3, 8)]
    cases.append(("mhsa", lambda q, c, *_: mhsa(q, c, heads, attention), with_params(params, tokens)))

    params = ParameterSet(seed=seed).scope("fpn")
    fusion = FeaturePyramidFusion(enc, params, heads, "gelu")
    f1, f2, f3 = _leaf(rng, 1, 8, 4, 4), _leaf(rng, 1, 8, 2, 2), _leaf(rng, 1, 8, 2, 2)
    cases.append(("fuse_fpn", lambda a, b, c, *_: fuse_fpn(VisualLevels(a, b, c), text, fusion), with_params(params, [f1, f2, f3])))

    params = ParameterSet(seed=seed).scope("cma")
    cma = CrossModalParams.create(params, 8, 8)
    cases.append(("cross_modal_attention", lambda a, *_: cross_modal_attention(a, text, heads, cma), with_params(params, [_leaf(rng, 1, 8, 4, 4)])))

    params = ParameterSet(seed=seed).scope("align")
    align = AlignParams.create(params, 8)
    features = [_leaf(rng, 1, 8, 4, 4), _leaf(rng, 1, 8, 2, 2), _leaf(rng, 1, 8, 2, 2)]
    cases.append(("mvcm_align", lambda a, b, c, *_: mvcm_align(a, b, c, heads, align), with_params(params, features)))

    params = ParameterSet(seed=seed).scope("enhance")
    enhance = EnhanceParams.create(params, 8)
    cases.append(("mvcm_enhance", lambda a, *_: mvcm_enhance(a, enhance, "gelu"), with_params(params, [_leaf(rng, 1, 8, 4, 4)])))

    params = ParameterSet(seed=seed).scope("csg")
    csg = GuidanceParams.create(params, 8, 16)
    features = [_leaf(rng, 1, 16, 2, 2), _leaf(rng, 1, 8, 4, 4), _leaf(rng, 1, 8, 4, 4)]
    cases.append(("guide", lambda x, v, m, *_: guide(x, v, m, heads, csg).g_c, with_params(params, features)))

    params = ParameterSet(seed=seed).scope("scm")
    scm_params = ScmParams.create(params, 8, 16, 16)
    features = [_leaf(rng, 1, 8, 4, 4), _leaf(rng, 1, 16, 2, 2), _leaf(rng, 1, 16, 2, 2)]

    def spatial(x_i, x_ip1, g, *_):
        trace = scm_spatial(x_i, x_ip1, GuidanceFeature(g), scm_params)
        return [trace.x_tilde_i, trace.x_tilde_ip1]

    cases.append(("scm_spatial", spatial, with_params(params, features)))
    features = [_leaf(rng, 1, 8, 4, 4), _leaf(rng, 1, 8, 4, 4)]
    cases.append(("scm_channel", lambda a, b, *_: scm_channel(a, b, scm_params), features + [p.tensor for p in params.trainable()]))

    params = ParameterSet(seed=seed).scope("decoder")
    dec = DecoderParams.create(params, [8, 8, 16, 16], 8, zero=False, factors=(1, 2, 4, 8, 2))
    features = [
        _leaf(rng, 1, 16, 2, 2),
        _leaf(rng, 1, 8, 4, 4),
        _leaf(rng, 1, 8, 8, 8),
        _leaf(rng, 1, 16, 1, 1),
        _leaf(rng, 1, 8, 4, 4),
        _leaf(rng, 1, 8, 4, 4),
    ]

    def decoded(s3, s2, s1, g, v, m, *_):
        return list(decode([s3, s2, s1], g, GuidanceFeature(g), dec, 8, v, m).as_dict().values())

    cases.append(("decode", decoded, with_params(params, features)))

    gt = Tensor((rng.random((1, 1, 6, 6)) < 0.4).astype(np.float64))
    names = ("p1", "p2", "p3", "p4", "aux_fv", "aux_fm")
    logits = [_leaf(rng, 1, 1, 6, 6) for _ in names]
    cases.append(("total_loss", lambda *maps: total_loss(dict(zip(names, maps)), gt).total, logits))
    return cases


def end_to_end_case(seed: int = 0):
    """(out_fn, inputs) for the full training loss of a 32x32 GELU model w.r.t. image and parameters"""
    net = CGNet(_small_encoder(), ModelConfig(heads=2, activation="gelu", zero_init_heads=False, logit_scale=1.0), seed=seed)
    perturb_parameters(net.params, seed, std=0.05)
    rng = np.random.default_rng(seed)
    image = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, 32, 32)), requires_grad=True)
    yy, xx = np.mgrid[:32, :32]
    gt = Tensor((((yy - 15.5) ** 2 + (xx - 14.0) ** 2) < 64).astype(np.float64)[None, None])

    def loss(*_):
        predictions, _bundle = net(image, ["blob"])
        return total_loss(predictions, gt).total

    return loss, [image] + [p.tensor for p in net.params.trainable()]


def run_suite(
    seed: int = 0,
    corrupt: bool = False,
    end_to_end: bool = True,
    max_checks: int = 64,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
) -> List[GradCheckReport]:
    """Gradient-check every op and module; ``corrupt`` scales every backward rule by 1.5"""
    rng = np.random.default_rng(seed)
    cases = [(n, random_functional(fn, seed), inputs, None, CONFIG["gradcheck_tol"]) for n, fn, inputs in _op_cases(rng)]
    for n, fn, inputs in _module_cases(rng, seed):
        cases.append((n, random_functional(fn, seed) if n != "total_loss" else fn, inputs, max_checks, CONFIG["gradcheck_tol"]))
    if end_to_end:
        fn, inputs = end_to_end_case(seed)
        cases.append(("end_to_end", fn, inputs, len(inputs) + 16, CONFIG["gradcheck_tol_end_to_end"]))

    logger.info(f"[run_suite] - {len(cases)} gradient checks (corrupt={corrupt})")
    reports = []
    with inject_gradient_fault(*(OPS if corrupt else ())):
        for index, (name, fn, inputs, checks, tol) in enumerate(cases):
            if progress_callback:
                progress_callback(name, index, len(cases))
            reports.append(grad_check(fn, inputs, tol=tol, name=name, max_checks=checks, seed=seed))
    return reports


def assert_all_passed(reports: Sequence[GradCheckReport]) -> None:
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise VerificationError(f"gradient check failed for {failed}")
    logger.info(f"[assert_all_passed] - all {len(reports)} gradient checks passed")
