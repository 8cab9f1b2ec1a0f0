"""Self-verification suite behind the ``selftest`` and ``gradcheck`` commands.

Every check is a zero-argument callable returning ``(ok, detail)``. Checks
are registered under dotted names; the prefix groups them by module.
"""

from __future__ import annotations

import math
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from . import attention, dgc, fusion, mde, net, objective, ops
from . import reference as ref
from .gradcheck import REL_TOL, GradCheckResult, gradcheck, projected
from .params import Params, as_params, conv_shapes, init_uniform, prefixed
from .rng import Rng
from .tensor import Tape, Tensor

Check = Callable[[], tuple[bool, str]]
CHECKS: dict[str, Check] = {}
GRAD_CHECKS: dict[str, Callable[[int], GradCheckResult]] = {}

ORACLE_TOL = 1e-10


def check(name: str):
    def deco(fn):
        CHECKS[name] = fn
        return fn
    return deco


def grad_check(name: str):
    """Register a gradient check; it also runs in the self-test as ``gradcheck.<name>``."""
    def deco(fn):
        GRAD_CHECKS[name] = fn

        def as_check(fn=fn):
            r = fn(0)
            return r.ok, f"max rel err {r.max_rel_error:.3e} at {r.worst[0]}[{r.worst[1]}]"

        CHECKS[f"gradcheck.{name}"] = as_check
        return fn
    return deco


def _close(a, b, tol=ORACLE_TOL) -> tuple[bool, str]:
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
    return err <= tol, f"max abs err {err:.3e}"


def _data(t):
    return t.data if isinstance(t, Tensor) else t


# ---------------------------------------------------------------- shuffle / unshuffle

@check("shuffle_unshuffle.roundtrip")
def _():
    rng = Rng(11)
    for _ in range(200):
        r = int((1, 2, 4, 6)[rng.integers(4)])
        c, hb, wb = (int(v) + 1 for v in rng.integers(4, (3,)))
        x = Tensor(rng.normal((c, hb * r, wb * r)))
        back = ops.pixel_shuffle(ops.pixel_unshuffle(x, r), r)
        if not np.array_equal(back.data, x.data):
            return False, f"round-trip failed for shape {list(x.shape)} r={r}"
    return True, "200 random shapes"


@check("shuffle_unshuffle.block_order")
def _():
    x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    u = ops.pixel_unshuffle(x, 2)
    s = ops.pixel_shuffle(Tensor(np.array([1.0, 2, 3, 4]).reshape(4, 1, 1)), 2)
    ok = u.shape == (4, 1, 1) and list(u.data.ravel()) == [1, 2, 3, 4] and np.array_equal(s.data, x.data)
    return ok, f"unshuffle -> {u.data.ravel().tolist()}"


@check("shuffle_unshuffle.loop_oracle")
def _():
    rng = Rng(12)
    x = rng.normal((3, 12, 12))
    for r in (2, 3, 4, 6):
        if not np.array_equal(ops.pixel_unshuffle(Tensor(x), r).data, ref.unshuffle_loop(x, r)):
            return False, f"mismatch at r={r}"
    return True, "r in 2,3,4,6"


@check("shuffle_unshuffle.multiset")
def _():
    x = Rng(13).normal((4, 12, 12))
    u = ops.pixel_unshuffle(Tensor(x), 4).data
    return bool(np.array_equal(np.sort(u, axis=None), np.sort(x, axis=None))), "sorted values equal"


@check("shuffle_unshuffle.divisibility_error")
def _():
    try:
        ops.pixel_unshuffle(Tensor(np.zeros((1, 5, 4))), 2)
    except ValueError as e:
        return "divisibility" in str(e), str(e)
    return False, "no error raised"


# ---------------------------------------------------------------- conv / matmul / pools / resize

@check("conv2d.identity_1x1")
def _():
    x = Rng(1).normal((3, 5, 4))
    p = ops.ConvParams(Tensor(np.eye(3).reshape(3, 3, 1, 1)), Tensor(np.zeros(3)))
    return bool(np.array_equal(ops.conv2d(Tensor(x), p).data, x)), "exact"


@check("conv2d.ones_counting")
def _():
    c = 1.5
    p = ops.ConvParams(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    out = ops.conv2d(Tensor(np.full((1, 5, 5), c)), p).data
    ok = out[0, 2, 2] == 9 * c and out[0, 0, 0] == 4 * c and out[0, 0, 2] == 6 * c
    return ok, f"interior {out[0, 2, 2]}, corner {out[0, 0, 0]}"


@check("conv2d.dirac")
def _():
    x = Rng(2).normal((2, 9, 9))
    for k in (1, 3, 5, 7):
        w = np.zeros((2, 2, k, k))
        w[0, 0, k // 2, k // 2] = w[1, 1, k // 2, k // 2] = 1.0
        if not np.array_equal(ops.conv2d(Tensor(x), ops.ConvParams(Tensor(w), Tensor(np.zeros(2)))).data, x):
            return False, f"k={k}"
    return True, "k in 1,3,5,7"


@check("conv2d.loop_oracle")
def _():
    rng = Rng(3)
    worst = 0.0
    for stride, k in ((1, 3), (2, 3), (1, 5), (2, 1)):
        x, w, b = rng.normal((2, 7, 7)), rng.normal((3, 2, k, k)), rng.normal((3,))
        pad = (k - 1) // 2
        got = ops.conv2d(Tensor(x), ops.ConvParams(Tensor(w), Tensor(b), stride, pad)).data
        worst = max(worst, float(np.max(np.abs(got - ref.conv2d_loop(x, w, b, stride, pad)))))
    return worst <= 1e-12, f"max abs err {worst:.3e}"


@check("conv2d.errors")
def _():
    msgs = []
    for w in (np.zeros((1, 2, 3, 3)), np.zeros((1, 1, 2, 2))):
        try:
            ops.conv2d(Tensor(np.zeros((1, 4, 4))), ops.ConvParams(Tensor(w), Tensor(np.zeros(1))))
        except ValueError as e:
            msgs.append(str(e))
    ok = len(msgs) == 2 and "channel mismatch" in msgs[0] and "kernel parity" in msgs[1]
    return ok, "; ".join(msgs)


@check("matmul.loop_oracle")
def _():
    rng = Rng(4)
    a, b = rng.normal((5, 7)), rng.normal((7, 3))
    ok, detail = _close(ops.matmul(Tensor(a), Tensor(b)).data, ref.matmul_loop(a, b), 1e-12)
    ident = np.array_equal(ops.matmul(Tensor(np.eye(5)), Tensor(a)).data, a)
    return ok and ident, detail


@check("channel_pool.loop_oracle")
def _():
    x = Rng(5).normal((7, 4, 4))
    mx = np.array_equal(ops.channel_max_pool(Tensor(x)).data, ref.channel_max_loop(x))
    av = _close(ops.channel_avg_pool(Tensor(x)).data, ref.channel_avg_loop(x), 1e-12)[0]
    total = _close(ops.channel_avg_pool(Tensor(x)).data[0] * 7, x.sum(axis=0), 1e-12)[0]
    return mx and av and total, "max exact, mean within 1e-12"


@check("channel_pool.example")
def _():
    x = Tensor(np.array([-1.0, 0.0, 3.0]).reshape(3, 1, 1))
    mx, av = ops.channel_max_pool(x).item(), ops.channel_avg_pool(x).item()
    return mx == 3.0 and abs(av - 2.0 / 3.0) < 1e-15, f"max {mx}, avg {av}"


@check("resize.loop_oracle")
def _():
    x = Rng(6).normal((2, 5, 7))
    worst = 0.0
    for h, w in ((10, 14), (3, 4), (5, 7), (8, 3), (1, 1)):
        worst = max(worst, float(np.max(np.abs(ops.resize_bilinear(Tensor(x), h, w).data - ref.bilinear_loop(x, h, w)))))
    return worst <= 1e-12, f"max abs err {worst:.3e}"


@check("resize.constant")
def _():
    out = ops.resize_bilinear(Tensor(np.full((1, 3, 5), 2.5)), 7, 11).data
    return bool(np.allclose(out, 2.5, rtol=0, atol=1e-15)), "constant preserved"


@check("tape.sum_gradient")
def _():
    x = Tensor(Rng(7).normal((2, 4, 4)), requires_grad=True)
    with Tape() as t:
        g1, = t.gradient(ops.sum_all(x), [x])
        g2, = t.gradient(ops.sum_all(ops.pixel_unshuffle(x, 2)), [x])
    return bool(np.all(g1 == 1.0) and np.all(g2 == 1.0)), "all-ones"


# ---------------------------------------------------------------- gradient checks

def _probe_check(seed, arrays, fn, n=64):
    rng = Rng(1000 + seed)
    probe = {}

    def loss(t):
        out = fn(t)
        if "R" not in probe:
            probe["R"] = Rng(2000 + seed).uniform(-1, 1, out.shape)
        return projected(out, probe["R"])

    return gradcheck(loss, arrays, rng, n_coords=n)


def _module_arrays(shapes, inputs, seed):
    rng = Rng(3000 + seed)
    arrays = init_uniform(prefixed("p", shapes), rng, bias_bound=0.1)
    for name, shape in inputs.items():
        arrays[name] = rng.uniform(-1, 1, shape)
    return arrays


def _p(t):
    return Params(t).scope("p")


@grad_check("conv2d")
def _(seed):
    rng = Rng(seed)
    arrays = {"x": rng.uniform(-1, 1, (3, 9, 9)), "w": rng.uniform(-1, 1, (4, 3, 3, 3)),
              "b": rng.uniform(-1, 1, (4,)), "w2": rng.uniform(-1, 1, (2, 4, 5, 5)),
              "b2": rng.uniform(-1, 1, (2,))}
    return _probe_check(seed, arrays, lambda t: ops.conv2d(
        ops.conv2d(t["x"], ops.ConvParams(t["w"], t["b"], stride=2)),
        ops.ConvParams(t["w2"], t["b2"])))


@grad_check("matmul")
def _(seed):
    rng = Rng(seed)
    arrays = {"a": rng.uniform(-1, 1, (5, 7)), "b": rng.uniform(-1, 1, (7, 3))}
    return _probe_check(seed, arrays, lambda t: ops.matmul(t["a"], t["b"]))


@grad_check("unshuffle")
def _(seed):
    arrays = {"x": Rng(seed).uniform(-1, 1, (2, 12, 12))}
    return _probe_check(seed, arrays, lambda t: ops.pixel_unshuffle(t["x"], 3) * ops.pixel_unshuffle(t["x"], 3))


@grad_check("shuffle")
def _(seed):
    arrays = {"x": Rng(seed).uniform(-1, 1, (8, 3, 3))}
    return _probe_check(seed, arrays, lambda t: ops.pixel_shuffle(t["x"] * t["x"], 2))


@grad_check("channel_pools")
def _(seed):
    arrays = {"x": Rng(seed).uniform(-1, 1, (5, 6, 6))}
    return _probe_check(seed, arrays, lambda t: ops.concat(
        [ops.channel_max_pool(t["x"]), ops.channel_avg_pool(t["x"])]))


@grad_check("resize")
def _(seed):
    arrays = {"x": Rng(seed).uniform(-1, 1, (2, 5, 6))}
    return _probe_check(seed, arrays, lambda t: ops.concat([
        ops.reshape(ops.resize_bilinear(t["x"], 10, 12), (-1,)),
        ops.reshape(ops.resize_bilinear(t["x"], 3, 4), (-1,))]))


@grad_check("elementwise")
def _(seed):
    rng = Rng(seed)
    arrays = {"x": rng.uniform(-2, 2, (3, 4, 4)), "y": rng.uniform(0.5, 2, (1, 4, 4))}
    return _probe_check(seed, arrays, lambda t: ops.concat([
        ops.sigmoid(t["x"]) * t["y"], ops.relu(t["x"]) / t["y"], ops.log(t["y"]) - t["x"],
        ops.clamp(t["x"], -1.5, 1.5)]))


@grad_check("layout")
def _(seed):
    arrays = {"x": Rng(seed).uniform(-1, 1, (4, 3, 5))}
    return _probe_check(seed, arrays, lambda t: ops.reshape(ops.transpose(
        ops.reshape(ops.channel_slice(t["x"], 1, 3), (2, 15))), (15, 2)) * 2.0)


@grad_check("psa")
def _(seed):
    arrays = _module_arrays(attention.psa_shapes(4), {"x": (4, 12, 12)}, seed)
    return _probe_check(seed, arrays, lambda t: attention.psa_forward(t["x"], _p(t)))


@grad_check("pca")
def _(seed):
    arrays = _module_arrays(attention.pca_shapes((1, 2)), {"x": (16, 3, 3)}, seed)
    return _probe_check(seed, arrays, lambda t: attention.pca_forward(t["x"], _p(t), (1, 2)))


@grad_check("mde")
def _(seed):
    arrays = _module_arrays(mde.mde_shapes(4, pca_factors=(1, 2)), {"x": (4, 24, 24)}, seed)
    return _probe_check(seed, arrays, lambda t: mde.mde_forward(t["x"], _p(t), pca_factors=(1, 2)))


@grad_check("granular")
def _(seed):
    arrays = _module_arrays(dgc.granular_shapes(4), {"x": (4, 8, 8)}, seed)
    return _probe_check(seed, arrays, lambda t: dgc.granular_branch(t["x"], _p(t)))


@grad_check("geometric")
def _(seed):
    arrays = _module_arrays(dgc.geometric_shapes(4), {"x": (4, 8, 8)}, seed)
    return _probe_check(seed, arrays, lambda t: dgc.geometric_branch(t["x"], _p(t)))


@grad_check("interaction")
def _(seed):
    shapes = {"interact.weight": (1, 8, 1, 1), "interact.bias": (1,)}
    arrays = _module_arrays(shapes, {"fs": (4, 6, 6), "fd": (4, 6, 6)}, seed)
    return _probe_check(seed, arrays, lambda t: ops.concat(
        list(dgc.geo_gran_interaction(t["fs"], t["fd"], _p(t)))))


@grad_check("dgc")
def _(seed):
    arrays = _module_arrays(dgc.dgc_shapes(4, pca_factors=(1, 2)), {"x": (4, 24, 24)}, seed)
    return _probe_check(seed, arrays, lambda t: dgc.dgc_forward(t["x"], _p(t), pca_factors=(1, 2)))


@grad_check("dsp")
def _(seed):
    arrays = _module_arrays(fusion.dsp_shapes(4), {"x": (4, 3, 3)}, seed)
    return _probe_check(seed, arrays, lambda t: fusion.dsp_forward(t["x"], _p(t)))


@grad_check("lgf")
def _(seed):
    arrays = _module_arrays(fusion.lgf_shapes(4), {"low": (4, 8, 8), "high": (4, 4, 4)}, seed)
    return _probe_check(seed, arrays, lambda t: fusion.lgf_forward(t["low"], t["high"], _p(t)))


@grad_check("decode")
def _(seed):
    arrays = _module_arrays(fusion.decoder_shapes(4, levels=3),
                            {"f1": (4, 8, 8), "f2": (4, 4, 4), "f3": (4, 2, 2)}, seed)
    return _probe_check(seed, arrays, lambda t: ops.concat(
        [ops.reshape(d, (-1,)) for d in fusion.decode([t["f1"], t["f2"], t["f3"]], _p(t))]))


def _loss_arrays(seed):
    rng = Rng(seed)
    return {"s": rng.uniform(0.05, 0.95, (1, 8, 8)), "g": (rng.uniform(0, 1, (1, 8, 8)) > 0.5) * 1.0}


@grad_check("bce_loss")
def _(seed):
    return gradcheck(lambda t: objective.bce_loss(t["s"], t["g"]), _loss_arrays(seed), Rng(seed), wrt=["s"])


@grad_check("iou_loss")
def _(seed):
    return gradcheck(lambda t: objective.iou_loss(t["s"], t["g"]), _loss_arrays(seed), Rng(seed), wrt=["s"])


@grad_check("fm_loss")
def _(seed):
    return gradcheck(lambda t: objective.fm_loss(t["s"], t["g"]), _loss_arrays(seed), Rng(seed), wrt=["s"])


def mini_net_shapes(c: int = 4) -> dict:
    shapes = {}
    shapes.update(conv_shapes("stem", c, 3, 3))
    shapes.update(conv_shapes("level1", c, c, 3))
    shapes.update(conv_shapes("level2", c, c, 3))
    shapes.update(prefixed("decoder", fusion.decoder_shapes(c, levels=2)))
    shapes.update(conv_shapes("head1", 1, c, 1))
    shapes.update(conv_shapes("head2", 1, c, 1))
    return shapes


def mini_net(image: Tensor, p: Params) -> list[Tensor]:
    """Reduced end-to-end network: strided convs, a two-level LGF chain, two heads."""
    _, h, w = image.shape
    x = ops.relu(ops.conv2d(image, p.conv("stem", stride=2)))
    l1 = ops.relu(ops.conv2d(x, p.conv("level1", stride=2)))
    l2 = ops.conv2d(l1, p.conv("level2", stride=2))
    dec = fusion.decode([l1, l2], p.scope("decoder"))
    return [ops.sigmoid(ops.resize_bilinear(ops.conv2d(d, p.conv(f"head{i}")), h, w))
            for i, d in enumerate(dec, start=1)]


@grad_check("net_end_to_end")
def _(seed):
    # O(1) weights: with fan-in init the gate products shrink the gradients
    # to ~1e-7, below what h=1e-6 differences can resolve on an O(1) loss.
    rng = Rng(4000 + seed)
    weights = {k: rng.uniform(-0.5, 0.5, s) for k, s in mini_net_shapes(4).items()}
    image = rng.uniform(0, 1, (3, 48, 48))
    mask = np.zeros((1, 48, 48))
    mask[:, 16:32, 16:32] = 1.0
    arrays = {**weights, "image": image}

    def loss(t):
        return objective.total_loss([(mini_net(t["image"], Params(t)), mask)]).total

    return gradcheck(loss, arrays, Rng(seed), n_coords=64, wrt=list(weights))


# ---------------------------------------------------------------- module oracles and identities

def _oracle(shapes, x_shape, forward, reference, seed, tol=ORACLE_TOL):
    rng = Rng(5000 + seed)
    w = init_uniform(shapes, rng, bias_bound=0.1)
    x = rng.uniform(-1, 1, x_shape)
    p, _ = as_params(w)
    return _close(forward(Tensor(x), p).data, reference(x, w), tol)


@check("psa.oracle")
def _():
    return _oracle(attention.psa_shapes(4), (4, 12, 12), attention.psa_forward, ref.psa_ref, 1)


@check("psa.identity_weights")
def _():
    c, factors = 4, (1, 2, 4, 6)
    w = {k: np.zeros(s) for k, s in attention.psa_shapes(c, factors).items()}
    for j in range(len(factors)):
        for o in range(c):
            w["merge.weight"][o, j * c + o, 1, 1] = 1.0 / len(factors)
    x = Rng(2).normal((c, 12, 12))
    return _close(attention.psa_forward(Tensor(x), as_params(w)[0]).data, x, 1e-14)


@check("pca.oracle")
def _():
    return _oracle(attention.pca_shapes((1, 2)), (16, 3, 3),
                   lambda x, p: attention.pca_forward(x, p, (1, 2)),
                   lambda x, w: ref.pca_ref(x, w, (1, 2)), 2)


@check("pca.hw_invariance")
def _():
    w = init_uniform(attention.pca_shapes((1, 2)), Rng(3), bias_bound=0.1)
    p, _ = as_params(w)
    flat = Rng(4).normal((16, 12))
    a = attention.pca_forward(Tensor(flat.reshape(16, 2, 6)), p, (1, 2)).data.reshape(16, 12)
    b = attention.pca_forward(Tensor(flat.reshape(16, 3, 4)), p, (1, 2)).data.reshape(16, 12)
    return _close(a, b, 1e-14)


@check("mde.oracle")
def _():
    return _oracle(mde.mde_shapes(4, pca_factors=(1, 2)), (4, 24, 24),
                   lambda x, p: mde.mde_forward(x, p, pca_factors=(1, 2)),
                   lambda x, w: ref.mde_ref(x, w, pca_factors=(1, 2)), 3)


@check("mde.residual_skip")
def _():
    c = 4
    w = {k: np.zeros(s) for k, s in mde.mde_shapes(c).items()}
    for i, k in enumerate(mde.KERNELS, start=1):
        for o in range(c):
            w[f"branch{i}.convA.weight"][o, o, k // 2, k // 2] = 1.0
            w[f"branch{i}.convB.weight"][o, o, k // 2, k // 2] = 1.0
    x = Rng(5).normal((c, 24, 24))
    p, _ = as_params(w)
    outs = [mde.u_branch(Tensor(x), p.scope(f"branch{i}")).data for i in range(1, 5)]
    return all(np.array_equal(o, x) for o in outs), "inner path zero -> branch == input"


@check("granular.cascade")
def _():
    c = 4
    w = {k: np.zeros(s) for k, s in dgc.granular_shapes(c).items()}
    for j, k in enumerate(mde.KERNELS):
        for o in range(c):
            w[f"conv{j}.weight"][o, o, k // 2, k // 2] = 1.0
            w["merge.weight"][o, j * c + o, 0, 0] = 0.25
    x = Rng(6).normal((c, 8, 8))
    return _close(dgc.granular_branch(Tensor(x), as_params(w)[0]).data, 2.5 * x, 1e-13)


@check("granular.oracle")
def _():
    return _oracle(dgc.granular_shapes(4), (4, 8, 8), dgc.granular_branch, ref.granular_ref, 4)


@check("location_sensing.loop_oracle")
def _():
    return _oracle(dgc.location_sensing_shapes(3), (3, 4, 4), dgc.location_sensing,
                   ref.location_sensing_loop, 5)


@check("location_sensing.basis_vector")
def _():
    c = 3
    w = {k: np.zeros(s) for k, s in dgc.location_sensing_shapes(c).items()}
    for name in "qkv":
        w[f"{name}.weight"][:, :, 0, 0] = np.eye(c)
    p, _ = as_params(w)
    ok = True
    for j in range(c):
        e = np.zeros((c, 1, 1))
        e[j] = 1.0
        ok &= bool(np.array_equal(dgc.location_sensing(Tensor(e), p).data, e))
    return ok, "out == e_j"


@check("geometric.oracle")
def _():
    return _oracle(dgc.geometric_shapes(4), (4, 8, 8), dgc.geometric_branch, ref.geometric_ref, 6)


@check("interaction.oracle_and_identities")
def _():
    rng = Rng(7)
    w = {"interact.weight": rng.uniform(-1, 1, (1, 8, 1, 1)), "interact.bias": rng.uniform(-1, 1, (1,))}
    fs, fd = rng.normal((4, 5, 5)), rng.normal((4, 5, 5))
    p, _ = as_params(w)
    a, b = dgc.geo_gran_interaction(Tensor(fs), Tensor(fd), p)
    ra, rb, wmap = ref.interaction_ref(fs, fd, w)
    ok1, d = _close(np.concatenate([a.data, b.data]), np.concatenate([ra, rb]), 1e-12)
    same_a, same_b = dgc.geo_gran_interaction(Tensor(fs), Tensor(fs), p)
    zero = {k: np.zeros_like(v) for k, v in w.items()}
    za, zb = dgc.geo_gran_interaction(Tensor(fs), Tensor(fd), as_params(zero)[0])
    ok2 = np.array_equal(same_a.data, same_b.data)
    ok3 = np.array_equal(za.data, 1.5 * fs) and np.array_equal(zb.data, 1.5 * fd)
    return ok1 and ok2 and ok3 and bool(np.all((wmap > 0) & (wmap < 1))), d


@check("dgc.oracle")
def _():
    return _oracle(dgc.dgc_shapes(4, pca_factors=(1, 2)), (4, 24, 24),
                   lambda x, p: dgc.dgc_forward(x, p, pca_factors=(1, 2)),
                   lambda x, w: ref.dgc_ref(x, w, pca_factors=(1, 2)), 7, 1e-9)


@check("dsp.oracle")
def _():
    return _oracle(fusion.dsp_shapes(4), (4, 3, 3), fusion.dsp_forward, ref.dsp_ref, 8)


@check("lgf.oracle")
def _():
    rng = Rng(9)
    w = init_uniform(fusion.lgf_shapes(4), rng, bias_bound=0.1)
    low, high = rng.normal((4, 8, 8)), rng.normal((4, 4, 4))
    got = fusion.lgf_forward(Tensor(low), Tensor(high), as_params(w)[0]).data
    return _close(got, ref.lgf_ref(low, high, w))


@check("lgf.zero_gates")
def _():
    w = {k: np.zeros(s) for k, s in fusion.lgf_shapes(4).items()}
    p, _ = as_params(w)
    high = Rng(10).normal((4, 4, 4))
    up = ops.resize_bilinear(Tensor(high), 8, 8).data
    ones = fusion.lgf_forward(Tensor(np.ones((4, 8, 8))), Tensor(high), p).data
    zeros = fusion.lgf_forward(Tensor(np.zeros((4, 8, 8))), Tensor(high), p).data
    return bool(np.array_equal(ones, 2 * up) and np.array_equal(zeros, up)), "2*up and up"


# ---------------------------------------------------------------- losses, metrics, optimizer

@check("loss.bce_half")
def _():
    v = objective.bce_loss(np.full((1, 4, 4), 0.5), (np.arange(16).reshape(1, 4, 4) % 2) * 1.0).item()
    return abs(v - math.log(2)) <= 1e-9, f"{v!r}"


@check("loss.iou_disjoint")
def _():
    v = objective.iou_loss(np.ones((1, 4, 4)), np.zeros((1, 4, 4))).item()
    return abs(v - 1.0) <= 1e-7, f"{v!r}"


@check("loss.fm_perfect")
def _():
    g = np.zeros((1, 6, 6))
    g[:, 1:4, 2:5] = 1.0
    v = objective.fm_loss(g, g).item()
    return v <= 1e-7, f"{v!r}"


@check("loss.total_perfect")
def _():
    g = np.zeros((1, 8, 8))
    g[:, 2:6, 2:6] = 1.0
    lb = objective.total_loss([([g] * 5, g)])
    return lb.value <= 5e-6 and lb.value == lb.bce + lb.iou + lb.fm, f"{lb.value!r}"


@check("loss.loop_oracles")
def _():
    rng = Rng(11)
    s, g = rng.uniform(0, 1, (1, 6, 6)), rng.uniform(0, 1, (1, 6, 6))
    errs = [abs(objective.bce_loss(s, g).item() - ref.bce_loop(s, g)),
            abs(objective.iou_loss(s, g).item() - ref.iou_loop(s, g)),
            abs(objective.fm_loss(s, g).item() - ref.fm_loop(s, g))]
    return max(errs) <= 1e-12, f"max abs err {max(errs):.3e}"


@check("metric.identities")
def _():
    rng = Rng(12)
    g = (rng.uniform(0, 1, (1, 10, 10)) > 0.6) * 1.0
    r = objective.f_measure(g, g)
    comp = objective.mae_metric(g, 1.0 - g)
    return objective.mae_metric(g, g) == 0.0 and r.f_beta == 1.0 and comp == 1.0, f"F={r.f_beta}"


@check("metric.loop_oracle")
def _():
    rng = Rng(13)
    s, g = rng.uniform(0, 1, (1, 9, 9)), (rng.uniform(0, 1, (1, 9, 9)) > 0.5) * 1.0
    e1 = abs(objective.mae_metric(s, g) - ref.mae_loop(s, g))
    e2 = abs(objective.f_measure(s, g).f_beta - ref.f_measure_loop(s, g))
    return max(e1, e2) <= 1e-12, f"max abs err {max(e1, e2):.3e}"


@check("rmsprop.scalar")
def _():
    st = objective.RmsState()
    w = objective.rmsprop_step({"w": np.array(1.0)}, {"w": np.array(1.0)}, st)["w"]
    expect = 1.0 - 1e-4 / math.sqrt(0.1 + 1e-8)
    return abs(float(w) - expect) <= 1e-15, f"{float(w)!r} vs {expect!r}"


@check("rmsprop.quadratic_descent")
def _():
    w, st = {"w": np.array(1.0)}, objective.RmsState()
    prev = 1.0
    for _ in range(100):
        w = objective.rmsprop_step(w, {"w": 2.0 * w["w"]}, st)
        cur = float(w["w"]) ** 2
        if not cur < prev:
            return False, f"loss rose to {cur}"
        prev = cur
    return True, f"final loss {prev:.6f}"


@check("lr_schedule.values")
def _():
    vals = [objective.lr_schedule(e) for e in (0, 29, 30, 41, 42)]
    ok = vals[0] == vals[1] == 1e-4 and abs(vals[2] - 7e-5) < 1e-18 and abs(vals[4] - 4.9e-5) < 1e-18
    return ok and vals[3] == vals[2], str(vals)


# ---------------------------------------------------------------- network plumbing

@check("net.weights_roundtrip")
def _():
    cfg = net.NetConfig.toy()
    w = net.init_weights(Rng(1), cfg)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "w.g2hf"
        net.save_weights(w, path)
        back = net.load_weights(path)
    return list(back) == list(w) and all(np.array_equal(back[k], w[k]) for k in w), f"{len(w)} tensors"


@check("net.toy_forward_contract")
def _():
    cfg = net.NetConfig.toy()
    w = net.init_weights(Rng(2), cfg)
    out = net.forward(Rng(3).uniform(0, 1, (3, 192, 192)), w, cfg, trace=True)
    shapes_ok = all(s.shape == (1, 192, 192) for s in out)
    range_ok = all(np.all((s.data >= 0) & (s.data <= 1)) for s in out)
    finite = all(np.isfinite(t.data).all() for t in out.trace.values())
    return shapes_ok and range_ok and finite, f"{len(out)} maps"


def run_checks(name_filter: str | None = None, report=print) -> tuple[int, int]:
    """Run registered checks; return ``(passed, total)``."""
    passed = total = 0
    for name, fn in CHECKS.items():
        if name_filter and name_filter not in name:
            continue
        total += 1
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        passed += bool(ok)
        report(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return passed, total
