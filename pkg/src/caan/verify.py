"""Self-check suites run by ``caan verify``.

Each suite returns a list of :class:`Case` results; a suite passes when all
of its cases do. The oracles here are deliberately naive (enumeration,
direct recomputation) so they share no code with the implementations they
check.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import functional as fn
from .discriminator import DiscriminatorParams, discriminate
from .evaluation import fscore, fscore_multi_user, kendall_tau, spearman_rho
from .generator import GeneratorParams, generate
from .gradcheck import as_f64_leaf, check_gradients, pooled_error
from .postprocess import knapsack_select, optimal_segment_costs
from .tensor import exp, log, matmul, square
from .training import adversarial_losses, reconstruction_loss, sparsity_loss, supervised_loss

GRAD_TOL = 1e-3


@dataclass
class Case:
    name: str
    ok: bool
    detail: str = ""


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------
def _op_checks(rng):
    """(name, fn, leaves) triples covering every fused differentiable op."""
    leaf = lambda *shape: as_f64_leaf(rng.standard_normal(shape))  # noqa: E731
    pos = lambda *shape: as_f64_leaf(rng.uniform(0.5, 2.0, shape))  # noqa: E731
    x, y = leaf(5, 4), leaf(4, 3)
    out = []
    out.append(("matmul", lambda: matmul(x, y).sum(), [x, y]))
    a, b = leaf(3, 4), pos(3, 4)
    out.append(("arithmetic", lambda: square(a * b - a / b).sum() + (exp(a) + log(b)).mean(), [a, b]))
    s = leaf(6, 3)
    out.append(("sigmoid_tanh", lambda: (fn.sigmoid(s) * fn.tanh(s)).sum(), [s]))
    # keep ReLU inputs away from the kink
    r = as_f64_leaf(rng.uniform(0.1, 1.0, (4, 3)) * rng.choice([-1.0, 1.0], (4, 3)))
    out.append(("relu", lambda: square(fn.relu(r)).sum(), [r]))
    sm = leaf(4, 5)
    wts = rng.standard_normal((4, 5))
    out.append(("softmax", lambda: (fn.softmax_rows(sm) * wts).sum(), [sm]))
    for axis in ("temporal", "feature"):
        nx, g, bb = leaf(6, 3), pos(3), leaf(3)
        w = rng.standard_normal((6, 3))
        out.append((f"norm_{axis}", lambda nx=nx, g=g, bb=bb, axis=axis, w=w: (fn.norm_layer(nx, g, bb, axis=axis) * w).sum(),
                    [nx, g, bb]))
    cx, ck = leaf(8, 3), leaf(3, 3, 2)
    out.append(("conv1d", lambda: square(fn.conv1d_temporal(cx, ck, 1, 1)).sum(), [cx, ck]))
    tx, tk = leaf(4, 3), leaf(4, 2, 3)
    out.append(("transposed_conv1d", lambda: square(fn.transposed_conv1d_temporal(tx, tk)).sum(), [tx, tk]))
    px = as_f64_leaf(rng.permutation(24).reshape(8, 3) * 0.1)  # distinct values: no ties
    out.append(("max_pool", lambda: square(fn.max_pool1d(px)).sum(), [px]))
    lx, wih, whh, lb, h0, c0 = leaf(5, 3), leaf(3, 8), leaf(2, 8), leaf(8), leaf(2), leaf(2)
    out.append(("lstm", lambda: square(fn.lstm_forward(lx, wih, whh, lb, h0, c0)[0]).sum(), [lx, wih, whh, lb, h0, c0]))
    v = leaf(7)
    out.append(("l2_norm", lambda: fn.l2_norm(v), [v]))
    return out


def _f64(params):
    for name, t in params.tensors.items():
        params.tensors[name] = as_f64_leaf(t.data)
    return params


def suite_gradients(seed: int = 0, include_generator: bool = True) -> list[Case]:
    rng = np.random.default_rng(seed)
    cases = []
    for name, f, leaves in _op_checks(rng):
        results = check_gradients(f, leaves, eps=1e-6)
        worst = max(r.rel_error for r in results)
        cases.append(Case(f"op:{name}", worst < GRAD_TOL, f"max rel err {worst:.2e}"))

    disc = _f64(DiscriminatorParams.init(6, hidden=5, seed=seed))
    xs = as_f64_leaf(rng.standard_normal((8, 6)))
    wd = rng.standard_normal(5)

    def disc_loss():
        out = discriminate(xs, disc)
        return out.prob + (out.phi * wd).sum()

    leaves = [xs] + disc.parameters()
    results = check_gradients(disc_loss, leaves, eps=1e-6, max_entries=12, seed=seed)
    worst = max(r.rel_error for r in results)
    cases.append(Case("graph:discriminator", worst < GRAD_TOL, f"max rel err {worst:.2e}"))

    if include_generator:
        gen = _f64(GeneratorParams.init(8, channels=(2, 2, 4, 4, 4), score_hidden=6, seed=seed))
        xg = as_f64_leaf(rng.standard_normal((16, 8)))
        wg = rng.standard_normal((16, 8))

        def gen_loss():
            scores, x_fake = generate(xg, gen)
            return scores.sum() + (x_fake * wg).sum()

        leaves = [xg] + gen.parameters()
        # the 2-step bottleneck norm leaves some tensors with ~1e-9 gradients
        results = check_gradients(gen_loss, leaves, eps=1e-6, max_entries=3, seed=seed, global_floor=1e-6)
        worst = max(r.rel_error for r in results)
        pooled = pooled_error(results)
        cases.append(Case("graph:generator", max(worst, pooled) < GRAD_TOL,
                          f"max rel err {worst:.2e}, pooled {pooled:.2e}"))
    return cases


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------
def suite_losses() -> list[Case]:
    cases = []

    def add(name, got, want, tol=1e-12):
        cases.append(Case(name, abs(got - want) <= tol, f"got {got!r}, expected {want!r}"))

    d, g = adversarial_losses(0.5, 0.5)
    add("d_loss at p=0.5", d.item(), 2 * math.log(2))
    add("g_loss at p=0.5", g.item(), math.log(0.5))
    _, g_ns = adversarial_losses(0.5, 0.5, non_saturating=True)
    add("non-saturating g_loss at p=0.5", g_ns.item(), -math.log(0.5))
    d, _ = adversarial_losses(1 - 1e-7, 1e-7)
    add("d_loss of a perfect discriminator", d.item(), 0.0, tol=1e-6)
    add("rec identical", reconstruction_loss(np.ones(4), np.ones(4)).item(), 0.0)
    add("rec unit offset", reconstruction_loss(np.zeros(4), np.eye(4)[1]).item(), 1.0)
    add("spar at alpha", sparsity_loss(np.full(10, 0.3), 0.3).item(), 0.0, tol=1e-15)
    add("spar all ones", sparsity_loss(np.ones(10), 0.3).item(), 0.7)
    add("spar all zeros", sparsity_loss(np.zeros(10), 0.3).item(), 0.3)
    add("sup identical", supervised_loss(np.full(5, 0.4), np.full(5, 0.4)).item(), 0.0)
    add("sup ones vs zeros", supervised_loss(np.ones(5), np.zeros(5)).item(), 1.0)
    return cases


# ---------------------------------------------------------------------------
# knapsack
# ---------------------------------------------------------------------------
def brute_force_knapsack(values, lengths, budget):
    best = 0.0
    for r in range(len(values) + 1):
        for subset in itertools.combinations(range(len(values)), r):
            if sum(lengths[i] for i in subset) <= budget:
                best = max(best, sum(values[i] for i in subset))
    return best


def suite_knapsack(seed: int = 0, n_instances: int = 50, max_items: int = 12) -> list[Case]:
    rng = np.random.default_rng(seed)
    bad_value = bad_budget = 0
    for _ in range(n_instances):
        n = int(rng.integers(1, max_items + 1))
        values = rng.random(n)
        lengths = rng.integers(1, 20, n)
        budget = int(rng.integers(0, lengths.sum() + 1))
        chosen = knapsack_select(values, lengths, budget)
        if sum(lengths[i] for i in chosen) > budget:
            bad_budget += 1
        if abs(sum(values[i] for i in chosen) - brute_force_knapsack(values, lengths, budget)) > 1e-9:
            bad_value += 1
    return [
        Case("knapsack optimal value", bad_value == 0, f"{bad_value}/{n_instances} suboptimal"),
        Case("knapsack budget respected", bad_budget == 0, f"{bad_budget}/{n_instances} over budget"),
    ]


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------
def segment_scatter(x, a, b):
    seg = x[a:b]
    return float(((seg - seg.mean(axis=0)) ** 2).sum())


def brute_force_segmentation(x, m):
    """Minimum total scatter over all partitions of the rows into m segments."""
    n = x.shape[0]
    best = math.inf
    for cuts in itertools.combinations(range(1, n), m - 1):
        bounds = (0, *cuts, n)
        best = min(best, sum(segment_scatter(x, a, b) for a, b in zip(bounds, bounds[1:])))
    return best


def suite_kts(seed: int = 0, n_instances: int = 20, max_frames: int = 14, max_segments: int = 4) -> list[Case]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(max_segments, max_frames + 1))
        x = rng.standard_normal((n, int(rng.integers(1, 4))))
        costs, _ = optimal_segment_costs(x, max_segments)
        for m in range(1, max_segments + 1):
            ref = brute_force_segmentation(x, m)
            worst = max(worst, abs(costs[m] - ref) / max(1.0, abs(ref)))
    return [Case("kts DP cost equals enumeration", worst < 1e-9, f"max rel diff {worst:.1e}")]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------
def suite_metrics(seed: int = 0) -> list[Case]:
    cases = []
    a = np.zeros(100, dtype=bool)
    a[10:30] = True
    b = np.zeros(100, dtype=bool)
    b[20:40] = True
    c = np.zeros(100, dtype=bool)
    c[60:80] = True
    cases.append(Case("fscore identical", fscore(a, a)[2] == 100.0))
    cases.append(Case("fscore disjoint", fscore(a, c)[2] == 0.0))
    p, r, f = fscore(a, b)
    cases.append(Case("fscore half overlap", (p, r) == (0.5, 0.5) and abs(f - 50.0) < 1e-12, f"F={f}"))
    cases.append(Case("fscore max over users", fscore_multi_user(a, [c, a], "max")[2] == 100.0))
    rng = np.random.default_rng(seed)
    x = rng.permutation(50).astype(float)
    cases.append(Case("tau identical", kendall_tau(x, x) == 1.0))
    cases.append(Case("tau reversed", kendall_tau(x, -x) == -1.0))
    cases.append(Case("rho identical", abs(spearman_rho(x, x) - 1.0) < 1e-12))
    cases.append(Case("rho reversed", abs(spearman_rho(x, -x) + 1.0) < 1e-12))
    return cases


SUITES = {
    "gradients": suite_gradients,
    "losses": suite_losses,
    "knapsack": suite_knapsack,
    "kts": suite_kts,
    "metrics": suite_metrics,
}


def run_suite(name: str) -> list[Case]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; available: {', '.join(SUITES)}")
    return SUITES[name]()
