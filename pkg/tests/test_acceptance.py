"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The two end-to-end checks share one synthetic benchmark and a cache of
trained runs, so the full-mode d_cs=4 seed-0 model is trained only once.
"""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from csda import autodiff as ad
from csda import data
from csda.ablation import run_one
from csda.cli import main as cli
from csda.config import TrainConfig
from csda.data import Sample, SceneParams
from csda.gradcheck import LOSS_TOLERANCE, loss_errors
from csda.losses import LossConfig, lda_closed_form, loss_csda_delta, loss_csda_ln, scalar_fisher, signed_between_trace
from csda.scatter import ScatterPair, fisher_trace
from csda.train import evaluate
from csda.viz import layout

BENCHMARK_CFG = TrainConfig.load(Path(__file__).resolve().parent.parent / "configs" / "benchmark.cfg")
BENCHMARK_SEEDS = (0, 1, 2)

pytestmark = pytest.mark.acceptance


# --- 1. gradient correctness ------------------------------------------------


def test_gradient_correctness(verdict):
    start = time.perf_counter()
    errors = loss_errors(range(20), n_pixels=32, channels=2)
    elapsed = time.perf_counter() - start
    ok = max(errors.values()) < LOSS_TOLERANCE and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f", {elapsed:.1f}s"
    assert verdict(1, "loss gradients match central differences", ok, detail)


# --- 2. linear invariance ---------------------------------------------------


def test_linear_invariance(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for d in range(2, 7):
        a = rng.standard_normal((d, d))
        s_w = a @ a.T + 0.1 * np.eye(d)
        u = rng.standard_normal(d)
        s_b = np.outer(u, u)
        ref = fisher_trace(s_w, s_b)
        for _ in range(50):
            w = rng.standard_normal((d, d))
            while abs(np.linalg.det(w)) < 1e-3:
                w = rng.standard_normal((d, d))
            got = fisher_trace(w.T @ s_w @ w, w.T @ s_b @ w)
            worst = max(worst, abs(got - ref) / abs(ref))
    assert verdict(2, "fisher_trace invariant under congruence", worst < 1e-8, f"max rel err {worst:.1e}")


# --- 3. sign consistency ----------------------------------------------------


def test_sign_consistency(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        u = ad.Tensor(rng.uniform(-1, 1, 4), requires_grad=True)
        ad.backward(signed_between_trace(u, ad.outer(u, u)))
        worst = max(worst, float(np.abs(u.grad - 2 * np.abs(u.data)).max()))

    # projected descent on free class means, started with the background mean on top
    cfg = LossConfig(d_cs=4)
    s_w = ad.Tensor(np.eye(4) * 0.01)
    mu0, mu1 = np.array([0.8, 0.7, 0.9, 0.6]), np.array([0.3, 0.5, 0.2, 0.4])
    crossed = np.zeros(4, bool)
    grad_ok = True
    prev_u = mu0 - mu1
    for _ in range(100):
        a, b = ad.Tensor(mu0, requires_grad=True), ad.Tensor(mu1, requires_grad=True)
        u = a - b
        grads = ad.backward(loss_csda_delta(ScatterPair(ad.outer(u, u), s_w, u), cfg))
        du = grads[a]  # d loss / d u, since u = mu0 - mu1
        grad_ok &= bool(np.all(du >= 0)) and np.allclose(du, 2 * np.abs(u.data), atol=1e-12)
        mu0 = np.clip(mu0 - 0.3 * grads[a], 0, 1)
        mu1 = np.clip(mu1 - 0.3 * grads[b], 0, 1)
        crossed |= np.sign(mu0 - mu1) != np.sign(prev_u)
        prev_u = mu0 - mu1
    converged = bool(np.all(mu1 > mu0))
    ok = worst < 1e-10 and grad_ok and crossed.all() and converged
    detail = f"max |grad - 2|u||={worst:.1e}, every u_j crossed zero={bool(crossed.all())}, mu1>mu0={converged}"
    assert verdict(3, "signed gradient keeps its direction", ok, detail)


# --- 4. LDA oracle ----------------------------------------------------------


def test_lda_oracle(verdict):
    rng = np.random.default_rng(4)
    worst = math.inf
    for _ in range(10):
        a = rng.standard_normal((2, 2))
        shift = rng.uniform(-2, 2, 2)
        c0 = rng.standard_normal((150, 2)) @ a + shift
        c1 = rng.standard_normal((150, 2)) @ (a + 0.3 * rng.standard_normal((2, 2)))
        w = lda_closed_form(c0, c1)
        best = scalar_fisher(c0 @ w, c1 @ w)
        dirs = rng.standard_normal((1000, 2))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for v in dirs:
            worst = min(worst, best - scalar_fisher(c0 @ v, c1 @ v))
    assert verdict(4, "closed-form LDA beats random directions", worst >= -1e-9, f"min margin {worst:.2e}")


# --- 5. ln-loss stability ---------------------------------------------------


def test_ln_loss_stability(verdict):
    results = []
    for d in range(1, 7):
        u = ad.Tensor(np.full(d, -math.sqrt(1.0 - 1e-6 / d)), requires_grad=True)
        s_w = ad.Tensor(np.zeros((d, d)), requires_grad=True)
        pair = ScatterPair(ad.outer(u, u), s_w, u)
        signed = signed_between_trace(u, pair.s_b).item()
        loss = loss_csda_ln(pair, LossConfig(d_cs=d, epsilon=1e-8))
        grads = ad.backward(loss)
        finite = math.isfinite(loss.item()) and all(np.all(np.isfinite(g)) for g in grads.values())
        results.append(finite and abs(signed - (-d + 1e-6)) < 1e-9)
    assert verdict(5, "ln loss finite at the domain edge", all(results), f"d_cs 1..6: {results}")


# --- 6. metric arithmetic ---------------------------------------------------


class _FixedScores:
    """Stand-in model whose segmentation output is a preset score map per sample."""

    def __init__(self, maps):
        self.maps = list(maps)

    def forward(self, x, track=True):
        batch = [self.maps.pop(0) for _ in range(x.shape[0])]
        return None, ad.Tensor(np.stack(batch)[..., None])


def _eval(pred, mask):
    pred, mask = np.asarray(pred, float).reshape(1, -1), np.asarray(mask, np.uint8).reshape(1, -1)
    sample = Sample(np.random.default_rng(0).random(mask.shape + (3,)), mask, 0)
    return evaluate(_FixedScores([pred]), TrainConfig(), [sample]).aggregate


def test_metric_arithmetic(verdict):
    m = _eval([1, 1, 1, 1, 0, 0, 0, 0, 0, 0], [1, 1, 1, 0, 1, 0, 0, 0, 0, 0])
    hand = (m.accuracy, m.precision, m.recall, m.f1, m.iou_c1, m.iou_c0, m.miou) == (
        8 / 10, 3 / 4, 3 / 4, 2 * 0.75 * 0.75 / 1.5, 3 / 5, 5 / 7, (3 / 5 + 5 / 7) / 2
    )
    mask = [1, 0, 1, 1, 0, 0]
    perfect = all(v == 1.0 for v in _eval(mask, mask).as_dict().values())
    empty = _eval([0] * 6, mask)
    degenerate = empty.recall == 0 and empty.iou_c1 == 0
    ok = hand and perfect and degenerate
    assert verdict(6, "evaluate matches hand-computed confusion cases", ok,
                   f"3/1/1/5 case={hand}, perfect={perfect}, all-background={degenerate}")


# --- 7 and 8. end-to-end benchmark -----------------------------------------


@pytest.fixture(scope="session")
def benchmark():
    entries = data.make_manifest(600, 100, 100, seed=0)
    params = SceneParams(image_size=64, shadow_probability=0.6)
    return data.split_samples(entries, data.generate_dataset(entries, params))


_RUNS = {}


def _run(splits, mode, d_cs, seed):
    key = (mode, d_cs, seed)
    if key not in _RUNS:
        _RUNS[key] = run_one(replace(BENCHMARK_CFG, ablation=mode, d_cs=d_cs, seed=seed), splits)
    return _RUNS[key]


def test_end_to_end_direction(verdict, benchmark):
    start = time.perf_counter()
    means = {}
    for mode in ("full", "focal_only", "two_net_focal", "dda_only"):
        runs = [_run(benchmark, mode, 4, s) for s in BENCHMARK_SEEDS]
        means[mode] = (np.mean([r.f1 for r in runs]), np.mean([r.miou for r in runs]))
    full = means["full"]
    ok = (
        all(full[i] > means["focal_only"][i] for i in (0, 1))
        and all(full[i] > means["two_net_focal"][i] for i in (0, 1))
        and all(full[i] > means["dda_only"][i] for i in (0, 1))
    )
    detail = "; ".join(f"{m} f1 {f:.4f} miou {q:.4f}" for m, (f, q) in means.items())
    detail += f"; {time.perf_counter() - start:.0f}s"
    assert verdict(7, "CSDA beats focal, two-net and DDA baselines", ok, detail)


def test_robust_to_dcs(verdict, benchmark):
    start = time.perf_counter()
    mious = [_run(benchmark, "full", d, 0).miou for d in range(1, 7)]
    spread = max(mious) - min(mious)
    detail = "miou " + " ".join(f"{v:.4f}" for v in mious) + f", range {spread:.4f}, {time.perf_counter() - start:.0f}s"
    assert verdict(8, "full-mode mIoU stable across d_cs 1..6", spread < 0.05, detail)


# --- 9. determinism ---------------------------------------------------------


def test_determinism(verdict, tmp_path):
    entries = data.make_manifest(48, 16, 16, seed=9)
    data.write_manifest(tmp_path / "seeds.csv", entries)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(replace(BENCHMARK_CFG, max_epochs=2).dumps())
    outputs = []
    for name in ("a", "b"):
        # each run rebuilds its dataset from the manifest alone
        data.save_dataset(tmp_path / f"data_{name}", data.read_manifest(tmp_path / "seeds.csv"))
        assert cli(["train", "--config", str(cfg), "--data", str(tmp_path / f"data_{name}"),
                    "--out", str(tmp_path / name)]) == 0
        outputs.append((tmp_path / name / "metrics.csv").read_bytes())
    same = outputs[0] == outputs[1] and len(outputs[0]) > 0
    assert verdict(9, "same config and manifest give identical metric CSV bytes", same)


# --- 10. visualization layout -----------------------------------------------


def test_visualization_layout(verdict):
    expected = {
        1: [(0,)],
        2: [(0, 1, None)],
        3: [(0, 1, 2)],
        4: [(0, 1, 2), (3, None, None)],
        5: [(0, 1, 2), (3, 4, None)],
        6: [(0, 1, 2), (3, 4, 5)],
    }
    ok = all(layout(d) == want for d, want in expected.items())
    assert verdict(10, "panel layout groups channels into RGB triplets", ok)
