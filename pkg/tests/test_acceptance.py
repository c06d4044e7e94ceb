"""Release acceptance gate.

One test per release criterion, each at its stated tolerance. Every test
prints a single ``[PASS]``/``[FAIL]`` line with the measured margin; run
``pytest tests/test_acceptance.py -v -s`` to see them on passing runs.
"""

import dataclasses
import math
import time
from fractions import Fraction

import numpy as np
from conftest import OVERFIT_SPEC, overfit_train_config
from test_model import f64_params, fd_gradients, tiny_cfg

from affectseq import model
from affectseq.checkpoint import load_checkpoint, save_checkpoint
from affectseq.features import FeatureSequence, read_feature_file, write_feature_file
from affectseq.losses import (
    FocalConfig,
    ccc_loss,
    ccc_stats,
    cross_entropy_multiclass,
    focal_multiclass,
    focal_multilabel,
)
from affectseq.masking import MaskConfig, sample_mask
from affectseq.metrics import aggregate_va, eval_f1
from affectseq.optim import AdamWConfig, init_opt_state, step
from affectseq.synth import generate
from affectseq.train import evaluate, train


def _verdict(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_gradient_correctness():
    # every parameter tensor vs central differences (eps=1e-3, 64-bit),
    # per-tensor relative error <= 1e-4 on T=4, d_model=8, 1 layer,
    # 2 heads; 5 seeds. The comparison is at tensor granularity because
    # the O(eps^2) truncation of the difference quotient exceeds 1e-4
    # relative on individual near-zero elements no matter how the
    # gradients are computed.
    t0 = time.monotonic()
    worst = 0.0
    for seed in range(5):
        task = ("VA", "EXPR", "AU")[seed % 3]
        fds, grads = fd_gradients(tiny_cfg(task), seed)
        for name, fd in fds.items():
            g = grads[name]
            den = max(1e-6, float(np.linalg.norm(fd)), float(np.linalg.norm(g)))
            worst = max(worst, float(np.linalg.norm(fd - g)) / den)
    elapsed = time.monotonic() - t0
    _verdict(
        "gradient correctness",
        worst <= 1e-4 and elapsed < 30.0,
        f"worst relative error {worst:.2e} over 5 seeds in {elapsed:.1f}s",
    )


def test_loss_oracles():
    one = np.array([True])
    devs = []

    out = focal_multiclass(np.log([[0.9, 0.1]]), np.array([0]), one,
                           FocalConfig(alpha=0.25, gamma=2.0))
    devs.append(abs(out.loss - 0.25 * 0.01 * (-math.log(0.9))))

    cfg = FocalConfig(alpha=0.25, gamma=2.0)
    out = focal_multilabel(np.zeros((1, 1)), np.array([[1]]), one, cfg)
    devs.append(abs(out.loss - 0.25 * 0.25 * math.log(2.0)))
    out = focal_multilabel(np.zeros((1, 1)), np.array([[0]]), one, cfg)
    devs.append(abs(out.loss - 0.75 * 0.25 * math.log(2.0)))

    anti_x, anti_y = np.array([1.0, -1.0]), np.array([-1.0, 1.0])
    devs.append(abs(ccc_stats(anti_x, anti_y).ccc - (-1.0)))
    devs.append(abs(ccc_loss(anti_x, anti_y).loss - 2.0))
    shifted = ccc_stats(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    devs.append(abs(shifted.ccc - 1.0 / 3.0))

    # focal(alpha=1, gamma=0) must equal plain CE, loss and gradient
    r = np.random.default_rng(0)
    ce_cfg = FocalConfig(alpha=1.0, gamma=0.0)
    for _ in range(100):
        n, c = int(r.integers(1, 12)), int(r.integers(2, 9))
        logits = r.standard_normal((n, c)) * 3.0
        targets = r.integers(0, c, size=n)
        validity = np.ones(n, dtype=bool)
        f = focal_multiclass(logits, targets, validity, ce_cfg)
        ce = cross_entropy_multiclass(logits, targets, validity)
        devs.append(abs(f.loss - ce.loss))
        devs.append(float(np.abs(f.grad - ce.grad).max()))

    worst = max(devs)
    _verdict("loss oracles", worst <= 1e-9, f"worst deviation {worst:.2e}")


def test_metric_oracles():
    targets = np.array([0, 0, 1, 1])
    preds = np.array([0, 1, 1, 1])
    report = eval_f1(preds, targets, np.ones(4, dtype=bool), n_classes=2)
    f1_exact = report.macro_f1 == float(Fraction(11, 15))
    va_exact = aggregate_va(0.23, 0.41) == 0.32
    _verdict(
        "metric oracles",
        f1_exact and va_exact,
        f"toy macro F1 {report.macro_f1!r}, aggregate_va {aggregate_va(0.23, 0.41)!r}",
    )


def test_overfit_sanity(overfit_corpus, tmp_path):
    t0 = time.monotonic()
    cfg = overfit_train_config(overfit_corpus, tmp_path / "ckpt", epochs=100)
    result = train(cfg)
    report = evaluate(result.last_ckpt, overfit_corpus)
    elapsed = time.monotonic() - t0
    _verdict(
        "overfit sanity",
        result.steps_run <= 500 and report.macro_f1 >= 0.95 and elapsed < 300.0,
        f"train macro F1 {report.macro_f1:.4f} after {result.steps_run} steps "
        f"in {elapsed:.1f}s",
    )


def test_masking_statistics(tmp_path):
    n = 10_000
    worst_z = 0.0
    for p in (0.1, 0.15, 0.5):
        stream = np.random.default_rng(np.random.SeedSequence((42, 0, 0)))
        plan = sample_mask(n, MaskConfig(p=p), stream)
        worst_z = max(worst_z, abs(plan.mean() - p) / math.sqrt(p * (1 - p) / n))

    # p=1 control: the labels depend only on the features, so training on
    # fully zeroed inputs cannot beat chance (1/8) on held-out videos
    spec = dataclasses.replace(
        OVERFIT_SPEC, n_videos=2, frames=500, seed=11, temporal_smoothness=1,
    )
    train_dir = tmp_path / "train"
    generate(spec, train_dir)
    val_dir = tmp_path / "val"
    generate(dataclasses.replace(spec, n_videos=1, video_offset=2), val_dir)
    cfg = overfit_train_config(
        train_dir, tmp_path / "ckpt", epochs=30,
        mask=MaskConfig(p=1.0, replacement="zero_vector"),
    )
    result = train(cfg)
    val_f1 = evaluate(result.last_ckpt, val_dir).macro_f1
    _verdict(
        "masking statistics",
        worst_z <= 3.0 and abs(val_f1 - 0.125) <= 0.1,
        f"worst rate deviation {worst_z:.2f} sigma; "
        f"full-mask control val F1 {val_f1:.4f} vs chance 0.125",
    )


def test_determinism(overfit_corpus, tmp_path):
    val_dir = tmp_path / "val"
    generate(dataclasses.replace(OVERFIT_SPEC, video_offset=1), val_dir)
    outs = []
    for name in ("a", "b"):
        cfg = overfit_train_config(
            overfit_corpus, tmp_path / name, epochs=4, eval_every=2,
            val_dir=str(val_dir),
        )
        outs.append(train(cfg))
    a, b = outs
    same_ckpts = (
        open(a.last_ckpt, "rb").read() == open(b.last_ckpt, "rb").read()
        and open(a.best_ckpt, "rb").read() == open(b.best_ckpt, "rb").read()
    )
    same_reports = (
        a.best_metric == b.best_metric
        and evaluate(a.last_ckpt, val_dir) == evaluate(b.last_ckpt, val_dir)
    )
    _verdict(
        "determinism",
        same_ckpts and same_reports,
        f"checkpoints bit-identical: {same_ckpts}; reports identical: {same_reports}",
    )


def test_format_round_trips(tmp_path):
    r = np.random.default_rng(5)
    exact = 0
    for i in range(100):
        frames, dim = int(r.integers(1, 30)), int(r.integers(1, 20))
        seq = FeatureSequence(
            video_id=f"v{i:03d}",
            data=r.standard_normal((frames, dim)).astype(np.float32),
        )
        path = tmp_path / f"v{i:03d}.afsq"
        write_feature_file(seq, path)
        back = read_feature_file(path)
        if back.video_id == seq.video_id and back.data.tobytes() == seq.data.tobytes():
            exact += 1
    assert exact == 100

    heads = {8: (1, 2, 4), 12: (2, 3)}
    for i in range(100):
        d_model = int(r.choice(list(heads)))
        cfg = model.ModelConfig(
            task=("VA", "EXPR", "AU")[i % 3],
            dim_in=int(r.integers(1, 10)),
            d_model=d_model,
            n_heads=int(r.choice(heads[d_model])),
            n_layers=int(r.integers(0, 3)),
            dropout=0.1,
            t_max=int(r.integers(1, 20)),
        )
        params = model.init_params(cfg, r, dtype=np.float32)
        state = init_opt_state(params)
        ocfg = AdamWConfig(lr=1e-3)
        grads = {k: r.standard_normal(p.shape).astype(np.float32)
                 for k, p in params.items()}
        step(params, grads, state, ocfg)
        path = tmp_path / f"c{i:03d}.afck"
        extra = {"step": i, "best_metric": float(r.random())}
        save_checkpoint(path, cfg, params, opt_cfg=ocfg, opt_state=state, extra=extra)
        ck = load_checkpoint(path)
        ok = (
            ck.model_cfg == cfg and ck.opt_cfg == ocfg and ck.extra == extra
            and ck.opt_state.t == state.t
            and all(np.array_equal(ck.params[k], params[k]) for k in params)
            and all(np.array_equal(ck.opt_state.m[k], state.m[k]) for k in params)
            and all(np.array_equal(ck.opt_state.v[k], state.v[k]) for k in params)
        )
        if ok:
            exact += 1
    _verdict(
        "format round-trips",
        exact == 200,
        f"{exact}/200 random feature/checkpoint instances round-tripped bit-exactly",
    )


def test_encoder_equivariance():
    cfg = tiny_cfg("EXPR", n_layers=2, use_pe=False)
    params = f64_params(cfg)
    r = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10):
        x = r.standard_normal((9, cfg.dim_in))
        perm = r.permutation(9)
        y, _ = model.forward(params, cfg, x, mode="eval")
        y_perm, _ = model.forward(params, cfg, x[perm], mode="eval")
        worst = max(worst, float(np.abs(y_perm - y[perm]).max()))
    _verdict(
        "encoder equivariance",
        worst <= 1e-6,
        f"worst permutation deviation {worst:.2e} over 10 inputs",
    )
