"""Checkpoint serialization: bit-exact round-trips and corruption handling."""

import numpy as np
import pytest

from affectseq import model
from affectseq.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    load_checkpoint,
    save_checkpoint,
)
from affectseq.errors import FormatError
from affectseq.model import ModelConfig
from affectseq.optim import AdamWConfig, init_opt_state, step


def _cfg(task="EXPR"):
    return ModelConfig(task=task, dim_in=6, d_model=8, n_heads=2, n_layers=1,
                       d_ff=16, dropout=0.1, t_max=12)


def _trained_state(cfg, seed=0, steps=3):
    r = np.random.default_rng(seed)
    params = model.init_params(cfg, r, dtype=np.float32)
    state = init_opt_state(params)
    ocfg = AdamWConfig(lr=1e-3)
    for _ in range(steps):
        grads = {k: r.standard_normal(p.shape).astype(np.float32)
                 for k, p in params.items()}
        step(params, grads, state, ocfg)
    return params, state, ocfg


def _assert_tensors_equal(a: dict, b: dict):
    assert set(a) == set(b)
    for k in a:
        assert a[k].dtype == b[k].dtype == np.float32
        assert np.array_equal(a[k], b[k]), k


@pytest.mark.parametrize("task", ["VA", "EXPR", "AU"])
def test_roundtrip_with_optimizer_state(tmp_path, task):
    cfg = _cfg(task)
    params, state, ocfg = _trained_state(cfg)
    path = tmp_path / "model.afck"
    extra = {"step": 3, "best_metric": 0.75, "note": "unit"}
    save_checkpoint(path, cfg, params, opt_cfg=ocfg, opt_state=state, extra=extra)

    ck = load_checkpoint(path)
    assert ck.model_cfg == cfg
    assert ck.opt_cfg == ocfg
    assert ck.extra == extra
    _assert_tensors_equal(ck.params, params)
    assert ck.opt_state.t == state.t
    _assert_tensors_equal(ck.opt_state.m, state.m)
    _assert_tensors_equal(ck.opt_state.v, state.v)


def test_roundtrip_without_optimizer_state(tmp_path):
    cfg = _cfg()
    params = model.init_params(cfg, np.random.default_rng(1), dtype=np.float32)
    path = tmp_path / "bare.afck"
    save_checkpoint(path, cfg, params)
    ck = load_checkpoint(path)
    assert ck.opt_state is None and ck.opt_cfg is None
    _assert_tensors_equal(ck.params, params)


def test_serialization_is_byte_deterministic(tmp_path):
    cfg = _cfg()
    params, state, ocfg = _trained_state(cfg, seed=2)
    p1, p2 = tmp_path / "a.afck", tmp_path / "b.afck"
    save_checkpoint(p1, cfg, params, opt_cfg=ocfg, opt_state=state, extra={"k": 1})
    save_checkpoint(p2, cfg, params, opt_cfg=ocfg, opt_state=state, extra={"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_forward_identical_after_reload(tmp_path, rng):
    cfg = _cfg("AU")
    params, state, ocfg = _trained_state(cfg, seed=3)
    path = tmp_path / "m.afck"
    save_checkpoint(path, cfg, params, opt_cfg=ocfg, opt_state=state)
    ck = load_checkpoint(path)
    x = rng.standard_normal((5, cfg.dim_in)).astype(np.float32)
    y_before, _ = model.forward(params, cfg, x, mode="eval")
    y_after, _ = model.forward(ck.params, ck.model_cfg, x, mode="eval")
    assert np.array_equal(y_before, y_after)


def test_resumed_trajectory_equals_uninterrupted(tmp_path):
    # optimizer moments must survive the round-trip well enough to continue
    # training bit-identically
    cfg = _cfg()
    r = np.random.default_rng(4)
    params = model.init_params(cfg, r, dtype=np.float32)
    state = init_opt_state(params)
    ocfg = AdamWConfig(lr=1e-3)
    grads_seq = [
        {k: np.random.default_rng(100 + t).standard_normal(p.shape).astype(np.float32)
         for k, p in params.items()}
        for t in range(6)
    ]
    for g in grads_seq[:3]:
        step(params, g, state, ocfg)
    path = tmp_path / "mid.afck"
    save_checkpoint(path, cfg, params, opt_cfg=ocfg, opt_state=state)
    for g in grads_seq[3:]:
        step(params, g, state, ocfg)

    ck = load_checkpoint(path)
    for g in grads_seq[3:]:
        step(ck.params, g, ck.opt_state, ocfg)
    _assert_tensors_equal(ck.params, params)


def test_header_magic_and_version(tmp_path):
    cfg = _cfg()
    params = model.init_params(cfg, np.random.default_rng(0), dtype=np.float32)
    path = tmp_path / "m.afck"
    save_checkpoint(path, cfg, params)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert int.from_bytes(raw[4:8], "little") == FORMAT_VERSION


@pytest.mark.parametrize(
    "mutate,msg",
    [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + (7).to_bytes(4, "little") + b[8:], "version"),
        (lambda b: b[: len(b) // 2], "."),
        (lambda b: b + b"\x00", "trailing"),
        (lambda b: b[:6], "."),
    ],
)
def test_corrupt_checkpoint_rejected(tmp_path, mutate, msg):
    cfg = _cfg()
    params = model.init_params(cfg, np.random.default_rng(0), dtype=np.float32)
    path = tmp_path / "m.afck"
    save_checkpoint(path, cfg, params)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(FormatError, match=msg):
        load_checkpoint(path)


def test_tensor_name_mismatch_rejected(tmp_path):
    # rename one stored tensor; the set no longer matches the declared config
    cfg = _cfg()
    params = model.init_params(cfg, np.random.default_rng(0), dtype=np.float32)
    path = tmp_path / "m.afck"
    save_checkpoint(path, cfg, params)
    raw = path.read_bytes()
    assert raw.count(b"head.b") == 1
    path.write_bytes(raw.replace(b"head.b", b"head.x"))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_save_leaves_no_temp_files(tmp_path):
    cfg = _cfg()
    params = model.init_params(cfg, np.random.default_rng(0), dtype=np.float32)
    path = tmp_path / "m.afck"
    save_checkpoint(path, cfg, params)
    save_checkpoint(path, cfg, params)  # overwrite in place
    assert [p.name for p in tmp_path.iterdir()] == ["m.afck"]
    load_checkpoint(path)
