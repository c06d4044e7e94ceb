"""Training/evaluation orchestration.

One optimizer step: draw a batch of clips (global shuffle per epoch), mask
each clip, forward in train mode, compute the task loss over the batch's
valid frames, backpropagate per clip, AdamW step. All randomness comes
from counter-based streams keyed by (seed, epoch, step, purpose, index),
so runs are reproducible and resumable without carrying rng state.

Evaluation never masks and never applies dropout; per-frame predictions
from overlapping windows are de-duplicated by the later-starting clip.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from affectseq import losses, masking, metrics, model, optim
from affectseq.checkpoint import load_checkpoint, save_checkpoint
from affectseq.config import TrainConfig
from affectseq.errors import (
    ConfigError,
    InsufficientDataError,
    NumericError,
)
from affectseq.features import (
    Clip,
    FeatureSequence,
    LabelTrack,
    feature_path,
    label_path,
    parse_label_csv,
    read_feature_file,
    window,
)

# purpose codes for counter-based rng streams
_INIT = 0
_SHUFFLE = 1
_MASK = 2
_DROPOUT = 3


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(key)))


def load_corpus(directory: str | Path, task: str) -> list[tuple[FeatureSequence, LabelTrack]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"corpus directory {directory} does not exist")
    files = sorted(directory.glob("*.afsq"))
    if not files:
        raise ConfigError(f"no feature files in {directory}")
    corpus = []
    for f in files:
        seq = read_feature_file(f)
        lpath = label_path(directory, seq.video_id, task)
        if not lpath.exists():
            raise ConfigError(
                f"no {task} labels for video '{seq.video_id}' in {directory}; "
                f"corpus/task mismatch?"
            )
        track = parse_label_csv(lpath, task)
        if track.frames != seq.frames:
            raise ConfigError(
                f"video '{seq.video_id}': {seq.frames} feature frames vs "
                f"{track.frames} label rows"
            )
        corpus.append((seq, track))
    dims = {seq.dim for seq, _ in corpus}
    if len(dims) != 1:
        raise ConfigError(f"inconsistent feature dims in {directory}: {sorted(dims)}")
    return corpus


def make_clips(corpus, T: int, stride: int) -> list[Clip]:
    clips: list[Clip] = []
    for seq, track in corpus:
        clips.extend(window(seq, track, T, stride))
    return clips


def _batch_loss(cfg: TrainConfig, yhats: list[np.ndarray], batch: list[Clip]):
    """Task loss over the batch's valid frames; returns per-clip dL/dyhat."""
    y = np.concatenate(yhats, axis=0)
    validity = np.concatenate([c.validity for c in batch])
    if cfg.task == "VA":
        targets = np.concatenate([c.label_values for c in batch])
        out = losses.va_loss(y, targets, validity, compat=cfg.ccc_compat)
    elif cfg.task == "EXPR":
        targets = np.concatenate([c.label_values for c in batch])
        out = losses.focal_multiclass(y, targets, validity, cfg.loss)
    else:
        targets = np.concatenate([c.label_values for c in batch])
        out = losses.focal_multilabel(y, targets, validity, cfg.loss)
    splits = np.cumsum([yh.shape[0] for yh in yhats])[:-1]
    return out.loss, np.split(out.grad, splits), out.n_valid


def _clip_rngs(cfg: TrainConfig, epoch: int, step: int, index: int):
    mask_stream = _rng(cfg.mask.seed, epoch, step, _MASK, index)
    drop_rng = _rng(cfg.seed, epoch, step, _DROPOUT, index)
    return mask_stream, drop_rng


def _run_step(
    cfg: TrainConfig,
    params: dict[str, np.ndarray],
    batch: list[Clip],
    epoch: int,
    step: int,
) -> tuple[float, dict[str, np.ndarray], int]:
    """Forward the whole batch, then backward clip by clip.

    The forward pass is re-run per clip during the backward phase in
    micro-chunks of grad_accum > 1 semantics; because dropout streams are
    counter-based the recomputed trace is bit-identical, so accumulation
    does not change results, only peak memory.
    """
    keep_traces = cfg.grad_accum == 1
    yhats: list[np.ndarray] = []
    traces: list = []
    for i, clip in enumerate(batch):
        mask_stream, drop_rng = _clip_rngs(cfg, epoch, step, i)
        plan = masking.sample_mask(clip.length, cfg.mask, mask_stream)
        feats = masking.apply_mask(
            clip.features, plan, cfg.mask.replacement, learned_token=params["mask_token"]
        )
        yhat, trace = model.forward(
            params,
            cfg.model,
            feats,
            mode="train",
            dropout_rng=drop_rng,
            mask_plan=plan,
            replacement=cfg.mask.replacement,
        )
        yhats.append(yhat)
        traces.append(trace if keep_traces else None)

    loss, grad_slices, n_valid = _batch_loss(cfg, yhats, batch)
    if n_valid == 0:
        # no labeled frame anywhere in the batch: nothing to learn from,
        # and a decay-only optimizer step would silently drift the weights
        raise InsufficientDataError(f"batch at step {step} has no valid frames")
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at step {step}")

    grads = model.zeros_like_params(params)
    for i, clip in enumerate(batch):
        trace = traces[i]
        if trace is None:
            mask_stream, drop_rng = _clip_rngs(cfg, epoch, step, i)
            plan = masking.sample_mask(clip.length, cfg.mask, mask_stream)
            feats = masking.apply_mask(
                clip.features, plan, cfg.mask.replacement, learned_token=params["mask_token"]
            )
            _, trace = model.forward(
                params,
                cfg.model,
                feats,
                mode="train",
                dropout_rng=drop_rng,
                mask_plan=plan,
                replacement=cfg.mask.replacement,
            )
        clip_grads = model.backward(trace, params, cfg.model, grad_slices[i])
        for name, g in clip_grads.items():
            grads[name] += g
    return loss, grads, n_valid


@dataclass
class TrainResult:
    last_ckpt: str
    best_ckpt: str | None
    log_path: str
    steps_run: int
    best_metric: float | None
    final_loss: float | None


def train(cfg: TrainConfig, resume_from: str | None = None) -> TrainResult:
    ckpt_dir = Path(cfg.ckpt_dir or ".")
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    last_path = ckpt_dir / "last.afck"
    best_path = ckpt_dir / "best.afck"
    diag_path = ckpt_dir / "diagnostic.afck"
    log_path = ckpt_dir / "train_log.csv"

    corpus = load_corpus(cfg.train_dir, cfg.task)
    dim = corpus[0][0].dim
    if dim != cfg.model.dim_in:
        raise ConfigError(f"corpus feature dim {dim} != model.dim_in {cfg.model.dim_in}")
    clips = make_clips(corpus, cfg.T, stride=cfg.T)
    val_corpus = load_corpus(cfg.val_dir, cfg.task) if cfg.val_dir else None

    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        if ck.model_cfg != cfg.model:
            raise ConfigError("checkpoint model config does not match run config")
        params = ck.params
        opt_state = ck.opt_state or optim.init_opt_state(params)
        start_epoch = int(ck.extra.get("next_epoch", 0))
        step = int(ck.extra.get("step", 0))
        best_metric = ck.extra.get("best_metric")
    else:
        params = model.init_params(cfg.model, _rng(cfg.seed, _INIT), dtype=np.float32)
        opt_state = optim.init_opt_state(params)
        start_epoch = 0
        step = 0
        best_metric = None

    mode = "a" if (resume_from is not None and log_path.exists()) else "w"
    log = open(log_path, mode)
    if mode == "w":
        log.write("step,loss,metric\n")

    def save_last(next_epoch: int) -> None:
        save_checkpoint(
            last_path,
            cfg.model,
            params,
            opt_cfg=cfg.optim,
            opt_state=opt_state,
            extra={"next_epoch": next_epoch, "step": step, "best_metric": best_metric,
                   "task": cfg.task, "T": cfg.T, "seed": cfg.seed},
        )

    def run_eval() -> float | None:
        nonlocal best_metric
        if val_corpus is None:
            return None
        report = evaluate_corpus(params, cfg.model, val_corpus, cfg.task,
                                 T=cfg.T, compat=cfg.ccc_compat)
        m = report.primary_metric
        if best_metric is None or m > best_metric:
            best_metric = m
            save_checkpoint(
                best_path,
                cfg.model,
                params,
                opt_cfg=cfg.optim,
                opt_state=opt_state,
                extra={"next_epoch": None, "step": step, "best_metric": best_metric,
                       "task": cfg.task, "T": cfg.T, "seed": cfg.seed},
            )
        return m

    final_loss = None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            order = _rng(cfg.seed, epoch, _SHUFFLE).permutation(len(clips))
            for lo in range(0, len(order), cfg.batch_size):
                batch = [clips[j] for j in order[lo : lo + cfg.batch_size]]
                try:
                    loss, grads, _ = _run_step(cfg, params, batch, epoch, step)
                except InsufficientDataError:
                    # a batch with too few labeled frames cannot supervise;
                    # skip it deterministically
                    log.write(f"{step},,\n")
                    step += 1
                    continue
                optim.step(params, grads, opt_state, cfg.optim)
                final_loss = loss
                step += 1
                if step % cfg.eval_every == 0:
                    m = run_eval()
                    log.write(f"{step},{loss!r},{'' if m is None else repr(m)}\n")
                else:
                    log.write(f"{step},{loss!r},\n")
            save_last(next_epoch=epoch + 1)
    except NumericError:
        save_checkpoint(
            diag_path, cfg.model, params, opt_cfg=cfg.optim, opt_state=opt_state,
            extra={"step": step, "failed": True, "task": cfg.task},
        )
        log.close()
        raise
    m = run_eval()
    if m is not None:
        log.write(f"{step},,{m!r}\n")
    save_last(next_epoch=max(cfg.epochs, start_epoch))
    log.close()
    return TrainResult(
        last_ckpt=str(last_path),
        best_ckpt=str(best_path) if best_path.exists() else None,
        log_path=str(log_path),
        steps_run=step,
        best_metric=best_metric,
        final_loss=final_loss,
    )


def predict_video(
    params: dict[str, np.ndarray],
    model_cfg: model.ModelConfig,
    seq: FeatureSequence,
    track: LabelTrack,
    T: int,
) -> np.ndarray:
    """Eval-mode per-frame model outputs for one video, de-duplicated."""
    clips = window(seq, track, T, stride=T)
    outputs = []
    for clip in clips:
        # evaluation contract: no masking, no dropout
        assert clip.features.shape[0] == clip.length
        yhat, trace = model.forward(params, model_cfg, clip.features, mode="eval")
        assert trace is None, "evaluation forward must not produce a training trace"
        outputs.append((clip.start_frame, yhat[: clip.real_frames]))
    return metrics.assemble_predictions(outputs, seq.frames)


def evaluate_corpus(
    params: dict[str, np.ndarray],
    model_cfg: model.ModelConfig,
    corpus,
    task: str,
    T: int,
    per_video: bool = False,
    compat: bool = False,
) -> metrics.MetricReport:
    preds, targets, validity = [], [], []
    for seq, track in corpus:
        yhat = predict_video(params, model_cfg, seq, track, T)
        preds.append(metrics.predict_from_logits(task, yhat))
        targets.append(track.values)
        validity.append(track.validity)
    total_valid = int(sum(v.sum() for v in validity))
    if total_valid == 0:
        raise InsufficientDataError("corpus has no valid labeled frames")
    if task == "VA":
        return _va_report(preds, targets, validity, per_video, compat)
    n_classes = 8 if task == "EXPR" else 12
    return metrics.eval_f1(preds, targets, validity, n_classes=n_classes, task=task)


def _va_report(preds, targets, validity, per_video: bool, compat: bool):
    if not compat:
        return metrics.eval_va(preds, targets, validity, per_video=per_video)
    # comparison mode: recompute the coefficients with the printed numerator
    cat = [np.concatenate(a) for a in (preds, targets, validity)]
    v = losses.ccc_stats(cat[0][cat[2], 0], cat[1][cat[2], 0], compat=True).ccc
    a = losses.ccc_stats(cat[0][cat[2], 1], cat[1][cat[2], 1], compat=True).ccc
    n = int(cat[2].sum())
    return metrics.MetricReport(
        task="VA", n_valid_frames=n, ccc_v=v, ccc_a=a, ccc_mean=metrics.aggregate_va(v, a)
    )


def evaluate(
    ckpt_path: str | Path,
    corpus_dir: str | Path,
    task: str | None = None,
    per_video: bool = False,
    compat: bool = False,
) -> metrics.MetricReport:
    """Evaluate a checkpoint on a labeled corpus directory."""
    ck = load_checkpoint(ckpt_path)
    task = task or ck.model_cfg.task
    if task != ck.model_cfg.task:
        raise ConfigError(
            f"checkpoint was trained for {ck.model_cfg.task}, asked to evaluate {task}"
        )
    corpus = load_corpus(corpus_dir, task)
    if corpus[0][0].dim != ck.model_cfg.dim_in:
        raise ConfigError(
            f"corpus feature dim {corpus[0][0].dim} != checkpoint dim_in {ck.model_cfg.dim_in}"
        )
    T = int(ck.extra.get("T") or ck.model_cfg.t_max)
    return evaluate_corpus(
        ck.params, ck.model_cfg, corpus, task, T=T, per_video=per_video, compat=compat
    )


def export_predictions(
    ckpt_path: str | Path, corpus_dir: str | Path, out_dir: str | Path
) -> list[str]:
    """Write per-video prediction CSVs; returns the video ids written."""
    ck = load_checkpoint(ckpt_path)
    task = ck.model_cfg.task
    corpus = load_corpus(corpus_dir, task)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T = int(ck.extra.get("T") or ck.model_cfg.t_max)
    ids = []
    for seq, track in corpus:
        yhat = predict_video(ck.params, ck.model_cfg, seq, track, T)
        preds = metrics.predict_from_logits(task, yhat)
        metrics.write_predictions_csv(out / f"{seq.video_id}.pred.csv", task, preds)
        ids.append(seq.video_id)
    return ids


def sweep_mask(cfg: TrainConfig, p_values: list[float]) -> list[tuple[float, float]]:
    """Train one model per masking probability; identical seeds otherwise."""
    if not p_values:
        raise ConfigError("sweep needs at least one p value")
    rows: list[tuple[float, float]] = []
    base_dir = Path(cfg.ckpt_dir or ".")
    for p in p_values:
        sub = base_dir / f"sweep_p{p:g}"
        run_cfg = TrainConfig(
            task=cfg.task,
            batch_size=cfg.batch_size,
            T=cfg.T,
            epochs=cfg.epochs,
            eval_every=cfg.eval_every,
            seed=cfg.seed,
            grad_accum=cfg.grad_accum,
            single_thread=cfg.single_thread,
            mask=masking.MaskConfig(p=p, seed=cfg.mask.seed, replacement=cfg.mask.replacement),
            model=cfg.model,
            optim=cfg.optim,
            loss=cfg.loss,
            ccc_compat=cfg.ccc_compat,
            train_dir=cfg.train_dir,
            val_dir=cfg.val_dir,
            ckpt_dir=str(sub),
        )
        result = train(run_cfg)
        if result.best_metric is not None:
            metric = result.best_metric
        else:
            report = evaluate_corpus(
                load_checkpoint(result.last_ckpt).params,
                cfg.model,
                load_corpus(cfg.train_dir, cfg.task),
                cfg.task,
                T=cfg.T,
                compat=cfg.ccc_compat,
            )
            metric = report.primary_metric
        rows.append((p, metric))
    return rows
