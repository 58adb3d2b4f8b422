"""Training, evaluation and benchmarking loops shared by the CLI commands."""

from __future__ import annotations

import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import checkpoint_save
from .config import EvalConfig, TrainConfig
from .data import ImagePair, sample_patches, stack, write_png
from .errors import DDetError
from .metrics import CSV_HEADER, EvalRecord, psnr, ssim
from .model import ModelConfig, ModelParams, ddet_forward, init_params, param_count
from .ops import l1_loss
from .optim import AdamState, adam_step
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

LOG_HEADER = "step,loss,batch_psnr_db,eval_psnr_db"


class NonFiniteLossError(DDetError):
    pass


@dataclass
class TrainResult:
    params: ModelParams
    state: Optional[AdamState]
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"] if self.history else math.nan


def _fmt(v) -> str:
    if v is None:
        return ""
    if v == math.inf:
        return "identical"
    return f"{v:.9g}"


def batch_psnr(pred: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((np.clip(pred, 0, 1).astype(np.float64) - target) ** 2))
    return math.inf if mse == 0 else 10 * math.log10(1 / mse)


def train(model_cfg: ModelConfig, pairs: Sequence[ImagePair], train_cfg: TrainConfig,
          out_dir=None, eval_pairs: Sequence[ImagePair] = (), eval_cfg: EvalConfig = EvalConfig(),
          params: Optional[ModelParams] = None, fixed_batch: bool = False,
          stop_psnr: Optional[float] = None, tag: str = "") -> TrainResult:
    """L1 / Adam loop.

    Each step draws ``train_cfg.batch`` aligned patches with a seed derived
    from ``(train_cfg.seed, step)``; with ``fixed_batch`` every step uses all
    of ``pairs`` as given.  With ``out_dir`` a CSV log and checkpoints are
    written as training goes.  ``stop_psnr`` ends training early once the
    batch PSNR (RGB, after clipping) reaches it.
    """
    params = params if params is not None else init_params(model_cfg, train_cfg.seed)
    state: Optional[AdamState] = None
    result = TrainResult(params, state)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / f"{tag}train_log.csv", "w")
        log_file.write(LOG_HEADER + "\n")

    def save(step: int):
        if out_dir is None:
            return
        path = out_dir / "checkpoints" / f"{tag}step_{step:06d}.ddet"
        checkpoint_save(params, state, path)
        result.checkpoints.append(path)

    fixed = stack(pairs) if fixed_batch else None
    try:
        if train_cfg.steps == 0:
            save(0)
        for step in range(1, train_cfg.steps + 1):
            if fixed is not None:
                x, y = fixed
            else:
                x, y = stack(sample_patches(pairs, train_cfg.patch, train_cfg.batch,
                                            seed=[train_cfg.seed, step]))
            params.zero_grad()
            out = ddet_forward(Tensor(x), params, model_cfg)
            loss = l1_loss(out, y)
            lval = loss.item()
            if not math.isfinite(lval):
                raise NonFiniteLossError(
                    f"non-finite loss at step {step}; last good checkpoint: "
                    f"{result.checkpoints[-1] if result.checkpoints else 'none'}")
            loss.backward()
            state = adam_step(params, state=state, lr=train_cfg.lr_at(step),
                              beta1=train_cfg.adam_beta1, beta2=train_cfg.adam_beta2)
            result.state = state
            row = {"step": step, "loss": lval, "batch_psnr": batch_psnr(out.data, y), "eval_psnr": None}
            if eval_pairs and train_cfg.eval_every and step % train_cfg.eval_every == 0:
                recs = evaluate(params, model_cfg, eval_pairs, eval_cfg)
                row["eval_psnr"] = mean_psnr(recs)
            result.history.append(row)
            if log_file:
                log_file.write(f"{step},{_fmt(lval)},{_fmt(row['batch_psnr'])},{_fmt(row['eval_psnr'])}\n")
                log_file.flush()
            if train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
                save(step)
            if stop_psnr is not None and row["batch_psnr"] >= stop_psnr:
                log.info("batch PSNR %.2f dB >= %.2f dB at step %d; stopping", row["batch_psnr"], stop_psnr, step)
                break
        last = result.history[-1]["step"] if result.history else 0
        if out_dir is not None and (not result.checkpoints or not str(result.checkpoints[-1]).endswith(f"{last:06d}.ddet")):
            save(last)
    finally:
        if log_file:
            log_file.close()
    return result


def forward_image(params, model_cfg: Optional[ModelConfig], lr: np.ndarray) -> np.ndarray:
    if model_cfg is None:
        return lr
    with no_grad():
        return ddet_forward(Tensor(lr), params, model_cfg).data


def evaluate(params, model_cfg: Optional[ModelConfig], pairs: Sequence[ImagePair],
             eval_cfg: EvalConfig = EvalConfig(), dump_dir=None) -> list[EvalRecord]:
    """Per-image PSNR/SSIM; ``model_cfg=None`` scores the input itself."""
    records = []
    for pair in pairs:
        t0 = time.perf_counter()
        out = forward_image(params, model_cfg, pair.lr)
        dt = time.perf_counter() - t0
        out = np.clip(out, 0.0, 1.0)
        records.append(EvalRecord(
            pair.scene_id,
            psnr(out, pair.hr, mode=eval_cfg.mode, border=eval_cfg.shave),
            ssim(out, pair.hr, mode=eval_cfg.mode, border=eval_cfg.shave),
            dt,
        ))
        if dump_dir is not None:
            write_png(out, Path(dump_dir) / f"{pair.scene_id}.png")
    return records


def mean_psnr(records: Sequence[EvalRecord]) -> float:
    return float(np.mean([r.psnr_db for r in records]))


def write_eval_csv(records: Sequence[EvalRecord], path) -> None:
    lines = [CSV_HEADER] + [r.csv_row() for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class BenchRow:
    name: str
    seconds_per_frame: float
    elements: int
    bytes_fp32: int
    timings: list

    @property
    def megabytes(self) -> float:
        return self.bytes_fp32 / 1e6


def bench_model(name: str, model_cfg: ModelConfig, size: int, repeats: int = 10,
                warmup: int = 3, seed: int = 0) -> BenchRow:
    params = init_params(model_cfg, seed)
    x = np.random.default_rng(seed).uniform(0, 1, size=(1, model_cfg.input_channels, size, size)).astype(np.float32)
    for _ in range(warmup):
        forward_image(params, model_cfg, x)
    timings = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward_image(params, model_cfg, x)
        timings.append(time.perf_counter() - t0)
    pc = param_count(params)
    return BenchRow(name, statistics.median(timings), pc["elements"], pc["bytes_fp32"], timings)
