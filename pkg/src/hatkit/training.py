"""Minibatch SGD over the sequence losses, with reproducible logs.

Shuffling, batching and updates all draw from one seeded generator, so a
rerun with the same seed and data produces identical checkpoints and log
rows.  Wall-clock timing is reported through the callback only and never
enters the persisted rows.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .ilm import prior_cost
from .loss import GradientSet, sequence_gradients, sgd_step
from .posterior import CTC


@dataclass(frozen=True)
class StepRow:
    step: int
    loss: float
    prior: float
    grad_norm: float


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    mean_loss: float
    prior_cost: float


@dataclass
class TrainResult:
    params: object
    step_rows: list
    epoch_rows: list

    @property
    def final_loss(self):
        return self.epoch_rows[-1].mean_loss if self.epoch_rows else math.nan


def train_model(dataset, params, kind, *, epochs, lr=0.05, clip=5.0,
                batch_size=8, seed=47, mtl_weight=0.0, on_epoch=None):
    """Run SGD in place on params; returns the mutated params plus logs.

    dataset is a sequence of objects with .features and .labels.  Zero
    epochs is a no-op (the checkpoint equals the initialization).  A
    non-finite loss or gradient aborts with the offending step attached.
    """
    dataset = list(dataset)
    if not dataset:
        raise NumericError("cannot train on an empty dataset")
    rng = np.random.Generator(np.random.PCG64(seed))
    step_rows, epoch_rows = [], []
    step = 0
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        utt_losses = []
        for lo in range(0, len(order), batch_size):
            batch = [dataset[i] for i in order[lo: lo + batch_size]]
            grads = GradientSet.zeros_like(params)
            batch_losses = []
            step += 1
            for utt in batch:
                try:
                    result, g = sequence_gradients(kind, utt.features,
                                                   utt.labels, params,
                                                   mtl_weight)
                except NumericError as exc:
                    raise NumericError(
                        f"epoch {epoch} step {step} "
                        f"utt {getattr(utt, 'utt_id', '?')}: {exc}") from exc
                grads.add(g, 1.0 / len(batch))
                batch_losses.append(result.neg_log_posterior)
            prior = math.nan if kind == CTC else prior_cost(batch, params)
            try:
                norm = sgd_step(params, grads, lr, clip)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} step {step}: {exc}") from exc
            step_rows.append(StepRow(step, float(np.mean(batch_losses)),
                                     prior, norm))
            utt_losses.extend(batch_losses)
        row = EpochRow(epoch, float(np.mean(utt_losses)),
                       math.nan if kind == CTC else prior_cost(dataset, params))
        epoch_rows.append(row)
        if on_epoch is not None:
            on_epoch(row, (time.perf_counter() - t0) * 1000.0)
    return TrainResult(params=params, step_rows=step_rows, epoch_rows=epoch_rows)


def format_step_log(rows):
    out = ["step\tloss\tprior\tgrad_norm"]
    for r in rows:
        out.append(f"{r.step}\t{r.loss:.10g}\t{r.prior:.10g}\t{r.grad_norm:.10g}")
    return "\n".join(out) + "\n"


def format_epoch_log(rows):
    out = ["epoch\tmean_loss\tprior_cost"]
    for r in rows:
        out.append(f"{r.epoch}\t{r.mean_loss:.10g}\t{r.prior_cost:.10g}")
    return "\n".join(out) + "\n"
