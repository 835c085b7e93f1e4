"""Training loop: per-epoch sampling, batched gradient steps with Adam, and
validation-based epoch selection."""

import time
from dataclasses import dataclass

import numpy as np

from .evaluation import mean_ndcg
from .model import AdamState, Dims, adam_step, batch_loss_and_gradients, init_params
from .retrieval import rank_entities
from .sampling import SamplerConfig, make_batches, sample_epoch
from .text import tokenize


@dataclass
class EpochLog:
    epoch: int
    mean_batch_loss: float
    validation_ndcg: float  # None when no validation topics are usable
    wall_seconds: float


@dataclass
class TrainResult:
    params: object
    log: list
    best_epoch: int


def _epoch_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(1, epoch)))


def train(corpus, vocab, config, validation_topics=None, validation_qrels=None,
          progress=None):
    """Run the configured number of epochs and keep the best one.

    Each epoch samples a fresh shuffled instance stream, walks it in batches
    of m, and applies one Adam step per batch. When validation topics and
    qrels are given, the epoch with the highest mean validation NDCG wins
    (ties go to the earlier epoch); otherwise the final epoch's parameters
    are returned. mean_batch_loss is the unweighted mean of per-batch
    losses.
    """
    dtype = np.float32 if config.precision == "float32" else np.float64
    dims = Dims(config.e_v, config.e_e, vocab.size, corpus.num_entities)
    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed,
                                                            spawn_key=(0,)))
    params = init_params(dims, init_rng, dtype=dtype)
    state = AdamState(params)
    sampler = SamplerConfig(n=config.n, z=config.z, m=config.m, seed=config.seed)

    val_queries = []
    if validation_topics and validation_qrels is not None:
        for tid in sorted(validation_topics):
            ids = vocab.encode(tokenize(validation_topics[tid]))
            if ids:
                val_queries.append((tid, ids))

    logs = []
    best_ndcg = None
    best_params = None
    best_epoch = None
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        block = sample_epoch(corpus, sampler, _epoch_rng(config.seed, epoch))
        losses = []
        for batch in make_batches(block, config.m):
            loss, grads = batch_loss_and_gradients(params, batch, config.weight_decay)
            adam_step(params, grads, state)
            losses.append(loss)
        mean_loss = sum(losses) / len(losses)

        vndcg = None
        if val_queries:
            runs = {tid: rank_entities(params, ids, corpus.entities, tid)
                    for tid, ids in val_queries}
            vndcg, _ = mean_ndcg(runs, validation_qrels, config.validation_cutoff)
        if vndcg is not None and (best_ndcg is None or vndcg > best_ndcg):
            best_ndcg = vndcg
            best_params = params.copy()
            best_epoch = epoch

        entry = EpochLog(epoch, mean_loss, vndcg, time.perf_counter() - t0)
        logs.append(entry)
        if progress is not None:
            progress(entry)

    if best_params is None:
        best_params = params
        best_epoch = config.epochs
    return TrainResult(best_params, logs, best_epoch)


def write_epoch_log(path, logs):
    """CSV with columns epoch, mean_batch_loss, validation_ndcg, wall_seconds."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,mean_batch_loss,validation_ndcg,wall_seconds\n")
        for entry in logs:
            vn = "" if entry.validation_ndcg is None else repr(entry.validation_ndcg)
            fh.write(f"{entry.epoch},{entry.mean_batch_loss!r},{vn},"
                     f"{entry.wall_seconds!r}\n")
