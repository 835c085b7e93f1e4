"""Per-epoch training instances: n-grams with a positive entity and z
uniformly sampled negatives, under a stratified per-entity budget."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    n: int
    z: int
    m: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.z < 1 or self.m < 1:
            raise DataError("n, z and m must all be at least 1")


@dataclass(frozen=True)
class TrainingInstance:
    ngram: tuple
    positive_entity: int
    negatives: tuple


class InstanceBlock(Sequence):
    """Columnar storage for a stream of training instances.

    Behaves as a sequence of TrainingInstance while holding the data as three
    arrays: ngrams (N, n), positives (N,), negatives (N, z).
    """

    def __init__(self, ngrams, positives, negatives, skipped_entities=()):
        self.ngrams = np.asarray(ngrams, dtype=np.int32)
        self.positives = np.asarray(positives, dtype=np.int32)
        self.negatives = np.asarray(negatives, dtype=np.int32)
        self.skipped_entities = tuple(skipped_entities)
        if not (len(self.ngrams) == len(self.positives) == len(self.negatives)):
            raise DataError("instance block arrays disagree in length")

    def __len__(self):
        return len(self.positives)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return InstanceBlock(self.ngrams[i], self.positives[i], self.negatives[i])
        return TrainingInstance(tuple(int(t) for t in self.ngrams[i]),
                                int(self.positives[i]),
                                tuple(int(e) for e in self.negatives[i]))

    def arrays(self):
        return self.ngrams, self.positives, self.negatives

    @classmethod
    def from_instances(cls, instances):
        return cls(np.array([inst.ngram for inst in instances], dtype=np.int32),
                   np.array([inst.positive_entity for inst in instances], dtype=np.int32),
                   np.array([inst.negatives for inst in instances], dtype=np.int32))


def ngrams_per_entity_per_epoch(corpus, n):
    """Per-entity sample budget: ceil of (total eligible n-gram positions) / |X|."""
    if n < 1:
        raise DataError("window size must be at least 1")
    total = sum(max(len(d.tokens) - n + 1, 0) for d in corpus.documents)
    return -(-total // corpus.num_entities)


def sample_epoch(corpus, config, rng):
    """Draw one epoch of training instances.

    Every entity with at least one eligible n-gram position contributes
    exactly B instances (B = the per-entity budget), positions drawn
    uniformly over its (document, start) pairs with replacement. Each
    instance gets z negatives drawn uniformly with replacement from all
    entities; negatives are not filtered against the positive. The instance
    stream is shuffled before return.

    The generator is consumed in a committed order so equal seeds give
    byte-identical epochs: per-entity position draws in ascending entity
    index, then the negatives matrix, then the shuffle permutation.
    """
    n, z = config.n, config.z
    budget = ngrams_per_entity_per_epoch(corpus, n)
    if budget == 0:
        raise DataError("window larger than all documents")

    lengths = np.array([len(d.tokens) for d in corpus.documents], dtype=np.int64)
    offsets = np.zeros(len(lengths), dtype=np.int64)
    np.cumsum(lengths[:-1], out=offsets[1:])
    tokens_flat = (np.concatenate([d.tokens for d in corpus.documents])
                   if len(corpus.documents) else np.empty(0, dtype=np.int32))
    eligible = np.maximum(lengths - n + 1, 0)

    entity_codes = []
    for i in range(corpus.num_entities):
        parts = [offsets[j] + np.arange(eligible[j], dtype=np.int64)
                 for j in corpus.association[i] if eligible[j] > 0]
        entity_codes.append(np.concatenate(parts) if parts
                            else np.empty(0, dtype=np.int64))

    starts_parts = []
    pos_parts = []
    skipped = []
    for i in range(corpus.num_entities):
        codes = entity_codes[i]
        if len(codes) == 0:
            skipped.append(i)
            continue
        picks = rng.integers(0, len(codes), size=budget)
        starts_parts.append(codes[picks])
        pos_parts.append(np.full(budget, i, dtype=np.int32))
    if skipped:
        log.warning("%d of %d entities have no eligible n-gram positions",
                    len(skipped), corpus.num_entities)

    starts = np.concatenate(starts_parts)
    positives = np.concatenate(pos_parts)
    count = len(starts)
    negatives = rng.integers(0, corpus.num_entities, size=(count, z)).astype(np.int32)
    perm = rng.permutation(count)

    starts = starts[perm]
    ngrams = tokens_flat[starts[:, None] + np.arange(n)]
    return InstanceBlock(ngrams, positives[perm], negatives[perm], skipped)


def make_batches(instances, m):
    """Chunk an instance stream into consecutive batches of m; the final
    partial batch is kept."""
    if len(instances) == 0:
        raise DataError("cannot batch an empty instance stream")
    if m < 1:
        raise DataError("batch size must be at least 1")
    return [instances[i:i + m] for i in range(0, len(instances), m)]
