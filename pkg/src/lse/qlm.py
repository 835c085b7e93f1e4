"""Lexical baseline: per-entity profile language models with Jelinek-Mercer
smoothing against the corpus model, scored in log domain."""

import math
from collections import Counter

from .errors import DataError
from .retrieval import ranked_from_scores
from .text import tokenize


class EntityLanguageModel:
    """Per-entity and corpus-wide term counts plus the interpolation weight.

    A query term's smoothed probability is
    (1 - lambda_jm) * P_ml(t|x) + lambda_jm * P_ml(t|C); an entity with an
    empty profile contributes P_ml(t|x) = 0, i.e. scores as the pure corpus
    model scaled by lambda_jm.
    """

    def __init__(self, entity_counts, entity_totals, corpus_counts, corpus_total,
                 lambda_jm=0.5):
        if not 0.0 <= lambda_jm <= 1.0:
            raise DataError("lambda_jm must lie in [0, 1]")
        self.entity_counts = entity_counts
        self.entity_totals = entity_totals
        self.corpus_counts = corpus_counts
        self.corpus_total = corpus_total
        self.lambda_jm = lambda_jm

    def with_lambda(self, lambda_jm):
        """Same counts, different interpolation weight (counts are shared)."""
        return EntityLanguageModel(self.entity_counts, self.entity_totals,
                                   self.corpus_counts, self.corpus_total,
                                   lambda_jm)


def estimate(corpus, lambda_jm=0.5):
    """Aggregate maximum-likelihood counts per entity and corpus-wide."""
    if corpus.num_entities < 1:
        raise DataError("corpus has no entities")
    entity_counts = []
    entity_totals = []
    corpus_counts = Counter()
    for i in range(corpus.num_entities):
        counts = Counter()
        for doc in corpus.documents_of(i):
            counts.update(doc.tokens.tolist())
        entity_counts.append(dict(counts))
        entity_totals.append(sum(counts.values()))
        corpus_counts.update(counts)
    return EntityLanguageModel(entity_counts, entity_totals,
                               dict(corpus_counts), sum(entity_totals), lambda_jm)


def score(model, entity_index, query_token_ids):
    """Sum of log smoothed term probabilities; -inf when a term probability
    is zero (lambda_jm = 0 and the term is unseen in the profile). Terms with
    zero corpus frequency are dropped."""
    lam = model.lambda_jm
    counts = model.entity_counts[entity_index]
    total = model.entity_totals[entity_index]
    ctotal = model.corpus_total
    s = 0.0
    for t in query_token_ids:
        t = int(t)
        cc = model.corpus_counts.get(t, 0)
        if cc == 0:
            continue
        p_x = counts.get(t, 0) / total if total else 0.0
        p = (1.0 - lam) * p_x + lam * (cc / ctotal)
        s += math.log(p) if p > 0.0 else float("-inf")
    return s


def rank(model, entity_ids, query_token_ids, topic_id="q"):
    """Score every entity for the query; ties broken by ascending entity id."""
    scores = [score(model, i, query_token_ids) for i in range(len(entity_ids))]
    return ranked_from_scores(topic_id, entity_ids, scores)


SWEEP_GRID = tuple(i / 20 for i in range(21))


def sweep_lambda(corpus, topics, qrels, vocab, cutoff=100):
    """Evaluate mean NDCG at each of the 21 grid points 0.0, 0.05, ..., 1.0
    and return (best_lambda, [(lambda, mean_ndcg)]); ties prefer smaller
    lambda."""
    from .evaluation import mean_ndcg

    if not topics:
        raise DataError("no validation topics for the sweep")
    queries = {tid: vocab.encode(tokenize(q)) for tid, q in topics.items()}
    queries = {tid: ids for tid, ids in queries.items() if ids}
    if not queries:
        raise DataError("all sweep topics have empty encoded queries")
    base = estimate(corpus, 0.0)
    grid = []
    best_lambda = None
    best_score = None
    for lam in SWEEP_GRID:
        model = base.with_lambda(lam)
        runs = {tid: rank(model, corpus.entities, ids, tid)
                for tid, ids in queries.items()}
        mean, _excluded = mean_ndcg(runs, qrels, cutoff)
        if mean is None:
            raise DataError("no sweep topic has a relevant entity")
        grid.append((lam, mean))
        if best_score is None or mean > best_score:
            best_score = mean
            best_lambda = lam
    return best_lambda, grid
