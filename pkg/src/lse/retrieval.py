"""Cosine retrieval over entity representations, document-vector
aggregation, and the TREC run file format."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptyQueryError
from .model import project


@dataclass
class RankedList:
    """Entities ordered by descending score; ties by ascending entity id."""

    topic_id: str
    entries: list  # (entity_id, score) pairs


def cosine(a, b):
    """a.b / (|a||b|); 0.0 when either norm is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("vector length mismatch")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def ranked_from_scores(topic_id, entity_ids, scores):
    """Sort (entity, score) pairs: descending score, ascending id on ties."""
    order = sorted(range(len(entity_ids)),
                   key=lambda i: (-scores[i], entity_ids[i]))
    return RankedList(topic_id, [(entity_ids[i], float(scores[i])) for i in order])


def cosine_scores(matrix, vec):
    """Cosine of vec against every row of matrix; zero-norm rows score 0."""
    vec = np.asarray(vec, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    vnorm = np.linalg.norm(vec)
    denom = norms * vnorm
    raw = matrix @ vec
    out = np.zeros(len(matrix), dtype=np.float64)
    np.divide(raw, denom, out=out, where=denom > 0)
    return out


def rank_by_vector(matrix, vec, entity_ids, topic_id):
    """Rank all entities by cosine similarity of their rows to vec."""
    return ranked_from_scores(topic_id, entity_ids, cosine_scores(matrix, vec))


def rank_entities(params, query_token_ids, entity_ids, topic_id="q"):
    """Project the query and rank every entity by cosine similarity.

    Raises EmptyQueryError (carrying the topic id) when no tokens remain.
    """
    if len(query_token_ids) == 0:
        raise EmptyQueryError(topic_id)
    f = project(params, query_token_ids)
    return rank_by_vector(params.W_e, f, entity_ids, topic_id)


def aggregate_entity_vectors(corpus, doc_vectors):
    """Sum each entity's document vectors (unit weights).

    doc_vectors maps doc_id -> vector; a missing or length-mismatched vector
    is an error naming the document.
    """
    dim = None
    vectors = {}
    for doc in corpus.documents:
        if doc.doc_id not in doc_vectors:
            raise DataError(f"missing vector for document {doc.doc_id!r}")
        v = np.asarray(doc_vectors[doc.doc_id], dtype=np.float64)
        if dim is None:
            dim = v.shape[0]
        elif v.shape[0] != dim:
            raise DataError(f"vector for document {doc.doc_id!r} has wrong length")
        vectors[doc.doc_id] = v
    out = np.zeros((corpus.num_entities, dim), dtype=np.float64)
    for i in range(corpus.num_entities):
        for j in corpus.association[i]:
            out[i] += vectors[corpus.documents[j].doc_id]
    return out


def write_run(path, ranked_lists, tag="lse", top_k=100):
    """Write rankings in TREC run format, truncated to top_k per topic."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for ranked in ranked_lists:
            for rank, (eid, score) in enumerate(ranked.entries[:top_k], start=1):
                fh.write(f"{ranked.topic_id} Q0 {eid} {rank} {score!r} {tag}\n")


def read_run(path):
    """Parse a TREC run file into {topic_id: RankedList}, order preserved."""
    runs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6 or parts[1] != "Q0":
                raise DataError(f"{path}:{lineno + 1}: malformed run line")
            topic_id, _, eid, rank, score, _tag = parts
            try:
                int(rank)
                score = float(score)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno + 1}: bad rank or score") from exc
            runs.setdefault(topic_id, RankedList(topic_id, [])).entries.append((eid, score))
    return runs
