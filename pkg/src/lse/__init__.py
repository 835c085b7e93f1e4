"""Latent semantic entity retrieval toolkit.

Learns a joint word/entity vector space from entity-associated documents
with noise-contrastive estimation, retrieves entities by cosine similarity
of projected queries, and ships a smoothed lexical baseline plus an
evaluation and learning-to-rank harness around both.
"""

__version__ = "0.1.0"

from . import errors, evaluation, ltr, model, qlm, retrieval, sampling, text, training
from .errors import DataError, DegenerateStatisticError, EmptyQueryError, LSEError
from .evaluation import (Qrels, TopicSet, correlations, evaluate_run,
                         idf_match_analysis, mean_ndcg, ndcg, paired_t_test,
                         permutation_test_correlation, precision_at_k,
                         significance_marker)
from .ltr import (QIData, RankerConfig, build_features, cross_validated_fusion,
                  ideal_vector, ideal_vector_report, pagerank, train_ranksvm)
from .model import (Dims, ModelParams, TrainConfig, batch_gradients, batch_loss,
                    init_params, instance_log_prob, load_model, project,
                    save_model, similarity_prob)
from .qlm import EntityLanguageModel, estimate, sweep_lambda
from .retrieval import (RankedList, aggregate_entity_vectors, cosine,
                        rank_entities, read_run, write_run)
from .sampling import (InstanceBlock, SamplerConfig, TrainingInstance,
                       make_batches, ngrams_per_entity_per_epoch, sample_epoch)
from .text import (Corpus, Document, Vocabulary, build_vocabulary, encode_corpus,
                   extract_topic_query, tokenize, topics_from_categories)
from .training import TrainResult, train, write_epoch_log

__all__ = [
    "__version__",
    "errors", "evaluation", "ltr", "model", "qlm", "retrieval", "sampling",
    "text", "training",
    "DataError", "DegenerateStatisticError", "EmptyQueryError", "LSEError",
    "Qrels", "TopicSet", "correlations", "evaluate_run", "idf_match_analysis",
    "mean_ndcg", "ndcg", "paired_t_test", "permutation_test_correlation",
    "precision_at_k", "significance_marker",
    "QIData", "RankerConfig", "build_features", "cross_validated_fusion",
    "ideal_vector", "ideal_vector_report", "pagerank", "train_ranksvm",
    "Dims", "ModelParams", "TrainConfig", "batch_gradients", "batch_loss",
    "init_params", "instance_log_prob", "load_model", "project", "save_model",
    "similarity_prob",
    "EntityLanguageModel", "estimate", "sweep_lambda",
    "RankedList", "aggregate_entity_vectors", "cosine", "rank_entities",
    "read_run", "write_run",
    "InstanceBlock", "SamplerConfig", "TrainingInstance", "make_batches",
    "ngrams_per_entity_per_epoch", "sample_epoch",
    "Corpus", "Document", "Vocabulary", "build_vocabulary", "encode_corpus",
    "extract_topic_query", "tokenize", "topics_from_categories",
    "TrainResult", "train", "write_epoch_log",
]
