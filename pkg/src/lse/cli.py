"""Command-line surface: vocabulary building, training, ranking, the
lexical baseline, evaluation, the smoothing sweep, feature fusion, the
ideal-vector analysis, and a gradient self-check."""

import csv
import datetime
import hashlib
import json
import os
import time

import click
import numpy as np

from . import __version__
from .errors import EmptyQueryError, LSEError
from .evaluation import (Qrels, TopicSet, evaluate_run, paired_t_test,
                         significance_marker)
from .ltr import (QIData, RankerConfig, build_features, cross_validated_fusion,
                  ideal_vector_report, load_graph, load_qi_attributes, GRAPH_NAMES)
from .model import (Dims, TrainConfig, batch_gradients, batch_loss, init_params,
                    load_model, save_model)
from .qlm import estimate as qlm_estimate
from .qlm import rank as qlm_rank
from .qlm import sweep_lambda
from .retrieval import rank_entities, read_run, write_run
from .sampling import InstanceBlock
from .text import Vocabulary, build_vocabulary, encode_corpus, load_raw_docs, tokenize
from .training import train, write_epoch_log


def _resolve_input(ctx, param, value):
    """Join relative inputs against LSE_DATA_DIR; missing files exit 2."""
    if value is None:
        return None
    path = value
    if not os.path.isabs(path) and not os.path.exists(path):
        root = os.environ.get("LSE_DATA_DIR")
        if root:
            candidate = os.path.join(root, path)
            if os.path.exists(candidate):
                path = candidate
    if not os.path.exists(path):
        raise click.BadParameter(f"{value}: no such file")
    return path


def _input_argument(name):
    return click.argument(name, type=click.Path(dir_okay=False), callback=_resolve_input)


def _out_option():
    return click.option("--out", "out_dir", required=True,
                        type=click.Path(file_okay=False), help="Output directory.")


def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class _Manifest:
    def __init__(self, command, out_dir, config, inputs, seed=None):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.inputs = inputs
        self.seed = seed
        self.started = datetime.datetime.now(datetime.timezone.utc).isoformat()

    def write(self):
        payload = {
            "command": self.command,
            "config": self.config,
            "inputs": {name: {"path": str(path), "sha256": _sha256_file(path)}
                       for name, path in self.inputs.items()},
            "seed": self.seed,
            "version": __version__,
            "started": self.started,
            "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        with open(os.path.join(self.out_dir, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _prepare_out(out_dir):
    os.makedirs(out_dir, exist_ok=True)


def _status(msg):
    click.echo(msg, err=True)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except LSEError as exc:
            raise click.ClickException(str(exc)) from exc


@click.group(cls=_Group)
@click.version_option(__version__, prog_name="lse")
def main():
    """Train and evaluate a latent entity-retrieval model against a lexical
    baseline, with a learning-to-rank harness on top."""


@main.command("build-vocab")
@_input_argument("corpus")
@_out_option()
@click.option("--max-size", default=Vocabulary.MAX_SIZE, show_default=True,
              help="Vocabulary cap.")
def cmd_build_vocab(corpus, out_dir, max_size):
    """Build the pruned vocabulary from a JSON-lines corpus."""
    _prepare_out(out_dir)
    manifest = _Manifest("build-vocab", out_dir, {"max_size": max_size},
                         {"corpus": corpus})
    raw = load_raw_docs(corpus)
    _status(f"building vocabulary from {len(raw)} documents")
    vocab = build_vocabulary(raw, max_size)
    vocab.save(os.path.join(out_dir, "vocab.tsv"))
    _status(f"retained {vocab.size} tokens")
    manifest.write()


def _load_train_config(config_path, overrides):
    config = TrainConfig.from_file(config_path) if config_path else TrainConfig()
    fields = {k: v for k, v in overrides.items() if v is not None}
    if fields:
        merged = config.as_dict()
        for key, value in fields.items():
            merged["lambda" if key == "weight_decay" else key] = value
        config = TrainConfig.from_mapping(merged)
    return config


@main.command("train")
@_input_argument("corpus")
@_input_argument("vocab")
@_out_option()
@click.option("--config", "config_path", default=None,
              type=click.Path(dir_okay=False), callback=_resolve_input,
              help="key = value training config file.")
@click.option("--seed", type=int, default=None, help="Root seed (overrides config).")
@click.option("--epochs", type=int, default=None)
@click.option("--e-v", "e_v", type=int, default=None)
@click.option("--e-e", "e_e", type=int, default=None)
@click.option("--n", type=int, default=None)
@click.option("--z", type=int, default=None)
@click.option("--m", type=int, default=None)
@click.option("--lambda", "weight_decay", type=float, default=None)
@click.option("--precision", type=click.Choice(["float32", "float64"]), default=None)
@click.option("--validation-topics", default=None, type=click.Path(dir_okay=False),
              callback=_resolve_input)
@click.option("--validation-qrels", default=None, type=click.Path(dir_okay=False),
              callback=_resolve_input)
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker cap (training itself is single-threaded).")
def cmd_train(corpus, vocab, out_dir, config_path, validation_topics,
              validation_qrels, threads, **overrides):
    """Train the model and write the container, epoch log and manifest."""
    config = _load_train_config(config_path, overrides)
    _prepare_out(out_dir)
    inputs = {"corpus": corpus, "vocab": vocab}
    if config_path:
        inputs["config"] = config_path
    if validation_topics:
        inputs["validation_topics"] = validation_topics
    if validation_qrels:
        inputs["validation_qrels"] = validation_qrels
    manifest = _Manifest("train", out_dir, config.as_dict(), inputs, config.seed)

    vocabulary = Vocabulary.load(vocab)
    corpus_data = encode_corpus(load_raw_docs(corpus), vocabulary)
    topics = TopicSet.load(validation_topics).topics if validation_topics else None
    qrels = Qrels.load(validation_qrels) if validation_qrels else None

    def progress(entry):
        vn = "-" if entry.validation_ndcg is None else f"{entry.validation_ndcg:.4f}"
        _status(f"epoch {entry.epoch}: loss {entry.mean_batch_loss:.6f} "
                f"validation_ndcg {vn} ({entry.wall_seconds:.1f}s)")

    result = train(corpus_data, vocabulary, config, topics, qrels, progress)
    _status(f"kept epoch {result.best_epoch}")
    save_model(os.path.join(out_dir, "model.lse"), result.params,
               vocab_sha256=vocabulary.sha256(), entity_ids=corpus_data.entities,
               config=config.as_dict())
    write_epoch_log(os.path.join(out_dir, "epochs.csv"), result.log)
    manifest.write()


def _load_model_checked(model_path, vocabulary):
    params, header = load_model(model_path)
    if header.get("vocab_sha256") and header["vocab_sha256"] != vocabulary.sha256():
        raise LSEError("vocabulary does not match the one the model was trained with")
    return params, header


def _write_skipped(out_dir, skipped):
    with open(os.path.join(out_dir, "skipped_topics.txt"), "w",
              encoding="utf-8") as fh:
        for tid in skipped:
            fh.write(f"{tid}\n")


@main.command("rank")
@_input_argument("model")
@_input_argument("vocab")
@_input_argument("topics")
@_out_option()
@click.option("--top-k", default=100, show_default=True)
@click.option("--run-tag", default="lse", show_default=True)
def cmd_rank(model, vocab, topics, out_dir, top_k, run_tag):
    """Rank all entities for every topic with the trained model."""
    _prepare_out(out_dir)
    manifest = _Manifest("rank", out_dir, {"top_k": top_k, "run_tag": run_tag},
                         {"model": model, "vocab": vocab, "topics": topics})
    vocabulary = Vocabulary.load(vocab)
    params, header = _load_model_checked(model, vocabulary)
    topic_set = TopicSet.load(topics)
    entity_ids = header["entity_ids"]
    ranked = []
    skipped = []
    for tid in sorted(topic_set.topics):
        ids = vocabulary.encode(tokenize(topic_set.topics[tid]))
        try:
            ranked.append(rank_entities(params, ids, entity_ids, tid))
        except EmptyQueryError:
            skipped.append(tid)
    write_run(os.path.join(out_dir, "run.trec"), ranked, tag=run_tag, top_k=top_k)
    _write_skipped(out_dir, skipped)
    if skipped:
        _status(f"skipped {len(skipped)} all-out-of-vocabulary topics")
    manifest.write()


@main.command("qlm")
@_input_argument("corpus")
@_input_argument("vocab")
@_input_argument("topics")
@_out_option()
@click.option("--lambda-jm", default=0.5, show_default=True,
              help="Jelinek-Mercer interpolation weight.")
@click.option("--top-k", default=100, show_default=True)
@click.option("--run-tag", default="qlm", show_default=True)
def cmd_qlm(corpus, vocab, topics, out_dir, lambda_jm, top_k, run_tag):
    """Rank all entities for every topic with the smoothed lexical model."""
    _prepare_out(out_dir)
    manifest = _Manifest("qlm", out_dir,
                         {"lambda_jm": lambda_jm, "top_k": top_k, "run_tag": run_tag},
                         {"corpus": corpus, "vocab": vocab, "topics": topics})
    vocabulary = Vocabulary.load(vocab)
    corpus_data = encode_corpus(load_raw_docs(corpus), vocabulary)
    model = qlm_estimate(corpus_data, lambda_jm)
    topic_set = TopicSet.load(topics)
    ranked = []
    skipped = []
    for tid in sorted(topic_set.topics):
        ids = vocabulary.encode(tokenize(topic_set.topics[tid]))
        if not ids:
            skipped.append(tid)
            continue
        ranked.append(qlm_rank(model, corpus_data.entities, ids, tid))
    write_run(os.path.join(out_dir, "run.trec"), ranked, tag=run_tag, top_k=top_k)
    _write_skipped(out_dir, skipped)
    manifest.write()


@main.command("eval")
@_input_argument("run")
@_input_argument("qrels")
@_out_option()
@click.option("--cutoff", default=100, show_default=True)
@click.option("--baseline-run", default=None, type=click.Path(dir_okay=False),
              callback=_resolve_input,
              help="Second run for the paired significance test.")
def cmd_eval(run, qrels, out_dir, cutoff, baseline_run):
    """Score a run against qrels; optionally test against a baseline run."""
    _prepare_out(out_dir)
    inputs = {"run": run, "qrels": qrels}
    if baseline_run:
        inputs["baseline_run"] = baseline_run
    manifest = _Manifest("eval", out_dir, {"cutoff": cutoff}, inputs)
    qrels_data = Qrels.load(qrels)
    report = evaluate_run(read_run(run), qrels_data, cutoff=cutoff)
    metrics = [f"ndcg@{cutoff}", "p@5", "p@10"]
    with open(os.path.join(out_dir, "per_topic.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic_id"] + metrics)
        for tid, row in sorted(report.per_topic.items()):
            writer.writerow([tid] + [repr(row[m]) for m in metrics])
    aggregate = {"means": report.means, "excluded_topics": report.excluded,
                 "num_topics": len(report.per_topic), "cutoff": cutoff}
    if baseline_run:
        base = evaluate_run(read_run(baseline_run), qrels_data, cutoff=cutoff)
        shared = sorted(set(report.per_topic) & set(base.per_topic))
        significance = {}
        for metric in metrics:
            try:
                t, p = paired_t_test([report.per_topic[tid][metric] for tid in shared],
                                     [base.per_topic[tid][metric] for tid in shared])
                significance[metric] = {"t": t, "p": p,
                                        "marker": significance_marker(p)}
            except LSEError as exc:
                significance[metric] = {"degenerate": str(exc)}
        aggregate["significance_vs_baseline"] = significance
    with open(os.path.join(out_dir, "aggregate.json"), "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.write()


@main.command("sweep-lambda")
@_input_argument("corpus")
@_input_argument("vocab")
@_input_argument("topics")
@_input_argument("qrels")
@_out_option()
@click.option("--cutoff", default=100, show_default=True)
def cmd_sweep_lambda(corpus, vocab, topics, qrels, out_dir, cutoff):
    """Sweep the smoothing weight over 0.0..1.0 in steps of 0.05."""
    _prepare_out(out_dir)
    manifest = _Manifest("sweep-lambda", out_dir, {"cutoff": cutoff},
                         {"corpus": corpus, "vocab": vocab, "topics": topics,
                          "qrels": qrels})
    vocabulary = Vocabulary.load(vocab)
    corpus_data = encode_corpus(load_raw_docs(corpus), vocabulary)
    topic_set = TopicSet.load(topics)
    best, grid = sweep_lambda(corpus_data, topic_set.topics, Qrels.load(qrels),
                              vocabulary, cutoff=cutoff)
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write("lambda_jm,mean_ndcg\n")
        for lam, mean in grid:
            fh.write(f"{lam!r},{mean!r}\n")
    with open(os.path.join(out_dir, "best_lambda.json"), "w", encoding="utf-8") as fh:
        json.dump({"best_lambda_jm": best}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _status(f"best lambda_jm = {best!r}")
    manifest.write()


@main.command("fuse")
@_input_argument("corpus")
@_input_argument("vocab")
@_input_argument("topics")
@_input_argument("qrels")
@_out_option()
@click.option("--model", "model_path", default=None, type=click.Path(dir_okay=False),
              callback=_resolve_input, help="Trained model container.")
@click.option("--qi-attrs", default=None, type=click.Path(dir_okay=False),
              callback=_resolve_input, help="JSON-lines entity attributes.")
@click.option("--graph", "graphs", multiple=True,
              help="NAME=PATH edge list; NAME one of " + ", ".join(GRAPH_NAMES) + ".")
@click.option("--lambda-jm", default=0.5, show_default=True)
@click.option("--folds", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--cutoff", default=100, show_default=True)
@click.option("--pair-samples", default=100000, show_default=True)
@click.option("--threads", default=1, show_default=True)
def cmd_fuse(corpus, vocab, topics, qrels, out_dir, model_path, qi_attrs, graphs,
             lambda_jm, folds, seed, cutoff, pair_samples, threads):
    """Cross-validated fusion of query-independent, lexical and latent
    features."""
    _prepare_out(out_dir)
    inputs = {"corpus": corpus, "vocab": vocab, "topics": topics, "qrels": qrels}
    if model_path:
        inputs["model"] = model_path
    if qi_attrs:
        inputs["qi_attrs"] = qi_attrs
    qi = QIData()
    if qi_attrs:
        qi.attributes = load_qi_attributes(qi_attrs)
    for graph_arg in graphs:
        if "=" not in graph_arg:
            raise click.BadParameter("--graph expects NAME=PATH")
        name, _, path = graph_arg.partition("=")
        if name not in GRAPH_NAMES:
            raise click.BadParameter(f"unknown graph name {name!r}")
        path = _resolve_input(None, None, path)
        inputs[f"graph_{name}"] = path
        qi.graphs[name] = load_graph(path)
    manifest = _Manifest("fuse", out_dir,
                         {"lambda_jm": lambda_jm, "folds": folds, "cutoff": cutoff,
                          "pair_samples": pair_samples}, inputs, seed)

    vocabulary = Vocabulary.load(vocab)
    corpus_data = encode_corpus(load_raw_docs(corpus), vocabulary)
    params = None
    if model_path:
        params, _ = _load_model_checked(model_path, vocabulary)
    qlm_model = qlm_estimate(corpus_data, lambda_jm)
    topic_set = TopicSet.load(topics)
    qrels_data = Qrels.load(qrels)
    _status(f"assembling features for {len(topic_set.topics)} topics")
    table = build_features(topic_set.topics, corpus_data, vocabulary, qlm_model,
                           params, qi)
    report = cross_validated_fusion(table, qrels_data, folds=folds, seed=seed,
                                    cutoff=cutoff,
                                    ranker_config=RankerConfig(pair_samples=pair_samples,
                                                               seed=seed),
                                    threads=threads)
    metrics = [f"ndcg@{cutoff}", "p@5", "p@10"]
    with open(os.path.join(out_dir, "fusion.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        header = ["features"]
        for metric in metrics:
            header += [metric, f"{metric}_sig"]
        writer.writerow(header)
        for row in report.rows:
            out_row = [row["features"]]
            is_full = row["features"] == "qi+qlm+lse"
            for metric in metrics:
                out_row.append(repr(row["means"][metric]))
                sig = report.significance.get(metric, {})
                out_row.append(sig.get("marker", "") if is_full else "")
            writer.writerow(out_row)
    payload = {"rows": [{"features": r["features"], "means": r["means"]}
                        for r in report.rows],
               "significance_full_vs_qi_qlm": report.significance,
               "folds": folds, "seed": seed}
    with open(os.path.join(out_dir, "fusion.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.write()


@main.command("ideal-vector")
@_input_argument("model")
@_input_argument("vocab")
@_input_argument("topics")
@_input_argument("qrels")
@_out_option()
@click.option("--cutoff", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pair-samples", default=100000, show_default=True)
@click.option("--threads", default=1, show_default=True)
def cmd_ideal_vector(model, vocab, topics, qrels, out_dir, cutoff, seed,
                     pair_samples, threads):
    """Compare per-topic ideal retrieval vectors against projected queries.

    Topics with a single relevant entity are skipped and listed as such in
    the report."""
    _prepare_out(out_dir)
    manifest = _Manifest("ideal-vector", out_dir,
                         {"cutoff": cutoff, "pair_samples": pair_samples},
                         {"model": model, "vocab": vocab, "topics": topics,
                          "qrels": qrels}, seed)
    vocabulary = Vocabulary.load(vocab)
    params, header = _load_model_checked(model, vocabulary)
    topic_set = TopicSet.load(topics)
    rows = ideal_vector_report(params, vocabulary, topic_set.topics,
                               Qrels.load(qrels), header["entity_ids"],
                               cutoff=cutoff,
                               config=RankerConfig(pair_samples=pair_samples,
                                                   seed=seed),
                               threads=threads)
    with open(os.path.join(out_dir, "ideal.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic_id", "status", "n_relevant", "ndcg_ideal",
                         "ndcg_query"])
        for row in rows:
            writer.writerow([row["topic_id"], row["status"], row["n_relevant"],
                             "" if row["ndcg_ideal"] is None else repr(row["ndcg_ideal"]),
                             "" if row["ndcg_query"] is None else repr(row["ndcg_query"])])
    scored = [row for row in rows if row["status"] == "ok"]
    skipped = [row["topic_id"] for row in rows if row["status"] != "ok"]
    aggregate = {
        "num_scored": len(scored),
        "skipped": skipped,
        "mean_ndcg_ideal": (sum(r["ndcg_ideal"] for r in scored) / len(scored)
                            if scored else None),
        "mean_ndcg_query": (sum(r["ndcg_query"] for r in scored) / len(scored)
                            if scored else None),
    }
    with open(os.path.join(out_dir, "ideal.json"), "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if skipped:
        _status(f"skipped {len(skipped)} topics (single or no relevant entity)")
    manifest.write()


@main.command("grad-check")
@click.option("--seeds", default=10, show_default=True, help="Random restarts.")
@click.option("--eps", default=1e-5, show_default=True)
@click.option("--tolerance", default=1e-4, show_default=True)
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Optional directory for a JSON report.")
def cmd_grad_check(seeds, eps, tolerance, out_dir):
    """Check analytic gradients against central finite differences on small
    random models; exits 1 when the tolerance is exceeded."""
    t0 = time.perf_counter()
    worst = 0.0
    results = []
    for seed in range(seeds):
        for weight_decay in (0.0, 0.01):
            rng = np.random.default_rng(seed)
            dims = Dims(e_v=4, e_e=3, vocab_size=6, num_entities=5)
            params = init_params(dims, rng)
            block = InstanceBlock(rng.integers(0, 6, size=(3, 2)),
                                  rng.integers(0, 5, size=3),
                                  rng.integers(0, 5, size=(3, 2)))
            grads = batch_gradients(params, block, weight_decay)
            err = _max_relative_fd_error(params, block, weight_decay, grads, eps)
            worst = max(worst, err)
            results.append({"seed": seed, "lambda": weight_decay, "max_rel_err": err})
    elapsed = time.perf_counter() - t0
    _status(f"max relative error {worst:.3e} over {seeds} seeds ({elapsed:.2f}s)")
    if out_dir:
        _prepare_out(out_dir)
        with open(os.path.join(out_dir, "grad_check.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"results": results, "max_rel_err": worst,
                       "tolerance": tolerance, "eps": eps}, fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
    if worst >= tolerance:
        raise click.ClickException(f"gradient check failed: {worst:.3e} >= {tolerance}")


def _max_relative_fd_error(params, batch, weight_decay, grads, eps):
    """Max per-coordinate relative error of analytic vs central-difference
    gradients; coordinates where both are below 1e-8 in magnitude count as
    exact."""
    from .model import PARAM_FIELDS

    worst = 0.0
    for name in PARAM_FIELDS:
        theta = getattr(params, name)
        analytic = getattr(grads, name)
        flat = theta.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = batch_loss(params, batch, weight_decay)
            flat[i] = orig - eps
            down = batch_loss(params, batch, weight_decay)
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(fd))
            if denom < 1e-8:
                continue
            worst = max(worst, abs(a - fd) / denom)
    return worst


if __name__ == "__main__":
    main()
