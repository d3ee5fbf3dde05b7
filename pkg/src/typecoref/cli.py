"""Command-line experiment surface.

One executable with subcommands for corpus conversion, training, resolution,
scoring, type prediction, and the experiment grid.  Every training run writes
a JSON manifest holding everything needed to reproduce the checkpoint
byte-for-byte; ``--from-manifest`` replays one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .corpus import (
    Document,
    MentionSpan,
    attach_sidecar,
    docs_from_json,
    docs_to_json,
    emit_conll,
    genre_of,
    map_document_types,
    parse_conll,
    propagate_cluster_types,
    write_type_sidecar,
)
from .metrics import (
    ScoredDocument,
    bootstrap_significance,
    document_avg_f1,
    score_by_group,
    score_documents,
)
from .model import VARIANTS, resolve, response_document, train
from .neural import Config, Parameters
from .schemes import SCHEME_NAMES
from .store import build_synth_store, open_store, synth_embeddings
from .synthetic import synthetic_corpus
from .typepred import (
    TypePredTrainConfig,
    crossval_predict,
    evaluate_typepred,
    pooled_vectors,
    write_marked_requests,
)

WORKERS_ENV = "TYPECOREF_WORKERS"


class CliError(Exception):
    """User-facing failure; rendered as ``error: <message>`` with exit code 2."""


# ---------------------------------------------------------------------------
# Shared loading helpers
# ---------------------------------------------------------------------------


def read_corpus(path: str) -> list[Document]:
    if not os.path.exists(path):
        raise CliError(f"corpus file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        return docs_from_json(text)
    return parse_conll(text)


def write_corpus(docs: list[Document], path: str) -> None:
    payload = docs_to_json(docs) if path.endswith(".json") else emit_conll(docs)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)


def load_corpus(path: str, sidecar: str | None, scheme: str,
                map_common: bool, propagate: bool) -> tuple[list[Document], str]:
    """Corpus plus the scheme its types end up in after the transforms."""
    docs = read_corpus(path)
    if sidecar:
        with open(sidecar, encoding="utf-8") as fh:
            docs = attach_sidecar(docs, fh, scheme)
    if propagate:
        docs = [propagate_cluster_types(d) for d in docs]
    if map_common:
        docs = [map_document_types(d, scheme) for d in docs]
        scheme = "common"
    return docs, scheme


def parse_config_file(path: str) -> dict:
    """Flat ``key = value`` settings (ints, floats, bools, comma lists)."""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = _parse_config_value(key, value.strip("[]"))
    return out


def _parse_config_value(key: str, value: str):
    if key == "fc_sizes":
        return tuple(int(v) for v in value.replace(",", " ").split())
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    for caster in (int, float):
        try:
            return caster(value)
        except ValueError:
            continue
    return value


def build_config(args) -> Config:
    settings = parse_config_file(args.config) if getattr(args, "config", None) else {}
    for field_name in ("seed", "epochs", "learning_rate"):
        value = getattr(args, field_name, None)
        if value is not None:
            settings[field_name] = value
    if getattr(args, "drop_singletons", False):
        settings["keep_singletons"] = False
    try:
        return Config(**settings)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad configuration: {exc}") from None


def open_embeddings(args, docs: list[Document]):
    if getattr(args, "synth_dim", None):
        return {d.doc_id: synth_embeddings(d, args.synth_dim, args.synth_seed) for d in docs}
    if not getattr(args, "embeddings", None):
        raise CliError("provide --embeddings STORE or --synth-dim N")
    if not os.path.exists(args.embeddings):
        raise CliError(f"embedding store not found: {args.embeddings}")
    return open_store(args.embeddings)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_convert(args) -> int:
    docs, _ = load_corpus(args.input, args.sidecar, args.scheme,
                          args.map_common, args.propagate_types)
    write_corpus(docs, args.output)
    if args.types_out:
        with open(args.types_out, "w", encoding="utf-8") as fh:
            write_type_sidecar(docs, fh)
    print(f"wrote {len(docs)} document(s) to {args.output}")
    return 0


def train_manifest(args, config: Config) -> dict:
    return {
        "variant": args.variant,
        "scheme": args.scheme,
        "map_common": args.map_common,
        "propagate_types": args.propagate_types,
        "config": {**asdict(config), "fc_sizes": list(config.fc_sizes)},
        "seed": config.seed,
        "corpus": os.path.abspath(args.corpus),
        "sidecar": os.path.abspath(args.sidecar) if args.sidecar else None,
        "embedding_store": os.path.abspath(args.embeddings) if args.embeddings else None,
        "synth_dim": args.synth_dim,
        "synth_seed": args.synth_seed,
        "checkpoint": os.path.abspath(args.out),
    }


def cmd_train(args) -> int:
    if args.from_manifest:
        with open(args.from_manifest, encoding="utf-8") as fh:
            manifest = json.load(fh)
        config_map = dict(manifest["config"])
        config_map["fc_sizes"] = tuple(config_map["fc_sizes"])
        config = Config(**config_map)
        args.variant = manifest["variant"]
        args.scheme = manifest["scheme"]
        args.map_common = manifest["map_common"]
        args.propagate_types = manifest["propagate_types"]
        args.corpus = manifest["corpus"]
        args.sidecar = manifest["sidecar"]
        args.embeddings = manifest["embedding_store"]
        args.synth_dim = manifest["synth_dim"]
        args.synth_seed = manifest["synth_seed"]
        args.out = args.out or manifest["checkpoint"]
    else:
        config = build_config(args)
        if not args.corpus:
            raise CliError("provide --corpus FILE (or --from-manifest)")
    if not args.out:
        raise CliError("provide --out CHECKPOINT")
    docs, scheme = load_corpus(args.corpus, args.sidecar, args.scheme,
                               args.map_common, args.propagate_types)
    embeddings = open_embeddings(args, docs)
    result = train(docs, embeddings, args.variant, config, scheme)
    result.params.save(args.out)
    manifest = train_manifest(args, config)
    manifest["scheme_after_transforms"] = scheme
    manifest["final_epoch_loss"] = result.epoch_losses[-1] if result.epoch_losses else None
    _write_json(args.out + ".manifest.json", manifest)
    print(f"checkpoint {args.out} (final epoch loss "
          f"{manifest['final_epoch_loss']:.4f}; manifest {args.out}.manifest.json)")
    return 0


def cmd_resolve(args) -> int:
    docs, scheme = load_corpus(args.corpus, args.sidecar, args.scheme,
                               args.map_common, args.propagate_types)
    params = Parameters.load(args.checkpoint)
    config = build_config(args)
    embeddings = open_embeddings(args, docs)
    responses = []
    for doc in docs:
        clusters = resolve(doc, embeddings, params, args.variant, config, scheme)
        responses.append(response_document(doc, clusters))
    write_corpus(responses, args.out)
    print(f"resolved {len(responses)} document(s) to {args.out}")
    return 0


def _scored_items(key_docs: list[Document], response_docs: list[Document]) -> list[ScoredDocument]:
    responses = {doc.doc_id: doc for doc in response_docs}
    missing = [doc.doc_id for doc in key_docs if doc.doc_id not in responses]
    if missing:
        raise CliError(f"response is missing document(s): {missing}")
    items = []
    for key_doc in key_docs:
        response_doc = responses[key_doc.doc_id]
        key_clusters = [
            {key_doc.mentions[i].position() for i in members}
            for members in key_doc.clusters.values()
        ]
        response_clusters = [
            {response_doc.mentions[i].position() for i in members}
            for members in response_doc.clusters.values()
        ]
        types = {m.position(): m.entity_type for m in key_doc.mentions}
        items.append(ScoredDocument(key_doc.doc_id, key_clusters, response_clusters, types))
    return items


def cmd_score(args) -> int:
    key_docs, _ = load_corpus(args.key, args.sidecar, args.scheme,
                              args.map_common, args.propagate_types)
    response_docs = read_corpus(args.response)
    if not args.keep_singletons:
        key_docs = [_drop_singletons(d) for d in key_docs]
        response_docs = [_drop_singletons(d) for d in response_docs]
    items = _scored_items(key_docs, response_docs)
    report = score_documents(items)
    if args.by_genre:
        report.by_genre = score_by_group(items, genre_of)
    print(report.format_table("response"))
    if args.json:
        _write_json(args.json, report.to_dict())
    return 0


def _drop_singletons(doc: Document) -> Document:
    clusters = {cid: members for cid, members in doc.clusters.items() if len(members) > 1}
    return Document(doc.doc_id, doc.sentences, list(doc.mentions), clusters)


def cmd_predict_types(args) -> int:
    docs, scheme = load_corpus(args.corpus, args.sidecar, args.scheme,
                               args.map_common, args.propagate_types)
    if args.write_requests:
        with open(args.write_requests, "w", encoding="utf-8") as fh:
            n = write_marked_requests(docs, fh)
        print(f"wrote {n} marked-sequence request(s) to {args.write_requests}")
        return 0
    if not args.vectors:
        raise CliError("provide --vectors STORE (or --write-requests FILE)")
    from .typepred import marked_requests

    with open_store(args.vectors) as store:
        keys = [key for key, _ in marked_requests(docs)]
        pooled = pooled_vectors(store, keys)
    config = TypePredTrainConfig(seed=args.seed or 0)
    result = crossval_predict(docs, pooled, scheme, k=args.k, config=config)
    with open(args.out, "w", encoding="utf-8") as fh:
        result.write_sidecar(fh)
    labels = {key: p.label for key, p in result.predictions.items()}
    report = evaluate_typepred(docs, labels, scheme)
    print(report.format_table())
    if args.report:
        _write_json(args.report, report.to_dict())
    print(f"wrote {len(result.records)} prediction(s) to {args.out}")
    return 0


# -- grid -------------------------------------------------------------------


def _grid_task(task):
    """Train one (variant, seed/fold) cell and score its evaluation split."""
    (variant, run_seed, train_docs, eval_docs, embeddings, config_map, scheme) = task
    config = Config(**{**config_map, "seed": run_seed})
    result = train(train_docs, embeddings, variant, config, scheme)
    items = []
    for doc in eval_docs:
        clusters = resolve(doc, embeddings, result.params, variant, config, scheme)
        types = {m.position(): m.entity_type for m in doc.mentions}
        key_clusters = [
            {doc.mentions[i].position() for i in members} for members in doc.clusters.values()
        ]
        response_clusters = [{doc.mentions[i].position() for i in c} for c in clusters]
        items.append(ScoredDocument(doc.doc_id, key_clusters, response_clusters, types))
    return variant, run_seed, items


def _run_tasks(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_grid_task(task) for task in tasks]
    import multiprocessing as mp

    with mp.get_context("fork").Pool(min(workers, len(tasks))) as pool:
        return pool.map(_grid_task, tasks)


def cmd_grid(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise CliError(f"unknown variant(s) {unknown}; choose from {list(VARIANTS)}")
    if bool(args.seeds) == bool(args.folds):
        raise CliError("choose exactly one of --seeds or --folds")
    docs, scheme = load_corpus(args.corpus, args.sidecar, args.scheme,
                               args.map_common, args.propagate_types)
    if args.type_source == "predicted":
        if not args.predicted_sidecar:
            raise CliError("--type-source predicted requires --predicted-sidecar FILE")
        if not os.path.exists(args.predicted_sidecar):
            raise CliError(f"predicted sidecar not found: {args.predicted_sidecar}")
        bare = [
            Document(d.doc_id, d.sentences,
                     [MentionSpan(m.sentence_index, m.start, m.end) for m in d.mentions],
                     d.clusters)
            for d in docs
        ]
        with open(args.predicted_sidecar, encoding="utf-8") as fh:
            docs = attach_sidecar(bare, fh, scheme)

    config = build_config(args)
    config_map = {**asdict(config), "fc_sizes": config.fc_sizes}

    eval_docs: list[Document] = []
    if args.seeds and not args.eval:
        raise CliError("seed mode needs --eval CORPUS (held-out documents)")
    if args.eval:
        eval_docs, _ = load_corpus(args.eval, args.sidecar, args.scheme,
                                   args.map_common, args.propagate_types)
        clash = {d.doc_id for d in docs} & {d.doc_id for d in eval_docs}
        if clash:
            raise CliError(f"evaluation corpus reuses training document ids: {sorted(clash)[:5]}")

    source = open_embeddings(args, docs + eval_docs)
    if isinstance(source, dict):
        embeddings = source
    else:
        # store readers hold a file descriptor; materialize so forked grid
        # workers share plain arrays instead
        with source:
            embeddings = {d.doc_id: source.fetch(d.doc_id) for d in docs + eval_docs}

    tasks = []
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
        for variant in variants:
            for seed in seeds:
                tasks.append((variant, seed, docs, eval_docs, embeddings, config_map, scheme))
    else:
        k = int(args.folds)
        if k < 2 or k > len(docs):
            raise CliError(f"cannot run {k} folds over {len(docs)} documents")
        fold_of = {doc.doc_id: i % k for i, doc in enumerate(sorted(docs, key=lambda d: d.doc_id))}
        for variant in variants:
            for fold in range(k):
                fold_train = [d for d in docs if fold_of[d.doc_id] != fold]
                fold_eval = [d for d in docs if fold_of[d.doc_id] == fold]
                tasks.append((variant, fold, fold_train, fold_eval, embeddings, config_map, scheme))

    workers = int(os.environ.get(WORKERS_ENV, "1"))
    outcomes = _run_tasks(tasks, workers)

    per_variant_items: dict[str, dict[int, list[ScoredDocument]]] = {}
    for variant, run_seed, items in outcomes:
        per_variant_items.setdefault(variant, {})[run_seed] = items

    rows = []
    per_doc_scores: dict[str, dict[str, float]] = {}
    for variant in variants:
        runs = per_variant_items[variant]
        if args.seeds:
            reports = [score_documents(items) for items in runs.values()]
            row = {
                "variant": variant,
                "runs": len(reports),
                "b_cubed": float(np.mean([r.b_cubed.f1 for r in reports])),
                "muc": float(np.mean([r.muc.f1 for r in reports])),
                "ceaf_e": float(np.mean([r.ceaf_e.f1 for r in reports])),
                "avg_f1": float(np.mean([r.avg_f1 for r in reports])),
                "impure_clusters": float(np.mean([r.impure_cluster_count for r in reports])),
            }
        else:
            all_items = [item for items in runs.values() for item in items]
            report = score_documents(all_items)
            row = {
                "variant": variant,
                "runs": len(runs),
                "b_cubed": report.b_cubed.f1,
                "muc": report.muc.f1,
                "ceaf_e": report.ceaf_e.f1,
                "avg_f1": report.avg_f1,
                "impure_clusters": report.impure_cluster_count,
            }
        doc_scores: dict[str, list[float]] = {}
        for items in runs.values():
            for item in items:
                doc_scores.setdefault(item.doc_id, []).append(document_avg_f1(item))
        per_doc_scores[variant] = {d: float(np.mean(v)) for d, v in doc_scores.items()}
        rows.append(row)

    reference = variants[0]
    for row in rows:
        variant = row["variant"]
        if variant == reference:
            row["p_vs_" + reference] = None
            continue
        shared = sorted(set(per_doc_scores[variant]) & set(per_doc_scores[reference]))
        row["p_vs_" + reference] = bootstrap_significance(
            [per_doc_scores[variant][d] for d in shared],
            [per_doc_scores[reference][d] for d in shared],
            resamples=args.resamples,
            seed=config.seed,
        )

    header = (f"{'variant':<12} {'B3':>6} {'MUC':>6} {'CEAFE':>6} {'Avg F1':>7} "
              f"{'#IC':>6} {'p':>8}")
    print(header)
    for row in rows:
        p = row["p_vs_" + reference]
        p_text = "-" if p is None else f"{p:.4f}"
        print(f"{row['variant']:<12} {100 * row['b_cubed']:>6.2f} {100 * row['muc']:>6.2f} "
              f"{100 * row['ceaf_e']:>6.2f} {100 * row['avg_f1']:>7.2f} "
              f"{row['impure_clusters']:>6.1f} {p_text:>8}")
    if args.json:
        _write_json(args.json, {"reference": reference, "rows": rows})
    return 0


def cmd_synth_corpus(args) -> int:
    docs = synthetic_corpus(args.docs, args.seed, args.prefix)
    write_corpus(docs, args.out)
    if args.types_out:
        with open(args.types_out, "w", encoding="utf-8") as fh:
            write_type_sidecar(docs, fh)
    print(f"wrote {len(docs)} synthetic document(s) to {args.out}")
    return 0


def cmd_synth_store(args) -> int:
    docs = read_corpus(args.corpus)
    n = build_synth_store(args.out, docs, args.dim, args.seed)
    print(f"wrote {n} embedding record(s) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------


def _add_corpus_options(parser, required: bool = True) -> None:
    parser.add_argument("--corpus", required=required, help="corpus file (.conll or .json)")
    parser.add_argument("--sidecar", help="JSON-lines entity-type sidecar to attach")
    parser.add_argument("--scheme", default="common", choices=SCHEME_NAMES,
                        help="type scheme of the corpus annotations")
    parser.add_argument("--map-common", action="store_true",
                        help="map types onto the common scheme")
    parser.add_argument("--propagate-types", action="store_true",
                        help="give cluster members the cluster majority type")


def _add_embedding_options(parser) -> None:
    parser.add_argument("--embeddings", help="CTE1 embedding store")
    parser.add_argument("--synth-dim", type=int,
                        help="use synthetic embeddings of this width instead of a store")
    parser.add_argument("--synth-seed", type=int, default=0)


def _add_config_options(parser) -> None:
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")
    parser.add_argument("--drop-singletons", action="store_true",
                        help="drop singleton clusters from resolver output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="typecoref",
        description="Mention-linking coreference resolution with entity-type features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert corpora and attach/transform types")
    p.add_argument("input", help="input corpus (.conll or .json)")
    p.add_argument("output", help="output corpus (.conll or .json)")
    p.add_argument("--sidecar")
    p.add_argument("--scheme", default="common", choices=SCHEME_NAMES)
    p.add_argument("--map-common", action="store_true")
    p.add_argument("--propagate-types", action="store_true")
    p.add_argument("--types-out", help="also write the resulting types as a sidecar")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("train", help="train a model variant")
    _add_corpus_options(p, required=False)
    _add_embedding_options(p)
    _add_config_options(p)
    p.add_argument("--variant", default="baseline", choices=VARIANTS)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--from-manifest", help="reproduce a run from its manifest")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("resolve", help="cluster mentions with a trained checkpoint")
    _add_corpus_options(p)
    _add_embedding_options(p)
    _add_config_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", default="baseline", choices=VARIANTS)
    p.add_argument("--out", required=True, help="response corpus (.conll or .json)")
    p.set_defaults(fn=cmd_resolve)

    p = sub.add_parser("score", help="score a response against a key")
    p.add_argument("--key", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--sidecar")
    p.add_argument("--scheme", default="common", choices=SCHEME_NAMES)
    p.add_argument("--map-common", action="store_true")
    p.add_argument("--propagate-types", action="store_true")
    p.add_argument("--by-genre", action="store_true")
    p.add_argument("--keep-singletons", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--json", help="write the report as JSON")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("predict-types", help="k-fold type prediction over a corpus")
    _add_corpus_options(p)
    p.add_argument("--vectors", help="CTE1 store of marked-sequence embeddings")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="predicted_types.jsonl")
    p.add_argument("--report", help="write the evaluation report as JSON")
    p.add_argument("--write-requests",
                   help="only write the marked-sequence request file and exit")
    p.set_defaults(fn=cmd_predict_types)

    p = sub.add_parser("grid", help="run a variant grid with seeds or folds")
    _add_corpus_options(p)
    _add_embedding_options(p)
    _add_config_options(p)
    p.add_argument("--variants", default="baseline,et_full",
                   help="comma-separated model variants")
    p.add_argument("--seeds", help="comma-separated seeds (needs --eval)")
    p.add_argument("--folds", type=int, help="k-fold cross-validation over the corpus")
    p.add_argument("--eval", help="held-out corpus for seed mode")
    p.add_argument("--type-source", choices=("gold", "predicted"), default="gold")
    p.add_argument("--predicted-sidecar", help="sidecar from predict-types")
    p.add_argument("--resamples", type=int, default=10000)
    p.add_argument("--json", help="write the summary as JSON")
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("synth-corpus", help="write a seeded synthetic corpus")
    p.add_argument("--docs", type=int, default=60)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--prefix", default="synth", help="document id prefix")
    p.add_argument("--out", required=True)
    p.add_argument("--types-out")
    p.set_defaults(fn=cmd_synth_corpus)

    p = sub.add_parser("synth-store", help="write synthetic embeddings for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth_store)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
