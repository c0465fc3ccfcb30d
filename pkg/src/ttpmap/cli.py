"""Command-line interface: artifact building, single-query debugging,
batch evaluation, and the annotation service.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backends import (
    load_fixture_backend,
    reference_backend,
    remote_backend,
    text_hash,
    write_embedding_file,
)
from .bm25 import Bm25Params, PostingsIndex, rank_techniques_stage1
from .corpus import load_catalog
from .evaluation import load_dataset, run_benchmark, split as split_records
from .ioc import IocRuleset
from .pipeline import Artifacts, PipelineConfig, annotate, result_to_dict
from .stage2 import VectorStore, bake_store, rank_techniques_stage2
from .stage3 import explain as explain_technique
from .stix import convert_stix_file


def _parse_backend(spec: str):
    """Backend specs: 'reference[:dim=64][:seed=0]', 'remote:URL',
    'fixture:PATH' (bi-encoder only)."""
    parts = spec.split(":")
    kind = parts[0]
    if kind == "reference":
        dim, seed = 64, 0
        for part in parts[1:]:
            key, _, value = part.partition("=")
            if key == "dim":
                dim = int(value)
            elif key == "seed":
                seed = int(value)
            else:
                raise click.BadParameter(f"unknown reference backend option {part!r}")
        return reference_backend(dim=dim, seed=seed)
    if kind == "remote":
        url = spec[len("remote:"):]
        if not url:
            raise click.BadParameter("remote backend needs a URL: remote:http://host:port")
        return remote_backend(url)
    if kind == "fixture":
        path = spec[len("fixture:"):]
        return load_fixture_backend(path)
    raise click.BadParameter(f"unknown backend spec {spec!r}")


def _load_config(path: str | None) -> PipelineConfig:
    return PipelineConfig.from_file(path) if path else PipelineConfig()


def _build_catalog(corpus: str, config: PipelineConfig, ruleset_path: str | None):
    ruleset = IocRuleset.from_file(ruleset_path) if ruleset_path else IocRuleset.default()
    normalize_text = (lambda t: ruleset.normalize(t).text) if config.normalize_corpus else None
    return load_catalog(corpus, normalize_text=normalize_text), ruleset


def _assemble_artifacts(corpus, index_path, store_path, backend_spec, mono_spec, config, ruleset_path):
    catalog, ruleset = _build_catalog(corpus, config, ruleset_path)
    index = PostingsIndex.load(index_path)
    store = VectorStore.load(store_path)
    bi = _parse_backend(backend_spec)
    mono = _parse_backend(mono_spec) if mono_spec else bi
    return Artifacts(
        catalog=catalog, index=index, store=store, bi_backend=bi, mono_backend=mono, ruleset=ruleset
    )


def _read_query(text: str | None, use_stdin: bool) -> str:
    if text is not None:
        return text
    if use_stdin or text is None:
        return sys.stdin.read()
    raise click.UsageError("provide --text or --stdin")


@click.group()
def main():
    """Multi-stage technique annotation engine."""


@main.command()
@click.argument("bundle", type=click.Path(exists=True))
@click.argument("out", type=click.Path())
def convert(bundle, out):
    """Convert a STIX bundle to the corpus JSONL format."""
    count = convert_stix_file(bundle, out)
    click.echo(f"wrote {count} technique documents to {out}")


@main.command()
@click.option("--spans", is_flag=True, help="emit replacement records as JSON lines")
@click.option("--ruleset", "ruleset_path", type=click.Path(exists=True), default=None)
def normalize(spans, ruleset_path):
    """Read text from stdin, write the indicator-normalized text."""
    ruleset = IocRuleset.from_file(ruleset_path) if ruleset_path else IocRuleset.default()
    result = ruleset.normalize(sys.stdin.read())
    if spans:
        for rep in result.replacements:
            click.echo(
                json.dumps(
                    {"span": list(rep.span), "class": rep.ioc_class, "literal": rep.literal}
                )
            )
    else:
        click.echo(result.text, nl=False)


@main.group()
def index():
    """Inverted-index artifacts."""


@index.command("build")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--ruleset", "ruleset_path", type=click.Path(exists=True), default=None)
def index_build(corpus, out, config_path, ruleset_path):
    """Build the postings index over the stage-1 window profile."""
    config = _load_config(config_path)
    catalog, _ = _build_catalog(corpus, config, ruleset_path)
    idx = PostingsIndex.build(catalog.items[config.stage1_profile], catalog_digest=catalog.digest)
    idx.save(out)
    click.echo(f"indexed {idx.doc_count} items, {len(idx.vocabulary)} terms -> {out}")


@index.command("stats")
@click.argument("index_file", type=click.Path(exists=True))
def index_stats(index_file):
    """Print summary statistics for a serialized index."""
    idx = PostingsIndex.load(index_file)
    postings_entries = sum(len(idx.postings(t)) for t in idx.vocabulary)
    click.echo(f"documents:        {idx.doc_count}")
    click.echo(f"terms:            {len(idx.vocabulary)}")
    click.echo(f"postings entries: {postings_entries}")
    click.echo(f"avg doc length:   {idx.avg_doc_length:.2f}")
    click.echo(f"catalog digest:   {idx.catalog_digest or '(none)'}")


@main.group()
def embeddings():
    """Embedding artifacts."""


@embeddings.command("bake")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--backend", "backend_spec", default="reference:dim=64:seed=0", show_default=True)
@click.option("--profile", default="stage2", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--ruleset", "ruleset_path", type=click.Path(exists=True), default=None)
@click.option("--fixture", "as_fixture", is_flag=True, help="write the bare hash-keyed embedding fixture instead of the item store")
@click.option("--checkpoint", type=click.Path(), default=None, help="resumable bake checkpoint path")
def embeddings_bake(corpus, out, backend_spec, profile, config_path, ruleset_path, as_fixture, checkpoint):
    """Precompute item vectors from any backend into a store or fixture."""
    config = _load_config(config_path)
    catalog, _ = _build_catalog(corpus, config, ruleset_path)
    backend = _parse_backend(backend_spec)
    store = bake_store(catalog, backend, profile=profile, checkpoint=checkpoint)
    if as_fixture:
        items = catalog.items[profile]
        write_embedding_file(
            out,
            store.dim,
            backend.identity,
            [(text_hash(it.text), store.vector(it.item_id).values) for it in items],
        )
    else:
        store.save(out)
    click.echo(f"baked {len(store.vectors)} vectors (dim {store.dim}) -> {out}")


def _artifact_options(fn):
    fn = click.option("--corpus", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--index", "index_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--store", "store_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--backend", "backend_spec", default="reference:dim=64:seed=0", show_default=True)(fn)
    fn = click.option("--mono-backend", "mono_spec", default=None)(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None)(fn)
    fn = click.option("--ruleset", "ruleset_path", type=click.Path(exists=True), default=None)(fn)
    return fn


@main.command()
@_artifact_options
@click.option("--stage", type=click.IntRange(1, 3), required=True)
@click.option("--text", default=None)
@click.option("--stdin", "use_stdin", is_flag=True)
@click.option("--k", type=int, default=None, help="override the stage cutoff")
@click.option("--explain", "show_explain", is_flag=True, help="stage 3: per-item relevance table")
def rank(corpus, index_path, store_path, backend_spec, mono_spec, config_path, ruleset_path, stage, text, use_stdin, k, show_explain):
    """Run the pipeline up to one stage for a single query (debugging)."""
    config = _load_config(config_path)
    artifacts = _assemble_artifacts(
        corpus, index_path, store_path, backend_spec, mono_spec, config, ruleset_path
    )
    query = _read_query(text, use_stdin)
    normalized = artifacts.ioc_ruleset().normalize(query) if config.normalize_query else None
    qtext = normalized.text if normalized else query

    k1 = (k or config.k1) if stage == 1 else config.k1
    stage1 = rank_techniques_stage1(
        artifacts.catalog, artifacts.index, config.bm25, qtext, k1,
        profile=config.stage1_profile,
    )
    if stage == 1:
        for tid, score in stage1.entries:
            click.echo(f"{tid}\t{score:.6f}\t{artifacts.catalog.techniques[tid].title}")
        return

    k2 = (k or config.k2) if stage == 2 else config.k2
    stage2 = rank_techniques_stage2(
        artifacts.catalog, artifacts.store, artifacts.bi_backend, qtext, stage1, k2,
        profile=config.stage2_profile,
    )
    if stage == 2:
        q_vec = artifacts.bi_backend.embed(qtext)
        from .backends import cosine_many  # local import to keep startup light

        for tid, score in stage2.entries:
            click.echo(f"{tid}\t{score:.6f}\t{artifacts.catalog.techniques[tid].title}")
            items = artifacts.catalog.items_for(tid, config.stage2_profile)
            sims = cosine_many(q_vec, [artifacts.store.vector(it.item_id) for it in items])
            for it, sim in sorted(zip(items, sims), key=lambda p: -p[1]):
                click.echo(f"    {it.item_id}\t{sim:.6f}")
        return

    from .stage3 import rank_techniques_stage3

    stage3 = rank_techniques_stage3(
        artifacts.catalog, artifacts.mono_backend, qtext, stage2,
        k or config.k3, profile=config.stage3_profile, template=config.template(),
    )
    for tid, score in stage3.entries:
        click.echo(f"{tid}\t{score:.6f}\t{artifacts.catalog.techniques[tid].title}")
        if show_explain:
            rows = explain_technique(
                qtext, tid, artifacts.mono_backend, artifacts.catalog,
                profile=config.stage3_profile, template=config.template(),
            )
            for item_id, relevance, prefix in rows:
                click.echo(f"    {item_id}\t{relevance:.6f}\t{prefix}")


@main.command("annotate")
@_artifact_options
@click.option("--text", default=None)
@click.option("--stdin", "use_stdin", is_flag=True)
@click.option("--json", "as_json", is_flag=True)
@click.option("--per-stage", is_flag=True)
def annotate_cmd(corpus, index_path, store_path, backend_spec, mono_spec, config_path, ruleset_path, text, use_stdin, as_json, per_stage):
    """Annotate one passage and print the ranked techniques."""
    config = _load_config(config_path)
    artifacts = _assemble_artifacts(
        corpus, index_path, store_path, backend_spec, mono_spec, config, ruleset_path
    )
    result = annotate(config, artifacts, _read_query(text, use_stdin))
    if as_json:
        click.echo(json.dumps(result_to_dict(result, catalog=artifacts.catalog, per_stage=per_stage, timings=True)))
        return
    for warning in result.warnings:
        click.echo(f"warning: {warning}", err=True)
    for tid, score in result.final.entries:
        click.echo(f"{tid}\t{score:.6f}\t{artifacts.catalog.techniques[tid].title}")
    if per_stage:
        for stage_num in (1, 2, 3):
            ranked = result.per_stage[stage_num]
            click.echo(f"-- stage {stage_num} ({ranked.score_kind}) --")
            for tid, score in ranked.entries:
                click.echo(f"{tid}\t{score:.6f}")


@main.command()
@_artifact_options
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--test-fraction", type=float, default=None,
              help="evaluate only the held-out side of a stratified split")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--expand-multilabel/--no-expand-multilabel", default=True, show_default=True)
def evaluate(corpus, index_path, store_path, backend_spec, mono_spec, config_path, ruleset_path, dataset, out_dir, test_fraction, seed, expand_multilabel):
    """Benchmark the pipeline on a labeled dataset; write report + trace."""
    config = _load_config(config_path)
    artifacts = _assemble_artifacts(
        corpus, index_path, store_path, backend_spec, mono_spec, config, ruleset_path
    )
    records = load_dataset(dataset, expand_multilabel=expand_multilabel)
    if test_fraction is not None:
        _, records = split_records(records, 1.0 - test_fraction, seed)
    report = run_benchmark(config, artifacts, records, out_dir=out_dir)
    click.echo(report.to_text())


@main.command()
@_artifact_options
@click.option("--addr", default="127.0.0.1:8765", show_default=True)
@click.option("--session-db", default="ttpmap-sessions.db", show_default=True)
@click.option("--token", default=None, help="require this static bearer token")
def serve(corpus, index_path, store_path, backend_spec, mono_spec, config_path, ruleset_path, addr, session_db, token):
    """Run the annotation HTTP service."""
    import uvicorn

    from .service import create_app

    config = _load_config(config_path)
    artifacts = _assemble_artifacts(
        corpus, index_path, store_path, backend_spec, mono_spec, config, ruleset_path
    )
    app = create_app(artifacts, config, session_db=session_db, api_token=token)
    host, _, port = addr.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8765))


if __name__ == "__main__":
    main()
