"""Command-line interface.

Subcommands cover the whole pipeline: corpus preparation and inspection,
vocabulary building, training (both multi-source strategies), corpus
embedding, retrieval evaluation with report files, the HTTP service, and
synthetic-corpus generation for demos.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from . import audio as audio_mod
from . import synth
from .corpus import Source, Split, load_manifest, make_split, resolve_uri, save_manifest
from .evaluation import embed_corpus, evaluate
from .features import FeaturePipeline
from .midi import parse_midi, tokens_for_segment
from .models import Modality, load_checkpoint
from .reporting import plot_training_curves, write_report
from .text import Vocab, build_vocab, compose_eval_text
from .training import TrainConfig, TrainRun, select_checkpoint


@click.group()
def main():
    """Trimodal piano music embeddings: train, evaluate, serve."""


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--split", "split_spec", default="0.8,0.1,0.1", show_default=True,
              help="Comma-separated ratios in train,val,test order.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Output manifest (defaults to overwriting the input).")
def prepare(manifest_path, split_spec, seed, out_path):
    """Assign train/val/test splits to a manifest."""
    manifest = load_manifest(manifest_path)
    ratios = [float(x) for x in split_spec.split(",")]
    manifest = make_split(manifest, ratios, seed)
    out_path = out_path or manifest_path
    save_manifest(manifest, out_path)
    for split in Split:
        n = len(manifest.by_split(split))
        if n:
            click.echo(f"{split.value}: {n} records")
    click.echo(f"wrote {out_path}")


@main.command("inspect-audio")
@click.argument("uri")
def inspect_audio(uri):
    """Print duration, rate and segment count of an audio file."""
    wave = audio_mod.load_and_resample(resolve_uri(uri))
    segments = audio_mod.segment(wave, policy=audio_mod.SegmentPolicy.SLIDE)
    click.echo(f"duration_sec: {wave.duration_sec:.2f}")
    click.echo(f"sample_rate: {wave.sample_rate}")
    click.echo(f"segments: {len(segments)}")


@main.command()
@click.option("--midi", "midi_uri", required=True)
@click.option("--start-sec", default=0.0, show_default=True, type=float)
def tokenize(midi_uri, start_sec):
    """Print the token table for the segment starting at --start-sec."""
    notes, grid = parse_midi(resolve_uri(midi_uri))
    sequence = tokens_for_segment(notes, grid, start_sec)
    click.echo(f"{'idx':>4} {'bar':>5} {'pos':>4} {'pitch':>6} {'dur':>4}")
    for i, tok in enumerate(sequence.tokens):
        if tok.is_pad:
            click.echo(f"... {sequence.n_real} real tokens, "
                       f"{len(sequence.tokens) - sequence.n_real} PAD")
            break
        click.echo(f"{i:>4} {tok.bar.value:>5} {tok.position:>4} "
                   f"{tok.pitch:>6} {tok.duration:>4}")
    else:
        click.echo(f"... {sequence.n_real} real tokens (sequence full)")


@main.command("build-vocab")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--size", default=512, show_default=True, type=int)
@click.option("--out", "out_path", default="vocab.tsv", show_default=True,
              type=click.Path())
def build_vocab_cmd(manifest_path, size, out_path):
    """Build the subword vocabulary from a manifest's texts."""
    manifest = load_manifest(manifest_path)
    texts = [compose_eval_text(list(r.texts)) for r in manifest.records]
    vocab = build_vocab(texts, size)
    vocab.save(out_path)
    click.echo(f"wrote {out_path} ({len(vocab)} entries)")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True))
@click.option("--strategy", type=click.Choice(["combined", "pt_ft"]), default=None,
              help="Override the config's strategy.")
@click.option("--modality", type=click.Choice(["trimodal", "audio", "symbolic"]),
              default=None, help="Override the config's modality.")
def train(config_path, manifest_path, vocab_path, strategy, modality):
    """Run a training strategy over a prepared manifest."""
    config = TrainConfig.from_json(config_path)
    if strategy:
        config.strategy = strategy
    if modality:
        config.modality = modality
    manifest = load_manifest(manifest_path)
    vocab = Vocab.load(vocab_path)
    train_records = manifest.by_split(Split.TRAIN)
    weak = [r for r in train_records if r.source == Source.WEAK]
    strong = [r for r in train_records if r.source == Source.STRONG]
    val = manifest.by_split(Split.VAL) or train_records
    run = TrainRun(config, vocab, weak, strong, val)
    try:
        if config.strategy == "pt_ft":
            metas = run.run_pretrain_finetune()
        else:
            metas = run.run_combined()
    finally:
        run.close()
    if metas:
        best = select_checkpoint(metas)
        click.echo(f"best checkpoint: {best.path} (MedR {best.val_medr:g})")
    curve_path = Path(config.run_dir) / "training_curves.png"
    plot_training_curves(Path(config.run_dir) / "log.jsonl", curve_path)
    click.echo(f"wrote {curve_path}")


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True))
@click.option("--modality", type=click.Choice(["audio", "symbolic"]), required=True)
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test", "all"]),
              default="test", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def embed(checkpoint_path, manifest_path, vocab_path, modality, split_name, out_path):
    """Embed a corpus split into an item store file."""
    model, _ = load_checkpoint(checkpoint_path)
    vocab = Vocab.load(vocab_path)
    manifest = load_manifest(manifest_path)
    records = (manifest.records if split_name == "all"
               else manifest.by_split(Split(split_name)))
    if not records:
        raise click.ClickException(f"no records in split '{split_name}'")
    pipeline = FeaturePipeline(vocab)
    store = embed_corpus(model, records, Modality(modality), pipeline)
    store.save(out_path)
    sidecar = Path(out_path).with_suffix(Path(out_path).suffix + ".meta.json")
    sidecar.write_text(json.dumps({"model_digest": model.digest}))
    click.echo(f"wrote {out_path} ({len(store)} items)")


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True))
@click.option("--items", "item_modality", type=click.Choice(["fused", "audio", "symbolic"]),
              default="fused", show_default=True)
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test", "all"]),
              default="test", show_default=True)
@click.option("--report", "report_path", default=None, type=click.Path(),
              help="Write markdown + CSV + figures to this path.")
@click.option("--dataset-label", default="", help="Dataset column label in the report.")
def evaluate_cmd(checkpoint_path, manifest_path, vocab_path, item_modality,
                 split_name, report_path, dataset_label):
    """Text-to-music retrieval metrics on a corpus split."""
    model, _ = load_checkpoint(checkpoint_path)
    vocab = Vocab.load(vocab_path)
    manifest = load_manifest(manifest_path)
    records = (manifest.records if split_name == "all"
               else manifest.by_split(Split(split_name)))
    if not records:
        raise click.ClickException(f"no records in split '{split_name}'")
    pipeline = FeaturePipeline(vocab)
    report = evaluate(model, records, Modality(item_modality), pipeline,
                      dataset=dataset_label)
    click.echo(f"n_queries: {report.n_queries}")
    for k in (1, 5, 10):
        click.echo(f"R@{k}: {report.r_at[k]:.2f}")
    click.echo(f"MedR: {report.medr:g}")
    if report_path:
        for path in write_report([report], report_path):
            click.echo(f"wrote {path}")


@main.command()
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", default=None, type=click.Path(exists=True),
              help="Vocabulary file; defaults to the one embedded in the checkpoint.")
@click.option("--audio-store", default=None, type=click.Path(exists=True))
@click.option("--symbolic-store", default=None, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True),
              help="Optional manifest providing item metadata.")
def serve(port, host, checkpoint_path, vocab_path, audio_store, symbolic_store,
          manifest_path):
    """Serve text-to-music retrieval over HTTP."""
    from .service import load_app, serve as run_server

    if not audio_store and not symbolic_store:
        raise click.ClickException("need at least one of --audio-store / --symbolic-store")
    app = load_app(checkpoint_path, vocab_path, audio_store, symbolic_store,
                   manifest_path)
    click.echo(f"serving on http://{host}:{port}")
    run_server(app, host=host, port=port)


@main.command("synth")
@click.option("--kind", type=click.Choice(sorted(synth.CORPUS_KINDS)), required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
def synth_cmd(kind, out_dir, seed):
    """Generate a synthetic trimodal corpus."""
    maker = synth.CORPUS_KINDS[kind]
    path = maker(out_dir) if kind == "complementary" else maker(out_dir, seed=seed)
    click.echo(f"wrote {path}")


@main.command("report")
@click.option("--run-dir", "run_dir", required=True, type=click.Path(exists=True))
def report_cmd(run_dir):
    """Render training curves from a run directory's log."""
    out = Path(run_dir) / "training_curves.png"
    plot_training_curves(Path(run_dir) / "log.jsonl", out)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
