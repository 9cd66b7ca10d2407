"""Operator entry point wiring all modules into reproducible runs.

Every command reads one canonical JSON config (flags win), writes its
artifacts plus a manifest (config hash, seed, input/output digests), and
exits nonzero with a machine-readable error JSON on stderr.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict

import click
import numpy as np

from . import __version__, captioner as cap_mod, corpus, fbn as fbn_mod, pgtrain
from .config import (
    ExperimentConfig,
    apply_overrides,
    config_hash,
    load_config,
    save_config,
)
from .errors import ConfigError, PhrasecapError
from .hub.store import FeedbackStore
from .hub.teacher import TEMPLATE_WORDS, ScriptedTeacher, perturb_caption
from .numerics import grad_check, load_checkpoint, save_checkpoint
from .rewards import RewardConfig


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _write_manifest(command: str, cfg: ExperimentConfig, inputs: dict, outputs: dict):
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "inputs": {k: _file_hash(v) for k, v in inputs.items() if os.path.exists(v)},
        "outputs": {k: _file_hash(v) for k, v in outputs.items() if os.path.exists(v)},
    }
    first = next(iter(outputs.values()))
    path = f"{first}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _reward_config(cfg: ExperimentConfig) -> RewardConfig:
    r = cfg.reward
    return RewardConfig(
        lambdas=tuple(r.lambdas),
        beta={"GT": r.beta_gt, "perfect": r.beta_perfect,
              "acceptable": r.beta_acceptable, "grammar-only": r.beta_grammar_only},
        lambda_f=r.lambda_f,
    )


def _load_dataset_checked(cfg: ExperimentConfig, path):
    ds = corpus.load_dataset(path)
    return ds


def _captioner_setup(cfg: ExperimentConfig, dataset):
    return cap_mod.CaptionerConfig.from_settings(
        cfg.model, len(dataset.vocab), corpus.feature_dim(dataset.settings)
    )


def _check_pair(meta: dict, dataset_path: str, what: str):
    want = meta.get("dataset_hash")
    have = _file_hash(dataset_path)
    if want and want != have:
        raise ConfigError(
            f"{what} was trained on dataset {want} but {dataset_path} hashes to {have}"
        )


class _Cli(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except PhrasecapError as exc:
            sys.stderr.write(json.dumps(
                {"error": type(exc).__name__, "message": str(exc)}) + "\n")
            sys.exit(1)


@click.group(cls=_Cli)
def main():
    """Phrase-based captioning with natural-language feedback."""


_config_opt = click.option("--config", "config_path", type=click.Path(exists=True),
                           default=None, help="experiment config JSON")
_seed_opt = click.option("--seed", type=int, default=None, help="override config seed")


def _cfg(config_path, seed=None, mode=None) -> ExperimentConfig:
    cfg = load_config(config_path) if config_path else ExperimentConfig()
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if mode is not None:
        overrides["rl.mode"] = mode
    return apply_overrides(cfg, overrides) if overrides else cfg


@main.command("init-config")
@click.option("--out", required=True, type=click.Path())
def init_config(out):
    """Write the default experiment config."""
    save_config(ExperimentConfig(), out)
    click.echo(f"wrote {out}")


@main.command("gen-data")
@_config_opt
@_seed_opt
@click.option("--out", required=True, type=click.Path())
def gen_data(config_path, seed, out):
    """Generate the synthetic scene/caption dataset (train + held-out)."""
    cfg = _cfg(config_path, seed)
    grammar = corpus.Grammar()
    extra = corpus.grammar_words(grammar, cfg.dataset) | set(TEMPLATE_WORDS)
    ds = corpus.gen_dataset(cfg.dataset, cfg.seed, config_hash(cfg), grammar, sorted(extra))
    corpus.save_dataset(ds, out)
    _write_manifest("gen-data", cfg, {}, {"dataset": out})
    click.echo(f"wrote {len(ds.records)} scenes, vocab {len(ds.vocab)} -> {out}")


@main.command()
@_config_opt
@_seed_opt
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--snapshot-out", default=None, type=click.Path(),
              help="also save the early-epoch snapshot checkpoint here")
@click.option("--epochs", type=int, default=None)
def pretrain(config_path, seed, dataset_path, out, snapshot_out, epochs):
    """Cross-entropy pretraining of the captioner."""
    cfg = _cfg(config_path, seed)
    ds = _load_dataset_checked(cfg, dataset_path)
    ccfg = _captioner_setup(cfg, ds)
    n_epochs = epochs if epochs is not None else cfg.pretrain.epochs
    store, log, snapshot = cap_mod.pretrain(
        ds, ccfg, cfg.pretrain.lr, cfg.pretrain.batch, n_epochs, cfg.seed,
        snapshot_epoch=cfg.pretrain.snapshot_epoch if snapshot_out else 0,
        progress=lambda e, l: click.echo(f"epoch {e}: loss {l:.4f}"),
    )
    meta = cap_mod.checkpoint_meta(
        ccfg, config_hash=config_hash(cfg), dataset_hash=_file_hash(dataset_path),
        loss_log=log,
    )
    save_checkpoint(store, out, meta)
    outputs = {"checkpoint": out}
    if snapshot_out and snapshot is not None:
        save_checkpoint(snapshot, snapshot_out,
                        cap_mod.checkpoint_meta(ccfg, config_hash=config_hash(cfg),
                                                dataset_hash=_file_hash(dataset_path),
                                                snapshot_epoch=cfg.pretrain.snapshot_epoch))
        outputs["snapshot"] = snapshot_out
    _write_manifest("pretrain", cfg, {"dataset": dataset_path}, outputs)
    click.echo(f"final loss {log[-1]['loss']:.4f} -> {out}")


@main.command()
@_config_opt
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--split", type=click.Choice(["train", "heldout"]), default="train")
@click.option("--limit", type=int, default=0, help="caption only the first N scenes")
@click.option("--out", required=True, type=click.Path())
def caption(config_path, ckpt_path, dataset_path, split, limit, out):
    """Dump greedy snapshot captions ({image_id, phrases[]} JSONL)."""
    cfg = _cfg(config_path)
    ds = _load_dataset_checked(cfg, dataset_path)
    store, meta = load_checkpoint(ckpt_path)
    _check_pair(meta, dataset_path, "checkpoint")
    ccfg = cap_mod.config_from_meta(meta)
    records = ds.train_records() if split == "train" else ds.heldout_records()
    if limit:
        records = records[:limit]
    with open(out, "w", encoding="utf-8") as fh:
        for rec in records:
            trace = cap_mod.greedy(store, ccfg, ds.features_for(rec.scene).array)
            cap = trace.to_caption(ds.vocab)
            doc = {"image_id": rec.scene.id, **cap.to_json()}
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
    _write_manifest("caption", cfg, {"dataset": dataset_path, "checkpoint": ckpt_path},
                    {"captions": out})
    click.echo(f"captioned {len(records)} scenes -> {out}")


@main.command()
@_config_opt
@_seed_opt
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--source", type=click.Choice(["snapshot", "perturb"]), default="snapshot")
@click.option("--captions", "captions_path", type=click.Path(exists=True), default=None,
              help="snapshot captions file (required for --source snapshot)")
@click.option("--limit", type=int, default=0, help="annotate at most N captions")
@click.option("--max-rounds", type=int, default=3)
@click.option("--out", required=True, type=click.Path())
def teach(config_path, seed, dataset_path, source, captions_path, limit, max_rounds, out):
    """Scripted teacher fills the feedback store (snapshot captions or seeded
    corruptions of gold captions)."""
    cfg = _cfg(config_path, seed)
    ds = _load_dataset_checked(cfg, dataset_path)
    teacher = ScriptedTeacher(ds.settings, corpus.Grammar())
    scenes = {r.scene.id: r.scene for r in ds.records}
    if os.path.exists(out):
        os.unlink(out)
    store = FeedbackStore(out)
    if source == "snapshot":
        if not captions_path:
            raise ConfigError("--source snapshot requires --captions")
        from .hub.service import load_snapshot_captions
        pairs = load_snapshot_captions(captions_path)
    else:
        rng = np.random.default_rng([cfg.seed, 47])
        pairs = []
        records = ds.train_records()
        for rec in records:
            gold = rec.captions[0][0]
            pairs.append((rec.scene.id, perturb_caption(gold, rec.scene, ds.settings, rng)))
    if limit:
        pairs = pairs[:limit]
    n_rounds = 0
    for image_id, cap in pairs:
        rec = teacher.annotate(scenes[image_id], cap, max_rounds=max_rounds)
        store.append(rec)
        n_rounds += len(rec.rounds)
    _write_manifest("teach", cfg, {"dataset": dataset_path}, {"feedback": out})
    click.echo(f"stored {len(pairs)} records ({n_rounds} feedback rounds) -> {out}")


@main.command("train-fbn")
@_config_opt
@_seed_opt
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--feedback", "feedback_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--no-mistake-type", is_flag=True, help="ablation: drop the m input")
def train_fbn(config_path, seed, dataset_path, feedback_path, out, epochs, no_mistake_type):
    """Train the feedback network on stored feedback records."""
    cfg = _cfg(config_path, seed)
    ds = _load_dataset_checked(cfg, dataset_path)
    records = FeedbackStore(feedback_path).load()
    examples = fbn_mod.build_fbn_dataset([r for r in records if r.rounds])
    fcfg = fbn_mod.FBNConfig.from_settings(cfg.fbn, len(ds.vocab))
    n_epochs = epochs if epochs is not None else cfg.fbn.epochs
    store, log, (train, heldout) = fbn_mod.train_fbn(
        examples, ds.vocab, fcfg, cfg.fbn.lr, cfg.fbn.batch, n_epochs, cfg.seed,
        progress=lambda e, row: click.echo(
            f"epoch {e}: loss {row['loss']:.4f} heldout acc {row['heldout_accuracy']:.3f}"),
        mask_mistake_type=no_mistake_type,
    )
    report = fbn_mod.eval_fbn(store, fcfg, ds.vocab, heldout)
    meta = fbn_mod.checkpoint_meta(
        fcfg, config_hash=config_hash(cfg), dataset_hash=_file_hash(dataset_path),
        heldout=report, log=log, n_records=len({e.record_id for e in examples}),
    )
    save_checkpoint(store, out, meta)
    _write_manifest("train-fbn", cfg,
                    {"dataset": dataset_path, "feedback": feedback_path}, {"fbn": out})
    click.echo(f"held-out accuracy {report['accuracy']:.3f} "
               f"(majority {report['majority_baseline']:.3f}) -> {out}")


@main.command("train-rl")
@_config_opt
@_seed_opt
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--mode", default=None, help="GT:k | C | A, optionally +FB")
@click.option("--feedback", "feedback_path", type=click.Path(exists=True), default=None)
@click.option("--fbn", "fbn_path", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--log", "log_path", type=click.Path(), default=None)
def train_rl(config_path, seed, dataset_path, ckpt_path, mode, feedback_path, fbn_path,
             out, log_path):
    """Policy-gradient training from a pretrained checkpoint."""
    cfg = _cfg(config_path, seed, mode)
    ds = _load_dataset_checked(cfg, dataset_path)
    store, meta = load_checkpoint(ckpt_path)
    _check_pair(meta, dataset_path, "checkpoint")
    ccfg = cap_mod.config_from_meta(meta)
    _, _, use_fbn = pgtrain.parse_mode(cfg.rl.mode)
    classify = None
    if use_fbn:
        if not fbn_path:
            raise ConfigError(f"mode {cfg.rl.mode} requires --fbn")
        fstore, fmeta = load_checkpoint(fbn_path)
        classify = fbn_mod.make_classifier(fstore, fbn_mod.config_from_meta(fmeta), ds.vocab)
    records = FeedbackStore(feedback_path).load() if feedback_path else None
    store, log = pgtrain.train_rl(
        store, ccfg, ds, cfg.rl.mode, _reward_config(cfg), cfg.rl, cfg.seed,
        classify=classify, feedback_records=records,
        progress=lambda e, row: click.echo(
            f"epoch {e}: pg_phrases {row['pg_phrases']} reward {row['mean_reward']}"),
    )
    save_checkpoint(store, out, cap_mod.checkpoint_meta(
        ccfg, config_hash=config_hash(cfg), dataset_hash=_file_hash(dataset_path),
        mode=cfg.rl.mode))
    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            for row in log:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    inputs = {"dataset": dataset_path, "checkpoint": ckpt_path}
    if feedback_path:
        inputs["feedback"] = feedback_path
    if fbn_path:
        inputs["fbn"] = fbn_path
    outputs = {"checkpoint": out}
    if log_path:
        outputs["log"] = log_path
    _write_manifest("train-rl", cfg, inputs, outputs)
    click.echo(f"trained {cfg.rl.mode} -> {out}")


@main.command("eval")
@_config_opt
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--split", type=click.Choice(["train", "heldout"]), default="heldout")
@click.option("--out", required=True, type=click.Path())
def eval_cmd(config_path, dataset_path, ckpt_path, split, out):
    """Greedy-decoding metric report (BLEU1-4, ROUGE-L, weighted)."""
    cfg = _cfg(config_path)
    ds = _load_dataset_checked(cfg, dataset_path)
    store, meta = load_checkpoint(ckpt_path)
    _check_pair(meta, dataset_path, "checkpoint")
    ccfg = cap_mod.config_from_meta(meta)
    records = ds.train_records() if split == "train" else ds.heldout_records()
    report = pgtrain.evaluate(store, ccfg, ds, records, _reward_config(cfg))
    report["split"] = split
    report["config_hash"] = config_hash(cfg)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest("eval", cfg, {"dataset": dataset_path, "checkpoint": ckpt_path},
                    {"report": out})
    click.echo(json.dumps(report, sort_keys=True))


@main.command()
@_config_opt
@click.option("--seed", type=int, default=3,
              help="parameter seed; the default instance is verified "
                   "kink-clear for central differences at the default eps")
@click.option("--eps", type=float, default=1e-3)
def gradcheck(config_path, seed, eps):
    """Finite-difference check of the captioner MLE loss and the FBN loss at
    reduced dims; fails (exit 1) at max relative error >= 1e-4."""
    from .config import DatasetSettings
    ds_settings = DatasetSettings(n_train=2, n_heldout=0, captions_per_scene=1,
                                  noise_sigma=0.5)
    data = corpus.gen_dataset(ds_settings, 12, "", corpus.Grammar(),
                              sorted(corpus.grammar_words(corpus.Grammar(), ds_settings)))
    ccfg = cap_mod.CaptionerConfig(
        vocab_size=len(data.vocab), feature_dim=corpus.feature_dim(ds_settings),
        hidden=8, embed=6, label_embed=4, att_hidden=6, deep_dim=6, mlp_hidden=6,
        max_words=8)
    rec = data.records[0]
    feats = data.features_for(rec.scene).array
    gold = cap_mod.encode_gold(corpus.caption(("NP", "a red cat"), ("VP", "is sitting")),
                               data.vocab, ccfg)
    cstore = cap_mod.build_params(ccfg, np.random.default_rng([seed, 3]))
    err_c = grad_check(lambda pv: cap_mod.mle_loss(pv, ccfg, feats, gold)[0], cstore, eps=eps)
    fcfg = fbn_mod.FBNConfig(vocab_size=len(data.vocab), hidden=8, embed=6,
                             mlp_hidden=6, dropout=0.0)
    fstore = fbn_mod.build_params(fcfg, np.random.default_rng([seed, 5]))
    cap = rec.captions[0][0]
    cap_ids = data.vocab.encode_all(cap.tokens())
    ph_ids = data.vocab.encode_all(cap.phrases[0].words)
    fb_ids = data.vocab.encode_all(corpus.tokenize("there is a dog , not a cat ."))
    m = fbn_mod.mistake_onehot("object")

    def fbn_loss(pv):
        from .numerics import tape
        logits = fbn_mod.fbn_logits(pv, fcfg, cap_ids, ph_ids, fb_ids, m)
        return tape.scale_shift(tape.logprob(logits, 1), -1.0)

    err_f = grad_check(fbn_loss, fstore, eps=eps)
    click.echo(f"captioner MLE loss max rel error: {err_c:.3e}")
    click.echo(f"FBN loss max rel error:           {err_f:.3e}")
    if max(err_c, err_f) >= 1e-4:
        raise ConfigError(f"gradient check failed: {max(err_c, err_f):.3e} >= 1e-4")
    click.echo("gradient check passed (< 1e-4)")


if __name__ == "__main__":
    main()
