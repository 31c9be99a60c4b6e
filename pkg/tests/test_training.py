import json

import numpy as np
import pytest
import torch

from tribind.corpus import MixtureSpec, Source
from tribind.features import FeaturePipeline, collate_batch
from tribind.models import TriBindModel, desk_config, parameter_digest
from tribind.training import (
    CheckpointMeta,
    EmptyCheckpointList,
    NonFiniteLoss,
    TrainConfig,
    TrainRun,
    build_optimizer,
    select_checkpoint,
    train_step,
)


def small_config(tmp_path, **overrides) -> TrainConfig:
    defaults = dict(
        strategy="combined",
        modality="trimodal",
        batch_size=4,
        steps=2,
        pretrain_steps=2,
        finetune_steps=2,
        eval_every=2,
        seed=0,
        run_dir=str(tmp_path / "run"),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture()
def fixed_batch(overfit_corpus):
    manifest, vocab, _ = overfit_corpus
    pipeline = FeaturePipeline(vocab)
    rng = np.random.default_rng(0)
    examples = [pipeline.training_example(r, rng) for r in manifest.records[:4]]
    return collate_batch(examples)


class TestTrainStep:
    def test_two_steps_same_batch_loss_decreases(self, fixed_batch):
        torch.manual_seed(0)
        model = TriBindModel(desk_config(256))
        config = TrainConfig(batch_size=4)
        optimizer = build_optimizer(model, config)
        first = train_step(model, optimizer, fixed_batch)
        second = train_step(model, optimizer, fixed_batch)
        assert second < first

    def test_zero_lr_leaves_parameters_bit_identical(self, fixed_batch):
        torch.manual_seed(0)
        model = TriBindModel(desk_config(256))
        optimizer = torch.optim.AdamW(model.parameters(), lr=0.0, weight_decay=0.2)
        before = {k: v.clone() for k, v in model.named_parameters()}
        train_step(model, optimizer, fixed_batch)
        after = dict(model.named_parameters())
        for key, tensor in before.items():
            assert torch.equal(tensor, after[key]), key

    def test_non_finite_loss_raises(self, fixed_batch):
        torch.manual_seed(0)
        model = TriBindModel(desk_config(256))
        optimizer = build_optimizer(model, TrainConfig(batch_size=4))
        poisoned = dict(fixed_batch)
        poisoned["mel"] = fixed_batch["mel"].clone()
        poisoned["mel"][0, 0, 0, 0] = float("nan")
        with pytest.raises(NonFiniteLoss):
            train_step(model, optimizer, poisoned)

    def test_mixed_precision_runs(self, fixed_batch):
        torch.manual_seed(0)
        model = TriBindModel(desk_config(256))
        optimizer = build_optimizer(model, TrainConfig(batch_size=4))
        loss = train_step(model, optimizer, fixed_batch, precision="mixed")
        assert np.isfinite(loss)


class TestWeightDecayGrouping:
    def test_no_decay_params_unchanged_under_zero_gradients(self):
        torch.manual_seed(0)
        model = TriBindModel(desk_config(256))
        config = TrainConfig(batch_size=4)
        optimizer = build_optimizer(model, config)
        for group in optimizer.param_groups:
            for p in group["params"]:
                p.grad = torch.zeros_like(p)
        no_decay_before = [
            p.clone() for g in optimizer.param_groups if g["weight_decay"] == 0
            for p in g["params"]
        ]
        decay_before = [
            p.clone() for g in optimizer.param_groups if g["weight_decay"] > 0
            for p in g["params"]
        ]
        optimizer.step()
        no_decay_after = [
            p for g in optimizer.param_groups if g["weight_decay"] == 0
            for g2 in [g] for p in g2["params"]
        ]
        decay_after = [
            p for g in optimizer.param_groups if g["weight_decay"] > 0
            for p in g["params"]
        ]
        for before, after in zip(no_decay_before, no_decay_after):
            assert torch.equal(before, after)
        changed = sum(
            not torch.equal(b, a) for b, a in zip(decay_before, decay_after)
            if b.abs().sum() > 0
        )
        assert changed > 0

    def test_temperature_not_decayed(self):
        model = TriBindModel(desk_config(256))
        optimizer = build_optimizer(model, TrainConfig(batch_size=4))
        temp_param = model.temperature.log_inv_tau
        for group in optimizer.param_groups:
            for p in group["params"]:
                if p is temp_param:
                    assert group["weight_decay"] == 0.0
                    return
        pytest.fail("temperature parameter not in optimizer")


class TestSelectCheckpoint:
    def meta(self, step, medr):
        return CheckpointMeta(step=step, val_medr=medr, val_recalls=(0, 0, 0),
                              path=f"ckpt_{step}")

    def test_minimal_medr_wins(self):
        metas = [self.meta(1, 30), self.meta(2, 10), self.meta(3, 12)]
        assert select_checkpoint(metas).step == 2

    def test_tie_breaks_earlier_step(self):
        metas = [self.meta(5, 10), self.meta(9, 10)]
        assert select_checkpoint(metas).step == 5

    def test_single(self):
        metas = [self.meta(4, 3)]
        assert select_checkpoint(metas) is metas[0]

    def test_empty_raises(self):
        with pytest.raises(EmptyCheckpointList):
            select_checkpoint([])


class TestRuns:
    def pools(self, manifest):
        weak = [r for r in manifest.records if r.source == Source.WEAK]
        strong = [r for r in manifest.records if r.source == Source.STRONG]
        return weak, strong

    def test_zero_steps_returns_no_checkpoints(self, overfit_corpus, tmp_path):
        manifest, vocab, _ = overfit_corpus
        weak, strong = self.pools(manifest)
        config = small_config(tmp_path, steps=0,
                              mixture=MixtureSpec(0, 1))
        run = TrainRun(config, vocab, weak, strong, manifest.records[:4])
        try:
            assert run.run_combined() == []
        finally:
            run.close()

    def test_strong_only_mixture_degenerates(self, overfit_corpus, tmp_path):
        manifest, vocab, _ = overfit_corpus
        weak, strong = self.pools(manifest)
        config = small_config(tmp_path, mixture=MixtureSpec(0, 1))
        run = TrainRun(config, vocab, weak, strong, manifest.records[:4])
        try:
            metas = run.run_combined()
        finally:
            run.close()
        assert len(metas) == 1
        log_lines = [json.loads(l) for l in
                     (run.run_dir / "log.jsonl").read_text().splitlines()]
        assert all(rec["source_counts"]["weak"] == 0 for rec in log_lines)
        assert all(rec["source_counts"]["strong"] == config.batch_size
                   for rec in log_lines)

    def test_seeded_runs_reproduce_loss_trace_and_digest(self, overfit_corpus,
                                                         tmp_path):
        manifest, vocab, _ = overfit_corpus
        weak, strong = self.pools(manifest)

        def one_run(tag):
            config = small_config(tmp_path / tag, steps=3, eval_every=3,
                                  mixture=MixtureSpec(0, 1))
            run = TrainRun(config, vocab, weak, strong, manifest.records[:4])
            try:
                metas = run.run_combined()
            finally:
                run.close()
            losses = [json.loads(l)["loss"] for l in
                      (run.run_dir / "log.jsonl").read_text().splitlines()]
            return losses, metas[-1].param_digest

        losses_a, digest_a = one_run("a")
        losses_b, digest_b = one_run("b")
        assert losses_a == losses_b
        assert digest_a == digest_b

    def test_pretrain_finetune_resumes_from_best(self, overfit_corpus, tmp_path):
        manifest, vocab, _ = overfit_corpus
        strong = [r for r in manifest.records]
        weak = [r.__class__(**{**r.__dict__, "id": "w" + r.id,
                               "source": Source.WEAK}) for r in manifest.records[:8]]
        config = small_config(tmp_path, strategy="pt_ft", pretrain_steps=2,
                              finetune_steps=0, eval_every=2)
        run = TrainRun(config, vocab, weak, strong, manifest.records[:4])
        try:
            metas = run.run_pretrain_finetune()
            assert all(m.phase == "pretrain" for m in metas)
            best = select_checkpoint(metas)
            # zero finetune steps: the model must equal the restored best
            assert parameter_digest(run.model) == best.param_digest
        finally:
            run.close()

    def test_pretrain_finetune_records_phases(self, overfit_corpus, tmp_path):
        manifest, vocab, _ = overfit_corpus
        strong = list(manifest.records)
        weak = [r.__class__(**{**r.__dict__, "id": "w" + r.id,
                               "source": Source.WEAK}) for r in manifest.records[:8]]
        config = small_config(tmp_path, strategy="pt_ft", pretrain_steps=2,
                              finetune_steps=2, eval_every=2)
        run = TrainRun(config, vocab, weak, strong, manifest.records[:4])
        try:
            metas = run.run_pretrain_finetune()
        finally:
            run.close()
        assert [m.phase for m in metas] == ["pretrain", "finetune"]

    def test_bimodal_audio_never_touches_symbolic(self, overfit_corpus, tmp_path):
        manifest, vocab, _ = overfit_corpus
        weak, strong = self.pools(manifest)
        config = small_config(tmp_path, modality="audio", mixture=MixtureSpec(0, 1))
        run = TrainRun(config, vocab, weak, strong, manifest.records[:4])
        try:
            before = parameter_digest(run.model.symbolic)
            audio_before = parameter_digest(run.model.audio)
            run.run_combined()
            assert parameter_digest(run.model.symbolic) == before
            assert parameter_digest(run.model.audio) != audio_before
        finally:
            run.close()


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(modality="video")
        with pytest.raises(ValueError):
            TrainConfig(precision="half")

    def test_from_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({
            "strategy": "pt_ft", "batch_size": 8, "mixture": [7, 3],
            "steps": 5, "run_dir": str(tmp_path / "run"),
        }))
        config = TrainConfig.from_json(path)
        assert config.strategy == "pt_ft"
        assert config.mixture == MixtureSpec(7, 3)
        assert config.lr == 5e-5
        assert config.weight_decay == 0.2

    def test_paper_defaults(self):
        config = TrainConfig()
        assert config.lr == 5e-5
        assert config.weight_decay == 0.2
        assert config.batch_size == 64
        assert config.mixture == MixtureSpec(7.0, 3.0)
