import numpy as np
import pytest
import torch

from tribind.audio import N_MELS
from tribind.losses import trimodal_loss
from tribind.midi import SEQ_LEN
from tribind.models import (
    AllPadWarning,
    ConfigDigestError,
    EncoderConfig,
    JointEmbedding,
    Modality,
    ShapeError,
    TriBindModel,
    config_digest,
    desk_config,
    load_checkpoint,
    load_encoder_weights,
    paper_config,
    parameter_digest,
    save_checkpoint,
)

N_FRAMES = 626


def random_batch(rng, n=3, text_len=12, n_real_tokens=24):
    mel = torch.tensor(rng.standard_normal((n, 1, N_MELS, N_FRAMES)), dtype=torch.float32)
    field_ids = torch.zeros(n, SEQ_LEN, 4, dtype=torch.long)
    token_mask = torch.ones(n, SEQ_LEN, dtype=torch.bool)
    for i in range(n):
        field_ids[i, :n_real_tokens, 0] = torch.tensor(rng.integers(1, 3, n_real_tokens))
        field_ids[i, :n_real_tokens, 1] = torch.tensor(rng.integers(1, 17, n_real_tokens))
        field_ids[i, :n_real_tokens, 2] = torch.tensor(rng.integers(1, 129, n_real_tokens))
        field_ids[i, :n_real_tokens, 3] = torch.tensor(rng.integers(1, 65, n_real_tokens))
        token_mask[i, :n_real_tokens] = False
    text_ids = torch.zeros(n, text_len, dtype=torch.long)
    text_mask = torch.ones(n, text_len, dtype=torch.bool)
    for i in range(n):
        real = int(rng.integers(2, text_len + 1))
        text_ids[i, :real] = torch.tensor(rng.integers(1, 250, real))
        text_mask[i, :real] = False
    return mel, field_ids, token_mask, text_ids, text_mask


class TestUnitNorm:
    def test_all_encoders_produce_unit_vectors(self, desk_model, rng):
        mel, fids, tmask, tids, xmask = random_batch(rng, n=8)
        with torch.no_grad():
            for z in (
                desk_model.forward_audio(mel),
                desk_model.forward_symbolic(fids, tmask),
                desk_model.forward_text(tids, xmask),
            ):
                norms = z.norm(dim=-1)
                assert (norms - 1.0).abs().max().item() <= 1e-5
                assert z.shape[1] == 512

    def test_single_item_paths(self, desk_model, rng, overfit_corpus):
        manifest, vocab, _ = overfit_corpus
        from tribind.features import FeaturePipeline

        pipeline = FeaturePipeline(vocab)
        record = manifest.records[0]
        mel, fids, mask = pipeline.eval_segments(record)[0]
        from tribind.audio import MelSpectrogram
        from tribind.midi import tokens_for_segment

        za = desk_model.encode_audio(MelSpectrogram(values=mel))
        notes, grid = pipeline.notes_and_grid(record)
        zs = desk_model.encode_symbolic(tokens_for_segment(notes, grid, 0.0))
        zt = desk_model.encode_text(pipeline.eval_text(record))
        for z, modality in ((za, Modality.AUDIO), (zs, Modality.SYMBOLIC),
                            (zt, Modality.TEXT)):
            assert z.modality == modality
            assert abs(np.linalg.norm(z.vector) - 1.0) <= 1e-5


class TestDeterminismAndMasks:
    def test_identical_inputs_identical_embeddings(self, desk_model, rng):
        mel, fids, tmask, tids, xmask = random_batch(rng)
        with torch.no_grad():
            a = desk_model.forward_audio(mel)
            b = desk_model.forward_audio(mel.clone())
        assert torch.equal(a, b)

    def test_symbolic_pad_content_invariance(self, desk_model, rng):
        _, fids, tmask, _, _ = random_batch(rng)
        scrambled = fids.clone()
        pad_region = tmask.unsqueeze(-1).expand_as(scrambled)
        noise = torch.tensor(rng.integers(0, 4, scrambled.shape), dtype=torch.long)
        scrambled[pad_region] = noise[pad_region]
        with torch.no_grad():
            a = desk_model.forward_symbolic(fids, tmask)
            b = desk_model.forward_symbolic(scrambled, tmask)
        assert (a - b).abs().max().item() <= 1e-6

    def test_text_pad_content_invariance(self, desk_model, rng):
        _, _, _, tids, xmask = random_batch(rng)
        scrambled = tids.clone()
        noise = torch.tensor(rng.integers(0, 250, scrambled.shape), dtype=torch.long)
        scrambled[xmask] = noise[xmask]
        with torch.no_grad():
            a = desk_model.forward_text(tids, xmask)
            b = desk_model.forward_text(scrambled, xmask)
        assert (a - b).abs().max().item() <= 1e-6

    def test_pooling_is_mean_of_real_hidden_states(self, desk_model, rng):
        _, fids, tmask, _, _ = random_batch(rng, n=2, n_real_tokens=10)
        with torch.no_grad():
            z, hidden = desk_model.symbolic(fids, tmask, return_hidden=True)
            pooled = hidden[0, :10].mean(dim=0)
            expected = desk_model.symbolic.trunk.projection(pooled)
            expected = expected / expected.norm()
        assert (z[0] - expected).abs().max().item() <= 1e-5

    def test_all_pad_sequence_warns_and_stays_unit(self, desk_model):
        fids = torch.zeros(1, SEQ_LEN, 4, dtype=torch.long)
        mask = torch.ones(1, SEQ_LEN, dtype=torch.bool)
        with pytest.warns(AllPadWarning):
            with torch.no_grad():
                z = desk_model.forward_symbolic(fids, mask)
        assert abs(z.norm().item() - 1.0) <= 1e-5


class TestArchitecture:
    def test_projections_are_modality_specific(self, rng):
        torch.manual_seed(0)
        model = TriBindModel(desk_config(256))
        model.eval()
        mel, fids, tmask, tids, xmask = random_batch(rng)
        with torch.no_grad():
            text_before = model.forward_text(tids, xmask)
            sym_before = model.forward_symbolic(fids, tmask)
            model.audio.projection.weight.add_(1.0)
            text_after = model.forward_text(tids, xmask)
            sym_after = model.forward_symbolic(fids, tmask)
        assert torch.equal(text_before, text_after)
        assert torch.equal(sym_before, sym_after)

    def test_every_parameter_gets_gradient(self, rng):
        torch.manual_seed(1)
        model = TriBindModel(desk_config(256))
        mel, fids, tmask, tids, xmask = random_batch(rng, n=4, text_len=77,
                                                     n_real_tokens=SEQ_LEN)
        za = model.forward_audio(mel)
        zs = model.forward_symbolic(fids, tmask)
        zt = model.forward_text(tids, xmask)
        loss = trimodal_loss(za @ zt.T, zs @ zt.T, model.temperature.tau)
        loss.backward()
        for name, p in model.named_parameters():
            assert p.grad is not None, f"no grad for {name}"
            assert p.grad.abs().max().item() > 0, f"zero grad for {name}"

    def test_audio_shape_error(self, desk_model):
        with pytest.raises(ShapeError):
            desk_model.forward_audio(torch.zeros(1, 1, 64, 626))

    def test_desk_parameter_count_below_10m(self):
        model = TriBindModel(desk_config(2000))
        total = sum(p.numel() for p in model.parameters())
        assert total < 10_000_000

    def test_audio_param_count_matches_analytic_formula(self):
        cfg = desk_config(2000)
        model = TriBindModel(cfg)
        a = cfg.audio
        half = a.stem_channels // 2
        expected = (
            1 * half * 9 + 2 * half
            + half * half * 9 + 2 * half
            + half * a.stem_channels * 9 + 2 * a.stem_channels
        )
        cin = a.stem_channels
        for i, (width, depth) in enumerate(zip(a.block_widths, a.blocks_per_stage)):
            for j in range(depth):
                stride = 2 if (i > 0 and j == 0) else 1
                expected += cin * width * 9 + 2 * width  # conv1 + bn1
                expected += width * width * 9 + 2 * width  # conv2 + bn2
                if stride == 2 or cin != width:
                    expected += cin * width + 2 * width  # shortcut conv + bn
                cin = width
        expected += a.block_widths[-1] * cfg.joint_dim + cfg.joint_dim
        actual = sum(p.numel() for p in model.audio.parameters())
        assert actual == expected

    def test_paper_config_dimensions(self):
        cfg = paper_config()
        assert cfg.text.layers == 12
        assert cfg.text.hidden_dim == 768
        assert cfg.symbolic.layers == 12
        assert cfg.symbolic.hidden_dim == 768
        assert cfg.joint_dim == 512
        assert config_digest(cfg) != config_digest(desk_config())

    def test_field_vocab_minimums_enforced(self):
        with pytest.raises(ValueError):
            EncoderConfig(field_vocab_sizes=(2, 17, 129, 65))


class TestJointEmbedding:
    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            JointEmbedding(vector=np.ones(512), modality=Modality.AUDIO)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ShapeError):
            JointEmbedding(vector=np.ones(128), modality=Modality.AUDIO)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        torch.manual_seed(5)
        model = TriBindModel(desk_config(128))
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, meta={"step": 7})
        loaded, meta = load_checkpoint(path)
        assert meta["step"] == 7
        assert parameter_digest(loaded) == parameter_digest(model)
        for k, v in model.state_dict().items():
            assert torch.equal(loaded.state_dict()[k], v)

    def test_digest_mismatch_rejected(self, tmp_path):
        torch.manual_seed(5)
        model = TriBindModel(desk_config(128))
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(ConfigDigestError):
            load_checkpoint(path, expected_config=desk_config(256))

    def test_corrupted_digest_rejected(self, tmp_path):
        torch.manual_seed(5)
        model = TriBindModel(desk_config(128))
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        payload = torch.load(path, weights_only=False)
        payload["config_digest"] = "0" * 16
        torch.save(payload, path)
        with pytest.raises(ConfigDigestError):
            load_checkpoint(path)

    def test_external_weights_load_into_one_encoder(self, tmp_path):
        torch.manual_seed(6)
        donor = TriBindModel(desk_config(128))
        torch.manual_seed(60)
        model = TriBindModel(desk_config(128))
        path = tmp_path / "text_encoder.pt"
        torch.save(donor.text.state_dict(), path)

        audio_before = parameter_digest(model.audio)
        load_encoder_weights(model, Modality.TEXT, path)
        assert parameter_digest(model.text) == parameter_digest(donor.text)
        assert parameter_digest(model.audio) == audio_before

    def test_external_weights_reject_shape_mismatch(self, tmp_path):
        donor = TriBindModel(desk_config(64))
        model = TriBindModel(desk_config(128))
        path = tmp_path / "text_encoder.pt"
        torch.save(donor.text.state_dict(), path)
        with pytest.raises(RuntimeError):
            load_encoder_weights(model, Modality.TEXT, path)
