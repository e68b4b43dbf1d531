import json
import pytest
import torch

from cdsr.checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from cdsr.config import ConfigError, TrainConfig, load_config, parse_override
from cdsr.corpus import save_prepared
from cdsr.evaluator import build_eval_cases, evaluate
from cdsr.trainer import format_sweep, parse_grid, restore_model, split_report, sweep, train


def tiny(**kw):
    base = dict(dim=8, batch_size=16, epochs=2, dropout=0.1, eval_negatives=20, overrides_ok=True)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.dim, c.batch_size, c.dropout, c.lam, c.n_layers, c.n_blocks) == (256, 256, 0.3, 0.7, 1, 2)

    def test_lambda_one_requires_ablation(self):
        with pytest.raises(ConfigError):
            TrainConfig(lam=1.0).validate()
        TrainConfig(lam=1.0, variant="no_infomax").validate()

    def test_effective_variants(self):
        assert TrainConfig(variant="no_infomax").effective().lam == 1.0
        assert not TrainConfig(variant="no_infomax").effective().uses_infomax
        assert TrainConfig(variant="no_gnn").effective().n_layers == 0
        assert not TrainConfig(variant="cross_only").uses_single

    @pytest.mark.parametrize("bad", [dict(lam=-0.1), dict(n_layers=-1), dict(dropout=1.0), dict(variant="nope")])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()

    def test_off_grid_warns(self, caplog):
        TrainConfig(lr=0.5).validate()
        assert "outside the reference grid" in caplog.text

    def test_file_aliases_and_overrides(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("lambda = 0.5\nL = 2\nd = 16\n")
        c = load_config(p, dict([parse_override("epochs=3"), parse_override("variant=no_gnn")]))
        assert (c.lam, c.n_layers, c.dim, c.epochs, c.variant) == (0.5, 2, 16, 3, "no_gnn")
        with pytest.raises(ConfigError):
            load_config(p, {"bogus": 1})
        p.write_text("[table]\nx = 1\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_roundtrip(self):
        c = TrainConfig(lam=0.3, adam_betas=(0.8, 0.9))
        assert TrainConfig.from_dict(c.to_dict()) == c
        assert c.fingerprint() != TrainConfig().fingerprint()


def _ckpt():
    return Checkpoint(config=TrainConfig().to_dict(), state={"w": torch.arange(4.0)}, epoch=3, n_x=2, n_y=2, max_len=5)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        p = save_checkpoint(_ckpt(), tmp_path / "ck")
        back = load_checkpoint(p)
        assert back.epoch == 3 and torch.equal(back.state["w"], torch.arange(4.0))

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none")

    @pytest.mark.parametrize("damage", ["truncate_header", "truncate_payload", "flip", "magic"])
    def test_damage_detected(self, tmp_path, damage):
        p = save_checkpoint(_ckpt(), tmp_path / "ck")
        blob = bytearray(p.read_bytes())
        if damage == "truncate_header":
            blob = blob[:10]
        elif damage == "truncate_payload":
            blob = blob[:-5]
        elif damage == "flip":
            blob[-3] ^= 0xFF
        else:
            blob[:8] = b"NOTACKPT"
        p.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_version_mismatch(self, tmp_path):
        c = _ckpt()
        c.format_version = 7
        p = save_checkpoint(c, tmp_path / "ck")
        with pytest.raises(CheckpointVersionError, match="version 7"):
            load_checkpoint(p)


class TestTrain:
    def test_loss_decreases_and_logs(self, tmp_path, small_corpus):
        res = train(tiny(epochs=6, dim=16), small_corpus, tmp_path)
        losses = [r["loss_total"] for r in res.history]
        assert losses[-1] < losses[0]
        rows = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
        assert len(rows) == 6
        assert set(rows[0]) >= {"epoch", "loss_total", "loss_cross", "loss_single_x", "loss_disc_y",
                                "valid_mrr_x", "valid_mrr_y", "seconds"}
        ck = load_checkpoint(tmp_path / "ckpt-best")
        best = max(res.history, key=lambda r: (r["valid_mrr_x"] + r["valid_mrr_y"]) / 2)
        assert ck.epoch == best["epoch"]

    def test_reproducible(self, small_corpus):
        a = train(tiny(), small_corpus, valid_cases=[])
        b = train(tiny(), small_corpus, valid_cases=[])
        assert a.history[-1]["loss_total"] == b.history[-1]["loss_total"]
        for k in a.checkpoint.state:
            assert torch.equal(a.checkpoint.state[k], b.checkpoint.state[k])

    def test_no_infomax_freezes_discriminators(self, small_corpus):
        torch.manual_seed(0)
        res = train(tiny(variant="no_infomax"), small_corpus, valid_cases=[])
        assert all(r["loss_disc_x"] == 0 for r in res.history)
        torch.manual_seed(0)
        fresh = train(tiny(variant="no_infomax", epochs=0), small_corpus, valid_cases=[])
        assert torch.equal(res.checkpoint.state["disc_x"], fresh.checkpoint.state["disc_x"])

    def test_no_gnn_identity_tables(self, small_corpus):
        res = train(tiny(variant="no_gnn", epochs=1), small_corpus, valid_cases=[])
        gx, _, _ = res.model.item_tables()
        torch.testing.assert_close(gx[:-1], res.model.emb_x[:-1])

    def test_divergence_is_reported(self, small_corpus, monkeypatch):
        import cdsr.trainer as trainer_mod

        calls = {"n": 0}
        real = trainer_mod.total_loss

        def flaky(*args):
            calls["n"] += 1
            out = real(*args)
            return out * float("nan") if calls["n"] > 4 else out

        monkeypatch.setattr(trainer_mod, "total_loss", flaky)
        res = train(tiny(epochs=5, batch_size=len(small_corpus.train) // 2 + 1), small_corpus, valid_cases=[])
        assert res.diverged and res.checkpoint.diverged
        assert len(res.history) == 2 and res.checkpoint.epoch == 2
        for v in res.checkpoint.state.values():
            if v.is_floating_point():
                assert torch.isfinite(v).all()

    def test_restore_and_evaluate(self, tmp_path, small_corpus):
        save_prepared(small_corpus, tmp_path / "corpus")
        res = train(tiny(), small_corpus, tmp_path / "run")
        ck = load_checkpoint(tmp_path / "run" / "ckpt-best")
        direct = split_report(res, small_corpus, "test", 0)
        via_ckpt = evaluate(ck, "test", 0, small_corpus)
        assert direct.domains == via_ckpt.domains
        model = restore_model(ck, small_corpus)
        assert not model.training

    def test_restore_rejects_other_corpus(self, small_corpus):
        res = train(tiny(epochs=0), small_corpus, valid_cases=[])
        res.checkpoint.corpus_fingerprint = "deadbeef"
        small_corpus.fingerprint = small_corpus.fingerprint or "cafe"
        with pytest.raises(ValueError, match="fingerprint"):
            restore_model(res.checkpoint, small_corpus)

    def test_custom_valid_cases(self, small_corpus):
        cases = build_eval_cases(small_corpus.valid, small_corpus.vocab, small_corpus.interacted(), 1, 10)
        res = train(tiny(), small_corpus, valid_cases=cases)
        assert res.history[-1]["valid_mrr_x"] is not None


def test_parse_grid():
    assert parse_grid("lambda=0.1:0.9:0.1") == ("lam", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    assert parse_grid("L=0,1,2") == ("n_layers", [0, 1, 2])
    with pytest.raises(ValueError):
        parse_grid("lambda")


def test_sweep_records_failures(small_corpus, tmp_path):
    rows = sweep(tiny(epochs=1), {"lam": [0.5, 1.0], "dropout": [0.1, 2.0]}, small_corpus, "test", tmp_path)
    status = {(r["lam"], r["dropout"]): r["status"] for r in rows}
    assert status[(0.5, 0.1)] == "ok" and status[(1.0, 0.1)] == "ok"
    assert status[(0.5, 2.0)] == "failed"
    assert "mrr_x" in rows[0]
    assert "status" in format_sweep(rows)
