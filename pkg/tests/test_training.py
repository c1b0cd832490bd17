"""Training loop: determinism, checkpoint rotation, resume equivalence."""

import os

import numpy as np
import pytest

from gki.checkpoint import load_checkpoint, save_checkpoint
from gki.errors import DataError, NumericError
from gki.gradcheck import grad_check
from gki.graphs import Vocabulary, build_graph
from gki.records import CohortSpec, synthesize_cohort
from gki.training import (
    CKPT_PATTERN,
    TrainConfig,
    TrainLog,
    batch_loss,
    init_model_params,
    prepare_inputs,
    pretrain,
    resume,
)

TINY = CohortSpec(max_visits=2, max_codes=2, max_drugs=1)


def tiny_graphs(seed, n, spec=TINY):
    records = synthesize_cohort(seed, n, spec)
    vocab = Vocabulary.from_records(records)
    return [build_graph(r, vocab) for r in records], vocab


def tiny_cfg(**kw):
    base = dict(seed=3, epochs=2, batch_size=4, n_layers=2, hidden=6,
                n_clusters=4, tau=0.5, head_hidden=5, head_out=4)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(DataError, match="epochs"):
            TrainConfig(epochs=-1)
        with pytest.raises(DataError, match="batch_size"):
            TrainConfig(batch_size=0)
        with pytest.raises(DataError, match="lr"):
            TrainConfig(lr=0.0)

    def test_defaults_match_production_column(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.lr) == (100, 128, 0.001)
        assert (cfg.n_layers, cfg.hidden, cfg.n_clusters, cfg.tau) == (2, 128, 512, 0.01)
        assert cfg.pinv_mode == "identity" and cfg.negatives_mode == "batch"


class TestModelAssembly:
    def test_param_groups_present(self):
        cfg = tiny_cfg()
        params = init_model_params(0, in_dim=9, cfg=cfg)
        names = set(params)
        assert {"enc.0.W", "enc.0.a", "enc.1.W", "enc.1.a"} <= names
        assert {"cent.0", "cent.1"} <= names
        assert params["enc.0.W"].data.shape == (9, 6)
        assert params["cent.0"].data.shape == (4, 6)
        assert params["head_node.0.W"].data.shape == (4, 5)
        # graph summaries concatenate all layers, so that head is wider
        assert params["head_graph.0.W"].data.shape == (8, 5)
        assert params["head_node.2.W"].data.shape == (5, 4)

    def test_prepare_inputs_rejects_mixed_vocabularies(self):
        graphs, _ = tiny_graphs(0, 3)
        other, _ = tiny_graphs(1, 1, CohortSpec(max_visits=1, max_codes=1, max_drugs=1))
        with pytest.raises(DataError, match="vocabulary"):
            prepare_inputs(graphs + other, tiny_cfg())
        with pytest.raises(DataError, match="at least one graph"):
            prepare_inputs([], tiny_cfg())

    def test_full_model_gradients_two_graph_batch(self):
        graphs, _ = tiny_graphs(11, 2)
        cfg = tiny_cfg(seed=11, hidden=3, n_clusters=2, head_hidden=3,
                       head_out=2, tau=0.5, pinv_mode="pinv")
        pairs = prepare_inputs(graphs, cfg)
        init = init_model_params(cfg.seed, pairs[0][0].shape[1], cfg)
        point = {k: v.data.copy() for k, v in init.items()}

        def f(params):
            return batch_loss(pairs, params, cfg)[0]

        report = grad_check(f, point)
        assert report.passed, str(report)


class TestPretrain:
    def test_zero_epochs_returns_init(self, tmp_path):
        graphs, _ = tiny_graphs(0, 4)
        ckpt = tmp_path / "final.gki"
        cfg = tiny_cfg(epochs=0, checkpoint_path=str(ckpt))
        result = pretrain(graphs, cfg)
        assert result.log.records == []
        assert result.epochs_done == 0
        init = init_model_params(cfg.seed, graphs[0].node_features.shape[1], cfg)
        for name, p in result.params.items():
            assert np.array_equal(p.data, init[name].data)
        # the final snapshot still lands so downstream stages can run
        assert ckpt.exists()
        assert load_checkpoint(ckpt).epoch == 0

    def test_same_seed_same_params(self):
        graphs, _ = tiny_graphs(1, 6)
        a = pretrain(graphs, tiny_cfg())
        b = pretrain(graphs, tiny_cfg())
        for name in a.params:
            assert np.allclose(a.params[name].data, b.params[name].data, atol=1e-10)
        assert [r.loss for r in a.log.records] == [r.loss for r in b.log.records]

    def test_different_seed_differs(self):
        graphs, _ = tiny_graphs(1, 6)
        a = pretrain(graphs, tiny_cfg(seed=1))
        b = pretrain(graphs, tiny_cfg(seed=2))
        assert any(not np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)

    def test_loss_moves_and_log_rows(self):
        graphs, _ = tiny_graphs(2, 8)
        cfg = tiny_cfg(epochs=5, batch_size=8, lr=0.01)
        result = pretrain(graphs, cfg)
        assert len(result.log.records) == 5
        assert result.log.records[-1].loss < result.log.records[0].loss
        for i, rec in enumerate(result.log.records):
            assert rec.epoch == i + 1
            assert rec.seconds >= 0.0
            # component identity: L = L_NG + L_GG + L_rec at unit weights
            assert rec.loss == pytest.approx(
                rec.loss_node_graph + rec.loss_graph_graph + rec.loss_recon, rel=1e-9)

    def test_log_csv_shape(self, tmp_path):
        graphs, _ = tiny_graphs(3, 4)
        log_path = tmp_path / "train.csv"
        cfg = tiny_cfg(epochs=3, log_path=str(log_path))
        result = pretrain(graphs, cfg)
        text = log_path.read_text()
        lines = text.strip().split("\n")
        assert lines[0] == TrainLog.CSV_HEADER == "epoch,L,L_NG,L_GG,L_rec,seconds"
        assert len(lines) == 4
        assert float(lines[1].split(",")[1]) == pytest.approx(result.log.records[0].loss)

    def test_self_only_mode_trains_and_first_epoch_recon_matches_batch(self):
        graphs, _ = tiny_graphs(4, 6)
        # one batch per epoch so both modes evaluate at the same init point
        a = pretrain(graphs, tiny_cfg(epochs=1, batch_size=8, negatives_mode="batch"))
        b = pretrain(graphs, tiny_cfg(epochs=1, batch_size=8, negatives_mode="self_only"))
        assert b.log.records[0].loss_recon == pytest.approx(
            a.log.records[0].loss_recon, rel=1e-9)
        assert b.log.records[0].loss_node_graph == pytest.approx(0.0, abs=1e-9)
        assert b.log.records[0].loss_graph_graph == pytest.approx(0.0, abs=1e-9)

    def test_checkpoint_rotation_keeps_last_two(self, tmp_path):
        graphs, _ = tiny_graphs(5, 4)
        ckpt = tmp_path / "run" / "final.gki"
        cfg = tiny_cfg(epochs=5, checkpoint_path=str(ckpt))
        pretrain(graphs, cfg)
        kept = sorted(p.name for p in (tmp_path / "run").glob("ckpt_ep*.gki"))
        assert kept == [CKPT_PATTERN.format(epoch=4), CKPT_PATTERN.format(epoch=5)]
        assert ckpt.exists()
        final = load_checkpoint(ckpt)
        assert final.epoch == 5
        assert final.step == 5  # one batch per epoch, 5 epochs

    def test_non_finite_loss_aborts_with_coordinates(self, tmp_path):
        graphs, _ = tiny_graphs(6, 3)
        cfg = tiny_cfg(epochs=1)
        params = init_model_params(cfg.seed, graphs[0].node_features.shape[1], cfg)
        params["enc.0.W"].data[0, 0] = np.nan
        path = tmp_path / "bad.gki"
        save_checkpoint(path, params, seed=cfg.seed, epoch=0, step=0, meta={
            "in_dim": graphs[0].node_features.shape[1], "hidden": cfg.hidden,
            "n_layers": cfg.n_layers, "n_clusters": cfg.n_clusters,
            "head_hidden": cfg.head_hidden, "head_out": cfg.head_out,
            "backbone": cfg.backbone})
        with pytest.raises(NumericError, match=r"epoch 1, batch 1"):
            resume(path, graphs, cfg)


class TestResume:
    def test_resume_with_no_further_epochs_is_identity(self, tmp_path):
        graphs, _ = tiny_graphs(7, 5)
        ckpt = tmp_path / "final.gki"
        cfg = tiny_cfg(epochs=3, checkpoint_path=str(ckpt))
        first = pretrain(graphs, cfg)
        again = resume(ckpt, graphs, cfg)
        assert again.log.records == []
        assert again.epochs_done == 3
        for name in first.params:
            assert np.array_equal(first.params[name].data, again.params[name].data)

    def test_split_run_equals_straight_run(self, tmp_path):
        graphs, _ = tiny_graphs(8, 6)
        ckpt = tmp_path / "part.gki"
        pretrain(graphs, tiny_cfg(epochs=3, checkpoint_path=str(ckpt)))
        split = resume(ckpt, graphs, tiny_cfg(epochs=6))
        straight = pretrain(graphs, tiny_cfg(epochs=6))
        assert split.epochs_done == straight.epochs_done == 6
        for name in straight.params:
            diff = np.abs(split.params[name].data - straight.params[name].data).max()
            assert diff < 1e-8, f"{name} drifted by {diff}"

    def test_resume_restores_optimizer_moments(self, tmp_path):
        graphs, _ = tiny_graphs(9, 4)
        ckpt = tmp_path / "m.gki"
        first = pretrain(graphs, tiny_cfg(epochs=2, checkpoint_path=str(ckpt)))
        cont = resume(ckpt, graphs, tiny_cfg(epochs=2))
        assert cont.adam.state.t == first.adam.state.t
        for name, m in first.adam.state.m.items():
            assert np.array_equal(m, cont.adam.state.m[name])

    def test_shape_mismatch_lists_fields(self, tmp_path):
        graphs, _ = tiny_graphs(10, 4)
        ckpt = tmp_path / "s.gki"
        pretrain(graphs, tiny_cfg(epochs=1, checkpoint_path=str(ckpt)))
        with pytest.raises(DataError) as err:
            resume(ckpt, graphs, tiny_cfg(epochs=2, hidden=7, n_clusters=3))
        assert "hidden" in str(err.value) and "n_clusters" in str(err.value)

    def test_resume_keeps_original_seed_for_shuffles(self, tmp_path):
        graphs, _ = tiny_graphs(12, 6)
        ckpt = tmp_path / "seed.gki"
        pretrain(graphs, tiny_cfg(seed=3, epochs=2, checkpoint_path=str(ckpt)))
        cont = resume(ckpt, graphs, tiny_cfg(seed=99, epochs=4))
        straight = pretrain(graphs, tiny_cfg(seed=3, epochs=4))
        for name in straight.params:
            assert np.allclose(cont.params[name].data, straight.params[name].data,
                               atol=1e-8)
