import json

import numpy as np
import pytest

from emomtl import data as data_mod
from emomtl.data import MixEntry, gen_synthetic, mix_corpora
from emomtl.models import load_model
from emomtl.optim import LrSchedule
from emomtl.trainer import TrainConfig, TrainLog, early_stop, train

D_IN = 6


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    man = gen_synthetic(root, n=60, d_in=D_IN, seed=0,
                        split_ratios=(0.7, 0.3, 0.0))
    return man


def small_cfg(**kw):
    base = dict(
        variant="multitask", d_in=D_IN, d_enc=8, mlp=(8, 6), d_att=4,
        batch_size=8, max_epochs=3, patience=10, seed=0,
        schedule=LrSchedule(kind="warmup_peak", peak_lr=1e-3, warmup_steps=50),
    )
    base.update(kw)
    return TrainConfig(**base)


class TestEarlyStop:
    def test_needs_more_than_patience_epochs(self):
        assert not early_stop([0.5, 0.5], patience=3)

    def test_flat_history_stops_after_patience(self):
        # best at epoch 0, then three stale epochs
        assert not early_stop([0.5, 0.5, 0.5], patience=3)
        assert early_stop([0.5, 0.5, 0.5, 0.5], patience=3)

    def test_improvement_resets_counter(self):
        assert not early_stop([0.5, 0.4, 0.4, 0.6, 0.6], patience=3)

    def test_tiny_improvement_counts_as_stale(self):
        assert early_stop([0.5, 0.5 + 1e-6, 0.5, 0.5], patience=3)


class TestPreconditions:
    def test_empty_manifest(self, corpus):
        with pytest.raises(ValueError, match="empty"):
            train(small_cfg(), data_mod.Manifest([]), corpus.subset("valid"))

    def test_baseline_c_needs_continuous_labels(self, corpus):
        disc_only = mix_corpora({"synth": corpus},
                                {"synth": MixEntry(use_cont=False)})
        with pytest.raises(ValueError, match="continuous"):
            train(small_cfg(variant="baseline_c"), disc_only, corpus.subset("valid"))

    def test_baseline_d_needs_discrete_labels(self, corpus):
        cont_only = mix_corpora({"synth": corpus},
                                {"synth": MixEntry(use_disc=False)})
        with pytest.raises(ValueError, match="discrete"):
            train(small_cfg(variant="baseline_d"), cont_only, corpus.subset("valid"))


class TestTraining:
    def test_loss_decreases_and_log_is_complete(self, corpus):
        model, log = train(small_cfg(max_epochs=6),
                           corpus.subset("train"), corpus.subset("valid"))
        assert len(log.rows) == 6
        assert log.rows[-1].loss_total < log.rows[0].loss_total
        assert 0 <= log.best_epoch < 6
        assert log.summary()["best_val_score"] == log.best_score

    def test_deterministic_given_seed(self, corpus):
        cfg = small_cfg(seed=4)
        m1, l1 = train(cfg, corpus.subset("train"), corpus.subset("valid"))
        m2, l2 = train(cfg, corpus.subset("train"), corpus.subset("valid"))
        for k, p in m1.params().items():
            assert np.array_equal(p, m2.params()[k]), k
        assert [r.val_score for r in l1.rows] == [r.val_score for r in l2.rows]

    def test_seed_changes_trajectory(self, corpus):
        m1, _ = train(small_cfg(seed=1), corpus.subset("train"), corpus.subset("valid"))
        m2, _ = train(small_cfg(seed=2), corpus.subset("train"), corpus.subset("valid"))
        assert any(not np.array_equal(p, m2.params()[k])
                   for k, p in m1.params().items())

    def test_beta_zero_freezes_discrete_head(self, corpus):
        cfg = small_cfg(beta=0.0, max_epochs=2)
        model, _ = train(cfg, corpus.subset("train"), corpus.subset("valid"))
        from emomtl.models import build
        from emomtl.numerics import Rng
        init = build(cfg.variant, cfg.model_dims(), Rng(cfg.seed).spawn("init"))
        # discrete head got zero gradient throughout, so it never moved
        assert np.array_equal(model.params()["disc_head/W"],
                              init.params()["disc_head/W"])
        assert not np.array_equal(model.params()["cont_head/W"],
                                  init.params()["cont_head/W"])

    def test_masked_family_never_updates_its_head(self, corpus):
        cont_only = mix_corpora({"synth": corpus}, {"synth": MixEntry(use_disc=False)})
        cfg = small_cfg(max_epochs=2)
        model, _ = train(cfg, cont_only, cont_only)
        from emomtl.models import build
        from emomtl.numerics import Rng
        init = build(cfg.variant, cfg.model_dims(), Rng(cfg.seed).spawn("init"))
        assert np.array_equal(model.params()["disc_head/W"],
                              init.params()["disc_head/W"])

    def test_early_stop_truncates_run(self, corpus):
        # zero lr: no parameter moves, score is flat, patience kicks in
        cfg = small_cfg(max_epochs=30, patience=2,
                        schedule=LrSchedule(kind="plateau_decay", peak_lr=0.0))
        _, log = train(cfg, corpus.subset("train"), corpus.subset("valid"))
        assert len(log.rows) == 3  # best at epoch 0, then 2 stale epochs


class TestArtifacts:
    def test_output_directory_contents(self, corpus, tmp_path):
        cfg = small_cfg(output_dir=str(tmp_path / "run"))
        model, log = train(cfg, corpus.subset("train"), corpus.subset("valid"))
        run = tmp_path / "run"
        assert (run / "best.emop").exists()
        assert (run / "trainlog.csv").exists()
        summary = json.loads((run / "summary.json").read_text())
        assert summary["best_epoch"] == log.best_epoch

    def test_checkpoint_restores_best_epoch_weights(self, corpus, tmp_path):
        cfg = small_cfg(output_dir=str(tmp_path / "run"), max_epochs=4)
        model, _ = train(cfg, corpus.subset("train"), corpus.subset("valid"))
        loaded = load_model(tmp_path / "run" / "best.emop")
        for k, p in model.params().items():
            assert np.array_equal(p, loaded.params()[k])

    def test_saved_checkpoint_bytes_deterministic(self, corpus, tmp_path):
        for tag in ("x", "y"):
            cfg = small_cfg(output_dir=str(tmp_path / tag))
            train(cfg, corpus.subset("train"), corpus.subset("valid"))
        assert (tmp_path / "x" / "best.emop").read_bytes() == \
            (tmp_path / "y" / "best.emop").read_bytes()

    def test_trainlog_csv_header(self, corpus, tmp_path):
        cfg = small_cfg(output_dir=str(tmp_path / "run"), max_epochs=1)
        train(cfg, corpus.subset("train"), corpus.subset("valid"))
        first = (tmp_path / "run" / "trainlog.csv").read_text().splitlines()[0]
        assert first == ",".join(TrainLog.CSV_HEADER)
