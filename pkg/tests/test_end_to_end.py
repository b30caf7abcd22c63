"""Properties of finished default-config runs. Reuses the cached runs from
conftest.py, so after the acceptance checks these cost almost nothing."""
import numpy as np
import pytest

from avid_acsm.evaluation import library_compactness
from avid_acsm.synthdata import generate
from avid_acsm.experiments import dataset_seed
from avid_acsm.trainer import embed_all

pytestmark = pytest.mark.slow
SEEDS = range(5)


def test_labels_agree_with_classes_after_100_epochs(runs):
    agreement = np.mean([runs(seed=s).history[99]["classifier_agreement"] for s in SEEDS])
    assert agreement > 0.7


def test_default_run_fits_time_budget(runs):
    assert max(runs(seed=s).seconds for s in SEEDS) < 300


def test_trained_libraries_are_compact(runs):
    for s in SEEDS:
        state = runs(seed=s).result.state
        for lib in (state.lib_a, state.lib_v):
            rec = library_compactness(lib)
            assert rec["within_cos"] - rec["cross_cos"] > 0
            assert np.all(lib.sizes() <= lib.capacity)


def test_paired_embeddings_are_closer_than_unpaired(runs):
    result = runs(seed=0).result
    cfg = result.state.cfg
    q_v, q_a = embed_all(result.state, generate(cfg.synthetic(), dataset_seed(cfg)).training_view())
    paired = np.mean(np.sum(q_v * q_a, axis=1))
    cross = float(q_v.sum(axis=0) @ q_a.sum(axis=0) - paired * len(q_v)) / (len(q_v) * (len(q_v) - 1))
    assert paired > cross


def test_acsm_faulty_rate_below_random_once_agreement_doubles_chance(runs):
    for s in SEEDS:
        acsm, rand = runs(seed=s).history, runs(mining="random", seed=s).history
        # epoch e mines with the labels refreshed at the end of epoch e-1
        for prev_a, prev_r, a, r in zip(acsm, rand, acsm[1:], rand[1:]):
            if prev_a["classifier_agreement"] > 0.2 and prev_r["classifier_agreement"] > 0.2:
                assert a["faulty_neg_rate"] < r["faulty_neg_rate"]


def test_default_k_sweep_fits_time_budget(runs):
    total = sum(runs(set_size=k, seed=s).seconds for k in (126, 252, 504, 1008) for s in range(3))
    assert total < 30 * 60
