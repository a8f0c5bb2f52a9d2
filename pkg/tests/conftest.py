"""Shared fixtures: a small synthetic dataset for unit tests and the
full-size dataset + trained model pool the acceptance tests evaluate."""

import time

import numpy as np
import pytest

from microid import data, model, synth, training

UNIT_SEED = 123
ACCEPT_EPOCHS = 14
ACCEPT_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def unit_config():
    return synth.SynthConfig(
        num_paths=2,
        clips_per_subject=6,
        frame_size=(48, 48),
        window=24,
        motion_span=9,
        seed=UNIT_SEED,
    )


@pytest.fixture(scope="session")
def unit_dataset(unit_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("unit-synth")
    manifest = synth.generate_dataset(unit_config, out)
    return out, manifest


@pytest.fixture(scope="session")
def unit_clips(unit_dataset, unit_config):
    _, manifest = unit_dataset
    clips = data.load_clips(manifest, window=unit_config.window)
    labels = np.array([c.subject_id for c in clips])
    return clips, labels


def tiny_model_config(num_classes, input_shape, seed=0):
    """Small but structurally complete dual-pathway config for fast tests."""
    return model.ModelConfig(
        num_classes=num_classes,
        input_shape=input_shape,
        alpha=4,
        beta=0.25,
        base_channels=8,
        stage_depths=(1, 1),
        seed=seed,
    )


@pytest.fixture(scope="session")
def accept_dataset(tmp_path_factory):
    """The default synthetic dataset the acceptance criteria run against."""
    out = tmp_path_factory.mktemp("accept-synth")
    config = synth.SynthConfig()
    manifest = synth.generate_dataset(config, out)
    train_m, test_m = data.split_dataset(manifest, 0.5, 0)
    train_clips = data.load_clips(train_m)
    test_clips = data.load_clips(test_m)
    y_train = np.array([c.subject_id for c in train_clips])
    y_test = np.array([c.subject_id for c in test_clips])
    return {
        "dir": out,
        "config": config,
        "manifest": manifest,
        "train_clips": train_clips,
        "test_clips": test_clips,
        "y_train": y_train,
        "y_test": y_test,
    }


@pytest.fixture(scope="session")
def model_pool(accept_dataset):
    """Five adam- and five adamw-trained models on the acceptance dataset.

    Shared by the learning, ensemble, and saliency criteria so each model is
    trained exactly once per session. Wall times are recorded per model.
    """
    ds = accept_dataset
    input_shape = ds["train_clips"][0].data.shape
    pool = {}
    for solver_name in ("adam", "adamw"):
        for seed in ACCEPT_SEEDS:
            cfg = model.ModelConfig(
                num_classes=ds["manifest"].num_subjects,
                input_shape=input_shape,
                alpha=4,
                beta=0.125,
                seed=training.derive_seed(seed, solver_name, "init"),
            )
            sol = training.SolverConfig(
                solver=solver_name,
                learning_rate=0.001,
                batch_size=16,
                epochs=ACCEPT_EPOCHS,
                seed=training.derive_seed(seed, solver_name, "solver"),
            )
            started = time.perf_counter()
            net, report = training.train_model(
                cfg, sol, ds["train_clips"], ds["y_train"],
                ds["test_clips"], ds["y_test"])
            pool[(solver_name, seed)] = {
                "net": net,
                "rank1": report.test_rank1,
                "seconds": time.perf_counter() - started,
            }
    return pool
