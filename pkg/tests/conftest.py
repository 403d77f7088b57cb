import pytest

from shiftadapt import data, model


def make_scenario(
    seed=7,
    n_source=600,
    n_target=600,
    n_calib=100,
    target_prior=0.9,
    shift=-1.0,
    noise=1.0,
    dim=8,
):
    """Small shifted-domain scenario: separable source, target means offset by
    `shift` per coordinate, label shift 0.5 -> target_prior."""
    cfg = data.SynthConfig(
        n_source=n_source,
        n_target=n_target,
        source_prior=0.5,
        target_prior=target_prior,
        class_means_source=([-1.0] * dim, [1.0] * dim),
        class_means_target=([-1.0 + shift] * dim, [1.0 + shift] * dim),
        noise_scale=noise,
        seed=seed,
    )
    source, target = data.gen_synthetic(cfg)
    calib = data.Dataset(target.examples[:n_calib], "target", "calib")
    pool = data.Dataset(target.examples[n_calib:], "target", "pool")
    return source, pool, calib


@pytest.fixture(scope="session")
def small_scenario():
    return make_scenario()


@pytest.fixture(scope="session")
def small_pretrained(small_scenario):
    """Source splits plus a model pretrained on them (hash_dim 1024 for speed)."""
    source, pool, calib = small_scenario
    train, val, test = data.split(source, (0.7, 0.1, 0.2), seed=0)
    params = model.init(1024, 16, 16, seed=0)
    trained = model.pretrain(params, train, val, model.TrainConfig(max_epochs=5, seed=0))
    return {
        "train": train,
        "val": val,
        "test": test,
        "pool": pool,
        "calib": calib,
        "params": trained,
    }


def ba_on(params, dataset):
    from shiftadapt.data import featurize_dataset
    from shiftadapt.metrics import balanced_accuracy, confusion

    feats = featurize_dataset(dataset, params.hash_dim)
    preds = model.predict(params, feats)
    return balanced_accuracy(confusion(preds, [ex.label for ex in dataset.examples]))
