import numpy as np
import pytest
from sklearn.base import clone

from facesynth import FaceTranslator
from facesynth.data import generate_toy_dataset, load_batch
from facesynth.errors import ValidationError


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    root = tmp_path_factory.mktemp("estimator")
    manifest = generate_toy_dataset(root / "data", 32, num_attributes=4,
                                    image_size=16, seed=41)
    est = FaceTranslator(image_size=16, base_channels=4, downsample_factor=4,
                         num_residual_blocks=2, batch_size=8, total_epochs=2,
                         decay_start_epoch=1, seed=5)
    est.fit(manifest, output_dir=root / "run")
    return est, manifest


def test_get_set_params_and_clone():
    est = FaceTranslator(image_size=16, base_channels=4, seed=9)
    params = est.get_params()
    assert params["image_size"] == 16 and params["seed"] == 9
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(seed=10)
    assert est.seed == 10


def test_fit_exposes_artifacts(fitted):
    est, manifest = fitted
    assert est.checkpoint_path_.exists()
    assert est.vocabulary_ == list(manifest.vocabulary)
    assert (est.output_dir_ / "metrics.jsonl").exists()


def test_transform_shape_and_range(fitted):
    est, manifest = fitted
    x, s, _ = load_batch(manifest, range(4), 16)
    out = est.transform(x, s, "happy")
    assert out.shape == (4, 3, 16, 16)
    assert out.min() >= -1.0 and out.max() <= 1.0
    images, sides = est.translate(x, s, ["happy", "sad", "neutral", "surprised"])
    assert images.shape == sides.shape == (4, 3, 16, 16)


def test_attribute_matrix_and_names_agree(fitted):
    est, manifest = fitted
    x, s, _ = load_batch(manifest, range(2), 16)
    by_name = est.transform(x, s, "sad")
    matrix = np.tile(np.array([[0, 0, 1, 0]], dtype=np.float32), (2, 1))
    by_matrix = est.transform(x, s, matrix)
    np.testing.assert_array_equal(by_name, by_matrix)


def test_transform_validation(fitted):
    est, manifest = fitted
    x, s, _ = load_batch(manifest, range(2), 16)
    with pytest.raises(ValidationError):
        est.transform(x, s[:1], "happy")
    with pytest.raises(ValidationError):
        est.transform(x, s, np.ones((2, 7), dtype=np.float32))
    with pytest.raises(ValidationError):
        est.transform(x[:, :2], s, "happy")


def test_unfitted_transform_raises():
    from sklearn.exceptions import NotFittedError
    est = FaceTranslator(image_size=16, base_channels=4)
    with pytest.raises(NotFittedError):
        est.transform(np.zeros((1, 3, 16, 16), np.float32),
                      np.zeros((1, 3, 16, 16), np.float32), [[1, 0, 0, 0]])


def test_from_checkpoint_reproduces_transform(fitted):
    est, manifest = fitted
    x, s, _ = load_batch(manifest, range(2), 16)
    reloaded = FaceTranslator.from_checkpoint(est.checkpoint_path_)
    np.testing.assert_array_equal(reloaded.transform(x, s, "happy"),
                                  est.transform(x, s, "happy"))
    assert reloaded.get_params()["image_size"] == 16
