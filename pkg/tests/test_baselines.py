import numpy as np
import pytest

from srnnkit.baselines import (
    fit_knn,
    kmeans_predict_batch,
    knn_predict,
    knn_predict_batch,
    train_kmeans_classifier,
)
from srnnkit.data import Component, Dataset, MixtureSpec, gen_mixture
from srnnkit.srnn import SrnnModel, assign, predict


def blobs(seed=0, n_per=50):
    return gen_mixture(MixtureSpec(components=(
        Component(mean=(0.0, 0.0), std=0.3, count=n_per, label=0),
        Component(mean=(7.0, 0.0), std=0.3, count=n_per, label=1),
    ), seed=seed))


class TestKmeansClassifier:
    def test_separable_blobs_zero_train_error(self):
        ds = blobs()
        clf = train_kmeans_classifier(ds, ds, k=2, seed=1)
        pred = kmeans_predict_batch(clf, ds.features)
        assert np.mean(pred != ds.labels) == 0.0

    def test_k1_is_global_mode(self):
        ds = Dataset(features=np.random.default_rng(0).normal(size=(30, 2)),
                     labels=np.array([0] * 20 + [1] * 10), class_count=2)
        clf = train_kmeans_classifier(ds, ds, k=1, seed=0)
        assert clf.centroid_labels.tolist() == [0]

    def test_deterministic(self):
        ds = blobs(seed=3)
        a = train_kmeans_classifier(ds, ds, k=3, seed=7)
        b = train_kmeans_classifier(ds, ds, k=3, seed=7)
        assert np.array_equal(a.centroids, b.centroids)
        assert np.array_equal(a.centroid_labels, b.centroid_labels)

    def test_labels_from_separate_label_set(self):
        ds = blobs(seed=4)
        val = blobs(seed=5, n_per=10)
        clf = train_kmeans_classifier(ds, val, k=2, seed=0, label_source="validationset")
        assert clf.label_source == "validationset"
        pred = kmeans_predict_batch(clf, val.features)
        assert np.mean(pred != val.labels) == 0.0

    def test_assignment_agrees_with_prototype_assign(self):
        ds = blobs(seed=6)
        clf = train_kmeans_classifier(ds, ds, k=4, seed=2)
        a = assign(ds, clf.model)
        d = np.sqrt(((ds.features[:, None, :] - clf.centroids[None]) ** 2).sum(axis=2))
        assert np.array_equal(a.owner, np.argmin(d, axis=1))

    def test_k_exceeding_n(self):
        ds = blobs(n_per=2)
        with pytest.raises(ValueError):
            train_kmeans_classifier(ds, ds, k=10, seed=0)


class TestKnn:
    def test_k1_returns_stored_sample_label(self):
        ds = blobs(seed=7)
        model = fit_knn(ds, k=1)
        for i in (0, 13, 60):
            assert knn_predict(model, ds.features[i]) == ds.labels[i]

    def test_vote_majority(self):
        ds = Dataset(features=np.array([[0.0], [0.1], [0.2], [10.0]]),
                     labels=np.array([0, 0, 1, 1]), class_count=2)
        model = fit_knn(ds, k=3)
        assert knn_predict(model, np.array([0.05])) == 0

    def test_k_equals_n_is_global_mode(self):
        ds = Dataset(features=np.random.default_rng(1).normal(size=(9, 2)),
                     labels=np.array([0] * 5 + [1] * 4), class_count=2)
        model = fit_knn(ds, k=9)
        for x in np.random.default_rng(2).normal(size=(5, 2)) * 10:
            assert knn_predict(model, x) == 0

    def test_vote_tie_lowest_class(self):
        ds = Dataset(features=np.array([[0.0], [1.0], [2.0], [3.0]]),
                     labels=np.array([1, 1, 0, 0]), class_count=2)
        model = fit_knn(ds, k=4)
        assert knn_predict(model, np.array([1.5])) == 0

    def test_1nn_agrees_with_prototype_model_on_samples_as_centroids(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(25, 3))
        y = rng.integers(0, 3, 25)
        ds = Dataset(features=X, labels=y, class_count=3)
        knn = fit_knn(ds, k=1)
        proto = SrnnModel(centroids=X, centroid_labels=y, class_count=3)
        for x in rng.normal(size=(40, 3)):
            assert knn_predict(knn, x) == predict(proto, x)

    def test_batch_matches_single(self):
        ds = blobs(seed=8)
        model = fit_knn(ds, k=5)
        X = np.random.default_rng(4).normal(loc=(3.0, 0.0), size=(20, 2))
        batch = knn_predict_batch(model, X)
        assert batch.tolist() == [knn_predict(model, x) for x in X]

    def test_random_subset_variant(self):
        ds = blobs(seed=9, n_per=100)
        model = fit_knn(ds, k=1, subset_size=20, seed=5)
        assert model.points.shape[0] == 20
        again = fit_knn(ds, k=1, subset_size=20, seed=5)
        assert np.array_equal(model.points, again.points)
