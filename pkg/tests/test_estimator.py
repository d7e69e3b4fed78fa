import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import train_test_split

from weightrelay.estimator import RelayClassifier

from conftest import blobs


@pytest.fixture
def three_class():
    ds = blobs(400, 5, 3, 2)
    return train_test_split(ds.X, ds.y, test_size=0.25, random_state=0)


def test_fit_predict_multiclass(three_class):
    Xtr, Xte, ytr, yte = three_class
    clf = RelayClassifier(hidden_layer_sizes=(16,), n_trainers=4, central_epochs=15, learning_rate=0.05)
    clf.fit(Xtr, ytr)
    proba = clf.predict_proba(Xte)
    assert proba.shape == (len(Xte), 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.score(Xte, yte) > 0.6


def test_binary_string_labels_and_fnt():
    ds = blobs(200, 3, 2, 5)
    y = np.where(ds.y == 1, "yes", "no")
    clf = RelayClassifier(hidden_layer_sizes=(8,), n_trainers=3, topology="fnt", central_epochs=10, learning_rate=0.05)
    clf.fit(ds.X, y)
    assert set(clf.predict(ds.X)) <= {"yes", "no"}
    assert clf.predict_proba(ds.X).shape == (200, 2)


def test_deterministic_and_cloneable(three_class):
    Xtr, Xte, ytr, _ = three_class
    a = RelayClassifier(central_epochs=2, random_state=3, dropout=0.2).fit(Xtr, ytr)
    b = clone(a).fit(Xtr, ytr)
    assert np.array_equal(a.coefs_, b.coefs_)
    assert clone(a).get_params()["dropout"] == 0.2


def test_input_checks(three_class):
    Xtr, Xte, ytr, _ = three_class
    with pytest.raises(NotFittedError):
        RelayClassifier().predict(Xte)
    clf = RelayClassifier(central_epochs=1).fit(Xtr, ytr)
    with pytest.raises(ValueError):
        clf.predict(Xte[:, :2])
    with pytest.raises(ValueError):
        RelayClassifier().fit(Xtr, np.zeros(len(Xtr)))
    with pytest.raises(ValueError):
        RelayClassifier().fit(Xtr, np.linspace(0, 1, len(Xtr)))
