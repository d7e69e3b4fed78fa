"""scikit-learn front end: fit an MLP by simulating a weight-relay run."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import Dataset, partition
from .nn import forward, mlp, output_probabilities
from .protocol.simulate import SimConfig, simulate


class RelayClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier trained by ``n_trainers`` simulated data owners.

    The training rows are shuffled and dealt into equal shards, one per
    trainer, and the weights are relayed between trainers for
    ``central_epochs`` passes over the combined data.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
    activation : {"relu", "leaky_relu", "sigmoid", "tanh"}
    dropout : float
        Dropout rate after every hidden layer (0 disables it).
    n_trainers, topology, schedule, central_epochs, local_epochs, batch_size,
    learning_rate, optimizer, random_state
        Relay settings; see :class:`weightrelay.protocol.SimConfig`.
    """

    def __init__(
        self,
        hidden_layer_sizes=(64,),
        activation="relu",
        dropout=0.0,
        n_trainers=5,
        topology="snt",
        schedule="round-robin",
        central_epochs=10,
        local_epochs=1,
        batch_size=32,
        learning_rate=0.01,
        optimizer="sgd",
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.dropout = dropout
        self.n_trainers = n_trainers
        self.topology = topology
        self.schedule = schedule
        self.central_epochs = central_epochs
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        k = len(self.classes_)
        if k < 2:
            raise ValueError("need samples of at least two classes")
        hidden = list(self.hidden_layer_sizes)
        sizes = [X.shape[1], *hidden, 1 if k == 2 else k]
        drop = {i: self.dropout for i in range(1, len(hidden) + 1)} if self.dropout else None
        self.spec_ = mlp(sizes, self.activation, dropouts=drop)
        seed = 0 if self.random_state is None else int(self.random_state)
        train = Dataset(X, encoded, k)
        shards = partition(train, self.n_trainers, seed).shards(train)
        self.result_ = simulate(
            SimConfig(
                self.spec_,
                shards,
                topology=self.topology,
                schedule=self.schedule,
                central_epochs=self.central_epochs,
                local_epochs=self.local_epochs,
                batch_size=self.batch_size,
                lr=self.learning_rate,
                optimizer=self.optimizer,
                seed=seed,
                dropout=bool(self.dropout),
                monitor=False,
            )
        )
        self.coefs_ = self.result_.final
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        z, _ = forward(self.spec_, self.coefs_, X)
        p = output_probabilities(self.spec_, z)
        if p.shape[1] == 1:
            p = np.hstack([1.0 - p, p])
        return p

    def predict(self, X):
        check_is_fitted(self)
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
