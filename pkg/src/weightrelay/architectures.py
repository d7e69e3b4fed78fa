"""Named network presets and their training settings."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .nn import Activation, Conv2D, Dense, Flatten, MaxPool2D, NetworkSpec, mlp


def mnist_mlp(hidden=500):
    return mlp([784, hidden, 10])


def lenet():
    """conv 20@5x5, pool, conv 50@5x5, pool, dense 800-500-10."""
    return NetworkSpec(
        (1, 28, 28),
        (
            Conv2D(1, 20, 5, 5),
            Activation("relu"),
            MaxPool2D(2, 2),
            Conv2D(20, 50, 5, 5),
            Activation("relu"),
            MaxPool2D(2, 2),
            Flatten(),
            Dense(800, 500),
            Activation("relu"),
            Dense(500, 10),
        ),
        "softmax-cross-entropy",
    )


def pima():
    return mlp([8, 512, 64, 1], dropouts={1: 0.6, 2: 0.4})


def breast_cancer():
    # The layer list as usually quoted (one 40-unit layer) has 13,145
    # parameters; a second 40-unit layer gives the stated 14,785.
    return mlp([9, 32, 40, 40, 64, 64, 64, 8, 4, 1], dropouts={1: 0.1, 3: 0.2, 4: 0.4, 5: 0.4, 6: 0.4})


def banknote():
    return mlp([4, 128, 64, 64, 1], dropouts={1: 0.7, 2: 0.5, 3: 0.5})


def adult():
    return mlp([14, 64, 32, 1], dropouts={1: 0.4, 2: 0.2})


def skin():
    return mlp([3, 64, 32, 1], dropouts={1: 0.4, 2: 0.2})


def credit():
    return mlp([30, 64, 32, 1], dropouts={1: 0.4, 2: 0.2})


@dataclass(frozen=True)
class Recipe:
    """Training settings that go with a preset."""

    network: str
    optimizer: str = "adam"
    lr: float = 0.0002
    batch_size: int = 128
    n_trainers: int = 20
    local_epochs: int = 1
    central_epochs: int = 1
    test_fraction: float = 0.2


PRESETS = {
    "mnist-mlp": mnist_mlp,
    "lenet": lenet,
    "pima": pima,
    "breast-cancer": breast_cancer,
    "banknote": banknote,
    "adult": adult,
    "skin": skin,
    "credit": credit,
}

RECIPES = {
    "pima": Recipe("pima", local_epochs=150, central_epochs=20),
    "breast-cancer": Recipe("breast-cancer", local_epochs=40, central_epochs=5),
    "banknote": Recipe("banknote", local_epochs=70, central_epochs=1, test_fraction=586 / 1372),
    "adult": Recipe("adult", local_epochs=14, central_epochs=120),
    "skin": Recipe("skin", local_epochs=10, central_epochs=20),
    "credit": Recipe("credit", local_epochs=10, central_epochs=30, test_fraction=0.1),
}


def preset(name: str) -> NetworkSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown network preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
