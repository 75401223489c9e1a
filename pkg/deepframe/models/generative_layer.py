"""
Couche generative au-dessus d'un banc de base : produit d'experts
h(sum_{k,x} w^(j)_{k,x} [F_k*I](y+x) + b_j) sur toutes les positions y.
"""

from dataclasses import dataclass, replace

import numpy as np

from deepframe.exceptions import GeometryError, UsageError
from deepframe.models.filter_bank import Activation, ConvLayer, FilterBank, Padding
from deepframe.models.frame_model import KIND_GENERATIVE, _poids, _verifier_geometrie


@dataclass(frozen=True)
class GenerativeLayer:
    """
    weights : [J][K][h][w], biases : [J]. Activation relu ; force_on
    remplace les detecteurs par des unites toujours actives.
    """

    base: FilterBank
    weights: np.ndarray
    biases: np.ndarray
    image_shape: tuple
    sigma_sq: float = 1.0
    padding: Padding = Padding.VALID
    force_on: bool = False
    mean_offset: float = 0.0

    kind = KIND_GENERATIVE

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise UsageError(f"sigma_sq doit etre > 0 (recu {self.sigma_sq})")
        forme = _verifier_geometrie(self.base, self.image_shape)
        poids = _poids(self.weights, "weights")
        biais = _poids(self.biases, "biases")
        if poids.ndim != 4 or poids.shape[0] < 1:
            raise GeometryError(f"Poids de couche {poids.shape}, attendu [J][K][h][w] avec J >= 1")
        if poids.shape[1] != self.base.n_filters:
            raise GeometryError(
                f"Poids sur {poids.shape[1]} cartes, banc de base a {self.base.n_filters}"
            )
        if biais.shape != (poids.shape[0],):
            raise GeometryError(f"{biais.shape} biais pour {poids.shape[0]} experts")
        object.__setattr__(self, "weights", poids)
        object.__setattr__(self, "biases", biais)
        object.__setattr__(self, "image_shape", forme)
        object.__setattr__(self, "sigma_sq", float(self.sigma_sq))
        object.__setattr__(self, "mean_offset", float(self.mean_offset))
        object.__setattr__(self, "padding", Padding.parse(self.padding))
        # la fenetre doit tenir dans la carte de base
        self.feature_bank().output_shape(forme[0], forme[1])

    @property
    def n_experts(self) -> int:
        return self.weights.shape[0]

    @property
    def window(self) -> tuple:
        return self.weights.shape[2], self.weights.shape[3]

    def top_layer(self) -> ConvLayer:
        activation = Activation.IDENTITY if self.force_on else Activation.RELU
        return ConvLayer(self.weights, self.biases, 1, self.padding, activation)

    def feature_bank(self) -> FilterBank:
        """Banc compose : couches de base puis la couche apprise."""
        return self.base.with_layers(self.base.layers + (self.top_layer(),))

    def base_shape(self) -> tuple:
        return self.base.output_shape(self.image_shape[0], self.image_shape[1])

    def detector_shape(self) -> tuple:
        return self.feature_bank().output_shape(self.image_shape[0], self.image_shape[1])

    def cotangent(self) -> np.ndarray:
        return np.ones(self.detector_shape())

    def stats_shape(self) -> tuple:
        return self.weights.shape

    def with_weights(self, weights, biases=None) -> "GenerativeLayer":
        return replace(self, weights=weights,
                       biases=self.biases if biases is None else biases)

    def with_base(self, base: FilterBank) -> "GenerativeLayer":
        return replace(self, base=base)

    def with_offset(self, mean_offset: float) -> "GenerativeLayer":
        return replace(self, mean_offset=mean_offset)

    def to_dict(self) -> dict:
        return {
            "kind": "generative",
            "weights": list(self.weights.shape),
            "sigma_sq": self.sigma_sq,
            "image_shape": list(self.image_shape),
            "padding": self.padding.name.lower(),
            "force_on": self.force_on,
            "mean_offset": self.mean_offset,
        }
