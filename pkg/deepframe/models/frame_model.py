"""
Modeles FRAME : non stationnaire (poids par filtre et par position),
stationnaire (poids par filtre) et rapport d'energie.
"""

from dataclasses import dataclass, replace

import numpy as np

from deepframe.exceptions import GeometryError, UsageError
from deepframe.models.filter_bank import FilterBank

# Codes de type du format FRM1
KIND_NONSTATIONARY = 0
KIND_STATIONARY = 1
KIND_GENERATIVE = 2


def _poids(valeurs, nom: str = "w") -> np.ndarray:
    tableau = np.array(valeurs, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(tableau)):
        raise GeometryError(f"{nom} contient des valeurs non finies")
    tableau.flags.writeable = False
    return tableau


def _verifier_geometrie(bank: FilterBank, image_shape: tuple) -> tuple:
    if len(image_shape) != 3:
        raise GeometryError(f"Geometrie image {image_shape}, attendu (H, W, C)")
    h, w, c = (int(v) for v in image_shape)
    if c != bank.input_channels:
        raise GeometryError(f"Image a {c} canaux, banc a {bank.input_channels}")
    return h, w, c


@dataclass(frozen=True)
class NonStationaryFrame:
    """p(I; w) = exp(sum_{k,x} w_{k,x} [F_k*I](x)) q(I) / Z(w), q gaussien de variance sigma_sq."""

    bank: FilterBank
    w: np.ndarray
    sigma_sq: float
    image_shape: tuple
    mean_offset: float = 0.0

    kind = KIND_NONSTATIONARY

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise UsageError(f"sigma_sq doit etre > 0 (recu {self.sigma_sq})")
        forme = _verifier_geometrie(self.bank, self.image_shape)
        w = _poids(self.w)
        attendu = self.bank.output_shape(forme[0], forme[1])
        if w.shape != attendu:
            raise GeometryError(f"Poids {w.shape}, cartes du banc {attendu}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "image_shape", forme)
        object.__setattr__(self, "sigma_sq", float(self.sigma_sq))
        object.__setattr__(self, "mean_offset", float(self.mean_offset))

    @classmethod
    def zeros(cls, bank: FilterBank, image_shape: tuple, sigma_sq: float = 1.0, mean_offset: float = 0.0):
        h, w, _ = image_shape
        return cls(bank, np.zeros(bank.output_shape(h, w)), sigma_sq, image_shape, mean_offset)

    def feature_bank(self) -> FilterBank:
        return self.bank

    def cotangent(self) -> np.ndarray:
        """Poids appliques aux cartes dans le terme d'energie."""
        return self.w

    def stats_shape(self) -> tuple:
        return self.w.shape

    def with_weights(self, w) -> "NonStationaryFrame":
        return replace(self, w=w)

    def to_dict(self) -> dict:
        return {
            "kind": "nonstationary",
            "weights": list(self.w.shape),
            "sigma_sq": self.sigma_sq,
            "image_shape": list(self.image_shape),
            "mean_offset": self.mean_offset,
        }


@dataclass(frozen=True)
class StationaryFrame:
    """Modele de texture : w_k identique pour toutes les positions."""

    bank: FilterBank
    w: np.ndarray
    sigma_sq: float
    image_shape: tuple
    mean_offset: float = 0.0

    kind = KIND_STATIONARY

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise UsageError(f"sigma_sq doit etre > 0 (recu {self.sigma_sq})")
        forme = _verifier_geometrie(self.bank, self.image_shape)
        w = _poids(self.w)
        if w.shape != (self.bank.n_filters,):
            raise GeometryError(f"Poids {w.shape}, banc a {self.bank.n_filters} filtres")
        self.bank.output_shape(forme[0], forme[1])
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "image_shape", forme)
        object.__setattr__(self, "sigma_sq", float(self.sigma_sq))
        object.__setattr__(self, "mean_offset", float(self.mean_offset))

    @classmethod
    def zeros(cls, bank: FilterBank, image_shape: tuple, sigma_sq: float = 1.0, mean_offset: float = 0.0):
        return cls(bank, np.zeros(bank.n_filters), sigma_sq, image_shape, mean_offset)

    def feature_bank(self) -> FilterBank:
        return self.bank

    def map_shape(self) -> tuple:
        return self.bank.output_shape(self.image_shape[0], self.image_shape[1])

    def cotangent(self) -> np.ndarray:
        return np.ascontiguousarray(
            np.broadcast_to(self.w[:, None, None], self.map_shape())
        )

    def stats_shape(self) -> tuple:
        return self.w.shape

    def with_weights(self, w) -> "StationaryFrame":
        return replace(self, w=w)

    def to_dict(self) -> dict:
        return {
            "kind": "stationary",
            "weights": list(self.w.shape),
            "sigma_sq": self.sigma_sq,
            "image_shape": list(self.image_shape),
            "mean_offset": self.mean_offset,
        }


@dataclass(frozen=True)
class EnergyReport:
    """U(I, w) = gaussian_term - feature_term."""

    energy: float
    feature_term: float
    gaussian_term: float

    @classmethod
    def build(cls, feature_term: float, gaussian_term: float) -> "EnergyReport":
        return cls(gaussian_term - feature_term, feature_term, gaussian_term)

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "feature_term": self.feature_term,
            "gaussian_term": self.gaussian_term,
        }
