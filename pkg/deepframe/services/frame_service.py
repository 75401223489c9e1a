"""
Service des modeles FRAME : energie, score, gradient image et
statistiques regroupees. Accepte les trois types de modele
(non stationnaire, stationnaire, couche generative) via leur
banc de caracteristiques et leur cotangente.
"""

import logging
import math

import numpy as np

from deepframe.exceptions import GeometryError
from deepframe.models.filter_bank import FilterBank
from deepframe.models.frame_model import EnergyReport
from deepframe.models.image import Image
from deepframe.services.bank_service import BankService
from deepframe.services.image_service import ImageService

logger = logging.getLogger(__name__)


class FrameService:
    """Evaluations pures des modeles."""

    @staticmethod
    def _check_image(model, img: Image) -> None:
        if tuple(img.shape) != tuple(model.image_shape):
            raise GeometryError(f"Image {img.shape}, le modele attend {model.image_shape}")

    @staticmethod
    def _check_batch(model, x: np.ndarray) -> None:
        h, w, c = model.image_shape
        if x.ndim != 4 or x.shape[1:] != (c, h, w):
            raise GeometryError(f"Lot {x.shape}, le modele attend (N, {c}, {h}, {w})")

    # ---- Energie ----

    @staticmethod
    def feature_terms_batch(model, x: np.ndarray) -> np.ndarray:
        """sum_{k,x} w_{k,x} [F_k*I](x) pour chaque image du lot."""
        FrameService._check_batch(model, x)
        cartes = BankService.forward_batch(model.feature_bank(), x)
        cotangente = model.cotangent()
        return np.array([math.fsum((cotangente * c).ravel()) for c in cartes])

    @staticmethod
    def energy_batch(model, x: np.ndarray) -> np.ndarray:
        """U(I, w) de chaque image d'un lot (N, C, H, W)."""
        caracteristiques = FrameService.feature_terms_batch(model, x)
        gaussien = np.array([math.fsum(np.square(i).ravel()) for i in x]) / (2.0 * model.sigma_sq)
        return gaussien - caracteristiques

    @staticmethod
    def energy(model, img: Image) -> EnergyReport:
        """U(I, w) = ||I||^2 / (2 sigma^2) - sum_{k,x} w_{k,x} [F_k*I](x)."""
        FrameService._check_image(model, img)
        caracteristique = FrameService.feature_terms_batch(model, img.to_chw()[None])[0]
        gaussien = ImageService.image_norm_sq(img) / (2.0 * model.sigma_sq)
        return EnergyReport.build(float(caracteristique), gaussien)

    @staticmethod
    def grad_energy_image_batch(model, x: np.ndarray) -> np.ndarray:
        FrameService._check_batch(model, x)
        cotangente = model.cotangent()
        cotangente = np.ascontiguousarray(np.broadcast_to(cotangente, (x.shape[0],) + cotangente.shape))
        retro = BankService.backward_image_batch(model.feature_bank(), x, cotangente)
        return x / model.sigma_sq - retro

    @staticmethod
    def grad_energy_image(model, img: Image) -> Image:
        """dU/dI : retropropagation de la cotangente plus I / sigma^2."""
        FrameService._check_image(model, img)
        gradient = FrameService.grad_energy_image_batch(model, img.to_chw()[None])[0]
        return Image.from_chw(gradient, img.mean_offset)

    # ---- Scores ----

    @staticmethod
    def log_score(model, img: Image) -> float:
        """
        Score non normalise log(p/q) + log Z(w) = <w, F(I)>.
        Ne depend pas de sigma^2.
        """
        FrameService._check_image(model, img)
        return float(FrameService.feature_terms_batch(model, img.to_chw()[None])[0])

    @staticmethod
    def detection_score(model, img: Image, log_z: float, threshold: float = 0.0) -> float:
        """Score de detection rectifie : max(0, score - log Z - seuil)."""
        return max(0.0, FrameService.log_score(model, img) - log_z - threshold)

    # ---- Statistiques ----

    @staticmethod
    def pooled_stats_batch(bank: FilterBank, x: np.ndarray) -> np.ndarray:
        """(N, K) : moyenne spatiale de chaque carte, sommation exacte."""
        cartes = BankService.forward_batch(bank, x)
        aire = cartes.shape[2] * cartes.shape[3]
        n, k = cartes.shape[0], cartes.shape[1]
        stats = np.zeros((n, k))
        for i in range(n):
            for j in range(k):
                stats[i, j] = math.fsum(cartes[i, j].ravel()) / aire
        return stats

    @staticmethod
    def pooled_stats(model, img: Image) -> np.ndarray:
        """(1/|D'|) sum_x [F_k*I](x) pour chaque filtre k."""
        FrameService._check_image(model, img)
        return FrameService.pooled_stats_batch(model.feature_bank(), img.to_chw()[None])[0]
