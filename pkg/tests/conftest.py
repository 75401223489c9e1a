"""
Fixtures partagees : pas de fichier de log ni de barre de progression
pendant les tests, petits bancs et images deterministes.
"""

import os
import sys

os.environ["DEEPFRAME_LOG_FILE"] = ""
os.environ["DEEPFRAME_PROGRESS"] = "0"
os.environ.setdefault("DEEPFRAME_THREADS", "1")

# Ajout du repertoire racine au PYTHONPATH
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from deepframe.models.filter_bank import ConvLayer, FilterBank
from deepframe.models.image import Image


def identity_bank(padding: str = "circular") -> FilterBank:
    """Banc a un filtre 1x1 de poids 1 : F(I) = I."""
    return FilterBank((ConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1), 1, padding, "identity"),))


def random_image(rng, height: int = 8, width: int = 8, channels: int = 1, scale: float = 0.5) -> Image:
    return Image(scale * rng.standard_normal((height, width, channels)))


def stripes(height: int = 16, width: int = 16, period: int = 4) -> Image:
    """Rayures verticales de periode period, valeurs dans [-0.5, 0.5]."""
    colonnes = 0.5 * np.cos(2 * np.pi * np.arange(width) / period)
    return Image(np.tile(colonnes, (height, 1)), 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bank_identity():
    return identity_bank()
