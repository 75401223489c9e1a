"""
Exceptions de l'application.
Chaque famille porte le code de sortie renvoye par la ligne de commande.
"""


class DeepFrameError(Exception):
    """Erreur de base du projet."""

    exit_code = 2


class UsageError(DeepFrameError, ValueError):
    """Argument, cle de configuration ou parametre invalide."""

    exit_code = 1


class DataError(DeepFrameError):
    """Fichier ou donnees d'entree inexploitables."""

    exit_code = 2


class GeometryError(DataError):
    """Dimensions incompatibles entre image, banc de filtres et modele."""


class ImageFormatError(DataError):
    """Format d'image, profondeur ou type de couleur non supporte."""


class BadMagicError(DataError):
    """Signature de conteneur binaire inattendue."""


class TruncatedPayloadError(DataError):
    """Conteneur binaire incomplet."""


class ChannelChainError(DataError):
    """Nombre de canaux incoherent entre deux couches successives."""


class OracleCapacityError(DataError):
    """Espace d'etats trop grand pour l'enumeration exacte."""


class InfeasibleTargetError(DataError):
    """Statistiques cibles hors de l'enveloppe convexe atteignable."""

    def __init__(self, message: str, gap: float = float("nan")):
        super().__init__(message)
        self.gap = gap


class DivergenceError(DeepFrameError):
    """
    Divergence numerique (valeurs non finies).
    Conserve le dernier modele valide pour la sauvegarde de secours.
    """

    exit_code = 3

    def __init__(self, message: str, last_model=None, iteration: int = -1):
        super().__init__(message)
        self.last_model = last_model
        self.iteration = iteration
