"""
Configuration centrale de l'application.
Charge les variables depuis .env et fournit la configuration
de run au format cle=valeur (fichier --config et resolved.cfg).
"""

import os
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import psutil
from dotenv import load_dotenv

from deepframe.exceptions import UsageError

# Chargement du fichier .env
load_dotenv()

logger = logging.getLogger(__name__)


class Config:
    """Configuration principale de l'application."""

    # ---- Repertoires ----
    BASE_DIR = Path(__file__).parent.parent
    LOGS_DIR = BASE_DIR / "logs"

    # ---- Logs ----
    LOG_LEVEL = os.getenv("DEEPFRAME_LOG_LEVEL", "INFO")
    _log_path = os.getenv("DEEPFRAME_LOG_FILE", str(LOGS_DIR / "deepframe.log"))
    LOG_FILE = str(BASE_DIR / _log_path) if _log_path else ""

    # ---- Execution ----
    THREADS = os.getenv("DEEPFRAME_THREADS", "auto")
    SHOW_PROGRESS = os.getenv("DEEPFRAME_PROGRESS", "1") == "1"

    # ---- Valeurs par defaut de l'echantillonnage ----
    DEFAULT_EPSILON = float(os.getenv("DEEPFRAME_EPSILON", 0.01))
    DEFAULT_SIGMA_SQ = float(os.getenv("DEEPFRAME_SIGMA_SQ", 1.0))
    DEFAULT_CHAINS = int(os.getenv("DEEPFRAME_CHAINS", 16))
    DEFAULT_LANGEVIN_STEPS = int(os.getenv("DEEPFRAME_LANGEVIN_STEPS", 100))
    DEFAULT_SEED = int(os.getenv("DEEPFRAME_SEED", 0))

    @staticmethod
    def get_thread_count() -> int:
        """
        Nombre de threads de travail.
        'auto' utilise le nombre de coeurs detectes par psutil.
        """
        valeur = Config.THREADS
        if valeur and valeur.lower() != "auto":
            return max(1, int(valeur))
        detectes = psutil.cpu_count(logical=True) or 1
        logger.debug(f"Threads detectes via psutil : {detectes}")
        return detectes

    @staticmethod
    def validate() -> None:
        """
        Verifie les parametres d'environnement et cree le repertoire
        du fichier de log. Leve une exception si la configuration est invalide.
        """
        erreurs = []

        if Config.DEFAULT_EPSILON < 0:
            erreurs.append("DEEPFRAME_EPSILON negatif")
        if Config.DEFAULT_SIGMA_SQ <= 0:
            erreurs.append("DEEPFRAME_SIGMA_SQ doit etre > 0")
        if Config.DEFAULT_CHAINS < 1:
            erreurs.append("DEEPFRAME_CHAINS doit etre >= 1")
        if Config.DEFAULT_LANGEVIN_STEPS < 0:
            erreurs.append("DEEPFRAME_LANGEVIN_STEPS negatif")
        if Config.THREADS.lower() != "auto" and not Config.THREADS.isdigit():
            erreurs.append("DEEPFRAME_THREADS doit valoir 'auto' ou un entier")

        if erreurs:
            raise ValueError(
                f"Configuration invalide : {', '.join(erreurs)}. "
                "Verifiez votre fichier .env"
            )

        if Config.LOG_FILE:
            Path(Config.LOG_FILE).parent.mkdir(parents=True, exist_ok=True)

        logger.debug("Configuration validee avec succes")

    @staticmethod
    def setup_logging() -> None:
        """Configure le systeme de logging de l'application."""
        niveau = getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO)
        handlers = [logging.StreamHandler()]

        if Config.LOG_FILE:
            handlers.insert(0, logging.FileHandler(Config.LOG_FILE))

        logging.basicConfig(
            level=niveau,
            format="%(asctime)s [%(levelname)s] %(name)s : %(message)s",
            handlers=handlers,
        )


# ---- Configuration de run (cle=valeur) ----

def parse_int_list(texte: str) -> list:
    """'1,2,4' -> [1, 2, 4]"""
    return [int(v) for v in str(texte).split(",") if v.strip()]


def parse_float_list(texte: str) -> list:
    """'1,1.5' -> [1.0, 1.5]"""
    return [float(v) for v in str(texte).split(",") if v.strip()]


def parse_bool(texte: str) -> bool:
    valeur = str(texte).strip().lower()
    if valeur in ("1", "true", "yes", "oui", "on"):
        return True
    if valeur in ("0", "false", "no", "non", "off"):
        return False
    raise ValueError(f"booleen attendu, recu '{texte}'")


def choice(*valeurs: str) -> Callable[[str], str]:
    """Convertisseur limitant la valeur a un ensemble fini."""
    def _convertir(texte: str) -> str:
        if texte not in valeurs:
            raise ValueError(f"valeur '{texte}' hors de {{{', '.join(valeurs)}}}")
        return texte
    return _convertir


def format_value(valeur: Any) -> str:
    """Forme canonique d'une valeur dans resolved.cfg."""
    if isinstance(valeur, bool):
        return "1" if valeur else "0"
    if isinstance(valeur, float):
        return repr(valeur)
    if isinstance(valeur, (list, tuple)):
        return ",".join(format_value(v) for v in valeur)
    return str(valeur)


@dataclass(frozen=True)
class OptionSpec:
    """Description d'une cle de configuration de run."""

    key: str
    convert: Callable[[str], Any]
    default: Optional[str] = None
    required: bool = False
    help: str = ""


class RunConfig:
    """
    Configuration de run : valeurs par defaut < fichier --config < options.
    Les cles inconnues sont refusees, les cles obligatoires verifiees.
    """

    def __init__(self, options: list):
        self.options = {o.key: o for o in options}

    @staticmethod
    def normalize_key(cle: str) -> str:
        return cle.strip().replace("_", "-")

    @staticmethod
    def parse_text(texte: str, source: str = "<config>") -> dict:
        """
        Lit un texte cle=valeur (une paire par ligne, commentaires '#').
        """
        valeurs = {}
        for numero, ligne in enumerate(texte.splitlines(), start=1):
            ligne = ligne.split("#", 1)[0].strip()
            if not ligne:
                continue
            if "=" not in ligne:
                raise UsageError(f"{source}:{numero} : ligne sans '=' : '{ligne}'")
            cle, valeur = ligne.split("=", 1)
            valeurs[RunConfig.normalize_key(cle)] = valeur.strip()
        return valeurs

    @staticmethod
    def load_file(path: str) -> dict:
        try:
            with open(path, "r") as f:
                return RunConfig.parse_text(f.read(), source=path)
        except OSError as e:
            raise UsageError(f"Fichier de configuration illisible '{path}' : {e}")

    def resolve(self, flags: dict, config_path: Optional[str] = None) -> dict:
        """
        Fusionne defauts, fichier et options explicites (les options gagnent).
        Retourne le dictionnaire des valeurs converties.
        """
        brutes = {k: o.default for k, o in self.options.items() if o.default is not None}

        if config_path:
            for cle, valeur in RunConfig.load_file(config_path).items():
                if cle not in self.options:
                    raise UsageError(f"Cle inconnue '{cle}' dans {config_path}")
                brutes[cle] = valeur

        for cle, valeur in flags.items():
            cle = RunConfig.normalize_key(cle)
            if cle not in self.options:
                raise UsageError(f"Option inconnue '{cle}'")
            if valeur is not None:
                brutes[cle] = valeur

        manquantes = [k for k, o in self.options.items() if o.required and k not in brutes]
        if manquantes:
            raise UsageError(f"Cles obligatoires manquantes : {', '.join(sorted(manquantes))}")

        resolues = {}
        for cle, valeur in brutes.items():
            try:
                resolues[cle] = self.options[cle].convert(valeur)
            except (TypeError, ValueError) as e:
                raise UsageError(f"Valeur invalide pour '{cle}' : {e}")
        return resolues

    @staticmethod
    def to_text(valeurs: dict) -> str:
        """Serialise la configuration resolue (cles triees)."""
        lignes = ["# configuration resolue deepframe"]
        for cle in sorted(valeurs):
            lignes.append(f"{cle}={format_value(valeurs[cle])}")
        return "\n".join(lignes) + "\n"
