"""
Elements partages par les sous-commandes : declaration des options
de run, resolution (defauts < --config < options) et repertoire de sortie.
"""

import argparse
import logging
from pathlib import Path

from deepframe.config import Config, OptionSpec, RunConfig, choice
from deepframe.exceptions import UsageError
from deepframe.services.storage_service import StorageService

logger = logging.getLogger(__name__)

RESOLVED_NAME = "resolved.cfg"


def threads_value(texte: str) -> str:
    """'auto' ou un entier >= 1, conserve sous forme texte."""
    texte = str(texte).strip().lower()
    if texte != "auto" and (not texte.isdigit() or int(texte) < 1):
        raise ValueError(f"'auto' ou entier >= 1 attendu, recu '{texte}'")
    return texte


def thread_count(valeur: str) -> int:
    if valeur == "auto":
        return Config.get_thread_count()
    return int(valeur)


def sampling_options() -> list:
    """Options de la dynamique de Langevin communes a l'apprentissage et a l'echantillonnage."""
    return [
        OptionSpec("chains", int, str(Config.DEFAULT_CHAINS), help="nombre de chaines paralleles"),
        OptionSpec("langevin-steps", int, str(Config.DEFAULT_LANGEVIN_STEPS),
                   help="pas de Langevin par iteration"),
        OptionSpec("step-size", float, repr(Config.DEFAULT_EPSILON), help="pas epsilon de Langevin"),
        OptionSpec("seed", int, str(Config.DEFAULT_SEED), help="graine maitresse"),
        OptionSpec("threads", threads_value, Config.THREADS, help="'auto' ou nombre de threads"),
    ]


def add_options(parser: argparse.ArgumentParser, options: list) -> None:
    """Declare une option --cle par OptionSpec, sans valeur par defaut argparse."""
    for option in options:
        aide = option.help
        if option.default is not None:
            aide = f"{aide} (defaut : {option.default})"
        parser.add_argument(f"--{option.key}", dest=option.key.replace("-", "_"), default=None, help=aide)
    parser.add_argument("--config", dest="config", default=None, help="fichier cle=valeur")


def resolve(args: argparse.Namespace, options: list) -> dict:
    flags = {o.key: getattr(args, o.key.replace("-", "_"), None) for o in options}
    return RunConfig(options).resolve(flags, args.config)


def prepare_out(valeurs: dict) -> Path:
    """Cree le repertoire de sortie et y ecrit resolved.cfg."""
    sortie = Path(valeurs["out"])
    try:
        sortie.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"Repertoire de sortie inutilisable '{sortie}' : {e}")
    StorageService.write_text(sortie / RESOLVED_NAME, RunConfig.to_text(valeurs))
    logger.info(f"Configuration resolue ecrite dans {sortie / RESOLVED_NAME}")
    return sortie


__all__ = [
    "OptionSpec", "RESOLVED_NAME", "add_options", "choice",
    "prepare_out", "resolve", "sampling_options", "thread_count", "threads_value",
]
