"""
Ligne de commande principale.
Initialise le logging, enregistre les sous-commandes et traduit
les exceptions du projet en codes de sortie.
"""

import argparse
import logging
import sys
from typing import Optional

from deepframe import FORMAT_VERSIONS, __version__
from deepframe.commands import COMMAND_MODULES
from deepframe.config import Config
from deepframe.exceptions import DeepFrameError, UsageError

logger = logging.getLogger(__name__)

PROG = "deepframe"


class DeepFrameArgumentParser(argparse.ArgumentParser):
    """Les erreurs d'analyse deviennent des UsageError (code 1) au lieu d'un exit 2."""

    def error(self, message: str):
        raise UsageError(f"{self.prog} : {message}")


def version_text() -> str:
    formats = ", ".join(sorted(FORMAT_VERSIONS))
    return f"{PROG} {__version__} ({formats})"


def create_parser() -> argparse.ArgumentParser:
    """Fabrique du parseur avec toutes les sous-commandes enregistrees."""
    parser = DeepFrameArgumentParser(
        prog=PROG,
        description="Modeles FRAME sur caracteristiques convolutionnelles : apprentissage et synthese",
    )
    parser.add_argument("--version", action="version", version=version_text())
    subparsers = parser.add_subparsers(dest="command")
    for module in COMMAND_MODULES:
        module.register(subparsers)
    return parser


def main(argv: Optional[list] = None) -> int:
    """Point d'entree : retourne le code de sortie."""
    argv = sys.argv[1:] if argv is None else list(argv)

    try:
        Config.validate()
    except ValueError as e:
        logger.error(str(e))
        return UsageError.exit_code
    Config.setup_logging()

    parser = create_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return UsageError.exit_code

    try:
        args = parser.parse_args(argv)
        handler = getattr(args, "handler", None)
        if handler is None:
            parser.print_usage(sys.stderr)
            return UsageError.exit_code
        return handler(args)
    except DeepFrameError as e:
        logger.error(f"{type(e).__name__} : {e}")
        print(f"erreur : {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        # --help et --version
        return e.code if isinstance(e.code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
