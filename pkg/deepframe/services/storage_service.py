"""
Ecriture des artefacts : fichier temporaire dans le repertoire cible
puis renommage, pour ne jamais laisser de fichier partiel.
"""

import csv
import io
import logging
import os
import tempfile
from pathlib import Path

from deepframe.exceptions import DataError

logger = logging.getLogger(__name__)


class StorageService:
    """Ecritures atomiques des fichiers produits."""

    @staticmethod
    def write_atomic(path, contenu: bytes) -> None:
        """Ecrit contenu dans path via un fichier temporaire + os.replace."""
        cible = Path(path)
        try:
            cible.parent.mkdir(parents=True, exist_ok=True)
            fd, temporaire = tempfile.mkstemp(dir=str(cible.parent), prefix=f".{cible.name}.")
            try:
                with os.fdopen(fd, "wb") as f:
                    f.write(contenu)
                os.replace(temporaire, cible)
            except BaseException:
                if os.path.exists(temporaire):
                    os.unlink(temporaire)
                raise
        except OSError as e:
            logger.error(f"Ecriture impossible '{cible}' : {e}")
            raise DataError(f"Ecriture impossible '{cible}' : {e}")
        logger.debug(f"Fichier ecrit : {cible} ({len(contenu)} octets)")

    @staticmethod
    def write_text(path, texte: str) -> None:
        StorageService.write_atomic(path, texte.encode("utf-8"))

    @staticmethod
    def write_csv(path, entete: list, lignes: list) -> None:
        """CSV avec ligne d'entete, fin de ligne '\\n'."""
        tampon = io.StringIO()
        writer = csv.writer(tampon, lineterminator="\n")
        writer.writerow(entete)
        writer.writerows(lignes)
        StorageService.write_text(path, tampon.getvalue())

    @staticmethod
    def read_bytes(path) -> bytes:
        try:
            with open(path, "rb") as f:
                return f.read()
        except OSError as e:
            logger.error(f"Lecture impossible '{path}' : {e}")
            raise DataError(f"Lecture impossible '{path}' : {e}")
