"""
Service de lecture/ecriture des images (PNG 8 bits, PGM binaire P5)
et normalisation des intensites.
"""

import io
import logging
import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from deepframe.exceptions import DataError, GeometryError, ImageFormatError
from deepframe.models.image import Image
from deepframe.services.storage_service import StorageService

logger = logging.getLogger(__name__)

# Politique de normalisation -> valeur soustraite apres division par 255
NORMALIZE_POLICIES = {"default": 0.5, "raw": 0.0}
EXTENSIONS = {".png": "PNG", ".pgm": "PPM"}


class ImageService:
    """Codec d'images et operations pixel."""

    @staticmethod
    def load_image(path, normalize: str = "default") -> Image:
        """
        Charge une image 8 bits niveaux de gris ou RVB.
        L'octet v devient v/255 - mean_offset.
        """
        if normalize not in NORMALIZE_POLICIES:
            raise DataError(f"Politique de normalisation inconnue : '{normalize}'")
        contenu = StorageService.read_bytes(path)

        try:
            with PILImage.open(io.BytesIO(contenu)) as pil:
                pil.load()
                format_fichier, mode = pil.format, pil.mode
                pixels = np.asarray(pil)
        except (UnidentifiedImageError, OSError, SyntaxError) as e:
            logger.error(f"Image illisible '{path}' : {e}")
            raise ImageFormatError(f"Image illisible '{path}' : {e}")

        if format_fichier not in ("PNG", "PPM"):
            raise ImageFormatError(f"Format {format_fichier} non supporte ('{path}')")
        if mode in ("1", "I", "I;16", "I;16B", "I;16L", "F"):
            raise ImageFormatError(f"Profondeur non supportee (mode {mode}) : '{path}'")
        if mode not in ("L", "RGB") or (format_fichier == "PPM" and mode != "L"):
            raise ImageFormatError(f"Type de couleur non supporte (mode {mode}) : '{path}'")
        if pixels.dtype != np.uint8:
            raise ImageFormatError(f"Profondeur non supportee ({pixels.dtype}) : '{path}'")

        decalage = NORMALIZE_POLICIES[normalize]
        donnees = pixels.astype(np.float64) / 255.0 - decalage
        image = Image(donnees, mean_offset=decalage, header=ImageService._pgm_header(contenu, pixels))
        logger.debug(f"Image chargee '{path}' : {image.to_dict()}")
        return image

    @staticmethod
    def _pgm_header(contenu: bytes, pixels: np.ndarray):
        """Entete P5 d'origine quand les octets suivants sont exactement les pixels."""
        brut = pixels.tobytes()
        if not contenu.startswith(b"P5") or len(contenu) <= len(brut) or not contenu.endswith(brut):
            return None
        return contenu[:len(contenu) - len(brut)]

    @staticmethod
    def load_images(paths, normalize: str = "default") -> list:
        """Charge une liste d'images de meme geometrie."""
        images = [ImageService.load_image(p, normalize) for p in paths]
        if not images:
            raise DataError("Aucune image a charger")
        formes = {img.shape for img in images}
        if len(formes) > 1:
            raise GeometryError(f"Images de geometries differentes : {sorted(formes)}")
        return images

    @staticmethod
    def list_image_files(source: str) -> list:
        """Repertoire (tous les .png/.pgm tries) ou liste separee par des virgules."""
        chemin = Path(source)
        if chemin.is_dir():
            fichiers = sorted(
                str(p) for p in chemin.iterdir() if p.suffix.lower() in EXTENSIONS
            )
        else:
            fichiers = [s.strip() for s in str(source).split(",") if s.strip()]
        if not fichiers:
            raise DataError(f"Aucune image trouvee dans '{source}'")
        return fichiers

    @staticmethod
    def to_bytes(img: Image) -> np.ndarray:
        """(x + mean_offset) * 255, arrondi pair, borne a [0, 255]."""
        valeurs = np.rint((img.data + img.mean_offset) * 255.0)
        return np.clip(valeurs, 0, 255).astype(np.uint8)

    @staticmethod
    def encode(img: Image, path) -> bytes:
        extension = Path(path).suffix.lower()
        if extension not in EXTENSIONS:
            raise DataError(f"Extension '{extension}' non supportee (PNG ou PGM)")
        octets = ImageService.to_bytes(img)
        if extension == ".pgm" and img.channels != 1:
            raise ImageFormatError("PGM reserve aux images en niveaux de gris")
        if extension == ".pgm" and img.header is not None:
            return img.header + octets.tobytes()
        if img.channels == 1:
            pil = PILImage.fromarray(octets[:, :, 0])
        else:
            pil = PILImage.fromarray(octets)
        tampon = io.BytesIO()
        pil.save(tampon, format=EXTENSIONS[extension])
        return tampon.getvalue()

    @staticmethod
    def save_image(img: Image, path) -> None:
        """Ecrit l'image en PNG ou PGM selon l'extension."""
        StorageService.write_atomic(path, ImageService.encode(img, path))
        logger.debug(f"Image ecrite '{path}'")

    @staticmethod
    def image_norm_sq(img: Image) -> float:
        """||I||^2, sommation exacte (independante de l'ordre des pixels)."""
        return math.fsum(np.square(img.data).ravel())

    @staticmethod
    def mosaic(images: list, columns: int = 4) -> Image:
        """Assemble des images en grille, separateurs d'un pixel a l'octet 0."""
        if not images:
            raise DataError("Mosaique vide")
        h, w, c = images[0].shape
        offset = images[0].mean_offset
        colonnes = max(1, min(columns, len(images)))
        lignes = math.ceil(len(images) / colonnes)
        grille = np.full(
            (lignes * (h + 1) - 1, colonnes * (w + 1) - 1, c), -offset, dtype=np.float64
        )
        for i, img in enumerate(images):
            r, q = divmod(i, colonnes)
            grille[r * (h + 1): r * (h + 1) + h, q * (w + 1): q * (w + 1) + w] = img.data
        return Image(grille, offset)

    @staticmethod
    def save_grid(images: list, path, columns: int = 4) -> None:
        ImageService.save_image(ImageService.mosaic(images, columns), path)
