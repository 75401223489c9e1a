"""
Conteneurs binaires little-endian :

FBK1 (banc de filtres)
    "<4sI"          magic b"FBK1", nombre de couches
    par couche :
    "<BIIIIIBBII"   type (1 = convolution), K_out, K_in, h, w, stride,
                    code padding, code activation, fenetre pool, pas pool
    '<f4'           noyaux K_out*K_in*h*w (ligne par ligne), puis K_out biais

FRM1 (modele)
    "<4sBdd"        magic b"FRM1", type de modele (0, 1, 2), sigma^2,
                    decalage de normalisation des pixels
    "<III"          H, W, C de l'image
    tableaux        u32 ndim, u32 dims..., '<f8' valeurs
                    type 0/1 : w ; type 2 : weights, biases puis "<BB" (padding, force_on)
    banc            u8 mode (0 = FBK1 embarque, 1 = chemin), u32 longueur, octets
"""

import logging
import struct
from pathlib import Path

import numpy as np

from deepframe.exceptions import BadMagicError, DataError, TruncatedPayloadError
from deepframe.models.filter_bank import Activation, ConvLayer, FilterBank, Padding
from deepframe.models.frame_model import (
    KIND_GENERATIVE, KIND_NONSTATIONARY, KIND_STATIONARY,
    NonStationaryFrame, StationaryFrame,
)
from deepframe.models.generative_layer import GenerativeLayer
from deepframe.services.storage_service import StorageService

logger = logging.getLogger(__name__)

BANK_MAGIC = b"FBK1"
MODEL_MAGIC = b"FRM1"
LAYER_TYPE_CONV = 1

BANK_HEADER = struct.Struct("<4sI")
LAYER_HEADER = struct.Struct("<BIIIIIBBII")
MODEL_HEADER = struct.Struct("<4sBdd")
GEOMETRY = struct.Struct("<III")
GENERATIVE_FLAGS = struct.Struct("<BB")

BANK_EMBEDDED = 0
BANK_PATH = 1


class _Lecteur:
    """Lecture sequentielle d'un tampon avec detection de troncature."""

    def __init__(self, contenu: bytes, source: str):
        self.contenu = contenu
        self.source = source
        self.position = 0

    def take(self, n: int) -> bytes:
        if self.position + n > len(self.contenu):
            raise TruncatedPayloadError(
                f"'{self.source}' tronque : {n} octets attendus a la position {self.position}, "
                f"{len(self.contenu) - self.position} disponibles"
            )
        morceau = self.contenu[self.position:self.position + n]
        self.position += n
        return morceau

    def unpack(self, structure: struct.Struct) -> tuple:
        return structure.unpack(self.take(structure.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        taille = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(taille), dtype=dtype, count=count)

    def finish(self) -> None:
        reste = len(self.contenu) - self.position
        if reste:
            raise DataError(f"'{self.source}' : {reste} octets inattendus en fin de fichier")


class FormatService:
    """Serialisation des bancs de filtres et des modeles."""

    # ---- FBK1 ----

    @staticmethod
    def bank_to_bytes(bank: FilterBank) -> bytes:
        morceaux = [BANK_HEADER.pack(BANK_MAGIC, len(bank.layers))]
        for couche in bank.layers:
            k_out, k_in, h, w = couche.kernels.shape
            morceaux.append(LAYER_HEADER.pack(
                LAYER_TYPE_CONV, k_out, k_in, h, w, couche.stride,
                couche.padding.value, couche.activation.value,
                couche.pool_window, couche.pool_stride,
            ))
            morceaux.append(couche.kernels.astype("<f4").tobytes())
            morceaux.append(couche.bias.astype("<f4").tobytes())
        return b"".join(morceaux)

    @staticmethod
    def _read_bank(lecteur: _Lecteur) -> FilterBank:
        magic, n_couches = lecteur.unpack(BANK_HEADER)
        if magic != BANK_MAGIC:
            raise BadMagicError(f"'{lecteur.source}' : signature {magic!r}, attendu {BANK_MAGIC!r}")
        couches = []
        for i in range(n_couches):
            (type_couche, k_out, k_in, h, w, stride,
             padding, activation, fenetre, pas) = lecteur.unpack(LAYER_HEADER)
            if type_couche != LAYER_TYPE_CONV:
                raise DataError(f"'{lecteur.source}' couche {i} : type {type_couche} inconnu")
            try:
                padding, activation = Padding(padding), Activation(activation)
            except ValueError as e:
                raise DataError(f"'{lecteur.source}' couche {i} : {e}")
            noyaux = lecteur.array("<f4", k_out * k_in * h * w).reshape(k_out, k_in, h, w)
            biais = lecteur.array("<f4", k_out)
            couches.append(ConvLayer(noyaux, biais, stride, padding, activation, fenetre, pas))
        if not couches:
            raise DataError(f"'{lecteur.source}' : banc sans couche")
        return FilterBank(tuple(couches), couches[0].in_channels)

    @staticmethod
    def bank_from_bytes(contenu: bytes, source: str = "<fbk1>") -> FilterBank:
        lecteur = _Lecteur(contenu, source)
        bank = FormatService._read_bank(lecteur)
        lecteur.finish()
        return bank

    @staticmethod
    def save_bank(bank: FilterBank, path) -> None:
        StorageService.write_atomic(path, FormatService.bank_to_bytes(bank))
        logger.info(f"Banc ecrit '{path}' : {len(bank.layers)} couche(s), {bank.n_filters} filtres")

    @staticmethod
    def load_bank(path) -> FilterBank:
        bank = FormatService.bank_from_bytes(StorageService.read_bytes(path), str(path))
        logger.debug(f"Banc charge '{path}' : {bank.to_dict()}")
        return bank

    # ---- FRM1 ----

    @staticmethod
    def _pack_array(tableau: np.ndarray) -> bytes:
        entete = struct.pack(f"<I{tableau.ndim}I", tableau.ndim, *tableau.shape)
        return entete + np.ascontiguousarray(tableau, dtype="<f8").tobytes()

    @staticmethod
    def _read_array(lecteur: _Lecteur) -> np.ndarray:
        (ndim,) = lecteur.unpack(struct.Struct("<I"))
        dims = lecteur.unpack(struct.Struct(f"<{ndim}I")) if ndim else ()
        return lecteur.array("<f8", int(np.prod(dims, dtype=np.int64))).reshape(dims)

    @staticmethod
    def model_to_bytes(model, bank_path=None) -> bytes:
        """bank_path : reference au banc au lieu de l'embarquer."""
        h, w, c = model.image_shape
        morceaux = [
            MODEL_HEADER.pack(MODEL_MAGIC, model.kind, model.sigma_sq, model.mean_offset),
            GEOMETRY.pack(h, w, c),
        ]
        if model.kind == KIND_GENERATIVE:
            morceaux.append(FormatService._pack_array(model.weights))
            morceaux.append(FormatService._pack_array(model.biases))
            morceaux.append(GENERATIVE_FLAGS.pack(model.padding.value, int(model.force_on)))
            bank = model.base
        else:
            morceaux.append(FormatService._pack_array(model.w))
            bank = model.bank
        if bank_path is None:
            mode, charge = BANK_EMBEDDED, FormatService.bank_to_bytes(bank)
        else:
            mode, charge = BANK_PATH, str(bank_path).encode("utf-8")
        morceaux.append(struct.pack("<BI", mode, len(charge)))
        morceaux.append(charge)
        return b"".join(morceaux)

    @staticmethod
    def model_from_bytes(contenu: bytes, source: str = "<frm1>"):
        lecteur = _Lecteur(contenu, source)
        magic, kind, sigma_sq, decalage = lecteur.unpack(MODEL_HEADER)
        if magic != MODEL_MAGIC:
            raise BadMagicError(f"'{source}' : signature {magic!r}, attendu {MODEL_MAGIC!r}")
        if kind not in (KIND_NONSTATIONARY, KIND_STATIONARY, KIND_GENERATIVE):
            raise DataError(f"'{source}' : type de modele {kind} inconnu")
        forme = lecteur.unpack(GEOMETRY)
        tableaux = [FormatService._read_array(lecteur)]
        if kind == KIND_GENERATIVE:
            tableaux.append(FormatService._read_array(lecteur))
            padding, force_on = lecteur.unpack(GENERATIVE_FLAGS)
        mode, longueur = lecteur.unpack(struct.Struct("<BI"))
        charge = lecteur.take(longueur)
        lecteur.finish()

        if mode == BANK_EMBEDDED:
            bank = FormatService.bank_from_bytes(charge, f"{source}[banc]")
        elif mode == BANK_PATH:
            chemin = Path(charge.decode("utf-8"))
            if not chemin.is_absolute() and source and Path(source).parent.exists():
                candidat = Path(source).parent / chemin
                chemin = candidat if candidat.exists() else chemin
            bank = FormatService.load_bank(chemin)
        else:
            raise DataError(f"'{source}' : mode de banc {mode} inconnu")

        if kind == KIND_NONSTATIONARY:
            return NonStationaryFrame(bank, tableaux[0], sigma_sq, forme, decalage)
        if kind == KIND_STATIONARY:
            return StationaryFrame(bank, tableaux[0], sigma_sq, forme, decalage)
        try:
            padding = Padding(padding)
        except ValueError as e:
            raise DataError(f"'{source}' : {e}")
        return GenerativeLayer(
            bank, tableaux[0], tableaux[1], forme, sigma_sq, padding, bool(force_on), decalage
        )

    @staticmethod
    def save_model(model, path, bank_path=None) -> None:
        StorageService.write_atomic(path, FormatService.model_to_bytes(model, bank_path))
        logger.info(f"Modele ecrit '{path}' : {model.to_dict()}")

    @staticmethod
    def load_model(path):
        model = FormatService.model_from_bytes(StorageService.read_bytes(path), str(path))
        logger.debug(f"Modele charge '{path}' : {model.to_dict()}")
        return model
