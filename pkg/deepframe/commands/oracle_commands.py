"""
Sous-commande oracle (debogage, non documentee dans l'aide) :
log Z, esperances et poids ajustes exactement pour un fichier de
description de grille.
"""

import argparse
import logging

import numpy as np

from deepframe.commands.common import add_options, prepare_out, resolve
from deepframe.config import OptionSpec, choice, format_value, parse_float_list
from deepframe.models.oracle_spec import REFERENCES, OracleSpec
from deepframe.services.format_service import FormatService
from deepframe.services.image_service import NORMALIZE_POLICIES, ImageService
from deepframe.services.oracle_service import OracleService
from deepframe.services.storage_service import StorageService

logger = logging.getLogger(__name__)


def oracle_options() -> list:
    return [
        OptionSpec("height", int, required=True),
        OptionSpec("width", int, required=True),
        OptionSpec("levels", parse_float_list, "0,1"),
        OptionSpec("reference", choice(*REFERENCES), "uniform"),
        OptionSpec("sigma", float, "1.0"),
        OptionSpec("filters", str, required=True),
        OptionSpec("images", str, None),
        OptionSpec("normalize", choice(*NORMALIZE_POLICIES), "raw"),
        OptionSpec("kind", choice("nonstationary", "stationary"), "nonstationary"),
        OptionSpec("tolerance", float, "1e-08"),
        OptionSpec("max-iter", int, "100"),
        OptionSpec("out", str, required=True),
    ]


def register(subparsers) -> None:
    parser = subparsers.add_parser("oracle", help=argparse.SUPPRESS)
    options = oracle_options()
    add_options(parser, options)
    parser.set_defaults(handler=run_oracle, options=options)


def _ligne(cle: str, valeur) -> str:
    if isinstance(valeur, np.ndarray):
        return f"{cle}={format_value([float(v) for v in valeur.ravel()])}"
    return f"{cle}={format_value(valeur)}"


def run_oracle(args) -> int:
    valeurs = resolve(args, args.options)
    sortie = prepare_out(valeurs)
    spec = OracleSpec(valeurs["height"], valeurs["width"], tuple(valeurs["levels"]),
                      valeurs["reference"], valeurs["sigma"])
    bank = FormatService.load_bank(valeurs["filters"])
    logger.info(f"Oracle : {spec.to_dict()}")

    lignes = [_ligne("states", spec.n_states)]
    if valeurs.get("images"):
        images = ImageService.load_images(
            ImageService.list_image_files(valeurs["images"]), valeurs["normalize"]
        )
        model, ecart = OracleService.exact_fit(
            spec, bank, images, valeurs["kind"], tolerance=valeurs["tolerance"],
            max_iter=valeurs["max-iter"],
        )
        lignes.append(_ligne("gap", ecart))
    else:
        from deepframe.models.frame_model import NonStationaryFrame, StationaryFrame
        classe = StationaryFrame if valeurs["kind"] == "stationary" else NonStationaryFrame
        model = classe.zeros(bank, spec.image_shape, spec.sigma_sq)

    lignes.append(_ligne("log_z", OracleService.exact_partition(spec, model)))
    lignes.append(_ligne("expectation", OracleService.exact_expectation(spec, model)))
    lignes.append(_ligne("weights", np.asarray(model.w)))
    texte = "\n".join(lignes) + "\n"
    StorageService.write_text(sortie / "oracle.txt", texte)
    print(texte, end="")
    return 0
