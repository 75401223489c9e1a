"""
Sous-commandes learn-object, learn-texture et learn-layer.
Produisent dans --out : resolved.cfg, learning.csv, model.frm,
samples.png et snapshots/iter_XXXX.png.
"""

import logging
from dataclasses import replace
from pathlib import Path

from deepframe.commands.common import (
    OptionSpec, add_options, choice, prepare_out, resolve, sampling_options, thread_count,
)
from deepframe.config import Config
from deepframe.exceptions import DivergenceError
from deepframe.models.learning import LEARNING_LOG_HEADER, SCHEDULES, STARTS, LearnConfig
from deepframe.services.format_service import FormatService
from deepframe.services.generative_service import GenerativeService
from deepframe.services.image_service import NORMALIZE_POLICIES, ImageService
from deepframe.services.learner_service import LearnerService
from deepframe.services.storage_service import StorageService

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.frm"
MODEL_NAME = "model.frm"
LOG_NAME = "learning.csv"
SAMPLES_NAME = "samples.png"


def learn_options() -> list:
    return [
        OptionSpec("filters", str, required=True, help="banc FBK1"),
        OptionSpec("images", str, required=True, help="repertoire ou liste d'images"),
        OptionSpec("out", str, required=True, help="repertoire de sortie"),
        OptionSpec("iters", int, "100", help="iterations d'apprentissage"),
        OptionSpec("gamma", float, "0.1", help="pas d'apprentissage gamma0"),
        OptionSpec("schedule", choice(*SCHEDULES), "constant", help="calendrier du pas"),
        OptionSpec("t0", int, "100", help="decalage du calendrier"),
        OptionSpec("sigma", float, repr(Config.DEFAULT_SIGMA_SQ), help="variance sigma^2 de la reference"),
        OptionSpec("start", choice(*STARTS), "warm", help="demarrage des chaines"),
        OptionSpec("tolerance", float, "0.0", help="seuil de convergence sur max|H_obs - H_syn|"),
        OptionSpec("snapshot-every", int, "0", help="image des chaines toutes les N iterations"),
        OptionSpec("normalize", choice(*NORMALIZE_POLICIES), "default", help="normalisation des pixels"),
    ] + sampling_options()


def layer_options() -> list:
    return learn_options() + [
        OptionSpec("experts", int, "10", help="nombre J de filtres appris"),
        OptionSpec("window", int, "3", help="taille de la fenetre des filtres appris"),
        OptionSpec("layer-padding", choice("valid", "zero", "circular"), "valid",
                   help="bords de la couche apprise"),
        OptionSpec("init-scale", float, "0.001", help="amplitude de l'initialisation uniforme"),
        OptionSpec("bias-quantile", float, "0.9", help="quantile d'initialisation des biais"),
        OptionSpec("refine-iters", int, "0", help="iterations de raffinement de toutes les couches"),
    ]


def register(subparsers) -> None:
    for nom, options, aide, handler in (
        ("learn-object", learn_options(), "modele non stationnaire (objets alignes)", run_learn_object),
        ("learn-texture", learn_options(), "modele stationnaire (texture)", run_learn_texture),
        ("learn-layer", layer_options(), "couche generative au-dessus du banc", run_learn_layer),
    ):
        parser = subparsers.add_parser(nom, help=aide)
        add_options(parser, options)
        parser.set_defaults(handler=handler, options=options)


def learn_config(valeurs: dict) -> LearnConfig:
    return LearnConfig(
        gamma0=valeurs["gamma"],
        schedule=valeurs["schedule"],
        t0=valeurs["t0"],
        iterations=valeurs["iters"],
        langevin_steps=valeurs["langevin-steps"],
        n_chains=valeurs["chains"],
        epsilon=valeurs["step-size"],
        start=valeurs["start"],
        master_seed=valeurs["seed"],
        sigma_sq=valeurs["sigma"],
        tolerance=valeurs["tolerance"],
        threads=thread_count(valeurs["threads"]),
        snapshot_every=valeurs["snapshot-every"],
    )


def _snapshot_writer(sortie: Path, every: int):
    if every <= 0:
        return None

    def ecrire(t, model, etat):
        if (t + 1) % every == 0:
            ImageService.save_grid(etat.as_images(), sortie / "snapshots" / f"iter_{t + 1:04d}.png")
    return ecrire


def _run(args, fit) -> int:
    """Charge les entrees, lance fit(bank, images, config, on_iteration), ecrit les artefacts."""
    valeurs = resolve(args, args.options)
    sortie = prepare_out(valeurs)
    config = learn_config(valeurs)
    bank = FormatService.load_bank(valeurs["filters"])
    images = ImageService.load_images(
        ImageService.list_image_files(valeurs["images"]), valeurs["normalize"]
    )
    logger.info(f"{args.command} : {len(images)} image(s) {images[0].shape}, sortie {sortie}")

    try:
        model, etat, journal = fit(bank, images, config, valeurs, _snapshot_writer(sortie, config.snapshot_every))
    except DivergenceError as e:
        if e.last_model is not None:
            FormatService.save_model(e.last_model, sortie / CHECKPOINT_NAME)
            logger.error(f"Divergence a l'iteration {e.iteration}, dernier modele : {sortie / CHECKPOINT_NAME}")
        raise

    StorageService.write_csv(sortie / LOG_NAME, LEARNING_LOG_HEADER, journal.rows())
    FormatService.save_model(model, sortie / MODEL_NAME)
    ImageService.save_grid(etat.as_images(), sortie / SAMPLES_NAME)
    dernier = journal.last()
    print(f"{sortie / MODEL_NAME} : {len(journal.records)} iterations, "
          f"ecart final {dernier.max_abs_diff if dernier else float('nan'):.6g}")
    return 0


def run_learn_object(args) -> int:
    return _run(args, lambda bank, images, config, valeurs, rappel:
                LearnerService.fit_object(bank, images, config, on_iteration=rappel))


def run_learn_texture(args) -> int:
    return _run(args, lambda bank, images, config, valeurs, rappel:
                LearnerService.fit_texture(bank, images, config, on_iteration=rappel))


def run_learn_layer(args) -> int:
    def apprendre(bank, images, config, valeurs, rappel):
        resultat = GenerativeService.fit_layer(
            bank, images, valeurs["experts"], valeurs["window"], config,
            padding=valeurs["layer-padding"], init_scale=valeurs["init-scale"],
            bias_quantile=valeurs["bias-quantile"], on_iteration=rappel,
        )
        if valeurs["refine-iters"] > 0:
            layer, _, journal = resultat
            raffinement = replace(config, iterations=valeurs["refine-iters"])
            logger.info(f"Raffinement de toutes les couches : {raffinement.iterations} iterations")
            layer, etat, suite = GenerativeService.refine_all_layers(layer, images, raffinement)
            decalage = len(journal.records)
            for record in suite.records:
                journal.append(replace(record, iteration=record.iteration + decalage))
            journal.converged = suite.converged
            resultat = (layer, etat, journal)
        return resultat

    return _run(args, apprendre)
