#!/usr/bin/env python3

# Copyright (C) 2026:
#   Recursive Counterfactual Deconfounding tools contributors
#
# This program is free software: you can redistribute it and/or modify it
# under the terms of the GNU Affero General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.
#
# This program is distributed in the hope that it will be useful, but
# WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the GNU Affero
# General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program. If not, see http://www.gnu.org/licenses/.

import logging
import sys
import os
import argparse
import torch
from rcdtools.configuration import Configuration
from rcdtools.datasets import DatasetSplitter, SplitSpec, SyntheticConfoundedDataset
from rcdtools.deconfounding import (
    BackboneBaseline,
    CounterfactualPool,
    Evaluation,
    FeatureDumps,
    InconsistentStateError,
    RecursiveDeconfounding,
)
from rcdtools.models import Models
from rcdtools.postprocessor import PostProcessor
from rcdtools.training import TrainingDivergedError
from rcdtools.utils import Files, Loader, Seeds
from rcdtools.writers import Writer, NOT_APPLICABLE


logger = logging.getLogger()
logger.setLevel(logging.INFO)
logger.addHandler(logging.StreamHandler(sys.stdout))

EXIT_SUCCESS = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3

SWEEP_PARAMETERS = {"lambda1": float, "lambda2": float, "u": int, "T": int}


def main(argv=None):
    """Run the programme and return its exit code."""

    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        args.function(args)
    except TrainingDivergedError as error:
        logger.critical("Training diverged: %s" % (error))
        return EXIT_DIVERGED
    except (OSError, ValueError, InconsistentStateError) as error:
        logger.critical("The program cannot run: %s" % (error))
        return EXIT_INVALID

    return EXIT_SUCCESS


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rcd", description="Recursive counterfactual deconfounding for open-set recognition"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    train = subparsers.add_parser("train", help="Run the recursion and evaluate every step")
    train.add_argument("--config", required=True, help="Path to the .yml configuration file")
    train.set_defaults(function=lambda args: run_train(Configuration(args.config)))

    evaluate = subparsers.add_parser("eval", help="Evaluate the last step of a run")
    evaluate.add_argument("--run", required=True, help="Run directory")
    evaluate.add_argument(
        "--unknown-source",
        default=None,
        help="Dataset directory used as source of unknowns (cross-dataset setting)",
    )
    evaluate.set_defaults(function=lambda args: run_eval(args.run, args.unknown_source))

    plot = subparsers.add_parser("plot", help="Plot 2D embeddings of the feature dumps")
    plot.add_argument("--run", required=True, help="Run directory")
    plot.set_defaults(function=lambda args: run_plot(args.run))

    sweep = subparsers.add_parser("sweep", help="Run 'train' for several values and seeds")
    sweep.add_argument("--config", required=True, help="Path to the .yml configuration file")
    sweep.add_argument("--parameter", required=True, choices=sorted(SWEEP_PARAMETERS))
    sweep.add_argument("--values", required=True, help="Comma-separated values")
    sweep.add_argument("--seeds", default=None, help="Comma-separated seeds")
    sweep.set_defaults(
        function=lambda args: run_sweep(
            args.config,
            args.parameter,
            _parse_list(args.values, SWEEP_PARAMETERS[args.parameter]),
            None if args.seeds is None else _parse_list(args.seeds, int),
        )
    )

    return parser


def _parse_list(text, cast):
    try:
        return [cast(value.strip()) for value in text.split(",") if value.strip() != ""]
    except ValueError:
        raise ValueError("Cannot interpret '%s' as a list of %s" % (text, cast.__name__))


def load_corpus(dataset_type, path, image_size=32):
    """Load a dataset stored on disk as a 'directory' or an 'image_folder'."""

    if dataset_type == "image_folder":
        return Loader.load_image_folder(path, image_size)

    return Loader.load_dataset(path)


def prepare_splits(config, unknown_source=None):
    """
    This function builds (or loads) the dataset described by 'config' and divides it into the
    partitions train_known, val_known, test_known and test_unknown.

    Args:
        config (Configuration)
        unknown_source (str): Optional path to a second corpus replacing the source of unknowns
            of 'config' (cross-dataset setting, all of its classes used).

    Returns:
        splits (dict of SampleSet)
    """

    dataset_config = config.dataset
    split_spec = dataset_config["split"]

    if dataset_config["type"] == "synthetic":
        dataset = SyntheticConfoundedDataset.generate(dataset_config["synthetic"])
    else:
        dataset = load_corpus(
            dataset_config["type"], dataset_config["path"], dataset_config["image_size"]
        )

    if unknown_source is not None:
        split_spec = SplitSpec(
            known_class_ids=split_spec.known_class_ids,
            unknown_class_ids=[],
            setting="cross-dataset",
            validation_fraction=split_spec.validation_fraction,
        )
    else:
        unknown_source = dataset_config["unknown_source"]

    unknown_dataset = None
    if split_spec.setting == "cross-dataset":
        corpus_type = "image_folder" if dataset_config["type"] == "image_folder" else "directory"
        unknown_dataset = load_corpus(corpus_type, unknown_source, dataset_config["image_size"])

    return DatasetSplitter.split(
        dataset, split_spec, unknown_dataset, seed=config.hyper_params.seed
    )


def _metrics_message(metrics):
    return ", ".join(
        [
            "%s = %s" % (key, NOT_APPLICABLE if value != value else "%.4f" % (value))
            for key, value in metrics.items()
        ]
    )


def run_train(config):
    """
    This function runs the recursion described by 'config' and writes, under
    'config.output_dir':
        - config.yml: effective configuration;
        - step_{t}/main, step_{t}/pool_{i}: checkpoints;
        - scores_step_{t}.csv, features_step_{t}.npz: score and feature dumps;
        - results.csv: metrics per step;
        - diagnostics.csv: entropy of the counterfactual models and correlation diagnostics;
        - baseline.csv, scores_baseline.csv, features_baseline.npz (if 'run_baseline');
        - quick_input_check.txt: summary of the run.

    Returns:
        results (list of StepResult)
    """

    logger.setLevel(config.logging_level)
    logger.info("Recursive counterfactual deconfounding has started")

    hp = config.hyper_params
    run_dir = config.output_dir
    os.makedirs(run_dir, exist_ok=True)

    log_summary = []
    log_summary.append("Recursive counterfactual deconfounding has started")
    log_summary.append("General description: %s" % (config.description_general))
    log_summary.append("%s is the run directory" % (run_dir))
    log_summary.append("Seed: %s" % (hp.seed))
    log_summary.append(
        "Hyper-parameters: %s" % (", ".join(["%s=%s" % kv for kv in hp.to_dict().items()]))
    )
    log_summary.append(
        "Backbone: %s, feature_dim=%s, hidden_dims=%s"
        % (config.backbone, config.feature_dim, config.hidden_dims)
    )

    Writer.write_yaml(config.config, os.path.join(run_dir, "config.yml"))

    torch.set_num_threads(config.number_cores)
    Seeds.set_seed(hp.seed)

    splits = prepare_splits(config)
    log_summary.append(
        "Partitions: %s"
        % (", ".join(["%s=%s" % (key, len(value)) for key, value in splits.items()]))
    )

    recursion = RecursiveDeconfounding(
        hp,
        splits,
        backbone=config.backbone,
        feature_dim=config.feature_dim,
        hidden_dims=config.hidden_dims,
        run_dir=run_dir,
        max_dump_samples=config.max_plot_samples,
    )
    results = recursion.run_pipeline()

    rows = []
    diagnostics = []
    for result in results:
        rows.append({"step": result.step, **result.metrics})
        diagnostics.append(
            {
                "step": result.step,
                "pool_size": result.pool_size,
                "theta": result.metrics["theta"],
                "phase1_entropy": result.phase1_entropy,
                "nc_before": result.nc_before,
                "nc_after": result.nc_after,
            }
        )
        log_summary.append(
            "Step %s (pool size %s): %s"
            % (result.step, result.pool_size, _metrics_message(result.metrics))
        )
    Writer.write_results(rows, os.path.join(run_dir, "results.csv"))
    Writer.write_diagnostics(diagnostics, os.path.join(run_dir, "diagnostics.csv"))

    if config.run_baseline:
        Seeds.set_seed(hp.seed)
        model, metrics, scores = BackboneBaseline.train(
            hp, splits, config.backbone, config.feature_dim, config.hidden_dims
        )
        Writer.write_results(
            [{"step": 0, **metrics}], os.path.join(run_dir, "baseline.csv")
        )
        Writer.write_scores(scores, os.path.join(run_dir, "scores_baseline.csv"))
        Writer.write_feature_dump(
            FeatureDumps.collect(
                model, CounterfactualPool(), splits, config.max_plot_samples, hp.seed
            ),
            os.path.join(run_dir, "features_baseline.npz"),
        )
        log_summary.append("Backbone baseline: %s" % (_metrics_message(metrics)))

    # Save 'log_summary' (to create log file that allows for a quick check of correct input)
    log_summary.append("Recursive counterfactual deconfounding has finished")
    Writer.write_txt_from_list(log_summary, os.path.join(run_dir, "quick_input_check.txt"))

    logger.info("Recursive counterfactual deconfounding has finished")

    return results


def run_eval(run_dir, unknown_source=None):
    """
    This function loads the main model and the counterfactual pool of the last step stored
    under 'run_dir', evaluates them and writes 'eval_scores.csv' and 'eval_metrics.csv' to
    'run_dir'.

    Args:
        run_dir (str): Run directory written by 'run_train'.
        unknown_source (str): Optional dataset directory used as source of unknowns.

    Returns:
        metrics (dict): As in 'Evaluation.evaluate'.
    """

    config = Configuration(os.path.join(run_dir, "config.yml"), use_environment=False)
    hp = config.hyper_params

    steps = Files.find_steps(run_dir)
    if len(steps) == 0:
        error_message = "No checkpoint found under %s" % (run_dir)
        logger.critical(error_message)
        raise OSError(error_message)
    step = steps[-1]

    torch.set_num_threads(config.number_cores)
    Seeds.set_seed(hp.seed)
    splits = prepare_splits(config, unknown_source)
    input_shape = splits["train_known"].input_shape

    model = Models.build_model(
        hp, input_shape, config.backbone, config.feature_dim, config.hidden_dims
    )
    model, pool, _ = Loader.load_checkpoint(
        run_dir,
        step,
        model,
        lambda: Models.build_backbone(
            config.backbone, input_shape, config.feature_dim, config.hidden_dims
        ),
    )
    logger.info("Loaded step %s of %s with a pool of size %s" % (step, run_dir, len(pool)))

    metrics, scores = Evaluation.evaluate(model, pool, splits, hp.k, hp.theta)
    logger.info("Evaluation of step %s: %s" % (step, _metrics_message(metrics)))

    Writer.write_scores(scores, os.path.join(run_dir, "eval_scores.csv"))
    Writer.write_results([{"step": step, **metrics}], os.path.join(run_dir, "eval_metrics.csv"))

    return metrics


def run_plot(run_dir):
    """This function writes the 2D embeddings of all feature dumps stored under 'run_dir'."""

    seed = 0
    config_path = os.path.join(run_dir, "config.yml")
    if os.path.isfile(config_path):
        seed = int(Loader.load_yaml(config_path).get("seed", 0))

    return PostProcessor.export_embeddings(run_dir, seed)


def run_sweep(config_path, parameter, values, seeds=None):
    """
    This function runs 'run_train' for every combination of 'values' of 'parameter' and
    'seeds', in output_dir/sweep_{parameter}/{parameter}_{value}/seed_{seed}, and writes the
    summary of the final steps to output_dir/sweep_{parameter}.csv.

    Returns:
        collected (Pandas DataFrame): Output of 'PostProcessor.collect_sweep_results'.
    """

    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(
            "Parameter '%s' cannot be swept (supported: %s)"
            % (parameter, ", ".join(sorted(SWEEP_PARAMETERS)))
        )
    if len(values) == 0:
        raise ValueError("At least one value is needed for the sweep")

    base = Configuration(config_path)
    if seeds is None or len(seeds) == 0:
        seeds = [base.hyper_params.seed]
    sweep_dir = os.path.join(base.output_dir, "sweep_%s" % (parameter))

    for value in values:
        for seed in seeds:
            logger.info("Sweep of %s: value %s, seed %s" % (parameter, value, seed))
            run_dir = os.path.join(sweep_dir, "%s_%s" % (parameter, value), "seed_%s" % (seed))
            config = Configuration(
                config_path,
                overrides={parameter: value, "seed": seed, "output_dir": run_dir},
                use_environment=False,
            )
            run_train(config)

    collected = PostProcessor.collect_sweep_results(sweep_dir, parameter, values, seeds)
    collected.to_csv(
        os.path.join(base.output_dir, "sweep_%s.csv" % (parameter)),
        index=False,
        na_rep=NOT_APPLICABLE,
    )

    return collected


if __name__ == "__main__":
    sys.exit(main())
