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

import os
import logging
from copy import deepcopy
import yaml
from rcdtools.models import HyperParams
from rcdtools.datasets import SplitSpec, SyntheticSpec, SyntheticConfoundedDataset, SETTINGS

logger = logging.getLogger()

DATASET_TYPES = ["synthetic", "directory", "image_folder"]
BACKBONES = ["mlp", "conv"]
SEED_VARIABLE = "RCD_SEED"


class Configuration:
    """This class handles the configuration parameters of a recursive deconfounding run.

    Attributes:
        self.description_general (str):
            General description of the run, written to the log summary.
        self.output_dir (str):
            Path to the run directory, where checkpoints, dumps and results are written.
        self.logging_level (bool):
            If "debug_logging" in the configuration file is True, 'logging_level' will be set to
            DEBUG mode. If False, or if parameter "debug_logging" is not provided,
            'logging_level' will be set to INFO.
        self.number_cores (int):
            Number of threads used by torch for intra-operation parallelism.
        self.hyper_params (HyperParams):
            Hyper-parameters of the recursion, built from the keys "lambda1", "lambda2", "u",
            "T", "theta" (optional), "k", "lr", "momentum", "weight_decay", "batch_size",
            "epochs_phase1", "epochs_phase2", "epochs_baseline" (optional) and "seed". If the
            environment variable RCD_SEED is set, it overrides "seed".
        self.backbone (str):
            Feature extractor: "mlp" (flat samples) or "conv" (images).
        self.feature_dim (int):
            Dimension d of the features.
        self.hidden_dims (list of int):
            Widths of the hidden layers (mlp) or channels of the blocks (conv).
        self.run_baseline (bool):
            If True, the plain backbone baseline is trained and evaluated too.
        self.max_plot_samples (int):
            Maximum number of testing samples kept in the feature dumps used for plotting.
        self.dataset (dict):
            Parameters of the data:
            type (str):
                "synthetic", "directory" or "image_folder".
            path (str):
                Path to the dataset on disk (not needed for "synthetic").
            image_size (int):
                Side of the resized images ("image_folder" only, default 32).
            synthetic (SyntheticSpec or None):
                Definition of the synthetic dataset ("synthetic" only). Its seed defaults to
                the seed of the run.
            split (SplitSpec):
                Known/unknown split. Defaults, for synthetic data, to known classes 0..k-1 and
                unknown classes k..k+m-1.
            unknown_source (str or None):
                Path to the second corpus used as source of unknowns in the cross-dataset
                setting.
        self.config (dict):
            Effective configuration (with the seed override applied), as persisted to the run
            directory.
    """

    REQUIRES = [
        "description_general",
        "output_dir",
        "number_cores",
        "hyper_params",
        "backbone",
        "feature_dim",
        "hidden_dims",
        "run_baseline",
        "max_plot_samples",
        "dataset",
    ]

    def __init__(self, filepath, overrides=None, use_environment=True):
        """
        Args:
            filepath (str):
                Full file path to the .yml configuration file.
            overrides (dict):
                Optional top-level keys replacing those of the configuration file.
            use_environment (bool):
                If False, the environment variable RCD_SEED is ignored (used to re-read the
                configuration persisted in a run directory).
        """

        config = self.read_config_file(filepath)
        if overrides is not None:
            config.update(deepcopy(overrides))

        if use_environment and os.environ.get(SEED_VARIABLE):
            try:
                config["seed"] = int(os.environ[SEED_VARIABLE])
            except ValueError:
                error_message = "Environment variable %s is not an integer: '%s'" % (
                    SEED_VARIABLE,
                    os.environ[SEED_VARIABLE],
                )
                logger.critical(error_message)
                raise ValueError(error_message)
            logger.info("Seed overridden by %s: %s" % (SEED_VARIABLE, config["seed"]))

        self.config = config

        self.description_general = self.assign_parameter(config, "description_general")

        self.output_dir = self.assign_parameter(config, "output_dir")

        self.logging_level = logging.INFO
        if "debug_logging" in config:
            if self.assign_boolean_parameter(config, "debug_logging"):
                self.logging_level = logging.DEBUG

        self.number_cores = self.assign_integer_parameter(config, "number_cores")

        self.hyper_params = self.assign_hyper_params(config)

        self.backbone = self.assign_parameter(config, "backbone")
        if self.backbone is not None and self.backbone not in BACKBONES:
            error_message = "Backbone '%s' not supported (supported: %s)" % (
                self.backbone,
                ", ".join(BACKBONES),
            )
            logger.critical(error_message)
            raise ValueError(error_message)

        self.feature_dim = self.assign_integer_parameter(config, "feature_dim")

        self.hidden_dims = self.assign_listed_parameters(config, "hidden_dims")
        if self.hidden_dims is not None:
            self.hidden_dims = [int(width) for width in self.hidden_dims]

        self.run_baseline = self.assign_boolean_parameter(config, "run_baseline")

        self.max_plot_samples = self.assign_integer_parameter(config, "max_plot_samples")
        if self.max_plot_samples is not None and self.max_plot_samples < 1:
            error_message = "max_plot_samples must be >= 1, got %s" % (self.max_plot_samples)
            logger.critical(error_message)
            raise ValueError(error_message)

        self.dataset = self.assign_dataset_parameters(config)

        # Terminate if critical parameters are missing (not all parameters are critical)
        for key_parameter in self.REQUIRES:
            if getattr(self, key_parameter) is None:
                error_message = (
                    "Error: parameter '%s' could not be retrieved from "
                    "configuration file. The program cannot run." % (key_parameter)
                )
                logger.critical(error_message)
                raise OSError(error_message)

    def read_config_file(self, filepath):
        """This function attempts to open the configuration file. If not found, it logs a
        critical error and raises an OSError. If the content is not a YAML mapping, it raises
        a ValueError.

        Args:
            filepath (str):
                Full file path to the .yml configuration file.

        Returns:
            config (dictionary):
                The configuration file read as a dictionary.
        """

        try:
            with open(filepath, "r") as ymlfile:
                config = yaml.load(ymlfile, Loader=yaml.FullLoader)
        except FileNotFoundError:
            error_message = "Error instantiating Configuration: configuration file not found"
            logger.critical(error_message)
            raise OSError(error_message)
        except yaml.YAMLError as error:
            error_message = "Error instantiating Configuration: malformed file (%s)" % (error)
            logger.critical(error_message)
            raise ValueError(error_message)

        if not isinstance(config, dict):
            error_message = "Error instantiating Configuration: content is not a mapping"
            logger.critical(error_message)
            raise ValueError(error_message)

        return config

    def assign_hyper_params(self, config):
        """This function builds the HyperParams of the run. It returns None if any of the
        required keys is missing, and raises a ValueError if values are out of range."""

        required = ["lambda1", "lambda2", "u", "T", "k", "seed"]
        if any(self.assign_parameter(config, key) is None for key in required):
            return None

        hyper_params = {
            "lambda1": self.assign_float_parameter(config, "lambda1", True, 0.0, 1.0e6),
            "lambda2": self.assign_float_parameter(config, "lambda2", True, 0.0, 1.0e6),
            "u": self.assign_integer_parameter(config, "u"),
            "T": self.assign_integer_parameter(config, "T"),
            "k": self.assign_integer_parameter(config, "k"),
            "seed": self.assign_integer_parameter(config, "seed"),
        }

        # Optional keys keep the defaults of HyperParams when missing
        for key in ["lr", "momentum", "weight_decay"]:
            if key in config:
                hyper_params[key] = self.assign_float_parameter(config, key, True, 0.0, 10.0)
        for key in ["batch_size", "epochs_phase1", "epochs_phase2"]:
            if key in config:
                hyper_params[key] = self.assign_integer_parameter(config, key)
        if config.get("epochs_baseline") is not None:
            hyper_params["epochs_baseline"] = self.assign_integer_parameter(
                config, "epochs_baseline"
            )
        if config.get("theta") is not None:
            hyper_params["theta"] = self.assign_float_parameter(
                config, "theta", False, 0.0, 0.0
            )

        for key, value in hyper_params.items():
            if value is None:
                error_message = "Error reading %s from configuration file" % (key)
                logger.critical(error_message)
                raise ValueError(error_message)

        try:
            return HyperParams(**hyper_params)
        except ValueError as error:
            logger.critical("Error reading hyper-parameters: %s" % (error))
            raise

    def assign_dataset_parameters(self, config):
        """This function parses the "dataset" block of the configuration. It returns None if
        the block or its "type" is missing."""

        dataset_config = self.assign_hierarchical_parameters(
            config, "dataset", requested_nested=["type"]
        )
        if dataset_config is None:
            return None

        dataset = {
            "type": dataset_config["type"],
            "path": dataset_config.get("path", None),
            "image_size": 32,
            "synthetic": None,
            "split": None,
            "unknown_source": None,
        }

        if dataset["type"] not in DATASET_TYPES:
            error_message = "Dataset type '%s' not supported (supported: %s)" % (
                dataset["type"],
                ", ".join(DATASET_TYPES),
            )
            logger.critical(error_message)
            raise ValueError(error_message)

        if dataset["type"] == "synthetic":
            synthetic = dict(dataset_config.get("synthetic") or {})
            if "seed" not in synthetic and "seed" in config:
                synthetic["seed"] = config["seed"]
            try:
                dataset["synthetic"] = SyntheticSpec(**synthetic)
            except TypeError as error:
                raise ValueError("Error reading dataset.synthetic: %s" % (error))
        elif dataset["path"] is None:
            error_message = "Parameter 'path' is needed for datasets of type '%s'" % (
                dataset["type"]
            )
            logger.critical(error_message)
            raise OSError(error_message)

        if dataset["type"] == "image_folder" and "image_size" in dataset_config:
            dataset["image_size"] = self.assign_integer_parameter(dataset_config, "image_size")

        split_config = dataset_config.get("split") or {}
        validation_fraction = float(split_config.get("validation_fraction", 0.1))
        dataset["unknown_source"] = split_config.get("unknown_source", None)

        if "known_class_ids" in split_config:
            setting = split_config.get("setting", "standard")
            if setting not in SETTINGS:
                raise ValueError("Split setting '%s' not supported" % (setting))
            dataset["split"] = SplitSpec(
                known_class_ids=self._as_list(split_config["known_class_ids"]),
                unknown_class_ids=self._as_list(split_config.get("unknown_class_ids", [])),
                setting=setting,
                validation_fraction=validation_fraction,
            )
        elif dataset["synthetic"] is not None:
            dataset["split"] = SyntheticConfoundedDataset.default_split_spec(
                dataset["synthetic"], validation_fraction
            )
        else:
            error_message = "Parameter 'dataset.split.known_class_ids' is missing"
            logger.critical(error_message)
            raise OSError(error_message)

        if dataset["split"].setting == "cross-dataset" and dataset["unknown_source"] is None:
            error_message = "The cross-dataset setting needs 'dataset.split.unknown_source'"
            logger.critical(error_message)
            raise OSError(error_message)

        if self.hyper_params is not None and dataset["split"].k != self.hyper_params.k:
            error_message = "k = %s does not match the %s known classes of the split" % (
                self.hyper_params.k,
                dataset["split"].k,
            )
            logger.critical(error_message)
            raise ValueError(error_message)

        return dataset

    @staticmethod
    def _as_list(value):
        if isinstance(value, str):
            return [int(v.strip()) for v in value.split(",") if v.strip() != ""]
        if isinstance(value, int):
            return [value]
        return [int(v) for v in value]

    def assign_parameter(self, config, input_parameter):
        """This function searches for the key input_parameter in the dictionary config. If
        found, it returns its value (a string or a dictionary). If not found, it returns None.

        Args:
            config (dictionary):
                The configuration file read as a dictionary. It may be an empty dictionary.
            input_parameter (str):
                Name of the desired parameter, to be searched for as a primary key of config.
        Returns:
            assigned_parameter (str, dictionary or None):
                The content of config[input_parameter], which can be a string or a dictionary.
                It is None if input_parameter is not a key of config.
        """

        try:
            assigned_parameter = config[input_parameter]
        except KeyError:
            logger.warning(
                "Warning: parameter '%s' is missing from configuration file" % (input_parameter)
            )
            assigned_parameter = None

        return assigned_parameter

    def assign_hierarchical_parameters(self, config, input_parameter, requested_nested=[]):
        """This function searches for the key input_parameter in the dictionary config, and
        for each of the elements of requested_nested as keys of config[input_parameter].

        If input_parameter is not a key of config, or config[input_parameter] is not a
        dictionary, or one of the elements of requested_nested is not a key of
        config[input_parameter], the output is None.

        Returns:
            assigned_parameter (dictionary or None)
        """

        assigned_parameter = self.assign_parameter(config, input_parameter)

        if assigned_parameter is None:
            return None

        if not isinstance(assigned_parameter, dict):
            return None

        sub_parameters_missing = False
        for requested_parameter in requested_nested:
            if requested_parameter not in assigned_parameter.keys():
                logger.critical(
                    "ERROR instantiating Configuration: parameter '%s' does not "
                    "exist in %s" % (requested_parameter, input_parameter)
                )
                sub_parameters_missing = True

        if sub_parameters_missing is True:
            return None

        return assigned_parameter

    def assign_boolean_parameter(self, config, input_parameter):
        """This function searches for the key input_parameter in the dictionary config, and
        converts it into a boolean. Strings "true"/"yes" and "false"/"no" are accepted.

        If input_parameter is not a key of config, or it cannot be interpreted as a boolean,
        the output is None.
        """

        assigned_parameter = self.assign_parameter(config, input_parameter)

        if assigned_parameter is None:
            return None

        if not isinstance(assigned_parameter, bool):  # yaml tries to interpret data types
            if isinstance(assigned_parameter, str):
                if assigned_parameter.lower() in ["true", "yes"]:
                    assigned_parameter = True
                elif assigned_parameter.lower() in ["false", "no"]:
                    assigned_parameter = False
                else:
                    logger.critical(
                        "Error reading %s from configuration file: "
                        "string '%s' cannot be interpreted as boolean"
                        % (input_parameter, assigned_parameter)
                    )
                    assigned_parameter = None
            else:
                logger.critical(
                    "Error reading %s from configuration file: not a boolean"
                    % (input_parameter)
                )
                assigned_parameter = None

        return assigned_parameter

    def assign_float_parameter(
        self, config, input_parameter, check_range, lower_bound, upper_bound
    ):
        """This function searches for the key input_parameter in the dictionary config, and
        converts it into a float.

        If input_parameter is not a key of config, the output is None.

        Args:
            config (dictionary):
                The configuration file read as a dictionary. It may be an empty dictionary.
            input_parameter (str):
                Name of the desired parameter, to be searched for as a primary key of config.
            check_range (bool):
                If True, it will be verified that the desired float parameter belongs to the
                closed interval [lower_bound, upper_bound].
            lower_bound (float):
                Lower possible value of the desired float parameter, inclusive.
            upper_bound (float):
                Upper possible value of the desired float parameter, inclusive.

        Returns:
            assigned_parameter (float):
                The content of config[input_parameter] converted into a float.
        """

        assigned_parameter = self.assign_parameter(config, input_parameter)

        if assigned_parameter is None:
            return None

        if isinstance(assigned_parameter, bool):
            assigned_parameter = str(assigned_parameter)

        if isinstance(assigned_parameter, int):
            assigned_parameter = float(assigned_parameter)

        # yaml reads values such as 1e-3 (no decimal point) as strings
        if isinstance(assigned_parameter, str):
            try:
                assigned_parameter = float(assigned_parameter)
            except ValueError:
                pass

        if isinstance(assigned_parameter, float):
            if check_range:
                if assigned_parameter < lower_bound or assigned_parameter > upper_bound:
                    error_message = (
                        "Error reading %s from configuration file: float out of range. "
                        "Valid range: [%s, %s]"
                        % (
                            input_parameter,
                            "{:.2f}".format(lower_bound),
                            "{:.2f}".format(upper_bound),
                        )
                    )
                    logger.critical(error_message)
                    raise ValueError(error_message)
        else:
            error_message = "Error reading %s from configuration file: not a float" % (
                input_parameter
            )
            logger.critical(error_message)
            raise ValueError(error_message)

        return assigned_parameter

    def assign_listed_parameters(self, config, input_parameter):
        """This function searches for the key input_parameter in the dictionary config. A
        YAML list is returned as it is; a string is split at its commas and the items are
        stripped of blank spaces. E.g. "64, 32" and "64,32" become ["64", "32"].

        If input_parameter is not a key of config, the output is None.
        """

        assigned_parameter = self.assign_parameter(config, input_parameter)

        if assigned_parameter is None:
            return None

        if isinstance(assigned_parameter, (list, tuple)):
            return list(assigned_parameter)

        assigned_parameter = [
            item.strip() for item in str(assigned_parameter).split(",") if item.strip() != ""
        ]

        return assigned_parameter

    def assign_integer_parameter(self, config, input_parameter):
        """This function searches for the key input_parameter in the dictionary config, and
        converts it into an integer.

        If input_parameter is not a key of config, or it cannot be interpreted as an integer,
        the output is None.
        """

        assigned_parameter = self.assign_parameter(config, input_parameter)

        if assigned_parameter is None:
            return None

        if isinstance(assigned_parameter, bool):
            logger.critical(
                "Error reading %s from configuration file: not an integer" % (input_parameter)
            )
            return None

        if isinstance(assigned_parameter, int):
            return assigned_parameter

        if isinstance(assigned_parameter, float):
            if assigned_parameter.is_integer():
                return int(assigned_parameter)
            else:
                logger.critical(
                    "Error reading %s from configuration file: not an integer"
                    % (input_parameter)
                )
                return None

        try:
            assigned_parameter = int(assigned_parameter)
        except ValueError:
            logger.critical(
                "Error reading %s from configuration file: not an integer" % (input_parameter)
            )
            assigned_parameter = None

        return assigned_parameter
