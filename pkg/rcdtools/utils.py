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
import re
import glob
import logging
import numpy as np
import pandas as pd
import torch
import yaml
from rcdtools.datasets import Dataset, SampleSet


logger = logging.getLogger()


class Seeds:
    """This class handles the random number generators."""

    @staticmethod
    def set_seed(seed):
        """Seed torch and switch it to deterministic algorithms."""

        torch.manual_seed(int(seed))
        torch.use_deterministic_algorithms(True)


class Files:
    """This class handles operations associated with run directories.
    """

    @staticmethod
    def find_steps(run_dir):
        """
        This method returns the sorted step numbers t for which 'run_dir/step_{t}/main' exists
        (empty list if there are none).
        """

        steps = []
        for path in glob.glob(os.path.join(run_dir, "step_*")):
            match = re.fullmatch(r"step_(\d+)", os.path.basename(path))
            if match is not None and os.path.isdir(os.path.join(path, "main")):
                steps.append(int(match.group(1)))

        return sorted(steps)


class Loader:
    """This class handles operations associated with loading and/or validating input files.
    """

    @staticmethod
    def load_yaml(filepath):
        if not os.path.isfile(filepath):
            error_message = "File '%s' not found" % (filepath)
            logger.critical(error_message)
            raise OSError(error_message)

        with open(filepath, "r") as ymlfile:
            return yaml.load(ymlfile, Loader=yaml.FullLoader)

    @staticmethod
    def load_parameters(module, directory):
        """
        This method reads the flat binary tensors listed in 'directory/manifest.yml' (as
        written by 'Writer.write_parameters') into 'module'.

        Returns:
            manifest (dict): Content of the manifest.
        """

        manifest = Loader.load_yaml(os.path.join(directory, "manifest.yml"))

        state = {}
        for name, description in manifest["parameters"].items():
            filepath = os.path.join(directory, description["file"])
            if not os.path.isfile(filepath):
                error_message = "Parameter file '%s' not found" % (filepath)
                logger.critical(error_message)
                raise OSError(error_message)
            array = np.fromfile(filepath, dtype=np.dtype(description["dtype"]))
            state[name] = torch.from_numpy(array.reshape(description["shape"]))

        module.load_state_dict(state, strict=True)

        return manifest

    @staticmethod
    def load_checkpoint(run_dir, step, model, build_extractor):
        """
        This method loads the main model and the counterfactual pool stored for step 'step'
        under 'run_dir' (see 'Writer.write_checkpoint').

        Args:
            run_dir (str): Run directory.
            step (int): Step number.
            model (RCDModel): Model with the architecture of the main model; its parameters are
                overwritten.
            build_extractor (callable): Function () -> new extractor with the architecture of
                the snapshots.

        Returns:
            model (RCDModel), pool (CounterfactualPool), manifest (dict)
        """

        from rcdtools.deconfounding import CounterfactualPool
        from rcdtools.models import Models

        step_dir = os.path.join(run_dir, "step_%s" % (step))
        if not os.path.isdir(os.path.join(step_dir, "main")):
            error_message = "Checkpoint of step %s not found under %s" % (step, run_dir)
            logger.critical(error_message)
            raise OSError(error_message)

        manifest = Loader.load_parameters(model, os.path.join(step_dir, "main"))
        model.eval()

        pool = CounterfactualPool()
        for i in range(1, step + 1):
            extractor = build_extractor()
            snapshot_manifest = Loader.load_parameters(
                extractor, os.path.join(step_dir, "pool_%s" % (i))
            )
            snapshot_metadata = dict(snapshot_manifest.get("snapshot", {}))
            pool.append(
                Models.freeze(
                    extractor, snapshot_metadata.pop("snapshot_id", i), snapshot_metadata
                )
            )

        return model, pool, manifest

    @staticmethod
    def load_dataset(path, name=None):
        """
        This method loads a dataset stored with one sub-directory per split ("train", "test",
        the latter optional), each of them holding either:
            - 'samples.csv' with columns sample_id, label, and one column per feature; or
            - 'samples.bin' (float32), 'labels.csv' (sample_id, label) and 'manifest.yml'
            with the shape of the samples.

        Returns:
            dataset (Dataset)
        """

        if not os.path.isdir(os.path.join(path, "train")):
            error_message = "Dataset directory '%s' has no 'train' sub-directory" % (path)
            logger.critical(error_message)
            raise OSError(error_message)

        if name is None:
            name = os.path.basename(os.path.normpath(path))

        splits = {}
        for split_name in ["train", "test"]:
            split_dir = os.path.join(path, split_name)
            if not os.path.isdir(split_dir):
                splits[split_name] = None
                continue
            splits[split_name] = Loader._load_split(split_dir)

        return Dataset(name=name, train=splits["train"], test=splits["test"])

    @staticmethod
    def _load_split(split_dir):
        csv_path = os.path.join(split_dir, "samples.csv")
        bin_path = os.path.join(split_dir, "samples.bin")

        if os.path.isfile(csv_path):
            samples = pd.read_csv(csv_path, dtype={"sample_id": str})
            for column in ["sample_id", "label"]:
                if column not in samples.columns:
                    raise ValueError("Column '%s' missing from %s" % (column, csv_path))
            features = samples.drop(columns=["sample_id", "label"]).to_numpy(dtype=np.float32)
            return SampleSet(features, samples["label"].to_numpy(), samples["sample_id"])

        if os.path.isfile(bin_path):
            manifest = Loader.load_yaml(os.path.join(split_dir, "manifest.yml"))
            features = np.fromfile(bin_path, dtype=np.dtype(manifest["dtype"]))
            features = features.reshape(manifest["shape"])
            labels = pd.read_csv(os.path.join(split_dir, "labels.csv"), dtype={"sample_id": str})
            return SampleSet(features, labels["label"].to_numpy(), labels["sample_id"])

        error_message = "Neither 'samples.csv' nor 'samples.bin' found under %s" % (split_dir)
        logger.critical(error_message)
        raise OSError(error_message)

    @staticmethod
    def load_image_folder(path, image_size=32, name=None):
        """
        This method loads images stored as path/{train,test}/{class_name}/{image file}. Images
        are resized to 'image_size' x 'image_size', converted to tensors in [0, 1] and
        normalised to [-1, 1]. Class ids follow the sorted class names of the training split.

        Returns:
            dataset (Dataset)
        """

        from torchvision import datasets, transforms

        if not os.path.isdir(os.path.join(path, "train")):
            error_message = "Image folder '%s' has no 'train' sub-directory" % (path)
            logger.critical(error_message)
            raise OSError(error_message)

        transform = transforms.Compose(
            [
                transforms.Resize((image_size, image_size)),
                transforms.ToTensor(),
                transforms.Normalize((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
            ]
        )

        class_to_idx = None
        splits = {}
        for split_name in ["train", "test"]:
            split_dir = os.path.join(path, split_name)
            if not os.path.isdir(split_dir):
                splits[split_name] = None
                continue

            folder = datasets.ImageFolder(split_dir, transform=transform)
            if class_to_idx is None:
                class_to_idx = folder.class_to_idx
            features, labels, sample_ids = [], [], []
            for i, (image_path, _) in enumerate(folder.samples):
                image, _ = folder[i]
                class_name = os.path.basename(os.path.dirname(image_path))
                if class_name not in class_to_idx:
                    class_to_idx[class_name] = len(class_to_idx)
                features.append(image.numpy())
                labels.append(class_to_idx[class_name])
                sample_ids.append(os.path.relpath(image_path, path))

            splits[split_name] = SampleSet(np.stack(features), labels, sample_ids)

        if name is None:
            name = os.path.basename(os.path.normpath(path))

        return Dataset(name=name, train=splits["train"], test=splits["test"])

    @staticmethod
    def load_results(filepath):
        """This method reads a results.csv file, interpreting "n/a" as NaN."""

        if not os.path.isfile(filepath):
            error_message = "Results file '%s' not found" % (filepath)
            logger.critical(error_message)
            raise OSError(error_message)

        return pd.read_csv(filepath, na_values=["n/a"])

    @staticmethod
    def load_feature_dump(filepath):
        """This method reads a feature dump written by 'Writer.write_feature_dump'."""

        if not os.path.isfile(filepath):
            error_message = "Feature dump '%s' not found" % (filepath)
            logger.critical(error_message)
            raise OSError(error_message)

        with np.load(filepath, allow_pickle=False) as dump:
            return {key: dump[key] for key in dump.files}
