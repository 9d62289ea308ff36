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
import numpy as np
import pandas as pd
import yaml


logger = logging.getLogger()

RESULTS_COLUMNS = ["step", "acc", "auroc", "oscr", "macro_f1"]
SCORES_COLUMNS = [
    "sample_id",
    "split",
    "ground_truth",
    "score",
    "predicted_class",
    "open_set_prediction",
]
NOT_APPLICABLE = "n/a"


class Writer:
    """This class handles methods associated with writing files (.csv, .yml, .bin, .npz,
    .txt).
    """

    @staticmethod
    def write_results(rows, filepath):
        """
        This method writes the per-step metrics to a CSV file with the columns RESULTS_COLUMNS.
        Not-applicable metrics (NaN) are written as NOT_APPLICABLE.

        Args:
            rows (list of dict):
                One dictionary per step with (at least) the keys of RESULTS_COLUMNS.
            filepath (str):
                Full path to the output CSV file.
        """

        results = pd.DataFrame(rows)
        missing = [column for column in RESULTS_COLUMNS if column not in results.columns]
        if len(missing) > 0:
            raise ValueError("Results are missing columns: %s" % (", ".join(missing)))

        results = results[RESULTS_COLUMNS].copy()
        results["step"] = results["step"].astype(int)
        results.to_csv(filepath, index=False, na_rep=NOT_APPLICABLE)

        return results

    @staticmethod
    def write_diagnostics(rows, filepath):
        """
        This method writes the per-step diagnostics of the recursion (pool size, threshold,
        entropy of the counterfactual model, correlations before and after deconfounding).
        """

        diagnostics = pd.DataFrame(rows)
        diagnostics.to_csv(filepath, index=False, float_format="%.6g", na_rep=NOT_APPLICABLE)

        return diagnostics

    @staticmethod
    def write_scores(scores, filepath):
        """This method writes a score dump (columns SCORES_COLUMNS) to 'filepath'."""

        scores[SCORES_COLUMNS].to_csv(filepath, index=False)

    @staticmethod
    def write_feature_dump(dump, filepath):
        """This method stores the arrays of 'dump' (dict) in a compressed .npz file."""

        np.savez_compressed(filepath, **dump)

    @staticmethod
    def write_parameters(module, directory, metadata=None):
        """
        This method writes each tensor of the state dictionary of 'module' as a flat binary
        file (native byte order, C order) under 'directory', plus 'manifest.yml' recording the
        file name, shape and data type of each tensor together with 'metadata'.

        Args:
            module (torch.nn.Module):
                Module whose parameters are written.
            directory (str):
                Output directory (created if it does not exist).
            metadata (dict):
                Additional entries of the manifest (e.g. step, seed, hyper-parameters).
        """

        os.makedirs(directory, exist_ok=True)

        parameters = {}
        for name, tensor in module.state_dict().items():
            array = tensor.detach().cpu().contiguous().numpy()
            filename = "%s.bin" % (name)
            array.tofile(os.path.join(directory, filename))
            parameters[name] = {
                "file": filename,
                "shape": list(array.shape),
                "dtype": str(array.dtype),
            }

        manifest = dict(metadata) if metadata is not None else {}
        manifest["parameters"] = parameters

        with open(os.path.join(directory, "manifest.yml"), "w") as ymlfile:
            yaml.safe_dump(manifest, ymlfile, sort_keys=False)

    @staticmethod
    def write_checkpoint(run_dir, step, model, pool, metadata):
        """
        This method writes the main model and every snapshot of the counterfactual pool of
        step 'step' under:
            run_dir/step_{step}/main/
            run_dir/step_{step}/pool_{i}/   (i = 1, ..., size of the pool)

        Returns:
            step_dir (str): Path to run_dir/step_{step}.
        """

        step_dir = os.path.join(run_dir, "step_%s" % (step))

        Writer.write_parameters(model, os.path.join(step_dir, "main"), metadata)

        for i, snapshot in enumerate(pool.snapshots, start=1):
            snapshot_metadata = dict(metadata)
            snapshot_metadata["snapshot"] = dict(snapshot.metadata)
            snapshot_metadata["snapshot"]["snapshot_id"] = snapshot.snapshot_id
            Writer.write_parameters(
                snapshot.extractor, os.path.join(step_dir, "pool_%s" % (i)), snapshot_metadata
            )

        logger.debug("Checkpoint of step %s written to %s" % (step, step_dir))

        return step_dir

    @staticmethod
    def write_yaml(content, filepath):
        """This method writes the dictionary 'content' to the YAML file 'filepath'."""

        with open(filepath, "w") as ymlfile:
            yaml.safe_dump(content, ymlfile, sort_keys=False)

    @staticmethod
    def write_dataset(dataset, path, fmt="csv"):
        """
        This method writes 'dataset' (Dataset) to 'path', one sub-directory per split
        ("train", "test"). With fmt="csv", each split is a 'samples.csv' file with columns
        sample_id, label, f_0, f_1, ... (flat samples only). With fmt="binary", each split
        holds 'samples.bin' (float32, C order), 'labels.csv' (sample_id, label) and
        'manifest.yml' with the shape of the samples.
        """

        if fmt not in ["csv", "binary"]:
            raise ValueError("Dataset format '%s' not supported (supported: csv, binary)" % fmt)

        for split_name in ["train", "test"]:
            sample_set = getattr(dataset, split_name)
            if sample_set is None:
                continue

            split_dir = os.path.join(path, split_name)
            os.makedirs(split_dir, exist_ok=True)

            if fmt == "csv":
                if len(sample_set.input_shape) != 1:
                    raise ValueError("Only flat samples can be written in CSV format")
                samples = pd.DataFrame(
                    sample_set.features,
                    columns=["f_%s" % (i) for i in range(sample_set.input_shape[0])],
                )
                samples.insert(0, "label", sample_set.labels)
                samples.insert(0, "sample_id", sample_set.sample_ids)
                samples.to_csv(
                    os.path.join(split_dir, "samples.csv"), index=False, float_format="%.9g"
                )
            else:
                np.ascontiguousarray(sample_set.features, dtype=np.float32).tofile(
                    os.path.join(split_dir, "samples.bin")
                )
                pd.DataFrame(
                    {"sample_id": sample_set.sample_ids, "label": sample_set.labels}
                ).to_csv(os.path.join(split_dir, "labels.csv"), index=False)
                Writer.write_yaml(
                    {
                        "name": dataset.name,
                        "shape": [len(sample_set), *sample_set.input_shape],
                        "dtype": "float32",
                    },
                    os.path.join(split_dir, "manifest.yml"),
                )

    @staticmethod
    def write_txt_from_list(list_to_write, filepath):
        """
        This method writes the contents of 'list_to_write' to 'filepath'.

        Args:
            list_to_write (list of str): Content to be written.
            filepath (str): Full file to output file to be written.
        """

        f= open(filepath, "w")
        f.write("LOG FILE\n")
        for element in list_to_write:
            f.write(element+'\n')
        f.close()
