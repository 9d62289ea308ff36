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
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from sklearn.manifold import TSNE  # noqa: E402
from rcdtools.utils import Loader  # noqa: E402
from rcdtools.writers import RESULTS_COLUMNS, NOT_APPLICABLE  # noqa: E402


logger = logging.getLogger()

METRICS = [column for column in RESULTS_COLUMNS if column != "step"]
GROUPS = [
    "known causal",
    "unknown causal",
    "known counterfactual",
    "unknown counterfactual",
]
GROUP_COLOURS = {
    "known causal": "tab:blue",
    "unknown causal": "tab:red",
    "known counterfactual": "tab:cyan",
    "unknown counterfactual": "tab:orange",
}


class PostProcessor:
    """This class handles methods associated with post-processing the output.
    """

    @staticmethod
    def collect_sweep_results(sweep_dir, parameter, values, seeds):
        """
        This method opens the 'results.csv' files of all the runs of a hyper-parameter sweep,
        assumed to be located under:
            sweep_dir/{parameter}_{value}/seed_{seed}/results.csv
        and summarises the last row (i.e. the final step) of each of them.

        Args:
            sweep_dir (str):
                Path to the directory of the sweep.
            parameter (str):
                Name of the swept hyper-parameter (e.g. "u").
            values (list):
                Values of 'parameter' that were run.
            seeds (list of int):
                Seeds that were run for each value.

        Returns:
            collected (Pandas DataFrame):
                One row per value, with columns:
                    {parameter}: Value of the hyper-parameter.
                    n_seeds (int): Number of seeds.
                    {metric}_mean, {metric}_std (float): Mean and (population) standard
                    deviation over seeds of acc, auroc, oscr and macro_f1. NaN if a metric is
                    not applicable.
        """

        rows = []
        for value in values:
            finals = []
            for seed in seeds:
                filepath = os.path.join(
                    sweep_dir, "%s_%s" % (parameter, value), "seed_%s" % (seed), "results.csv"
                )
                results = Loader.load_results(filepath)
                finals.append(results.iloc[-1])
            finals = pd.DataFrame(finals)

            row = {parameter: value, "n_seeds": len(seeds)}
            for metric in METRICS:
                row["%s_mean" % (metric)] = finals[metric].mean()
                row["%s_std" % (metric)] = finals[metric].std(ddof=0)
            rows.append(row)

        return pd.DataFrame(rows)

    @staticmethod
    def embed_features(dump, seed=0):
        """
        This method embeds in 2D the causal and counterfactual features of a feature dump
        (see 'FeatureDumps.collect') with t-SNE.

        Args:
            dump (dict of arrays):
                Keys "sample_ids", "is_known", "causal" and, optionally, "counterfactual".
            seed (int):
                Seed of the embedding.

        Returns:
            embedding (Pandas DataFrame):
                One row per embedded feature vector, with columns sample_id, group (one of
                'GROUPS'), x and y.
        """

        is_known = np.asarray(dump["is_known"], dtype=bool)
        origin = np.where(is_known, "known", "unknown")

        features = [np.asarray(dump["causal"])]
        groups = [np.char.add(origin.astype(str), " causal")]
        sample_ids = [np.asarray(dump["sample_ids"]).astype(str)]
        if "counterfactual" in dump:
            features.append(np.asarray(dump["counterfactual"]))
            groups.append(np.char.add(origin.astype(str), " counterfactual"))
            sample_ids.append(sample_ids[0])

        features = np.concatenate(features, axis=0).astype(np.float64)
        n_samples = features.shape[0]
        if n_samples < 2:
            raise ValueError("At least two feature vectors are needed for the embedding")

        tsne = TSNE(
            n_components=2,
            perplexity=float(min(30, n_samples - 1)),
            init="pca",
            learning_rate="auto",
            random_state=seed,
        )
        coordinates = tsne.fit_transform(features)

        return pd.DataFrame(
            {
                "sample_id": np.concatenate(sample_ids),
                "group": np.concatenate(groups),
                "x": coordinates[:, 0],
                "y": coordinates[:, 1],
            }
        )

    @staticmethod
    def plot_embedding(embedding, filepath, title=""):
        """This method saves a scatter plot of 'embedding' coloured by group."""

        fig, ax = plt.subplots(figsize=(7, 6))
        for group in GROUPS:
            selection = embedding[embedding["group"] == group]
            if len(selection) == 0:
                continue
            ax.scatter(
                selection["x"],
                selection["y"],
                s=8,
                alpha=0.6,
                c=GROUP_COLOURS[group],
                label=group,
            )
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        fig.savefig(filepath, dpi=150)
        plt.close(fig)

    @staticmethod
    def export_embeddings(run_dir, seed=0):
        """
        This method embeds and plots every feature dump of a run:
            - run_dir/features_step_{t}.npz -> step_{t}_embedding.png and step_{t}_embedding.csv
            - run_dir/features_baseline.npz (if present) -> baseline_embedding.png and
            baseline_embedding.csv

        Returns:
            figures (list of str): Paths to the figures written, steps first.
        """

        dumps = []
        for filepath in glob.glob(os.path.join(run_dir, "features_step_*.npz")):
            match = re.fullmatch(r"features_step_(\d+)\.npz", os.path.basename(filepath))
            if match is not None:
                dumps.append(
                    (int(match.group(1)), "step_%s" % (match.group(1)), filepath)
                )
        dumps.sort()

        if len(dumps) == 0:
            error_message = "No feature dumps found under %s" % (run_dir)
            logger.critical(error_message)
            raise OSError(error_message)

        baseline_dump = os.path.join(run_dir, "features_baseline.npz")
        if os.path.isfile(baseline_dump):
            dumps.append((0, "baseline", baseline_dump))

        figures = []
        for _, name, filepath in dumps:
            embedding = PostProcessor.embed_features(Loader.load_feature_dump(filepath), seed)
            embedding.to_csv(
                os.path.join(run_dir, "%s_embedding.csv" % (name)),
                index=False,
                float_format="%.6g",
                na_rep=NOT_APPLICABLE,
            )
            figure = os.path.join(run_dir, "%s_embedding.png" % (name))
            PostProcessor.plot_embedding(embedding, figure, title=name.replace("_", " "))
            figures.append(figure)
            logger.info("Embedding of %s written to %s" % (name, figure))

        return figures
