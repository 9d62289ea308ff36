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

from setuptools import setup, find_packages

tests_require = ["pytest"]

setup(
    name="rcd-tools",
    version="0.1.0",
    description="Recursive counterfactual deconfounding for closed-set and open-set recognition",
    keywords="open-set recognition, counterfactual features, deconfounding, OSCR, AUROC",
    author="Recursive Counterfactual Deconfounding tools contributors",
    license="AGPLv3+",
    install_requires=[
        "pyyaml",
        "numpy",
        "pandas",
        "torch",
        "torchvision",
        "scikit-learn",
        "scipy",
        "matplotlib",
    ],
    extras_require={
        "tests": tests_require,
    },
    packages=find_packages(exclude=["tests", "tests.*"]),
    entry_points={"console_scripts": ["rcd = rcdtools.rcdtools:main"]},
    python_requires=">=3.8",
)
