"""Regenerate the golden dataset CSVs (only after an intentional generator change)."""

import os

from bnnood import datasets

HERE = os.path.dirname(os.path.abspath(__file__))

GOLDEN = {
    "gmm_seed0.csv": lambda: datasets.gen_gmm(0),
    "rings_seed0.csv": lambda: datasets.gen_two_rings(0),
    "reg1d_seed0.csv": lambda: datasets.gen_1d_regression(0),
    "periodic_seed0.csv": lambda: datasets.gen_periodic_1d(0),
    "cl_task1_seed0.csv": lambda: datasets.gen_cl_tasks(0)[0],
    "cl_task2_seed0.csv": lambda: datasets.gen_cl_tasks(0)[1],
}

if __name__ == "__main__":
    for name, make in GOLDEN.items():
        datasets.save_csv(make(), os.path.join(HERE, name))
        print(name)
