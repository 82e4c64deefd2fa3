"""Regenerate the bundled ratings-like triplet file.

Users and items get rank-5 Gaussian tastes; about 8% of the pairs are rated
on a 1-5 star scale (rounded and clipped), one-based indices.
"""
from pathlib import Path

import numpy as np

USERS, ITEMS, RANK, DENSITY, SEED = 600, 400, 5, 0.08, 2024
OUT = Path(__file__).resolve().parents[1] / "src" / "nnfn" / "datasets" / "ratings_like.csv"


def main():
    rng = np.random.default_rng(SEED)
    taste = rng.standard_normal((USERS, RANK)) @ rng.standard_normal((RANK, ITEMS)) / np.sqrt(RANK)
    bias_u = 0.3 * rng.standard_normal((USERS, 1))
    bias_i = 0.3 * rng.standard_normal((1, ITEMS))
    score = 3.2 + bias_u + bias_i + 0.9 * taste + 0.5 * rng.standard_normal((USERS, ITEMS))
    stars = np.clip(np.rint(score), 1, 5)
    r, c = np.nonzero(rng.random((USERS, ITEMS)) < DENSITY)
    with OUT.open("w") as fh:
        fh.write("user,item,rating\n")
        for i, j in zip(r, c):
            fh.write(f"{i + 1},{j + 1},{int(stars[i, j])}\n")
    print(f"wrote {len(r)} ratings to {OUT}")


if __name__ == "__main__":
    main()
