"""Mesh refinement leaves the offline error unchanged.

Runs the 1D Laplace study on four meshes with the same five observation
points and prints the mean squared error of the offline estimate per mesh.
"""
from bilevel_tikhonov.experiments import dimension_study
from bilevel_tikhonov.presets import load_preset


def main():
    res = dimension_study(load_preset("laplace1d-dim"), repetitions=50)
    n_list = res.config["study"]["n_list"]
    print("nodes       h   " + "  ".join(f"mse n={n:<5d}" for n in n_list))
    for row in res.rows:
        cells = "  ".join(f"{row[f'mse_n{n}']:.3e}  " for n in n_list)
        print(f"{row['nodes']:5d}  {row['h']:.4f}   {cells}")
    print("max/min ratio per n:", {n: round(v, 3) for n, v in res.summary["flatness"].items()})


if __name__ == "__main__":
    main()
