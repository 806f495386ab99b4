"""Write the synthetic decay trace used by the default ``fit`` run."""

from pathlib import Path

import numpy as np

from vvstark.export import Column, csv_text

OUT = Path(__file__).resolve().parents[1] / "configs" / "data" / "decay_trace.csv"


def main(seed=7):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 5.0, 200)
    sigma = np.full(t.size, 0.02)
    y = np.exp(-0.8333 * t) + rng.normal(0.0, sigma)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(csv_text([Column("t", "us", t), Column("occupancy", "", y),
                             Column("sigma", "", sigma)],
                            (("source", "synthetic exp(-0.8333 t), noise 0.02"), ("seed", seed))))
    print(OUT)


if __name__ == "__main__":
    main()
