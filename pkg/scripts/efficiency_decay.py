"""Storage efficiency against dark time at zero detuning, with a single-exponential fit.

The dark-time Raman decay follows the "efficiency" convention, so the fitted
decay time should sit at 1/Gamma_R = 1/(2 pi 14 kHz) = 11.4 us.
"""

import argparse
import math
from pathlib import Path

import numpy as np

from eit_storage import config
from eit_storage.analysis import EfficiencyPoint, fit_exponential_decay, storage_efficiency, write_table
from eit_storage.cli import simulate


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="scenario TOML (defaults if omitted)")
    parser.add_argument("--out", default="results")
    parser.add_argument("--points", type=int, default=10)
    args = parser.parse_args()

    cfg = config.load(args.config) if args.config else config.ScenarioConfig()
    taus = np.linspace(1e-6, 30e-6, args.points)
    points = []
    for tau in taus:
        eff = storage_efficiency(simulate(cfg.with_axis_value("storage_time", float(tau))))
        points.append(EfficiencyPoint(float(tau), 0.0, eff))
        print(f"tau {tau * 1e6:5.2f} us  efficiency {eff:.5f}", flush=True)
    fit = fit_exponential_decay(points)
    model = 1 / (2 * math.pi * cfg.system.gamma_raman_hz)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "efficiency_decay.csv", ("storage_time_s", "efficiency"), [(p.storage_time, p.efficiency) for p in points])
    print(f"fitted decay time {fit.decay_time * 1e6:.3f} us, 1/Gamma_R {model * 1e6:.3f} us")


if __name__ == "__main__":
    main()
