"""Numerical convergence of the nominal storage efficiency and retrieved phase.

Varies the time-step cap, the slice count and the switch ramp one at a time
around the defaults (20 ns, 32 slices, 10 ns) at zero and 2.2 GHz detuning.
"""

import argparse
import math
from pathlib import Path

from eit_storage.analysis import retrieved_phase, storage_efficiency, write_table
from eit_storage.protocol import CellConfig, FieldTimeline, run_storage
from phase_regimes import params

CASES = [
    ("default", 20e-9, 32, 10e-9),
    ("dt_max 10 ns", 10e-9, 32, 10e-9),
    ("dt_max 40 ns", 40e-9, 32, 10e-9),
    ("64 slices", 20e-9, 64, 10e-9),
    ("ramp 5 ns", 20e-9, 32, 5e-9),
]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--out", default="results")
    args = parser.parse_args()

    rows = []
    for d_hz in (0.0, 2.2e9):
        p = params(d_hz)
        base = None
        for name, dt_max, slices, ramp in CASES:
            res = run_storage(FieldTimeline.standard(p, ramp_time=ramp), CellConfig(n_slices=slices), p, dt_max=dt_max)
            eff, phase = storage_efficiency(res), retrieved_phase(res)
            base = base or (eff, phase)
            rows.append((d_hz / 1e9, name, eff, eff / base[0] - 1, phase, phase - base[1]))
            print(f"{d_hz / 1e9:3.1f} GHz {name:13s} efficiency {eff:.5f} ({eff / base[0] - 1:+.2e})  "
                  f"phase {phase:+.5f} ({phase - base[1]:+.1e})", flush=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(
        out / "convergence.csv",
        ("detuning_ghz", "case", "efficiency", "efficiency_change", "phase_rad", "phase_change_rad"),
        rows,
    )


if __name__ == "__main__":
    main()
