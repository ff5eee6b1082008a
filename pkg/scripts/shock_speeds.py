"""Front speeds on the bundled scenario at a fine grid.

The first front is the backward shock between 30 and 90 veh/km on road 3
before it reaches the junction; the second is the queue climbing road 1
once the junction has become congested.
"""
import argparse

from hjjunction import analysis
from hjjunction import hj_scheme as hj
from hjjunction.density_scheme import DensityField
from hjjunction.junction import GridSpec, densities_from_labels
from hjjunction.scenario import load_scenario

FRONTS = [  # branch index, (left, right) states, time window in s
    (2, (30.0, 90.0), (2.0, 20.0)),
    (0, (15.0, 90.0), (120.0, 300.0)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dx", type=float, default=1.0)
    args = ap.parse_args()
    sc = load_scenario("table1.scenario")
    grid = GridSpec(args.dx, max(w[1] for _, _, w in FRONTS))
    labels0, ghosts = hj.initial_state(sc.junction, grid, sc.initial)
    run = hj.run(sc.junction, grid, labels0, ghosts, record_every=5)
    fields = [DensityField(densities_from_labels(sc.junction, run.grid, s.values), s.step, s.time_s)
              for s in run.snapshots.values()]
    for a, states, window in FRONTS:
        tr = analysis.track_shock(fields, sc.junction, args.dx, a, states=states, window=window)
        # Rankine-Hugoniot for comparison
        d = sc.junction.branches[a].diagram
        rh = (d.flux(states[1]) - d.flux(states[0])) / (states[1] - states[0])
        print(f"road {sc.junction.branches[a].name}: tracked {tr.speed_kmh:8.4f} km/h, "
              f"jump condition {rh:8.4f} km/h, window {window}")


if __name__ == "__main__":
    main()
