"""Run the bundled two-in/two-out scenario and print the initial and final state per branch."""
import argparse

import numpy as np

from hjjunction import hj_scheme as hj
from hjjunction.junction import densities_from_labels
from hjjunction.scenario import load_scenario, write_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="also write the scenario outputs here")
    args = ap.parse_args()

    sc = load_scenario("table1.scenario")
    labels0, ghosts = hj.initial_state(sc.junction, sc.grid, sc.initial)
    run = hj.run(sc.junction, sc.grid, labels0, ghosts, snapshot_times=sc.outputs.snapshot_times_s)
    print(f"dt = {run.dt_s:.4f} s (limit {run.cfl.dt_max_s:.4f} s), {run.n_steps} steps, {run.wall_time_s:.2f} s wall")
    dx_km = run.grid.dx_km
    print(f"{'branch':>6} {'rho(0)':>10} {'flux(0)':>10} {'rho(350)':>10} {'flux(350)':>10}")
    s0, s1 = run.snapshot_at(0), run.snapshot_at(350)
    r0 = densities_from_labels(sc.junction, run.grid, s0.values)
    r1 = densities_from_labels(sc.junction, run.grid, s1.values)
    w0 = hj.junction_rate(sc.junction, s0.values, dx_km)
    w1 = hj.junction_rate(sc.junction, s1.values, dx_km)
    for b, a, z in zip(sc.junction.branches, r0, r1):
        print(f"{b.name:>6} {np.mean(a):10.2f} {b.gamma * w0:10.2f} {np.mean(z):10.2f} {b.gamma * w1:10.2f}")
    if args.out:
        write_outputs(run, sc, args.out)


if __name__ == "__main__":
    main()
