"""Grid refinement on the bundled scenario: sup-norm gaps between consecutive levels."""
import argparse

from hjjunction import analysis
from hjjunction.scenario import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", default="5,2.5,1.25,0.625")
    ap.add_argument("--times", default="50,100,250")
    args = ap.parse_args()
    levels = [float(x) for x in args.levels.split(",")]
    times = [float(x) for x in args.times.split(",")]
    sc = load_scenario("table1.scenario")
    rep = analysis.refinement_study(sc.junction, sc.initial, levels, times)
    print(f"{'dx (m)':>8} " + " ".join(f"{'t=' + format(t, 'g'):>12}" for t in times) + "   (labels | densities)")
    for lv in rep.levels[:-1]:
        print(f"{lv.dx_m:8g} " + " ".join(f"{x:12.5g}" for x in lv.label_diff)
              + "   " + " ".join(f"{x:9.4g}" for x in lv.density_diff))


if __name__ == "__main__":
    main()
