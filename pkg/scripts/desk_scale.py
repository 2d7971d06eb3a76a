"""Five-seed synthetic benchmark: full model vs. popularity vs. the no-sequence-attention ablation.

    python scripts/desk_scale.py --seeds 0 1 2 3 4
"""
import argparse
import statistics

from phgr.experiments import desk_scale_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--users", type=int, default=2000)
    ap.add_argument("--items", type=int, default=500)
    args = ap.parse_args()
    results = []
    for s in args.seeds:
        r = desk_scale_run(s, args.users, args.items,
                           progress=lambda n, h, e: print(f"  {n:<8s} H@10={h:.3f} epochs={e}", flush=True))
        results.append(r)
        print(f"seed {s}: {r.hit}  regions={['%.1f' % x for x in r.regions]} "
              f"nonincreasing={r.regions_nonincreasing}  {r.seconds:.0f}s", flush=True)
    med = {k: statistics.median(r.hit[k] for r in results) for k in results[0].hit}
    print("median H@10:", {k: round(v, 4) for k, v in med.items()})
    print("PHGR / popularity:", round(med["PHGR"] / med["popularity"], 3))
    print("region property seeds:", sum(r.regions_nonincreasing for r in results), "/", len(results))
    print("total seconds:", round(sum(r.seconds for r in results)))


if __name__ == "__main__":
    main()
