"""Four-mode ablation (loose/AccuTile x full/Top-K) on each preset of the reference corpus.

Writes ablation.json and prints a markdown table with work counters, timing
and PQ against generator ground truth.
"""

import argparse
import json
import sys
from pathlib import Path

from surfelseg.bench import BenchConfig, check_monotone, run_bench
from surfelseg.synthgen import generate_scene

from make_corpus import CORPUS


def table(results: dict) -> str:
    lines = ["| preset | mode | culling | top_k | rn_total | rn/tile | feature MADs | ms | fps | PQ |",
             "|---|---|---|---|---|---|---|---|---|---|"]
    for preset, rows in results.items():
        for r in rows:
            lines.append(f"| {preset} | {r['mode']} | {r['culling']} | {r['top_k'] or '-'} | "
                         f"{r['rn_total']:.0f} | {r['rn_per_tile']:.1f} | {r['feature_mads']:.3g} | "
                         f"{r['time_ms']:.1f} | {r['fps']:.1f} | {r['pq']:.2f} |")
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="ablation.json")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--topk", type=int, default=24)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)

    config = BenchConfig(warmup=args.warmup, repeats=args.repeats, top_k=args.topk, threads=args.threads)
    results, monotone = {}, {}
    for preset, n, m in CORPUS:
        synth = generate_scene(preset, n, m, seed=args.seed)
        gt = [synth.ground_truth(c) for c in synth.cameras]
        results[preset] = run_bench(synth.scene, synth.cameras, config, gt=gt)
        monotone[preset] = check_monotone(results[preset])
        print(f"{preset}: done", file=sys.stderr)
    Path(args.out).write_text(json.dumps({"config": vars(args), "results": results,
                                          "rn_monotone": monotone}, indent=1))
    print(table(results))
    return 0 if all(monotone.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
