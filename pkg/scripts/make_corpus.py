"""Generate the reference corpus: one directory per preset with scene, cameras and GT."""

import argparse
import sys

from surfelseg.cli import main as fsgs

# (preset, surfels, instances) sized to run the whole corpus in about a minute
CORPUS = [("room", 3000, 6), ("stack", 2400, 4), ("thin", 800, 6)]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="corpus")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    for preset, n, m in CORPUS:
        rc = fsgs(["gen", "--preset", preset, "--surfels", str(n), "--instances", str(m),
                   "--seed", str(args.seed), "--out", f"{args.out}/{preset}"])
        if rc:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
