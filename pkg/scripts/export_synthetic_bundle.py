#!/usr/bin/env python3
"""Write a synthetic dataset to the CSV bundle layout.

Useful for exercising the CSV ingestion path or as a template for
formatting real data:

    python3 scripts/export_synthetic_bundle.py out/bundle --days 130
"""

import argparse

from enspost.dataio import SyntheticSpec, generate_synthetic, write_csv_bundle


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("directory")
    parser.add_argument("--days", type=int, default=130)
    parser.add_argument("--members", type=int, default=20)
    parser.add_argument("--train-days", type=int, default=70)
    parser.add_argument("--horizons", default="6,12,24")
    parser.add_argument("--speed-bias", type=float, default=2.0)
    parser.add_argument("--dispersion", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=5)
    args = parser.parse_args()

    spec = SyntheticSpec(
        days=args.days,
        members=args.members,
        train_days=args.train_days,
        horizons=tuple(int(h) for h in args.horizons.split(",")),
        bias={"speed": args.speed_bias} if args.speed_bias else {},
        dispersion=args.dispersion,
    )
    bundle = generate_synthetic(spec, seed=args.seed)
    write_csv_bundle(bundle, args.directory)
    print(f"wrote bundle to {args.directory}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
