"""Write the daily crypto-style fixture used by the desk-scale smoke run.

The columns mimic Coin Metrics community network data: two random-walk
market series and three network-activity series with weekly structure.
"""
import argparse
from pathlib import Path

from decokan.synthetic import crypto_like_frame


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", help="destination CSV")
    p.add_argument("--rows", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    crypto_like_frame(args.rows, seed=args.seed).to_csv(args.out, index=False)
    print(f"wrote {args.rows} rows to {args.out}")


if __name__ == "__main__":
    main()
