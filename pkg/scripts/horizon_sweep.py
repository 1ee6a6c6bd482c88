"""Train one model per crypto horizon and compare each with persistence."""
import argparse

from decokan.ingestion import CsvSchema, load_csv
from decokan.model import DecoKan, ModelConfig
from decokan.training import TrainOptions, persistence_baseline, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("csv", help="daily crypto CSV (see make_crypto_fixture.py)")
    p.add_argument("--timestamp", default="time")
    p.add_argument("--horizons", type=int, nargs="+", default=[24, 48, 96, 168])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    ds = load_csv(args.csv, CsvSchema(timestamp=args.timestamp))
    print("horizon,decokan_mse,persistence_mse")
    for T in args.horizons:
        cfg = ModelConfig(lookback=96, horizon=T, channels=ds.channels)
        rep = train(DecoKan(cfg, args.seed), ds, TrainOptions(lr=3e-4, batch_size=8,
                                                              epochs=args.epochs, seed=args.seed))
        base = persistence_baseline(ds, "test", 96, T).mse
        print(f"{T},{rep.test_mse:.6f},{base:.6f}")


if __name__ == "__main__":
    main()
