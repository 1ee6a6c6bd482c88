"""Train on the noisy trending sine and compare against persistence."""
import argparse

from decokan.model import DecoKan, ModelConfig
from decokan.synthetic import synthetic_series
from decokan.training import TimeSeriesDataset, TrainOptions, persistence_baseline, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rows", type=int, default=1200)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--d-model", type=int, default=16)
    args = p.parse_args()

    ds = TimeSeriesDataset(synthetic_series(args.rows), ["y"])
    cfg = ModelConfig(lookback=48, horizon=12, channels=1, patch=8, stride=4,
                      d_model=args.d_model, dropout=0.1)
    base = persistence_baseline(ds, "test", cfg.lookback, cfg.horizon).mse
    print(f"persistence test mse {base:.5f}")
    for seed in args.seeds:
        rep = train(DecoKan(cfg, seed), ds, TrainOptions(lr=1e-3, batch_size=32, epochs=args.epochs,
                                                         seed=seed))
        print(f"seed {seed}: test mse {rep.test_mse:.5f} ratio {rep.test_mse / base:.3f} "
              f"best epoch {rep.best_epoch} ({rep.wall_clock:.0f} s)")


if __name__ == "__main__":
    main()
