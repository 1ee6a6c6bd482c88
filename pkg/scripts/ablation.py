"""Train the four mixer variants on the synthetic task and print test metrics."""
import argparse

from decokan.model import ABLATIONS, ModelConfig, build_ablation
from decokan.synthetic import synthetic_series
from decokan.training import TimeSeriesDataset, TrainOptions, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rows", type=int, default=1200)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    ds = TimeSeriesDataset(synthetic_series(args.rows), ["y"])
    print("variant,parameters,test_mse,test_mae")
    for mode in ABLATIONS:
        cfg = ModelConfig(lookback=48, horizon=12, channels=1, patch=8, stride=4, d_model=16,
                          ablation=mode)
        model = build_ablation(cfg, args.seed)
        rep = train(model, ds, TrainOptions(lr=1e-3, batch_size=32, epochs=args.epochs,
                                            seed=args.seed))
        print(f"{mode},{model.num_parameters()},{rep.test_mse:.6f},{rep.test_mae:.6f}")


if __name__ == "__main__":
    main()
