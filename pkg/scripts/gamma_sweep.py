"""Mean absolute spline coefficient after training, per regularization weight."""
import argparse

from decokan.model import DecoKan, ModelConfig
from decokan.synthetic import synthetic_series
from decokan.training import TimeSeriesDataset, TrainOptions, mean_abs_spline_coeff, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--gammas", type=float, nargs="+", default=[0.0, 1e-5, 1e-2])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--rows", type=int, default=800)
    p.add_argument("--epochs", type=int, default=30)
    args = p.parse_args()

    ds = TimeSeriesDataset(synthetic_series(args.rows), ["y"])
    cfg = ModelConfig(lookback=48, horizon=12, channels=1, patch=8, stride=4, d_model=8)
    print("seed," + ",".join(f"gamma={g:g}" for g in args.gammas))
    for seed in args.seeds:
        row = []
        for gamma in args.gammas:
            model = DecoKan(cfg, seed)
            train(model, ds, TrainOptions(lr=1e-3, batch_size=32, epochs=args.epochs, seed=seed,
                                          gamma=gamma, patience=10 ** 6))
            row.append(mean_abs_spline_coeff(model))
        print(f"{seed}," + ",".join(f"{v:.6f}" for v in row))


if __name__ == "__main__":
    main()
