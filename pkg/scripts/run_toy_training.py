"""Train the toy tokenizer pipeline and print the loss curve every few steps.

    python3 scripts/run_toy_training.py --steps 500 --out runs/toy
"""
import argparse
from pathlib import Path

from speechtok import training


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = training.ToyConfig(steps=args.steps, seed=args.seed, lam=args.lam)
    print(f"{'step':>5} {'ce':>8} {'recon':>8} {'total':>8} {'acc':>6}")

    def show(rec):
        if rec["step"] % args.every == 0 or rec["step"] == cfg.steps:
            print(f"{rec['step']:5d} {rec['ce']:8.4f} {rec['recon']:8.4f} {rec['total']:8.4f} {rec['accuracy']:6.3f}")

    hist = training.train_toy(cfg, callback=show)
    first, last = hist.records[0]["total"], hist.records[-1]["total"]
    print(f"total loss ratio {last / first:.3f}, chance accuracy {1 / cfg.V:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.csv").write_text(hist.to_csv())
        training.save_checkpoint(hist.params, out / "checkpoint")


if __name__ == "__main__":
    main()
