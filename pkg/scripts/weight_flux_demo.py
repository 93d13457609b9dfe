"""Layer-weight statistics against spectral flux on synthetic utterances.

Compares a trace whose second layer follows the flux with the weights of an
untrained mixture predictor on a synthetic layer stack of matching length.
"""
import argparse

import numpy as np

from speechtok import analysis, dsp, synth
from speechtok.mlda import MixturePredictor, predict_mixture_weights, synthetic_stack


def describe(name, stats):
    corr = ", ".join("-" if c is None else f"{c:+.3f}" for c in stats.flux_corr)
    means = ", ".join(f"{m:.3f}" for m in stats.layer_means)
    print(f"{name:10s} mean H {stats.mean_entropy:.3f}  ENL {stats.enl:.3f}  means [{means}]  flux corr [{corr}]")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--utterances", type=int, default=5)
    ap.add_argument("--csv", help="write the per-frame table of the first utterance here")
    args = ap.parse_args()

    planted, random_init, fluxes = [], [], []
    for seed in range(args.utterances):
        flux = dsp.spectral_flux(dsp.stft_mel(synth.utterance(seed)))
        fluxes.append(flux)
        planted.append(analysis.planted_flux_trace(flux, layer=1))
        stack = synthetic_stack(flux.size, 16, seed=seed)
        p = MixturePredictor.init(16, 4, seed=seed, scale=1.0)
        random_init.append(analysis.WeightTrace(predict_mixture_weights(p, stack.last), list(stack.layer_ids)))

    for mode in ("pooled", "per_utterance"):
        print(f"-- {mode}")
        describe("planted", analysis.corpus_weight_stats(planted, fluxes, mode))
        describe("untrained", analysis.corpus_weight_stats(random_init, fluxes, mode))

    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(analysis.frame_table_csv(planted[0], fluxes[0]))
    print(f"flux frames per utterance: {[int(np.size(f)) for f in fluxes]}")


if __name__ == "__main__":
    main()
