"""Prosody metrics on synthetic pairs: self, half gain, and pitch shifts.

Prints the corpus mean of each metric per condition, in the column order of
the usual prosody table.
"""
import argparse

from speechtok import prosody, synth


def conditions(seed):
    w = synth.utterance(seed)
    yield "identity", w, w
    yield "gain 0.5", w, synth.utterance(seed, gain=0.5)
    for st in (1.0, 4.0):
        ref, hyp = synth.pitch_shifted_pair(seed, semitones=st)
        yield f"+{st:g} semitones", ref, hyp
    yield "other utterance", w, synth.utterance(seed + 100)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--utterances", type=int, default=10)
    args = ap.parse_args()

    reports = {}
    for seed in range(args.utterances):
        for name, ref, hyp in conditions(seed):
            reports.setdefault(name, []).append(prosody.evaluate_pair(ref, hyp))

    labels = list(prosody.TABLE_COLUMNS)
    print(f"{'condition':18s}" + "".join(f"{l:>11s}" for l in labels))
    for name, reps in reports.items():
        agg = prosody.aggregate(reps)
        cells = ["-" if agg[l]["mean"] is None else f"{agg[l]['mean']:.4f}" for l in labels]
        print(f"{name:18s}" + "".join(f"{c:>11s}" for c in cells))


if __name__ == "__main__":
    main()
