"""Command-line entry point: ``speechtok <subcommand> ...``.

Exit codes: 0 success, 1 usage/configuration error, 2 partial data failure.

Every subcommand accepts ``--config FILE`` (JSON) whose keys mirror the long
flag names (``--gpe-threshold`` -> ``gpe_threshold``); explicit flags win over
the file. The file may hold flat keys or one object per subcommand name.
``SPEECHTOK_CONFIG`` names a default config file.
"""
import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, dsp, fsq, prosody, rates, training
from .gradcheck import CHECKS, run_suite

CONFIG_ENV = "SPEECHTOK_CONFIG"


class UsageError(Exception):
    pass


def _add_frame_flags(p):
    p.add_argument("--window-ms", type=float, default=25.0)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.add_argument("--fft-size", type=int, default=512)
    p.add_argument("--n-mels", type=int, default=80)


def _frame_params(args):
    try:
        return dsp.FrameParams(args.window_ms, args.hop_ms, args.fft_size, args.n_mels)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _dump(obj):
    return json.dumps(obj, indent=1) + "\n"


# ---------------------------------------------------------------- metrics

def read_manifest(path):
    """``id,ref,hyp`` CSV, or JSON lines with the same keys (``.jsonl``)."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    text = path.read_text()
    entries = []
    if path.suffix in (".jsonl", ".ndjson"):
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entries.append((str(obj["id"]), str(obj["ref"]), str(obj["hyp"])))
            except (ValueError, KeyError, TypeError):
                raise UsageError(f"{path}:{lineno}: expected an object with id, ref, hyp") from None
    else:
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None:
            return []
        if not {"id", "ref", "hyp"} <= set(reader.fieldnames):
            raise UsageError(f"{path}: header must contain id,ref,hyp")
        for row in reader:
            entries.append((row["id"], row["ref"], row["hyp"]))
    seen = set()
    for uid, ref, hyp in entries:
        if uid in seen:
            raise UsageError(f"duplicate utterance id {uid!r}")
        if not uid or not ref or not hyp:
            raise UsageError(f"empty field in manifest entry {uid!r}")
        seen.add(uid)
    base = path.parent
    return [(u, str(base / r), str(base / h)) for u, r, h in entries]


def _eval_entry(job):
    uid, ref, hyp, config = job
    try:
        report = prosody.evaluate_pair(dsp.load_wav(ref), dsp.load_wav(hyp), config)
    except Exception as exc:  # one bad pair must not sink the batch
        return {"id": uid, "ref": ref, "hyp": hyp, "error": f"{type(exc).__name__}: {exc}"}
    d = report.to_dict()
    diag = d.pop("diagnostics")
    return {"id": uid, "ref": ref, "hyp": hyp, "metrics": d, "diagnostics": diag}


def summary_csv(results):
    reports = [prosody.MetricReport(**r["metrics"]) for r in results if "metrics" in r]
    agg = prosody.aggregate(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    labels = list(prosody.TABLE_COLUMNS)
    w.writerow(["statistic"] + labels)
    for stat in ("mean", "median", "n"):
        w.writerow([stat] + ["" if agg[l][stat] is None else repr(agg[l][stat]) for l in labels])
    return buf.getvalue(), agg


def cmd_metrics(args):
    config = prosody.EvalConfig(
        frame=_frame_params(args), n_mfcc=args.n_mfcc, gpe_threshold=args.gpe_threshold,
        fmin=args.fmin, fmax=args.fmax, yin_threshold=args.yin_threshold,
    )
    if args.workers is not None and args.workers < 1:
        raise UsageError("--workers must be at least 1")
    entries = read_manifest(args.manifest)
    if not entries:
        print("error: no entries in manifest", file=sys.stderr)
        return 1

    jobs, results = [], {}
    for uid, ref, hyp in entries:
        missing = [p for p in (ref, hyp) if not Path(p).is_file()]
        if missing:
            results[uid] = {"id": uid, "ref": ref, "hyp": hyp, "error": f"missing file: {missing[0]}"}
        else:
            jobs.append((uid, ref, hyp, config))

    workers = args.workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            done = list(pool.map(_eval_entry, jobs))
    else:
        done = [_eval_entry(j) for j in jobs]
    for r in done:
        results[r["id"]] = r
    ordered = [results[uid] for uid, _, _ in entries]

    _write(args.out, "".join(json.dumps(r) + "\n" for r in ordered))
    text, agg = summary_csv(ordered)
    if args.summary:
        _write(args.summary, text)
    failures = [r for r in ordered if "error" in r]
    if args.json:
        sys.stdout.write(_dump({"pairs": len(ordered), "failed": len(failures), "summary": agg}))
    elif args.out not in (None, "-"):
        sys.stdout.write(text)
    for r in failures:
        print(f"failed {r['id']}: {r['error']}", file=sys.stderr)
    return 2 if failures else 0


# ---------------------------------------------------------------- fsq

def read_vectors(path):
    """Rows of numbers; a non-numeric first row is taken as a header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if lineno == 1:
                    continue
                raise UsageError(f"{path}:{lineno}: non-numeric value") from None
            if rows and len(vals) != len(rows[0]):
                raise UsageError(f"{path}:{lineno}: expected {len(rows[0])} values, got {len(vals)}")
            if not all(np.isfinite(vals)):
                raise UsageError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise UsageError(f"{path}: no vectors")
    return np.array(rows)


def _vectors_csv(prefix, mat, extra=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = [f"{prefix}{j}" for j in range(mat.shape[1])]
    w.writerow(cols + list(extra or {}))
    for t, row in enumerate(mat):
        tail = [repr(float(v[t])) for v in (extra or {}).values()]
        w.writerow([repr(float(v)) for v in row] + tail)
    return buf.getvalue()


def cmd_fsq(args):
    if args.levels < 2 or args.d < 1 or not args.tau > 0:
        raise UsageError("need --levels >= 2, --d >= 1 and --tau > 0")
    bits = fsq.bits_per_token(args.d, args.levels)
    summary = {"d": args.d, "L": args.levels, "bits_per_token": bits}

    if args.decode:
        if not Path(args.input).is_file():
            raise UsageError(f"input not found: {args.input}")
        try:
            idx = fsq.read_code_stream(Path(args.input).read_text(), args.d, args.levels)
        except ValueError as exc:
            raise UsageError(f"{args.input}: {exc}") from None
        latent = fsq.dequantize(idx, args.levels)
        _write(args.recon, _vectors_csv("q", latent))
        summary["tokens"] = int(idx.shape[0])
    else:
        x = read_vectors(args.input)
        if args.stage == "latent":
            if x.shape[1] != args.d:
                raise UsageError(f"latent vectors have {x.shape[1]} dims, --d is {args.d}")
            code = fsq.quantize(x, args.levels)
            u_bar, x_hat = x, code.q
            recon_err = np.zeros(x.shape[0])
        else:
            try:
                cfg = fsq.FsqConfig(x.shape[1], args.d, args.levels, args.tau)
                params = (fsq.FsqParams.identity(cfg) if args.init == "identity"
                          else fsq.FsqParams.init(cfg, seed=args.seed))
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            fwd = fsq.fsq_roundtrip(x, params, cfg)
            code, u_bar, x_hat = fwd.code, fwd.u_bar, fwd.x_hat
            recon_err = ((x - x_hat) ** 2).sum(axis=1)
        latent_err = ((u_bar - code.q) ** 2).sum(axis=1)
        _write(args.codes, fsq.write_code_stream(code.indices, args.levels))
        if args.codes_csv:
            _write(args.codes_csv, fsq.write_code_csv(code.indices))
        if args.recon:
            _write(args.recon, _vectors_csv("x", x_hat, {"latent_err": latent_err, "recon_err": recon_err}))
        summary["tokens"] = int(x.shape[0])
        summary["mean_latent_err"] = float(latent_err.mean())
        summary["mean_recon_err"] = float(recon_err.mean())

    # keep stdout clean when it carries the main output
    main_out = args.recon if args.decode else args.codes
    stream = sys.stderr if main_out in (None, "-") else sys.stdout
    if args.json:
        stream.write(_dump(summary))
    else:
        print(" ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()), file=stream)
    return 0


# ---------------------------------------------------------------- rates

DEFAULT_RATE_SPEC = [
    {"model": "EnCodec", "scheme": "rvq", "frame_rate": 75, "quantizers": 2, "codebook": 1024,
     "reported_bitrate": 1500},
    {"model": "SpeechTokenizer", "scheme": "rvq", "frame_rate": 50, "quantizers": 2, "codebook": 1024,
     "reported_bitrate": 1000},
    {"model": "Text-aligned FSQ d=64 L=8", "scheme": "fsq", "frame_rate": 2.62, "d": 64, "levels": 8,
     "reported_bitrate": 600},
    {"model": "Text-aligned FSQ (measured)", "scheme": "measured", "tokens": 51903,
     "seconds": 19805.2, "d": 64, "levels": 8},
]


def cmd_rates(args):
    if args.spec:
        try:
            spec = json.loads(Path(args.spec).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read rate spec: {exc}") from None
    else:
        spec = DEFAULT_RATE_SPEC
    if not isinstance(spec, list) or not spec:
        raise UsageError("rate spec must be a non-empty JSON list")
    try:
        rows = [rates.row_from_spec(e) for e in spec]
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    if args.json or args.format == "json":
        _write(args.out, _dump(rates.table_rows(rows, args.precision)))
    else:
        _write(args.out, rates.table_csv(rows, args.precision))
    for r in rows:
        if r.note:
            print(f"note: {r.model}: {r.note}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- train-toy

def cmd_train_toy(args):
    try:
        config = training.ToyConfig(
            T=args.T, N=args.N, d_h=args.d_h,
            layer_ids=tuple(int(v) for v in str(args.layers).split(",")),
            d=args.d, L=args.levels, tau=args.tau, V=args.units, text_vocab=args.text_vocab,
            mlp_hidden=args.mlp_hidden, dec_hidden=args.dec_hidden, unit_dim=args.unit_dim,
            lam=args.lam, lr=args.lr, steps=args.steps, batch=args.batch, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        hist = training.train_toy(config)
    except training.TrainingDivergence as exc:
        print(f"error: training diverged at step {exc.step}", file=sys.stderr)
        return 2
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(hist.to_csv())
    (out / "history.json").write_text(hist.to_json())
    training.save_checkpoint(hist.params, out / "checkpoint")
    first, last = hist.records[0], hist.records[-1]
    summary = {
        "initial_total": first["total"], "final_total": last["total"],
        "ratio": last["total"] / first["total"], "final_accuracy": last["accuracy"],
        "chance": 1.0 / config.V, "out_dir": str(out),
    }
    if args.json:
        sys.stdout.write(_dump(summary))
    else:
        print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))
    return 0


# ---------------------------------------------------------------- analyze-weights

def reconcile_flux(flux, n_trace, max_gap=2):
    """Nearest-frame resampling of ``flux`` to ``n_trace`` frames when lengths differ by <= max_gap."""
    n = flux.size
    if abs(n - n_trace) > max_gap:
        raise UsageError(f"trace has {n_trace} frames but audio has {n} (more than {max_gap} apart)")
    if n == n_trace:
        return flux
    if n_trace == 1:
        return flux[:1]
    idx = np.round(np.arange(n_trace) * (n - 1) / (n_trace - 1)).astype(int)
    return flux[idx]


def cmd_analyze_weights(args):
    p = _frame_params(args)
    try:
        trace = analysis.read_trace_csv(Path(args.trace).read_text())
        wave = dsp.load_wav(args.wav, p.sample_rate)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    flux = reconcile_flux(dsp.spectral_flux(dsp.stft_mel(wave, p)), trace.T)
    stats = analysis.weight_stats(trace, flux)
    doc = stats.to_dict(trace.layer_ids)
    doc["frames"] = trace.T
    if args.frames_csv:
        _write(args.frames_csv, analysis.frame_table_csv(trace, flux))
    _write(args.out, _dump(doc))
    return 0


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(args):
    names = args.only.split(",") if args.only else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    errs = run_suite(args.seed, args.trials, names)
    ok = all(v < args.tolerance for v in errs.values())
    if args.json:
        sys.stdout.write(_dump({"tolerance": args.tolerance, "max_relative_error": errs, "pass": ok}))
    else:
        for name, v in errs.items():
            print(f"{'PASS' if v < args.tolerance else 'FAIL'} {name:9s} max_rel_err={v:.3e}")
    return 0 if ok else 2


# ---------------------------------------------------------------- plumbing

def build_parser():
    parser = argparse.ArgumentParser(prog="speechtok", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
        p.add_argument("--json", action="store_true", help="machine-readable JSON output")
        p.set_defaults(func=func)
        return p

    p = add("metrics", cmd_metrics, "prosody metrics for a manifest of reference/hypothesis pairs")
    p.add_argument("manifest", nargs="?", help="CSV (id,ref,hyp) or JSONL manifest")
    p.add_argument("--out", default="-", help="per-pair JSON lines (default stdout)")
    p.add_argument("--summary", help="corpus summary CSV")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--gpe-threshold", type=float, default=0.2)
    p.add_argument("--n-mfcc", type=int, default=13)
    p.add_argument("--fmin", type=float, default=50.0)
    p.add_argument("--fmax", type=float, default=600.0)
    p.add_argument("--yin-threshold", type=float, default=0.2)
    _add_frame_flags(p)

    p = add("fsq", cmd_fsq, "FSQ encode/decode of a vector file")
    p.add_argument("input", nargs="?", help="CSV of vectors (or a code stream with --decode)")
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--levels", type=int, default=8)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--init", choices=["identity", "random"], default="identity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stage", choices=["input", "latent"], default="input",
                   help="'latent' treats rows as already squashed latents and only quantizes")
    p.add_argument("--decode", action="store_true", help="read a JSONL code stream and dequantize")
    p.add_argument("--codes", default="-", help="JSONL code stream output (default stdout)")
    p.add_argument("--codes-csv", help="code indices as CSV, one column per dimension")
    p.add_argument("--recon", help="reconstruction CSV (with error columns)")

    p = add("rates", cmd_rates, "frame-rate / bitrate comparison table")
    p.add_argument("spec", nargs="?", help="JSON list of rate entries (default: built-in table)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--precision", type=int, default=2)
    p.add_argument("--out", default="-")

    p = add("train-toy", cmd_train_toy, "train the toy tokenizer pipeline on synthetic data")
    defaults = training.ToyConfig()
    for flag, dest, typ in [
        ("--T", "T", int), ("--N", "N", int), ("--d-h", "d_h", int), ("--d", "d", int),
        ("--levels", "levels", int), ("--tau", "tau", float), ("--units", "units", int),
        ("--text-vocab", "text_vocab", int), ("--mlp-hidden", "mlp_hidden", int),
        ("--dec-hidden", "dec_hidden", int), ("--unit-dim", "unit_dim", int),
        ("--lam", "lam", float), ("--lr", "lr", float), ("--steps", "steps", int),
        ("--batch", "batch", int), ("--seed", "seed", int),
    ]:
        attr = {"levels": "L", "units": "V"}.get(dest, dest)
        p.add_argument(flag, dest=dest, type=typ, default=getattr(defaults, attr))
    p.add_argument("--layers", default=",".join(map(str, defaults.layer_ids)),
                   help="comma-separated value layer ids; the last one provides the keys")
    p.add_argument("--out-dir", default="toy_run")

    p = add("analyze-weights", cmd_analyze_weights, "layer-weight statistics against spectral flux")
    p.add_argument("trace", nargs="?", help="CSV: time,w_0,...,w_k")
    p.add_argument("wav", nargs="?")
    p.add_argument("--out", default="-", help="stats JSON (default stdout)")
    p.add_argument("--frames-csv", help="per-frame CSV: time,flux,w_0..w_k,entropy")
    _add_frame_flags(p)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of all analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--only", help=f"comma-separated subset of {','.join(CHECKS)}")
    return parser


REQUIRED_POSITIONALS = {
    "metrics": ["manifest"], "fsq": ["input"], "analyze-weights": ["trace", "wav"],
}


def _load_config(path, command, sub):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    if isinstance(doc.get(command), dict):
        doc = doc[command]
    dests = {a.dest for a in sub._actions} - {"help", "config", "func"}
    out = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise UsageError(f"unknown config key {key!r} for {command}")
        out[dest] = value
    return out


def parse(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    config_path = args.config or os.environ.get(CONFIG_ENV)
    if config_path:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        values = _load_config(config_path, args.command, sub)
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
        # positionals given only in the config file
        for k, v in values.items():
            if getattr(args, k, None) is None:
                setattr(args, k, v)
    for name in REQUIRED_POSITIONALS.get(args.command, []):
        if getattr(args, name) is None:
            raise UsageError(f"{args.command}: missing required argument {name!r}")
    return args


def main(argv=None):
    try:
        args = parse(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
