"""Command-line interface: ``sfconv <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from . import complexity, imstats
from .harness import checkpoint as ckpt_io
from .harness import config as config_io
from .harness import data as data_io
from .harness import train as engine

log = logging.getLogger("sfconv")


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(d) for d in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected BxCxHxW")
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected BxCxHxW")
    return dims


def _open_out(path):
    if path is None or str(path) == "-":
        return sys.stdout, False
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8"), True


def _write_csv(rows, fields, path=None):
    fh, close = _open_out(path)
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if close:
            fh.close()


def cmd_train(args):
    cfg = config_io.load_config(args.config)
    out = Path(args.out)
    result = engine.train(cfg, out_dir=out, resume=args.resume)
    last = result.epoch_rows[-1]
    print(f"epochs={result.epoch} steps={result.state.step} total_loss={last['total_loss']:.6g} "
          f"train_metric={last['train_metric']:.4f} eval_metric={last['eval_metric']:.4f} "
          f"mean_layer_kl={last['mean_layer_kl']:.6g}")
    if not args.no_figures:
        from . import plotting

        plotting.plot_training(result.epoch_rows, out / "training.png")
        spectra = engine.layer_spectra(result.model)
        if spectra:
            plotting.plot_spectra(spectra, out / "spectra.png")
    return 0


def cmd_eval(args):
    name, value = engine.evaluate_checkpoint(args.checkpoint, args.data)
    _write_csv([{"metric": name, "value": f"{value:.6f}"}], ["metric", "value"])
    return 0


def cmd_bench(args):
    cfg = config_io.load_config(args.config)
    variants = [("configured", cfg)]
    if args.compare:
        full = cfg.replace(model=dataclasses.replace(cfg.model, conv="full", kinds=()))
        variants.append(("full-conv", full))
    rows = []
    for label, c in variants:
        model = engine.build_model(c)
        rep = complexity.report(model, args.input_shape, trials=args.trials, warmup=args.warmup,
                                measure=not args.no_fps)
        print(f"[{label}]\n{rep.describe()}", file=sys.stderr)
        rows.append({"model": label, **rep.as_row()})
    _write_csv(rows, ["model", "params", "flops", "fps", "input_shape", "batch_size", "threads"],
               args.csv)
    return 0


def cmd_spectrum(args):
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    _, model = engine.model_from_checkpoint(ckpt)
    spectra = engine.layer_spectra(model)
    rows = []
    for name, (sigma, s) in spectra.items():
        layer, _, part = name.rpartition(".")
        for i, (a, b) in enumerate(zip(sigma, s)):
            rows.append({"layer": layer, "matrix": part, "index": i,
                         "sigma": repr(float(a)), "normalized": repr(float(b))})
    _write_csv(rows, ["layer", "matrix", "index", "sigma", "normalized"], args.out)
    if args.figures:
        from . import plotting

        fig_dir = Path(args.figures)
        plotting.plot_spectra(spectra, fig_dir / "spectra.png")
        plotting.plot_histograms({"weights": imstats.weight_histogram(model, bins=args.bins)},
                                 fig_dir / "weights.png")
    return 0


def cmd_stats(args):
    reports = imstats.corpus_stats(args.input, args.bins)
    if not reports:
        log.error("no PGM/PPM/TNSR images found under %s", args.input)
        return 1
    rows = []
    for path, rep in reports:
        rows.append({"path": str(path), "n": rep.n,
                     "skewness": "" if rep.skewness is None else repr(rep.skewness),
                     "kurtosis": "" if rep.kurtosis is None else repr(rep.kurtosis)})
        if args.hist_dir:
            hist_path = Path(args.hist_dir) / (path.stem + ".hist.csv")
            _write_csv([{"bin_edge_low": repr(lo), "bin_edge_high": repr(hi), "count": c}
                        for lo, hi, c in rep.rows()],
                       ["bin_edge_low", "bin_edge_high", "count"], hist_path)
    _write_csv(rows, ["path", "n", "skewness", "kurtosis"], args.out)
    print(f"mean skewness {imstats.mean_skewness(reports):.4f} over {len(reports)} images",
          file=sys.stderr)
    return 0


def cmd_synth(args):
    ds = data_io.synth_dataset(args.kind, args.n, args.seed)
    out = data_io.save_dataset(ds, args.out, pgm=not args.no_pgm)
    print(f"wrote {len(ds)} {args.kind} samples to {out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfconv", description="Factorized convolutions with "
                                "singular-value equalization: training, benchmarks, diagnostics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a backbone from an INI config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="directory for metrics, checkpoints and figures")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--no-figures", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="dataset directory (default: the config's held-out split)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="parameter / FLOP counts and measured FPS")
    b.add_argument("--config", required=True)
    b.add_argument("--input-shape", required=True, type=_shape, metavar="BxCxHxW")
    b.add_argument("--trials", type=int, default=50)
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--no-fps", action="store_true", help="skip the timing measurement")
    b.add_argument("--compare", action="store_true", help="also report the all-full-conv variant")
    b.add_argument("--csv", help="write the CSV rows here instead of stdout")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("spectrum", help="dump per-layer singular values of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", help="CSV path (default stdout)")
    s.add_argument("--figures", help="directory for spectra.png and weights.png")
    s.add_argument("--bins", type=int, default=100)
    s.set_defaults(func=cmd_spectrum)

    st = sub.add_parser("stats", help="pixel histogram skewness/kurtosis of an image corpus")
    st.add_argument("--input", required=True)
    st.add_argument("--bins", type=int, default=256)
    st.add_argument("--out", help="CSV path (default stdout)")
    st.add_argument("--hist-dir", help="write one histogram CSV per image here")
    st.set_defaults(func=cmd_stats)

    sy = sub.add_parser("synth", help="write a synthetic dataset")
    sy.add_argument("--kind", required=True, choices=["classify", "segment"])
    sy.add_argument("--n", type=int, required=True)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out", required=True)
    sy.add_argument("--no-pgm", action="store_true")
    sy.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (config_io.ConfigError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
