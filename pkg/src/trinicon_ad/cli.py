"""Command-line front end: ``trinicon-ad {simulate,separate,eval,bench}``."""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .activity import DetectorConfig, write_labels_csv
from .bsseval import score
from .directivity import write_directivity_csv
from .errors import DivergenceError, TriniconError
from .pipeline import separate_two_pass
from .room import RoomScenario, load_scenario, parse_scenario_value, save_scenario, synthesize_mixture
from .signal import MultichannelSignal, load_wav, write_wav
from .speech import talker_pair
from .trinicon import TriniconConfig, minimal_distortion, run_offline, save_filter

logger = logging.getLogger("trinicon_ad")

SCORE_COLUMNS = ["perm", "sir1_db", "sir2_db", "sdr1_db", "sdr2_db", "mean_sir_db", "mean_sdr_db"]
BENCH_SCHEMA = "1"
BENCH_COLUMNS = [
    "schema_version", "rt60_ms", "doa1_deg", "doa2_deg", "repetitions",
    "sir_without_ad_db", "sir_with_ad_db", "sir_improvement_db",
    "sdr_input_db", "sdr_without_ad_db", "sdr_with_ad_db", "status",
    "filter_len", "iterations", "step_size", "init_shift", "psd_frames", "duration_s", "seed",
]

EXIT_ERROR = 1
EXIT_DIVERGED = 3


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def _load_sources(paths: Optional[Sequence[str]], n: int, fs: int, seed: int) -> np.ndarray:
    """Two dry sources of ``n`` samples: from WAV files (looped/cut) or synthetic talkers."""
    if not paths:
        return talker_pair(n / fs, fs, seed=seed)[:, :n]
    out = []
    for p in paths:
        sig = load_wav(p, sample_rate=fs)
        x = sig.samples[0]
        reps = math.ceil(n / x.size)
        out.append(np.tile(x, reps)[:n])
    return np.stack(out)


# -- simulate -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else RoomScenario()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.occupancy is not None:
        overrides["occupancy"] = args.occupancy
        if args.overlap is None:
            # keep the scenario's overlap where feasible for the new occupancy
            lo = max(2 * args.occupancy - 1, 0.0)
            overrides["overlap"] = min(max(scenario.overlap, lo), args.occupancy)
        else:
            overrides["overlap"] = args.overlap
    elif args.overlap is not None:
        overrides["overlap"] = args.overlap
    if args.duration is not None:
        overrides["duration"] = args.duration
    if overrides:
        scenario = scenario.replace(**overrides)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sources = _load_sources(args.sources, scenario.n_samples, scenario.sample_rate, scenario.seed)
    mix = synthesize_mixture(scenario, sources)
    fs = scenario.sample_rate
    write_wav(out / "mixture.wav", mix.mic, "float32")
    write_wav(out / "img_s1.wav", MultichannelSignal(mix.images[0], fs), "float32")
    write_wav(out / "img_s2.wav", MultichannelSignal(mix.images[1], fs), "float32")
    write_labels_csv(out / "pattern.csv", mix.pattern.labels)
    save_scenario(scenario, out / "scenario.ini")
    print(f"wrote mixture ({mix.mic.n_samples} samples, {fs} Hz) to {out}")
    return 0


# -- separate -----------------------------------------------------------------


def _trinicon_config(args) -> TriniconConfig:
    return TriniconConfig(
        filter_len=args.filter_len,
        iterations=args.iters,
        step_size=args.mu,
        init_shift=args.shift,
        psd_frames=args.psd_frames,
    )


def _detector_config(args) -> DetectorConfig:
    return DetectorConfig(
        alpha=args.alpha, rho=args.rho, kl_hz=args.kl_hz, ku_hz=args.ku_hz, confident=args.confident
    )


def cmd_separate(args) -> int:
    mic = load_wav(args.mixture, channels=2)
    cfg = _trinicon_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diagnostics = {"version": __version__, "mixture": str(args.mixture), "seed": args.seed, "mode": "no-ad" if args.no_ad else "two-pass"}
    try:
        if args.no_ad:
            res = run_offline(mic, cfg)
            W, outputs = res.filter, res.outputs
            diagnostics.update(cost=list(res.cost_trace), iterations=res.iterations_run, trinicon=cfg.as_dict())
        else:
            res2 = separate_two_pass(
                mic, cfg, _detector_config(args), warm_start=args.warm_start, renormalize=args.renormalize
            )
            W, outputs = res2.filter, res2.outputs
            write_labels_csv(out / "labels.csv", res2.labels)
            diagnostics.update(res2.diagnostics)
    except DivergenceError as exc:
        diagnostics.update(error=str(exc), cost=exc.trace)
        (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2, default=float))
        print(f"error: adaptation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    if args.post_scale:
        outputs = minimal_distortion(W, mic)
    write_wav(out / "y1.wav", MultichannelSignal(outputs.samples[0], mic.sample_rate), "float32")
    write_wav(out / "y2.wav", MultichannelSignal(outputs.samples[1], mic.sample_rate), "float32")
    save_filter(out / "filter.trnf", W)
    if args.directivity:
        write_directivity_csv(out / "directivity.csv", W, mic_spacing=args.mic_spacing, sample_rate=mic.sample_rate)
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2, default=float))
    print(f"wrote separated outputs to {out}")
    return 0


# -- eval ---------------------------------------------------------------------


def _read_pair(paths: Sequence[str], channel: int = 0) -> MultichannelSignal:
    """Two signals from one 2-channel file or two files (``channel`` of each)."""
    if len(paths) == 1:
        return load_wav(paths[0], channels=2)
    sigs = [load_wav(p) for p in paths]
    if sigs[0].sample_rate != sigs[1].sample_rate:
        raise TriniconError("sample rates differ")
    chans = [s.samples[min(channel, s.channels - 1)] for s in sigs]
    if chans[0].size != chans[1].size:
        raise TriniconError("signals differ in length")
    return MultichannelSignal(np.stack(chans), sigs[0].sample_rate)


def score_row(scores) -> List[str]:
    perm = "-".join(str(p + 1) for p in scores.perm)
    return [perm] + [_fmt(v) for v in (*scores.sir, *scores.sdr, scores.mean_sir, scores.mean_sdr)]


def cmd_eval(args) -> int:
    outputs = _read_pair(args.outputs)
    refs = _read_pair(args.references, channel=args.ref_mic - 1)
    if outputs.n_samples != refs.n_samples:
        print("error: outputs and references differ in length", file=sys.stderr)
        return EXIT_ERROR
    scores = score(outputs.samples, refs.samples, proj_len=args.proj_len)
    rows = [SCORE_COLUMNS, score_row(scores)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    else:
        csv.writer(sys.stdout).writerows(rows)
    return 0


# -- bench --------------------------------------------------------------------


def load_grid(path) -> dict:
    """Parse a bench grid file.

    ``[grid]`` holds ``rt60`` (seconds, comma list), ``doa_pairs``
    (``a:b`` comma list), ``repetitions``, ``duration``, ``seed``; optional
    ``[trinicon]``, ``[detector]`` and ``[scenario]`` sections override the
    respective settings.
    """
    parser = configparser.ConfigParser()
    if not parser.read(str(path)):
        raise FileNotFoundError(path)
    g = parser["grid"]
    grid = {
        "rt60": [float(v) for v in g.get("rt60", "0.15").split(",")],
        "doa_pairs": [tuple(float(a) for a in p.split(":")) for p in g.get("doa_pairs", "-70:-15").split(",")],
        "repetitions": g.getint("repetitions", 4),
        "duration": g.getfloat("duration", 20.0),
        "seed": g.getint("seed", 0),
    }
    for pair in grid["doa_pairs"]:
        if len(pair) != 2:
            raise ValueError(f"bad DOA pair {pair}")
    tri = {}
    if parser.has_section("trinicon"):
        for k, v in parser["trinicon"].items():
            tri[k] = float(v) if k == "step_size" else int(v)
    det = {}
    if parser.has_section("detector"):
        for k, v in parser["detector"].items():
            det[k] = v.lower() in ("1", "true", "yes") if k == "confident" else float(v)
    scen = {}
    if parser.has_section("scenario"):
        defaults = RoomScenario()
        scen = {k: parse_scenario_value(k, v, getattr(defaults, k)) for k, v in parser["scenario"].items()}
    grid.update(trinicon=tri, detector=det, scenario=scen)
    return grid


def run_cell(rt60: float, doas, grid: dict, source_paths=None) -> dict:
    """Simulate and separate one grid cell over all repetitions."""
    cfg = TriniconConfig(**grid.get("trinicon", {}))
    det = DetectorConfig(**grid.get("detector", {}))
    acc = {k: [] for k in ("sir_no", "sir_ad", "sdr_in", "sdr_no", "sdr_ad")}
    for rep in range(grid["repetitions"]):
        seed = grid["seed"] + rep
        scenario = RoomScenario(**{
            **grid.get("scenario", {}),
            "rt60": rt60, "source_doas": tuple(doas), "duration": grid["duration"], "seed": seed,
        })
        sources = _load_sources(source_paths, scenario.n_samples, scenario.sample_rate, seed)
        mix = synthesize_mixture(scenario, sources)
        refs = mix.references(0)
        res = separate_two_pass(mix.mic, cfg, det)
        s_in = score(mix.mic.samples, refs)
        s_no = score(res.pass1.outputs.samples, refs)
        s_ad = score(res.outputs.samples, refs)
        acc["sir_no"].append(s_no.mean_sir)
        acc["sir_ad"].append(s_ad.mean_sir)
        acc["sdr_in"].append(s_in.mean_sdr)
        acc["sdr_no"].append(s_no.mean_sdr)
        acc["sdr_ad"].append(s_ad.mean_sdr)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def _bench_row(rt60, doas, grid, result=None, error=None) -> List[str]:
    cfg = TriniconConfig(**grid.get("trinicon", {}))
    head = [BENCH_SCHEMA, f"{rt60 * 1000:g}", f"{doas[0]:g}", f"{doas[1]:g}", str(grid["repetitions"])]
    if result is not None:
        sir_no = round(result["sir_no"], 4)
        sir_ad = round(result["sir_ad"], 4)
        vals = [_fmt(sir_no), _fmt(sir_ad), _fmt(round(sir_ad - sir_no, 4)),
                _fmt(result["sdr_in"]), _fmt(result["sdr_no"]), _fmt(result["sdr_ad"]), "ok"]
    else:
        vals = [""] * 6 + [f"error: {error}"]
    tail = [str(cfg.filter_len), str(cfg.iterations), f"{cfg.step_size:g}", str(cfg.init_shift),
            str(cfg.psd_frames), f"{grid['duration']:g}", str(grid["seed"])]
    return head + vals + tail


def _cell_job(job):
    rt60, doas, grid, sources = job
    try:
        return _bench_row(rt60, doas, grid, result=run_cell(rt60, doas, grid, sources))
    except Exception as exc:  # recorded in the report; the sweep goes on
        logger.exception("bench cell rt60=%s doas=%s failed", rt60, doas)
        return _bench_row(rt60, doas, grid, error=f"{type(exc).__name__}: {exc}")


def run_bench(grid: dict, source_paths=None, jobs: int = 1) -> List[List[str]]:
    cells = [(rt, pair, grid, source_paths) for rt in grid["rt60"] for pair in grid["doa_pairs"]]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell_job, cells))
    else:
        rows = [_cell_job(c) for c in cells]
    return [BENCH_COLUMNS] + rows


def cmd_bench(args) -> int:
    grid = load_grid(args.grid)
    if args.repetitions is not None:
        grid["repetitions"] = args.repetitions
    if args.duration is not None:
        grid["duration"] = args.duration
    rows = run_bench(grid, args.sources, jobs=args.jobs)
    with open(args.out, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    print(f"wrote {len(rows) - 1} rows to {args.out}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="trinicon-ad",
        description="Dual-channel frequency-domain TRINICON with multi-source activity detection.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser(
        "simulate",
        help="simulate a sparse two-talker room mixture",
        description="Simulate a two-talker mixture in a shoebox room. Source directions are in "
        "degrees from the array broadside; negative angles lie on the microphone-1 side.",
    )
    s.add_argument("--scenario", help="scenario INI file ([scenario] section)")
    s.add_argument("--sources", nargs=2, metavar="WAV", help="dry source WAVs (default: synthetic talkers)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--occupancy", type=float)
    s.add_argument("--overlap", type=float)
    s.add_argument("--duration", type=float)
    s.set_defaults(func=cmd_simulate)

    d = TriniconConfig()
    dd = DetectorConfig()
    s = sub.add_parser("separate", help="separate a two-channel mixture")
    s.add_argument("mixture")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--filter-len", type=int, default=d.filter_len)
    s.add_argument("--iters", type=int, default=d.iterations)
    s.add_argument("--mu", type=float, default=d.step_size)
    s.add_argument("--shift", type=int, default=d.init_shift)
    s.add_argument("--psd-frames", type=int, default=d.psd_frames)
    s.add_argument("--alpha", type=float, default=dd.alpha)
    s.add_argument("--rho", type=float, default=dd.rho)
    s.add_argument("--kl-hz", type=float, default=dd.kl_hz)
    s.add_argument("--ku-hz", type=float, default=dd.ku_hz)
    s.add_argument("--confident", action="store_true", help="stricter single-source labelling")
    s.add_argument("--no-ad", action="store_true", help="single pass, no activity detection")
    s.add_argument("--warm-start", action="store_true", help="start pass 2 from the pass-1 filter")
    s.add_argument("--renormalize", action="store_true", help="normalize weights by active-block counts")
    s.add_argument("--post-scale", action="store_true", help="minimal-distortion rescaling of the outputs")
    s.add_argument("--directivity", action="store_true", help="also write directivity.csv")
    s.add_argument("--mic-spacing", type=float, default=0.10)
    s.add_argument("--seed", type=int, default=0, help="recorded in diagnostics; separation is deterministic")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("eval", help="score outputs against reference images")
    s.add_argument("--outputs", nargs="+", required=True, help="one 2-channel WAV or two WAVs")
    s.add_argument("--references", nargs="+", required=True, help="one 2-channel WAV or two image WAVs")
    s.add_argument("--ref-mic", type=int, default=1, help="microphone channel of two-file references")
    s.add_argument("--proj-len", type=int, default=512)
    s.add_argument("--out", help="CSV file (default: stdout)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="sweep over reverberation times and source directions")
    s.add_argument("--grid", required=True, help="grid INI file")
    s.add_argument("--sources", nargs=2, metavar="WAV")
    s.add_argument("--out", required=True)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TriniconError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
