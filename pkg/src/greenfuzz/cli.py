"""Command line: ``greenfuzz {fuzz,cmin,ablate,report}``.

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .ablation import run_ablation
from .config import BY_KEY, OPTIONS, campaign_config, load_file, resolve_options
from .corpus import coverage_minimise, green_minimise, list_seed_files, profile_corpus, write_minimised
from .energy import make_meter
from .engine import run_campaign
from .errors import ConfigError, GreenFuzzError
from .report import find_runs, load_run, mean_curves
from .targets import parse_target, resolve

CAMPAIGN_KEYS = tuple(o.key for o in OPTIONS if o.key not in ("repetitions", "parallel"))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _help(key: str) -> str:
    return BY_KEY[key].help.replace("%", "%%")  # argparse formats help with %


def _add_options(p: argparse.ArgumentParser, keys) -> None:
    p.add_argument("-c", "--config", type=Path, help="TOML config file; flags override its keys")
    for key in keys:
        opt = BY_KEY[key]
        if key == "parallel":
            p.add_argument(*opt.flag_names, dest=key, action="store_true", default=None, help=_help(key))
        else:
            p.add_argument(*opt.flag_names, dest=key, default=None, help=_help(key))


def _values(args, keys) -> dict:
    file_values = load_file(args.config) if args.config else {}
    return resolve_options(file_values, {k: getattr(args, k, None) for k in keys})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="greenfuzz", description="Energy-aware greybox fuzzer.")
    parser.add_argument("--version", action="version", version=f"greenfuzz {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fuzz", help="run one campaign")
    _add_options(p, CAMPAIGN_KEYS)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("cmin", help="minimise a corpus")
    p.add_argument("-c", "--config", type=Path, help="TOML config file; flags override its keys")
    for key in ("target", "corpus", "output", "meter", "timeout_ms", "map_size"):
        flags = BY_KEY[key].flag_names + (("--input",) if key == "corpus" else ())
        p.add_argument(*flags, dest=key, default=None, help=_help(key))
    p.add_argument("--mode", "--cmin", dest="cmin", default=None, help="green (default) or coverage (afl)")
    p.set_defaults(func=cmd_cmin)

    p = sub.add_parser("ablate", help="run the 2x2 minimisation x heuristics matrix")
    _add_options(p, CAMPAIGN_KEYS + ("repetitions", "parallel"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="mean edges-over-time curves from campaign runs")
    p.add_argument("runs", nargs="+", type=Path, help="run directories (searched for plot_data.csv)")
    p.add_argument("--axis", choices=("time", "execs"), default="time")
    p.add_argument("--step", type=float, default=None, help="grid step (default 1 s or 100 execs)")
    p.add_argument("-o", "--output", type=Path, default=None, help="write curves.csv and summary.txt here")
    p.set_defaults(func=cmd_report)
    return parser


def cmd_fuzz(args) -> int:
    values = _values(args, CAMPAIGN_KEYS)
    out = Path(values["output"] or "greenfuzz-out")
    cfg = campaign_config(values, out)
    out.mkdir(parents=True, exist_ok=True)
    r = run_campaign(cfg)
    cov = f" ({r.coverage_pct:.2f}%)" if r.coverage_pct is not None else ""
    print(
        f"{r.total_execs} execs, {r.unique_edges} edges{cov}, {r.energy_j:.6g} J, "
        f"{r.unique_crashes} crashes, rng {r.rng_seed} -> {out}"
    )
    return 0


def cmd_cmin(args) -> int:
    values = _values(args, ("target", "corpus", "output", "meter", "timeout_ms", "map_size", "cmin"))
    if not values["target"] or not values["corpus"]:
        raise ConfigError("cmin needs --target and --corpus")
    mode = values["cmin"]
    if mode == "off":
        raise ConfigError("cmin mode must be green or coverage")
    seeds = list_seed_files(Path(values["corpus"]))
    if not seeds:
        raise ConfigError(f"corpus directory {values['corpus']} is empty")
    spec = parse_target(values["target"], timeout_ms=values["timeout_ms"], map_size=values["map_size"])
    target = resolve(spec)
    try:
        profile = profile_corpus(seeds, target, make_meter(values["meter"]))
    finally:
        target.close()
    if not profile.records:
        raise GreenFuzzError("no seed ran cleanly; nothing to keep")
    green_ids, _ = green_minimise(profile.records)
    cov_ids = coverage_minimise(profile.records)
    by_id = {r.id: r for r in profile.records}
    kept_ids = green_ids if mode == "green" else cov_ids
    kept = [r for r in profile.records if r.id in kept_ids]

    def energy(ids):
        return math.fsum(by_id[i].energy.total() for i in ids)

    print(f"kept {len(kept)}/{len(seeds)} seeds ({mode})")
    if profile.crashes or profile.skipped:
        print(f"excluded {len(profile.crashes)} crashing/timing-out and {len(profile.skipped)} unreadable seeds")
    e_kept, e_cov = energy(kept_ids), energy(cov_ids)
    print(f"kept corpus energy {e_kept:.6g} J; coverage-only rule keeps {len(cov_ids)} seeds at {e_cov:.6g} J")
    if mode == "green":
        print(f"energy saved vs coverage-only rule: {e_cov - e_kept:.6g} J")
    if values["output"]:
        write_minimised(kept, Path(values["output"]))
        print(f"wrote {values['output']}")
    return 0


def cmd_ablate(args) -> int:
    values = _values(args, CAMPAIGN_KEYS + ("repetitions", "parallel"))
    if values["repetitions"] < 1:
        raise ConfigError("repetitions must be at least 1")
    out = Path(values["output"] or "greenfuzz-ablation")
    base = campaign_config(values, None)
    summary = run_ablation(base, values["repetitions"], out, parallel=values["parallel"])
    sys.stdout.write(summary.to_text())
    print(f"summary: {out / 'summary.csv'}")
    return 0


def cmd_report(args) -> int:
    runs = [load_run(p) for p in find_runs(args.runs)]
    curves = mean_curves(runs, args.axis, args.step)
    text = curves.to_text()
    sys.stdout.write(text)
    if args.output is not None:
        args.output.mkdir(parents=True, exist_ok=True)
        (args.output / "curves.csv").write_text(curves.to_csv())
        (args.output / "summary.txt").write_text(text)
    else:
        sys.stdout.write(curves.to_csv())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"greenfuzz: error: {exc}", file=sys.stderr)
        return 2
    except (GreenFuzzError, OSError) as exc:
        print(f"greenfuzz: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
