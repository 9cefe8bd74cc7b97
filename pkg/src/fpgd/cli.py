"""Command-line entry point.

Subcommands reproduce the numbered experiments (fig1..fig5, instability) and
expose training, piece counting, and assumption checks on user configs.
Config files are JSON or TOML, selected by extension.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import labkit
from .netcore import Network
from .regions import Line


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    text = p.read_text()
    if p.suffix in (".toml", ".tml"):
        try:
            import tomllib  # python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON/TOML config file with overrides")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--paper-scale", action="store_true", help="run the full published grid")
    parser.add_argument("--workers", type=int, default=1, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpgd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fig1", "fig2", "fig3", "fig4", "fig5", "instability", "train", "check-assumptions"):
        p = sub.add_parser(name)
        _add_common(p)
    p = sub.add_parser("pieces")
    _add_common(p)
    p.add_argument("--net", required=True, help="network JSON file")
    p.add_argument("--line-start", type=float, nargs="+", default=None)
    p.add_argument("--line-end", type=float, nargs="+", default=None)
    p.add_argument("--exact", action="store_true", help="certify with rational arithmetic")
    p.add_argument("--step", type=float, default=None, help="step size for the threshold column")
    p.add_argument("--eps", type=float, default=None, help="per-layer perturbation for the threshold")
    p.add_argument("--c0", type=float, default=None, help="measured statistic for the threshold")
    p.add_argument("--nu", type=float, default=2.0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    overrides = load_config(args.config)

    def spec(kind: str) -> labkit.ExperimentSpec:
        return labkit.ExperimentSpec(
            kind=kind,
            out_dir=out_dir,
            seed=args.seed,
            paper_scale=args.paper_scale,
            workers=args.workers,
            overrides=overrides,
        )

    if args.command == "fig1":
        paths = labkit.run_fig1(spec("fig1"))
    elif args.command == "fig2":
        paths = labkit.run_fig2(spec("fig2"))
    elif args.command == "fig3":
        paths = labkit.run_fig34(spec("fig3"), "quadratic_bump")
    elif args.command == "fig4":
        paths = labkit.run_fig34(spec("fig4"), "cosine")
    elif args.command == "fig5":
        paths = labkit.run_fig5(spec("fig5"))
    elif args.command == "instability":
        paths = labkit.run_instability(spec("instability"))
    elif args.command == "train":
        if not overrides:
            print("train requires --config", file=sys.stderr)
            return 2
        paths = {"trace": labkit.run_training_config(overrides, out_dir)}
    elif args.command == "check-assumptions":
        if not overrides:
            print("check-assumptions requires --config", file=sys.stderr)
            return 2
        paths = {"report": labkit.run_assumption_check(overrides, out_dir)}
    elif args.command == "pieces":
        net = Network.load_json(args.net)
        if args.line_start is not None and args.line_end is not None:
            line = Line.from_endpoints(args.line_start, args.line_end)
        else:
            line = Line.unit_interval(net.input_dim)
        threshold_args = None
        if args.step is not None and args.eps is not None and args.c0 is not None:
            threshold_args = {
                "step": args.step,
                "eps": (args.eps,) * net.depth,
                "c0": args.c0,
                "nu": args.nu,
            }
        row = labkit.census_row(net, line, net_id=Path(args.net).stem,
                                threshold_args=threshold_args, exact=args.exact)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "census.csv"
        labkit._write_csv(path, labkit.CENSUS_HEADER, [row])
        paths = {"census": path}
    else:  # pragma: no cover
        raise AssertionError(args.command)

    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
