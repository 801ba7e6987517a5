"""Command-line entry point: ``clearkit <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from clearkit.cavity import calibrate_drive, simulate_both
from clearkit.core import TWO_PI, ConfigError, NumericalError, load_params
from clearkit.design import ClearSpec, make_clear_pulse, make_square_pulse
from clearkit.experiments import SCENARIOS, design_json, run_scenario, split_overrides
from clearkit.ramsey import RamseyTrace, default_ramsey_config, fit_ramsey, read_trace_csv

log = logging.getLogger("clearkit")

OUT_ENV = "CLEARKIT_OUT"

_DESIGN_OPTS = {"p_norm": 3.6, "t_up1": 0.15, "t_up2": 0.15, "t_flat": 1.7, "t_dn1": 0.15, "t_dn2": 0.15}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", help="device JSON file (default: built-in reference device)")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                   help="override a device key or scenario option (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clearkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        _common(p)
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./out/<scenario>)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("design", help="solve CLEAR segment amplitudes and print JSON")
    _common(p)

    p = sub.add_parser("ramsey-fit", help="fit n0 and phi0 to a t_r_us,signal trace CSV")
    _common(p)
    p.add_argument("trace")
    p.add_argument("--detuning-mhz", type=float, default=10.0)

    p = sub.add_parser("simulate", help="write a both-branch trajectory CSV")
    _common(p)
    p.add_argument("--pulse", choices=("clear", "square"), default="clear")
    p.add_argument("--p-norm", type=float, default=3.6)
    p.add_argument("--kerr", action="store_true")
    p.add_argument("--sample-interval", type=float, default=0.024)
    p.add_argument("--duration", type=float, default=2.0, help="square pulse length, us")
    p.add_argument("--tail", type=float, default=0.3, help="square pulse undriven tail, us")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    return parser


def _design_spec(params, options: dict) -> ClearSpec:
    opts = dict(_DESIGN_OPTS)
    for k, v in options.items():
        if k not in opts:
            raise ConfigError(f"unknown design option {k!r}")
        try:
            opts[k] = float(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k!r}: {v!r}") from exc
    eps = calibrate_drive(params).eps_for(opts.pop("p_norm"))
    return ClearSpec(eps_steady=eps, **opts)


def _run(args: argparse.Namespace) -> int:
    device, options = split_overrides(args.sets)
    loaded = load_params(args.params, device)
    params = loaded.params

    if args.command in SCENARIOS:
        out = args.out or os.environ.get(OUT_ENV) or str(Path("out") / args.command)
        if args.out is None and os.environ.get(OUT_ENV):
            out = str(Path(out) / args.command)
        result = run_scenario(args.command, loaded, options, out, seed=args.seed)
        for fname in sorted(result.files):
            print(result.out_dir / fname)
        print(result.out_dir / "manifest.json")
        return 0

    if args.command == "design":
        spec = _design_spec(params, options)
        print(json.dumps(design_json(params, spec), indent=2, sort_keys=True))
        return 0

    if args.command == "ramsey-fit":
        if options:
            raise ConfigError(f"unknown options for ramsey-fit: {', '.join(options)}")
        t, y = read_trace_csv(args.trace)
        cfg = default_ramsey_config(params).with_values(detuning=TWO_PI * args.detuning_mhz, t_grid=tuple(t))
        fit = fit_ramsey(RamseyTrace(t, y, cfg), params)
        print(fit.to_json())
        return 0 if fit.converged else 3

    if args.command == "simulate":
        if args.pulse == "clear":
            spec = _design_spec(params, {"p_norm": args.p_norm, **options})
            pulse = make_clear_pulse(params, spec)
        else:
            if options:
                raise ConfigError(f"unknown options for square simulate: {', '.join(options)}")
            eps = calibrate_drive(params).eps_for(args.p_norm)
            pulse = make_square_pulse(eps, args.duration, args.tail)
        text = simulate_both(params, pulse, args.kerr, args.sample_interval).to_csv()
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return 0
    raise ConfigError(f"unknown command {args.command}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
