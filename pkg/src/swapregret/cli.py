"""Command-line entry point: ``swapregret --experiment KIND [options]``.

Exit codes: 0 on success, 1 when a module rejects the run (the diagnostic is
one line on stderr), 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

from .errors import SwapRegretError
from .harness import KINDS, WORKERS_ENV, ExperimentConfig, run_experiment

TUNABLE = {f.name for f in fields(ExperimentConfig)} - {"kind", "extra"}

# Desk-scale settings per kind; anything not listed uses the dataclass default.
KIND_DEFAULTS = {
    "regret-curve": {"n": 8, "T": 1000},
    "eq3-check": {"n": 4, "H": 4, "S": 2},
    "hardseq": {"K": 2, "L": 3, "delta": 0.05},
    "nfg-dynamics": {"n": 4, "eps": 0.4, "H": 64, "S": 1},
    "comm": {"n": 4, "eps": 0.4, "H": 64, "S": 1},
    "sparsify": {"n": 3, "eps": 0.4, "delta": 0.2, "H": 64, "S": 1},
    "efg-nfce": {"n": 2, "eps": 0.5, "H": 64, "S": 1},
    "twocoin": {"delta": 0.05, "reps": 1000},
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="swapregret",
        description="Seeded swap-regret and equilibrium experiments; writes CSV files.",
        epilog=f"Set {WORKERS_ENV}=N to spread repetitions over N processes.",
    )
    p.add_argument("--experiment", required=True, choices=KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--config", help="JSON file whose keys override the flags")
    p.add_argument("--n", type=int, default=None, help="actions per player (per infoset for efg-nfce)")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--K", type=int, default=None, help="hard-sequence branching factor")
    p.add_argument("--L", type=int, default=None, help="hard-sequence depth")
    p.add_argument("--delta", type=float, default=None,
                   help="coin bias (hardseq, twocoin) or sparsification slack")
    p.add_argument("--H", type=int, default=None, help="multi-scale block length")
    p.add_argument("--S", type=int, default=None, help="multi-scale depth, 2^S threads")
    p.add_argument("--players", type=int, default=None)
    p.add_argument("--T", type=int, default=None, help="horizon for regret-curve")
    p.add_argument("--reps", type=int, default=None, help="seeded repetitions")
    p.add_argument("--adversary", default=None, choices=("adaptive", "random", "hardseq"))
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Precedence: config file, then explicit flags, then per-kind defaults."""
    values = dict(KIND_DEFAULTS.get(args.experiment, {}))
    values.update({k: getattr(args, k) for k in TUNABLE if getattr(args, k) is not None})
    extra = {}
    if args.config:
        with open(args.config) as fh:
            override = json.load(fh)
        for key, value in override.items():
            if key in TUNABLE:
                values[key] = value
            elif key != "experiment":
                extra[key] = value
    return ExperimentConfig(kind=args.experiment, extra=extra, **values)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        paths = run_experiment(config_from_args(args))
    except (SwapRegretError, OSError, json.JSONDecodeError) as exc:
        print(f"swapregret: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
