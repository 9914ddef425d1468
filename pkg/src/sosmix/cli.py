"""Command-line front end: ``sosmix <command> [flags]``.

Every command writes one CSV: a ``# config`` comment row holding the full
configuration as JSON, a header row, then data rows.  Output goes to
``--output``, else to ``$SOSMIX_OUTPUT_DIR/<command>-<seed>.csv`` when that
variable is set, else to stdout.  Flags may also come from a flat
``key=value`` file given with ``--config`` (command-line flags win).

Exit codes: 0 success, 1 a verification check failed, 2 configuration
error, 3 result dominated by timeouts.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from sosmix import coupling, dynamics, equilibrium, exact, experiments, wilson
from sosmix.model import ModelParams, ValidationError

OUTPUT_ENV = "SOSMIX_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_TIMEOUT = 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _common(p: argparse.ArgumentParser, *, n_list: bool = False):
    if n_list:
        p.add_argument("--n", type=_int_list, required=True, help="comma-separated lattice lengths")
    else:
        p.add_argument("--n", type=int, required=True, help="lattice length")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--height-mode", choices=("bounded", "unbounded"), default="bounded")
    p.add_argument("--cap", type=int, default=None, help="height cap (bounded mode; default n)")
    p.add_argument("--boundary-left", type=int, default=0)
    p.add_argument("--boundary-right", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)
    p.add_argument("--config", default=None, help="key=value file with default flag values")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replicas")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sosmix", description="SOS interface dynamics experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one chain and record statistics")
    _common(p)
    p.add_argument("--kind", default="single_site")
    p.add_argument("--start", default="top")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--statistics", default="mean_height,max_height")

    p = sub.add_parser("coalesce", help="coalescence times of the grand coupling from bottom and top")
    _common(p)
    p.add_argument("--kind", default="column")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--t-max", type=int, default=None)

    p = sub.add_parser("sweep", help="median coalescence times over n and the log-log slope")
    _common(p, n_list=True)
    p.add_argument("--kind", default="column")
    p.add_argument("--replicas", type=int, default=32)

    p = sub.add_parser("drift-check", help="exact Wilson drift on random ordered pairs")
    _common(p)
    p.add_argument("--pairs", type=int, default=1000)

    p = sub.add_parser("exact", help="enumeration oracle: stationary law, TV curve or spectral gap")
    _common(p)
    p.add_argument("--kind", default="single_site")
    p.add_argument("--report", choices=("stationary", "tv", "gap"), default="stationary")
    p.add_argument("--start", default="top", help="start of the TV curve: top or bottom")
    p.add_argument("--t-max", type=int, default=100)

    p = sub.add_parser("equilibrium", help="exact event probabilities or exact samples")
    _common(p)
    p.add_argument("--events", default="A:1,B:2,C",
                   help="comma list of A:h, B:d, C[:level], marginal:i:h, tail:i:h")
    p.add_argument("--samples", type=int, default=0, help="draw exact samples instead of events")
    p.add_argument("--conditioning", default="none", help="none, A:h or pinned:m")

    p = sub.add_parser("relax", help="equilibrium band hitting times")
    _common(p)
    p.add_argument("--kind", default="single_site")
    p.add_argument("--start", default="bottom", help="top, bottom, conditioned:h or pinned:m")
    p.add_argument("--statistic", choices=("mean_height", "max_height"), default="mean_height")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--dwell", type=int, default=None)
    p.add_argument("--budget", type=int, default=None)

    p = sub.add_parser("descent", help="staged descent of the max height from the top contour")
    _common(p)
    p.add_argument("--kind", default="single_site")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)

    p = sub.add_parser("column-walk", help="mixing of one column with frozen neighbours")
    _common(p)
    p.add_argument("--a", type=_int_list, default=[10])
    p.add_argument("--b", type=_int_list, default=[10])
    p.add_argument("--ell", type=_int_list, default=[0])
    p.add_argument("--replicas", type=int, default=20000)
    return parser


def read_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for num, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{num}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _config_path(argv) -> str | None:
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    path = _config_path(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    subs = parser._subparsers._group_actions[0].choices
    if path is not None and command in subs:
        values = read_config_file(path)
        sp = subs[command]
        known = {a.dest: a for a in sp._actions}
        unknown = [k for k in values if k not in known or k in ("help", "config")]
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        # file values become defaults, so explicit flags still override them
        for k, v in values.items():
            act = known[k]
            try:
                sp.set_defaults(**{k: act.type(v) if act.type else v})
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
            act.required = False
    return parser.parse_args(argv)


def _params(args, n: int | None = None) -> ModelParams:
    return ModelParams(n=args.n if n is None else n, beta=args.beta, height_mode=args.height_mode,
                       cap=args.cap, boundary_left=args.boundary_left, boundary_right=args.boundary_right)


def _config_row(args) -> str:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("output", "config", "threads")}
    return "# config: " + json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def _emit(args, header, rows) -> None:
    buf = io.StringIO()
    buf.write(_config_row(args) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    text = buf.getvalue()
    path = args.output
    if path is None and os.environ.get(OUTPUT_ENV):
        path = os.path.join(os.environ[OUTPUT_ENV], f"{args.command}-{args.seed}.csv")
    if path is None:
        sys.stdout.write(text)
    else:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)


def _timeout_dominated(flags) -> bool:
    flags = list(flags)
    return bool(flags) and 2 * sum(bool(f) for f in flags) > len(flags)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    params = _params(args)
    kind = dynamics.ChainKind.parse(args.kind)
    stats = [s for s in args.statistics.split(",") if s]
    rng = dynamics.stream(args.seed, 1)
    start = experiments.initial_contour(args.start, kind.params_for(params), rng)
    traj = dynamics.run_chain(kind, start, args.steps, args.seed, params, statistics=stats, stride=args.stride)
    _emit(args, ["step", "statistic", "value"], traj.records)
    return EXIT_OK


def cmd_coalesce(args) -> int:
    params = _params(args)
    kind = dynamics.ChainKind.parse(args.kind)
    if args.t_max is not None and args.t_max < 1:
        raise ValidationError("t-max must be >= 1")
    res = experiments.map_replicas(
        lambda k: coupling.coalescence_time(kind, params, args.seed, args.t_max, replica=k),
        range(args.replicas), args.threads)
    _emit(args, ["kind", "n", "beta", "seed", "replica", "steps", "timed_out"],
          [(r.kind, r.n, r.beta, r.seed, r.replica, r.steps, int(r.timed_out)) for r in res])
    return EXIT_TIMEOUT if _timeout_dominated(r.timed_out for r in res) else EXIT_OK


def cmd_sweep(args) -> int:
    res = experiments.scaling_sweep(args.kind, args.n, args.replicas, args.seed,
                                    lambda n: _params(args, n), threads=args.threads)
    fit = res.fit
    slope, icpt, se = (fit.slope, fit.intercept, fit.stderr) if fit else (math.nan,) * 3
    _emit(args, ["n", "median", "iqr", "replicas", "timeouts", "slope", "intercept", "slope_stderr"],
          [(p.n, p.median, p.dispersion, p.replicas, p.timeouts, slope, icpt, se) for p in res.points])
    return EXIT_TIMEOUT if fit is None or res.partial else EXIT_OK


def random_ordered_pair(params: ModelParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two contours drawn uniformly from the height box, sorted pointwise."""
    H = params.cap
    x = rng.integers(0, H + 1, size=params.n)
    y = rng.integers(0, H + 1, size=params.n)
    live = ~params.pin_mask()
    return np.minimum(x, y) * live, np.maximum(x, y) * live


def cmd_drift_check(args) -> int:
    params = _params(args)
    if params.cap is None:
        raise ValidationError("drift-check needs bounded heights")
    rng = dynamics.stream(args.seed)
    ww = wilson.weights(params.n)
    means = coupling.MeanTable(params)
    rows, bad = [], 0
    for k in range(args.pairs):
        lo, hi = random_ordered_pair(params, rng)
        pair = coupling.CoupledPair(lo, hi, params)
        d = coupling.exact_pair_drift(pair, ww, means=means)
        bound = coupling.drift_bound(pair, ww)
        ok = d <= bound + 1e-10
        bad += not ok
        rows.append((k, pair.distance(ww), d, bound, int(ok)))
    _emit(args, ["pair", "distance", "drift", "bound", "ok"], rows)
    return EXIT_OK if bad == 0 else EXIT_CHECK_FAILED


def cmd_exact(args) -> int:
    params = _params(args)
    chain = exact.enumerate_states(params)
    if args.report == "stationary":
        rows = [(k, " ".join(str(int(x)) for x in h), m) for k, (h, m) in enumerate(zip(chain.states, chain.stationary))]
        _emit(args, ["state_index", "heights", "mass"], rows)
        return EXIT_OK
    P = exact.transition_matrix(dynamics.ChainKind.parse(args.kind).name, chain)
    if args.report == "tv":
        start = {"top": params.top(), "bottom": params.bottom()}.get(args.start)
        if start is None:
            raise ValidationError("TV start must be top or bottom")
        curve = exact.tv_curve(chain, P, chain.point_mass(start), args.t_max)
        _emit(args, ["t", "tv"], list(enumerate(curve)))
        return EXIT_OK
    gap = exact.spectral_gap_exact(P, chain.stationary)
    _emit(args, ["kind", "n", "beta", "spectral_gap"], [(args.kind, params.n, params.beta, gap)])
    return EXIT_OK


def parse_event(text: str):
    parts = text.strip().split(":")
    tag = parts[0].lower()
    try:
        if tag == "a":
            return equilibrium.AtLeast(int(parts[1])), "A", parts[1]
        if tag == "b":
            return equilibrium.Gradient(int(parts[1])), "B", parts[1]
        if tag == "c":
            level = int(parts[1]) if len(parts) > 1 else None
            return equilibrium.Exceed(level), "C_complement", "" if level is None else parts[1]
        if tag == "marginal":
            return equilibrium.Marginal(int(parts[1]), int(parts[2])), "marginal", f"{parts[1]}:{parts[2]}"
        if tag == "tail":
            return equilibrium.Tail(int(parts[1]), int(parts[2])), "tail", f"{parts[1]}:{parts[2]}"
    except (IndexError, ValueError):
        pass
    raise ValidationError(f"cannot parse event {text!r}")


def parse_conditioning(text: str):
    t = text.strip().lower()
    if t == "none":
        return None
    tag, _, val = t.partition(":")
    if tag == "a" and val:
        return equilibrium.above(int(val))
    if tag == "pinned" and val:
        return equilibrium.pinned_every(int(val))
    raise ValidationError(f"cannot parse conditioning {text!r}")


def cmd_equilibrium(args) -> int:
    params = _params(args)
    if args.samples > 0:
        cond = parse_conditioning(args.conditioning)
        draws = equilibrium.sample_exact(params, cond, rng=dynamics.stream(args.seed), size=args.samples)
        _emit(args, ["sample", "heights"], [(k, " ".join(map(str, d))) for k, d in enumerate(draws)])
        return EXIT_OK
    events = [parse_event(e) for e in args.events.split(",") if e.strip()]
    rows = []
    for ev, name, par in events:
        lp = equilibrium.log_event_prob(ev, params)
        rows.append((name, par, math.exp(lp), lp))
    _emit(args, ["event", "parameter", "probability", "log_probability"], rows)
    return EXIT_OK


def cmd_relax(args) -> int:
    params = _params(args)
    band = experiments.equilibrium_band(params, args.statistic)
    start = experiments.parse_start(args.start)
    res = experiments.map_replicas(
        lambda k: experiments.relaxation_experiment(start, args.kind, args.statistic, band, params, args.seed,
                                                    replica=k, dwell=args.dwell, budget=args.budget),
        range(args.replicas), args.threads)
    _emit(args, ["start", "n", "replica", "band_lo", "band_hi", "steps", "timed_out"],
          [(r.start, r.n, r.replica, band[0], band[1], r.steps, int(r.timed_out)) for r in res])
    return EXIT_TIMEOUT if _timeout_dominated(r.timed_out for r in res) else EXIT_OK


def cmd_descent(args) -> int:
    params = _params(args)
    prof = experiments.descent_profile(params, args.seed, kind=args.kind, budget=args.budget, stride=args.stride)
    rows = [("trace", t, "", m, mean) for t, m, mean in prof.series]
    rows += [("stage", "" if t is None else t, lvl, "", "") for lvl, t in zip(prof.levels, prof.stage_times)]
    rows.append(("band", "" if prof.band_time is None else prof.band_time, "", "", ""))
    _emit(args, ["series", "t", "level", "max_height", "mean_height"], rows)
    return EXIT_TIMEOUT if prof.band_time is None else EXIT_OK


def cmd_column_walk(args) -> int:
    params = _params(args)
    rows, touts = [], []
    for a in args.a:
        for b in args.b:
            if b < a:
                continue
            for ell in args.ell:
                r = experiments.column_walk_check(a, b, ell, params, args.seed, replicas=args.replicas)
                rows.append((r.a, r.b, r.ell, r.steps, r.tv, int(r.timed_out)))
                touts.append(r.timed_out)
    if not rows:
        raise ValidationError("no pair with a <= b")
    _emit(args, ["a", "b", "ell", "steps", "tv", "timed_out"], rows)
    return EXIT_TIMEOUT if _timeout_dominated(touts) else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "coalesce": cmd_coalesce,
    "sweep": cmd_sweep,
    "drift-check": cmd_drift_check,
    "exact": cmd_exact,
    "equilibrium": cmd_equilibrium,
    "relax": cmd_relax,
    "descent": cmd_descent,
    "column-walk": cmd_column_walk,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise ValidationError("threads must be >= 1")
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError, ValueError, OSError) as exc:
        print(f"sosmix: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
