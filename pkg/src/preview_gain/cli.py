"""Command-line interface: ``preview-gain <command> [options]``.

Exit codes: 0 success, 2 hypothesis or feasibility failure, 3 input error,
4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import FeasibilityError, InputError, PreviewGainError
from .lifting import BlockCache, certificate_from_constants, scan_blocks
from .model import ModelProvider, check_assumptions, unicycle_model
from .riccati import baseline_gains, solve_periodic
from .sim import dissipation_check, disturbance_ensemble, empirical_gain, simulate, write_trace_csv
from .synthesis import PreviewBuffer, StreamingController, gain_schedule, write_schedule_csv

logger = logging.getLogger("preview_gain")

EXAMPLES = {"unicycle": unicycle_model}


# --- configuration ---------------------------------------------------------

def _int_list(text):
    """``"40"``, ``"10,20,40"`` or ``"10:40:10"`` (inclusive stop)."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            if len(bits) not in (2, 3):
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            start, stop = bits[0], bits[1]
            step = bits[2] if len(bits) == 3 else 1
            if step <= 0:
                raise argparse.ArgumentTypeError("range step must be positive")
            out.extend(range(start, stop + 1, step))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _float_list(text):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [float(b) for b in part.split(":")]
            if len(bits) != 3 or bits[2] <= 0:
                raise argparse.ArgumentTypeError(f"bad range {part!r} (need start:stop:step)")
            out.extend(float(v) for v in np.arange(bits[0], bits[1] + 0.5 * bits[2], bits[2]))
        else:
            out.append(float(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _window(text):
    bits = [int(b) for b in str(text).split(":")]
    if len(bits) != 2 or bits[1] <= bits[0] or bits[0] < 0:
        raise argparse.ArgumentTypeError("window must be start:stop with 0 <= start < stop")
    return range(bits[0], bits[1])


@dataclass
class RunConfig:
    command: str
    model: str
    gamma: float | None = None
    beta: list = field(default_factory=list)
    beta_frac: list = field(default_factory=list)
    d: list = field(default_factory=list)
    T: list | None = None
    window: range | None = None
    seed: int = 0
    out: str | None = None
    json: bool = False
    extra: dict = field(default_factory=dict)

    def betas(self):
        if self.beta_frac:
            return [f * self.gamma for f in self.beta_frac]
        return list(self.beta)

    def echo(self, model_digest):
        d = {
            "command": self.command, "model": self.model, "model_sha256": model_digest,
            "gamma": self.gamma, "beta": self.beta, "beta_frac": self.beta_frac, "d": self.d,
            "T": self.T, "window": None if self.window is None else [self.window.start, self.window.stop],
            "seed": self.seed, **self.extra,
        }
        return d

    def digest(self, model_digest):
        blob = json.dumps(self.echo(model_digest), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_model(source, **params):
    if source.startswith("example:"):
        name = source.split(":", 1)[1]
        if name not in EXAMPLES:
            raise InputError(f"unknown example {name!r} (available: {', '.join(EXAMPLES)})")
        return EXAMPLES[name](**params)
    if not os.path.exists(source):
        raise InputError(f"model file {source!r} not found")
    return ModelProvider.load(source)


def _model_digest(provider):
    if provider.kind == "generator":
        return "generator"
    return hashlib.sha256(json.dumps(provider.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# --- output ----------------------------------------------------------------

class Output:
    """Writes named artifacts into ``--out`` or, without it, to stdout."""

    def __init__(self, cfg, provider):
        self.cfg = cfg
        digest = _model_digest(provider)
        self.hash = cfg.digest(digest)
        self.echo = cfg.echo(digest)

    def header(self, window_note=None):
        lines = [f"preview-gain {self.cfg.command} config={self.hash}",
                 "config " + json.dumps(self.echo, sort_keys=True)]
        if window_note:
            lines.append(f"window {window_note}")
        return lines

    def _target(self, name):
        if self.cfg.out is None:
            return None
        os.makedirs(self.cfg.out, exist_ok=True)
        return os.path.join(self.cfg.out, name)

    def write_text(self, name, text):
        path = self._target(name)
        if path is None:
            sys.stdout.write(text)
            if not text.endswith("\n"):
                sys.stdout.write("\n")
        else:
            with open(path, "w", newline="") as fh:
                fh.write(text)

    def write_json(self, name, obj):
        obj = {"config_hash": self.hash, "config": self.echo, **obj}
        self.write_text(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def write_rows(self, name, columns, rows, window_note=None):
        buf = io.StringIO()
        for line in self.header(window_note):
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        self.write_text(name, buf.getvalue())


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    return v


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        o = float(o)
        return o if math.isfinite(o) else ("inf" if o > 0 else ("-inf" if o < 0 else "nan"))
    if isinstance(o, np.integer):
        return int(o)
    return o


# --- commands ----------------------------------------------------------------

def _require_gamma(cfg):
    if cfg.gamma is None or not cfg.gamma > 0:
        raise InputError("--gamma must be given and positive")


def cmd_check(cfg, provider):
    _require_gamma(cfg)
    reports = []
    ok = True
    rows = []
    for d in cfg.d:
        window = cfg.window or provider.default_window(d)
        gram = check_assumptions(provider, d, window)
        consts = scan_blocks(provider, d, cfg.gamma, window)
        passed = gram.passed and consts.part2_pass
        ok &= passed
        reports.append({"d": d, "passed": passed, "assumptions": gram.to_dict(),
                        "part2": {"passed": consts.part2_pass, "extremes": consts.extremes,
                                  "failures": consts.failures[:50], "window": consts.window}})
        rows.append([d, gram.passed, consts.part2_pass, gram.c_obs, gram.c_ctr,
                     consts.extremes.get("RtR_min"), consts.extremes.get("BRB_min"), consts.extremes.get("Q_min")])
    out = Output(cfg, provider)
    note = provider.window_note(cfg.window or provider.default_window(max(cfg.d)))
    if cfg.json:
        out.write_json("check.json", {"passed": ok, "reports": reports})
    else:
        out.write_rows("check.csv", ["d", "assumptions_pass", "part2_pass", "obs_gramian_min", "ctr_gramian_min",
                                     "RtR_min", "BRB_min", "Q_til_min"], rows, note)
        if cfg.out:
            out.write_json("check.json", {"passed": ok, "reports": reports})
    return 0 if ok else 2


def cmd_bound(cfg, provider):
    _require_gamma(cfg)
    betas = cfg.betas()
    if not betas:
        raise InputError("--beta or --beta-frac is required")
    rows, certs = [], []
    for d in cfg.d:
        consts = scan_blocks(provider, d, cfg.gamma, cfg.window)
        for b in betas:
            c = certificate_from_constants(consts, b)
            certs.append(c.to_dict())
            rows.append([d, b, b / cfg.gamma, c.kappa_lo, c.delta_up, c.rho_up, c.T_bar, c.T_chosen,
                         c.preview_steps, c.feasible])
    out = Output(cfg, provider)
    note = certs[0]["window"] if certs else None
    if cfg.json:
        out.write_json("bound.json", {"certificates": certs})
    else:
        out.write_rows("bound.csv", ["d", "beta", "beta_frac", "kappa_lo", "delta_up", "rho_up", "T_bar",
                                     "T_chosen", "preview_steps", "feasible"], rows, note)
        if cfg.out:
            out.write_json("bound.json", {"certificates": certs})
    return 0 if all(c["feasible"] for c in certs) else 2


def _single(cfg, name, values):
    if len(values) != 1:
        raise InputError(f"{name} takes a single value for this command")
    return values[0]


def _certificate(cfg, provider, d, beta):
    cache = BlockCache(provider, d, cfg.gamma)
    consts = scan_blocks(provider, d, cfg.gamma, None, cache)
    return certificate_from_constants(consts, beta), cache


def _schedule_window(cfg, provider):
    if cfg.window is not None:
        return cfg.window
    if provider.kind == "periodic":
        return range(provider.period)
    raise InputError("--window is required for non-periodic models")


def cmd_synthesize(cfg, provider):
    _require_gamma(cfg)
    d = _single(cfg, "--d", cfg.d)
    beta = _single(cfg, "--beta", cfg.betas() or [None])
    if beta is None:
        raise InputError("--beta or --beta-frac is required")
    cert, cache = _certificate(cfg, provider, d, beta)
    if cfg.T is not None:
        T = _single(cfg, "--T", cfg.T)
    elif cert.T_chosen is None:
        raise FeasibilityError("certificate infeasible: " + "; ".join(cert.reasons))
    else:
        T = cert.T_chosen
    window = _schedule_window(cfg, provider)
    baseline = None
    if provider.kind == "periodic":
        try:
            baseline = solve_periodic(provider, cfg.gamma, d=d)
        except FeasibilityError as exc:
            logger.warning("no baseline available: %s", exc)
    entries = gain_schedule(provider, window, d, T, cfg.gamma, beta, baseline, cert, cache)
    out = Output(cfg, provider)
    advisory = bool(entries and entries[0].advisory)
    header = out.header(provider.window_note(window)) + [f"T {T} certificate_T {cert.T_chosen} advisory {str(advisory).lower()}"]
    summary = {"T": T, "certificate": cert.to_dict(), "advisory": advisory,
               "min_margin": min(e.margin for e in entries),
               "max_delta": None if baseline is None else max(e.delta for e in entries)}
    if cfg.json:
        out.write_json("synthesize.json", {**summary, "schedule": [
            {"t": e.t, "K": e.K, "lambda_min_X": e.lambda_min_X, "margin": e.margin, "delta": e.delta}
            for e in entries]})
        return 0
    buf = io.StringIO()
    write_schedule_csv(buf, entries, header)
    out.write_text("schedule.csv", buf.getvalue())
    if cfg.out:
        ctl = StreamingController(PreviewBuffer.from_provider(provider, window.stop - 1, d, T), cfg.gamma, beta, cert)
        out.write_text("controller.json", ctl.to_json() + "\n")
        out.write_json("synthesize.json", summary)
    return 0


def cmd_simulate(cfg, provider):
    _require_gamma(cfg)
    if provider.kind != "periodic":
        raise InputError("simulate needs a periodic model")
    periods = cfg.extra.get("periods", 3)
    N = periods * provider.period
    betas = cfg.betas()
    beta = betas[0] if betas else 0.0
    baseline = solve_periodic(provider, cfg.gamma, d=cfg.d[0] if cfg.d else None)
    if beta == 0.0 and cfg.T is None:
        Ks = baseline_gains(provider, baseline)
        policy = "baseline"
        X_next = baseline.at
        alpha = cfg.gamma
    else:
        d = _single(cfg, "--d", cfg.d)
        cert, cache = _certificate(cfg, provider, d, beta)
        T = _single(cfg, "--T", cfg.T) if cfg.T is not None else cert.T_chosen
        if T is None:
            raise FeasibilityError("certificate infeasible: " + "; ".join(cert.reasons))
        entries = gain_schedule(provider, range(provider.period), d, T, cfg.gamma, beta, None, cert, cache)
        Ks = [e.K for e in entries]
        Xs = [e.X for e in entries]
        policy = f"finite preview d={d} T={T}"
        X_next = lambda t: Xs[t % len(Xs)]  # noqa: E731
        alpha = cfg.gamma + beta
    gains = lambda t: Ks[t % len(Ks)]  # noqa: E731
    units = "original" if "disturbance_scale" in provider.meta else "scaled"
    rep = empirical_gain(provider, gains, N, seed=cfg.seed, certified=alpha, units=units)
    count = cfg.extra.get("count", 1000)
    W = disturbance_ensemble(count, N, provider.n, seed=cfg.seed)
    tr = simulate(provider, gains, W, alpha=alpha)
    worst_J = float(np.max(tr.running_J()))
    wc = simulate(provider, gains, rep.worst_w / np.linalg.norm(rep.worst_w), alpha=alpha)
    diss = dissipation_check(provider, wc, X_next, alpha)
    out = Output(cfg, provider)
    result = {"policy": policy, "alpha": alpha, "gain": rep.to_dict(),
              "ensemble": {"count": count, "max_partial_J": worst_J, "all_nonpositive": worst_J <= 0.0},
              "worst_case": {"max_identity_defect": diss.max_residual, "max_partial_J": float(diss.running_J.max()),
                             "flags": diss.flags[:20]},
              "window": f"horizon N={N} ({periods} periods); finite-horizon lower bound on the l2 gain"}
    if cfg.json:
        out.write_json("gain_report.json", result)
    else:
        buf = io.StringIO()
        write_trace_csv(buf, wc, alpha, out.header(result["window"]) + [f"policy {policy}", "disturbance worst case (unit norm)"])
        out.write_text("trace.csv", buf.getvalue())
        if cfg.out:
            out.write_json("gain_report.json", result)
    ok = rep.empirical_scaled <= alpha * (1 + 1e-9) and worst_J <= 0.0
    if not rep.converged:
        return 4
    return 0 if ok else 2


def cmd_sweep_delta(cfg, provider):
    _require_gamma(cfg)
    if provider.kind != "periodic":
        raise InputError("sweep-delta needs a periodic model (baseline from the periodic solution)")
    Ts = cfg.T or [1, 2]
    window = _schedule_window(cfg, provider)
    rows = []
    summary = []
    for d in cfg.d:
        baseline = solve_periodic(provider, cfg.gamma, d=d)
        cache = BlockCache(provider, d, cfg.gamma)
        consts = scan_blocks(provider, d, cfg.gamma, None, cache)
        for T in Ts:
            entries = gain_schedule(provider, window, d, T, cfg.gamma, 0.0, baseline, None, cache,
                                    epsilon=-math.inf)
            for e in entries:
                rows.append([d, T, e.t, e.delta])
            mx = max(e.delta for e in entries)
            bound = consts.rho_up**T * consts.delta_up
            summary.append({"d": d, "T": T, "max_delta": mx, "bound": bound, "ratio": mx / bound})
    out = Output(cfg, provider)
    if cfg.json:
        out.write_json("sweep_delta.json", {"summary": summary,
                                            "rows": [{"d": r[0], "T": r[1], "t": r[2], "delta": r[3]} for r in rows]})
    else:
        out.write_rows("sweep_delta.csv", ["d", "T", "t", "delta"], rows, provider.window_note(window))
        if cfg.out:
            out.write_json("sweep_delta.json", {"summary": summary})
    return 0


def cmd_example(cfg, provider):
    text = json.dumps(provider.to_dict()) + "\n"
    if cfg.out and cfg.out.endswith(".json"):
        parent = os.path.dirname(cfg.out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(cfg.out, "w") as fh:
            fh.write(text)
        return 0
    Output(cfg, provider).write_text("model.json", text)
    return 0


COMMANDS = {
    "check": cmd_check,
    "bound": cmd_bound,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "sweep-delta": cmd_sweep_delta,
    "example": cmd_example,
}


def build_parser():
    p = argparse.ArgumentParser(prog="preview-gain", description="Finite-preview l2-gain controller synthesis for LTV models.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, gamma=True, out_help="output directory (stdout when omitted)"):
        sp.add_argument("--model", default="example:unicycle",
                        help="model JSON path or example:<name> (default example:unicycle)")
        if gamma:
            sp.add_argument("--gamma", type=float, default=None, help="baseline l2-gain bound")
        sp.add_argument("--window", type=_window, default=None, help="time window start:stop")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None, help=out_help)
        sp.add_argument("--json", action="store_true", help="emit JSON instead of CSV")
        sp.add_argument("-v", "--verbose", action="store_true")

    def betas(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--beta", type=_float_list, default=[], help="performance loss (absolute), list or a:b:step")
        g.add_argument("--beta-frac", type=_float_list, default=[], help="performance loss as a fraction of gamma")

    sp = sub.add_parser("check", help="check model assumptions and the lifted-block hypotheses")
    common(sp)
    sp.add_argument("--d", type=_int_list, default=[10], help="lifting steps, e.g. 10:40:10")

    sp = sub.add_parser("bound", help="preview-length certificate(s)")
    common(sp)
    betas(sp)
    sp.add_argument("--d", type=_int_list, default=[40])

    sp = sub.add_parser("synthesize", help="finite-preview gain schedule")
    common(sp)
    betas(sp)
    sp.add_argument("--d", type=_int_list, default=[40])
    sp.add_argument("--T", type=_int_list, default=None, help="number of lifted Riccati applications (default: certified)")

    sp = sub.add_parser("simulate", help="closed-loop gain and dissipation checks")
    common(sp)
    betas(sp)
    sp.add_argument("--d", type=_int_list, default=None)
    sp.add_argument("--T", type=_int_list, default=None)
    sp.add_argument("--periods", type=int, default=3)
    sp.add_argument("--count", type=int, default=1000, help="size of the random disturbance ensemble")

    sp = sub.add_parser("sweep-delta", help="distance of the approximant to the periodic solution")
    common(sp)
    sp.add_argument("--d", type=_int_list, default=[40])
    sp.add_argument("--T", type=_int_list, default=None, help="default 1,2")

    sp = sub.add_parser("example", help="write a bundled example model as JSON")
    common(sp, gamma=False, out_help="output directory, or a .json file path")
    sp.add_argument("name", nargs="?", default="unicycle")
    sp.add_argument("--a", type=float, default=1.0, help="lemniscate scale")
    sp.add_argument("--period", type=int, default=400, help="steps per lap of the nominal path")
    sp.add_argument("--h", type=float, default=0.05, help="sampling time")
    return p


def _config(args):
    model = args.model
    if args.command == "example":
        model = f"example:{args.name}"
    extra = {}
    for key in ("periods", "count", "a", "period", "h"):
        if hasattr(args, key):
            extra[key] = getattr(args, key)
    return RunConfig(
        command=args.command, model=model, gamma=getattr(args, "gamma", None),
        beta=getattr(args, "beta", []) or [], beta_frac=getattr(args, "beta_frac", []) or [],
        d=getattr(args, "d", None) or [], T=getattr(args, "T", None), window=args.window, seed=args.seed,
        out=args.out, json=args.json, extra=extra,
    )


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; keep 2 reserved for feasibility failures
        return 0 if exc.code == 0 else 3
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if any(b < 0 for b in cfg.beta + cfg.beta_frac):
            raise InputError("beta must be nonnegative")
        params = {}
        if args.command == "example":
            if args.period < 2 or not args.h > 0 or not args.a > 0:
                raise InputError("example needs --period >= 2, --h > 0 and --a > 0")
            params = {"a": args.a, "N": args.period, "h": args.h}
        provider = load_model(cfg.model, **params)
        return COMMANDS[args.command](cfg, provider)
    except PreviewGainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return InputError.exit_code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
