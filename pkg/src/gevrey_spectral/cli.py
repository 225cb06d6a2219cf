"""Batch command-line front end.

Every command reads JSON (or CSV shell tables), writes one deterministic
JSON report and exits nonzero on malformed input or violated preconditions.
Reports embed the library version and a SHA-256 of the run configuration,
which includes the digests of all input files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .cone import check_cone_inequalities, combine, cone_report, validate_bound
from .diagnostics import (
    gevrey_bound_fit,
    make_liouville,
    multiplier_table,
    power_bound_fit,
    witness_distribution,
    witness_multiplier_table,
    DiophantineWitness,
)
from .errors import GevreySpectralError, IncompatibleDataError, ParameterError
from .gevrey_analysis import GevreyEstimate, classify_order, decay_fit
from .invariant_op import apply_with_overflow, hat_P_lambda, is_class_T, operator_from_json, symbol_identity_check
from .solver import solve, truncated_reconstruction
from .spectral_core import (
    GridSpec,
    ModeCoeffs,
    double_shell_norms,
    forward_transform,
    full_shell_norms,
    g_shell_norms,
    inverse_transform,
)
from .verdict import _jsonable

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_PRECONDITION = 3


class InputParseError(Exception):
    def __init__(self, path: str, message: str, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.path, self.line, self.column = path, line, column


@dataclass
class RunConfig:
    command: str
    inputs: dict[str, str] = field(default_factory=dict)
    s: float = 1.0
    theta: float = 0.5
    cutoff: int | None = None
    cutoffs: list[int] | None = None
    output: str | None = None
    seed: int = 0
    tol: float = 1e-12
    options: dict[str, Any] = field(default_factory=dict)

    def validate(self):
        if not self.s >= 1:
            raise ParameterError(f"--s must be >= 1, got {self.s}")
        if not 0 < self.theta < 1:
            raise ParameterError(f"--theta must lie in (0, 1), got {self.theta}")
        for role, path in self.inputs.items():
            if not Path(path).is_file():
                raise InputParseError(path, f"{role} file does not exist")

    def digest(self) -> str:
        doc = asdict(self)
        doc.pop("output")
        doc["inputs"] = {role: {"path": p, "sha256": hashlib.sha256(Path(p).read_bytes()).hexdigest()}
                         for role, p in sorted(self.inputs.items())}
        blob = json.dumps(_clean(doc), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy values plain Python."""
    obj = _jsonable(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def dumps(doc) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def read_json(path: str):
    text = Path(path).read_text()
    if not text.strip():
        raise InputParseError(path, "empty input", 1, 1)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputParseError(path, exc.msg, exc.lineno, exc.colno) from exc


def read_payload(path: str):
    """JSON input, unwrapping a previous report's ``result`` so commands chain."""
    doc = read_json(path)
    if isinstance(doc, dict) and "result" in doc and "version" in doc:
        return doc["result"]
    return doc


def read_csv_rows(path: str, width: int) -> list[tuple[float, ...]]:
    """Numeric rows of a CSV; a non-numeric first row is treated as a header."""
    text = Path(path).read_text()
    if not text.strip():
        raise InputParseError(path, "empty input", 1, 1)
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vals = tuple(float(c) for c in row)
        except ValueError:
            if lineno == 1:
                continue
            raise InputParseError(path, f"non-numeric entry in {row!r}", lineno, 1) from None
        if len(vals) != width:
            raise InputParseError(path, f"expected {width} columns, got {len(vals)}", lineno, 1)
        rows.append(vals)
    return rows


def load_coeffs(path: str, cutoff: int | None = None) -> ModeCoeffs:
    c = ModeCoeffs.from_json(read_payload(path))
    return c if cutoff is None else c.restrict(cutoff)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _shells(cfg: RunConfig) -> list[tuple[int, float]]:
    path = cfg.inputs["input"]
    if path.endswith(".csv"):
        return [(int(lam), nrm) for lam, nrm in read_csv_rows(path, 2)]
    c = load_coeffs(path, cfg.cutoff)
    return full_shell_norms(c) if cfg.options.get("variant") == "full" else g_shell_norms(c)


def _write_plot_data(path: str, shells, est: GevreyEstimate):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lam", "log_norm", "log_bound"])
    for lam, nrm in shells:
        log_norm = math.log(nrm) if nrm > 0 else -math.inf
        log_bound = (math.log(est.C) - est.bound_rate * (1 + lam) ** (1 / (2 * est.s))
                     if est.C > 0 else -math.inf)
        w.writerow([lam, repr(log_norm), repr(log_bound)])
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_transform(cfg: RunConfig) -> dict:
    doc = read_payload(cfg.inputs["input"])
    if cfg.options.get("inverse"):
        c = ModeCoeffs.from_json(doc)
        vals = inverse_transform(c)
        return {"grid": c.grid.to_json(), "re": vals.real.tolist(), "im": vals.imag.tolist()}
    try:
        g = doc["grid"]
        grid = GridSpec(int(g["n"]), int(g["m"]), int(g["cutoff"]))
        samples = np.asarray(doc["re"], dtype=float)
        if "im" in doc:
            samples = samples + 1j * np.asarray(doc["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"sample file needs 'grid' and 're' (optionally 'im'): {exc}") from exc
    c = forward_transform(samples, grid)
    return c.to_json() if cfg.cutoff is None else c.restrict(cfg.cutoff).to_json()


def cmd_classify(cfg: RunConfig) -> dict:
    shells = _shells(cfg)
    out: dict = {"shells": [[lam, v] for lam, v in shells]}
    s_grid = cfg.options.get("s_grid")
    if s_grid:
        out["classification"] = classify_order(shells, sorted(s_grid)).to_json()
    est = decay_fit(shells, cfg.s)
    out["fit"] = est.to_json()
    if cfg.options.get("plot_data"):
        _write_plot_data(cfg.options["plot_data"], shells, est)
    return out


def _operator(cfg: RunConfig, role: str = "operator"):
    return operator_from_json(read_json(cfg.inputs[role]))


def cmd_operator(cfg: RunConfig) -> dict:
    action = cfg.options["action"]
    P = _operator(cfg)
    if action == "is-class-t":
        return {"class_T": is_class_T(P).to_json(), "operator": P.to_json()}
    if action == "apply":
        u = load_coeffs(cfg.inputs["input"], cfg.cutoff)
        Pu, dropped = apply_with_overflow(P, u)
        return {"result": Pu.to_json(), "overflow_norm": dropped}
    lam = cfg.options["lam"]
    if action == "hat-lambda":
        grid = None if cfg.cutoff is None else GridSpec(P.n, P.m, cfg.cutoff)
        fam = hat_P_lambda(P, lam, grid)
        return {"lam": lam, "basis": [list(k) for k in fam.basis], "order": fam.order,
                "diagonal": fam.is_diagonal,
                "blocks": [[op.to_json() for op in row] for row in fam.blocks]}
    rng = np.random.default_rng(cfg.seed)
    samples = []
    for _ in range(cfg.options["samples"]):
        t0 = rng.uniform(0, 2 * np.pi, P.n)
        tau = rng.normal(size=P.n)
        samples.append((t0, tau / np.linalg.norm(tau)))
    grid = None if cfg.cutoff is None else GridSpec(P.n, P.m, cfg.cutoff)
    verdict = symbol_identity_check(P, lam, samples, grid, rho=cfg.options["rho"],
                                    tol=cfg.options["symbol_tol"])
    return {"lam": lam, "symbol_check": verdict.to_json()}


def _require_cutoff(cfg: RunConfig) -> int:
    if cfg.cutoff is None:
        raise ParameterError("this command needs --cutoff")
    return cfg.cutoff


def cmd_diagnose(cfg: RunConfig) -> dict:
    cutoff = _require_cutoff(cfg)
    if cfg.options["action"] == "multiplier":
        P = _operator(cfg)
        tbl = multiplier_table(P, GridSpec(P.n, P.m, cutoff))
        return {"power_fit": power_bound_fit(tbl, cfg.cutoffs).to_json(),
                "gevrey_fit": gevrey_bound_fit(tbl, cfg.s, cfg.cutoffs).to_json(),
                "kernel_size": len(tbl.kernel())}
    if "input" in cfg.inputs:
        w = DiophantineWitness.from_json(read_json(cfg.inputs["input"]))
    elif cfg.options.get("gaps"):
        w = make_liouville(cfg.options["gaps"])
    else:
        raise ParameterError("witness needs --gaps or --input")
    _, report = witness_distribution(w, GridSpec(1, 1, cutoff), cfg.s)
    report["certification"] = w.certify().to_json()
    report["power_fit"] = power_bound_fit(witness_multiplier_table(w, cutoff), cfg.cutoffs).to_json()
    return report


def _cells(cfg: RunConfig) -> dict:
    path = cfg.inputs["input"]
    if path.endswith(".csv"):
        return {(int(mu), int(lam)): v for mu, lam, v in read_csv_rows(path, 3)}
    return double_shell_norms(load_coeffs(path, cfg.cutoff))


def cmd_cone(cfg: RunConfig) -> dict:
    action = cfg.options["action"]
    if action == "check":
        cutoff = _require_cutoff(cfg)
        return {"inequalities": check_cone_inequalities(GridSpec(1, 1, cutoff), cfg.theta).to_json()}
    if action == "fit":
        return cone_report(_cells(cfg), cfg.theta, cfg.s).to_json()
    est_in = GevreyEstimate.from_json(read_json(cfg.inputs["in_cone"]))
    est_g = GevreyEstimate.from_json(read_json(cfg.inputs["g_shell"]))
    out = {"combined": combine(est_in, est_g, cfg.theta, cfg.s).to_json()}
    if "input" in cfg.inputs:
        out["validation"] = validate_bound(_cells(cfg), GevreyEstimate.from_json(out["combined"])).to_json()
    return out


def cmd_solve(cfg: RunConfig) -> dict:
    P = _operator(cfg)
    f = load_coeffs(cfg.inputs["input"], cfg.cutoff)
    report = solve(f, P, s=cfg.s, tol=cfg.tol)
    if cfg.options.get("solution"):
        Path(cfg.options["solution"]).write_text(dumps(report.u.to_json()))
    return report.to_json()


def cmd_reconstruct(cfg: RunConfig) -> dict:
    u = load_coeffs(cfg.inputs["input"], cfg.cutoff)
    est = None
    if "estimate" in cfg.inputs:
        est = GevreyEstimate.from_json(read_json(cfg.inputs["estimate"]))
    steps = truncated_reconstruction(u, cfg.options["nu"], est, cfg.s)
    return {"steps": [{"nu": st.nu, "tail": st.tail, "bound": st.bound, "within_bound": st.within_bound}
                      for st in steps]}


COMMANDS = {
    "transform": cmd_transform,
    "classify": cmd_classify,
    "operator": cmd_operator,
    "diagnose": cmd_diagnose,
    "cone": cmd_cone,
    "solve": cmd_solve,
    "reconstruct": cmd_reconstruct,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="primary input file (JSON, or CSV where accepted)")
    common.add_argument("--output", help="report path (default: stdout)")
    common.add_argument("--s", type=float, default=1.0, help="Gevrey order, s >= 1")
    common.add_argument("--theta", type=float, default=0.5, help="cone aperture in (0, 1)")
    common.add_argument("--cutoff", type=int, help="frequency cutoff override")
    common.add_argument("--cutoffs", type=_int_list, help="nested cutoffs for trend fits, e.g. 8,16,32")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=1e-12)

    parser = argparse.ArgumentParser(prog="gevrey-spectral", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", parents=[common], help="samples <-> Fourier coefficients")
    p.add_argument("--inverse", action="store_true")

    p = sub.add_parser("classify", parents=[common], help="Gevrey decay fit of shell norms")
    p.add_argument("--s-grid", type=_float_list, help="candidate orders for classification")
    p.add_argument("--variant", choices=("g", "full"), default="g")
    p.add_argument("--plot-data", help="CSV path for (lam, log_norm, log_bound)")

    p = sub.add_parser("operator", parents=[common], help="invariant operator tools")
    p.add_argument("action", choices=("apply", "hat-lambda", "is-class-t", "symbol-check"))
    p.add_argument("--operator", help="operator JSON (defaults to --input for is-class-t)")
    p.add_argument("--lam", type=int, default=1)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--rho", type=float, default=1e4)
    p.add_argument("--symbol-tol", type=float, default=1e-6)

    p = sub.add_parser("diagnose", parents=[common], help="small-divisor diagnostics")
    p.add_argument("action", choices=("multiplier", "witness"))
    p.add_argument("--operator")
    p.add_argument("--gaps", type=_int_list, help="witness exponents, e.g. 2,4,16,65536")

    p = sub.add_parser("cone", parents=[common], help="cone split and bound combination")
    p.add_argument("action", choices=("check", "fit", "combine"))
    p.add_argument("--in-cone", help="in-cone estimate JSON")
    p.add_argument("--g-shell", help="G-shell estimate JSON")

    p = sub.add_parser("solve", parents=[common], help="mode-by-mode solve of P u = f")
    p.add_argument("--operator", required=True)
    p.add_argument("--solution", help="write the solution coefficients here")

    p = sub.add_parser("reconstruct", parents=[common], help="partial sums over G-shells")
    p.add_argument("--nu", type=_int_list, required=True, help="schedule, e.g. 0,4,16")
    p.add_argument("--estimate", help="G-shell estimate JSON (fitted when absent)")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    inputs = {}
    for role in ("input", "operator", "in_cone", "g_shell", "estimate"):
        path = getattr(ns, role, None)
        if path:
            inputs[role] = path
    if ns.command == "operator" and "operator" not in inputs and "input" in inputs:
        inputs["operator"] = inputs["input"]
    skip = {"command", "input", "output", "s", "theta", "cutoff", "cutoffs", "seed", "tol",
            "operator", "in_cone", "g_shell", "estimate"}
    options = {k: v for k, v in vars(ns).items() if k not in skip}
    return RunConfig(ns.command, inputs, ns.s, ns.theta, ns.cutoff, ns.cutoffs, ns.output,
                     ns.seed, ns.tol, options)


_REQUIRED = {
    "transform": ("input",), "classify": ("input",), "solve": ("input", "operator"),
    "reconstruct": ("input",),
}


def _check_required(cfg: RunConfig):
    need = list(_REQUIRED.get(cfg.command, ()))
    action = cfg.options.get("action")
    if cfg.command == "operator":
        need.append("operator")
        if action == "apply":
            need.append("input")
    elif cfg.command == "diagnose" and action == "multiplier":
        need.append("operator")
    elif cfg.command == "cone":
        need += {"fit": ["input"], "combine": ["in_cone", "g_shell"]}.get(action, [])
    missing = [r for r in need if r not in cfg.inputs]
    if missing:
        raise ParameterError("missing required inputs: " + ", ".join("--" + r.replace("_", "-") for r in missing))


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute one command; returns ``(exit_status, report)``."""
    head = {"command": cfg.command, "version": __version__}
    try:
        _check_required(cfg)
        cfg.validate()
        head["config_sha256"] = cfg.digest()
        result = COMMANDS[cfg.command](cfg)
    except InputParseError as exc:
        return EXIT_PARSE, {**head, "error": {"type": "parse_error", "message": str(exc),
                                              "path": exc.path, "line": exc.line, "column": exc.column}}
    except IncompatibleDataError as exc:
        return EXIT_PRECONDITION, {**head, "error": {"type": type(exc).__name__, "message": str(exc),
                                                     "modes": [[list(j), list(k)] for j, k in exc.modes]}}
    except GevreySpectralError as exc:
        return EXIT_PRECONDITION, {**head, "error": {"type": type(exc).__name__, "message": str(exc)}}
    return EXIT_OK, {**head, "result": result}


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    cfg = config_from_args(ns)
    status, report = run(cfg)
    text = dumps(report)
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
