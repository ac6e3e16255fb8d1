"""Manifest-driven command line runner.

Usage::

    nlsinverse <subcommand> --manifest run.json [--out DIR] [--threads N]

Exit codes: 0 success, 2 manifest or hypothesis validation, 3 runtime failure.
Every CSV starts with ``# schema=<name> v1`` followed by the canonical manifest;
wall times and versions go to ``run.log`` only, so reruns give identical CSVs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .carleman import (
    carleman_ratio_sweep,
    fbi_kernel_bound_check,
    find_s0,
    manufactured_suite,
    smallest_lambda,
)
from .errors import ConfigurationError, GridMismatchError, HypothesisViolation, UnderResolvedError
from .forward import SolveConfig, contraction_radius, render_trajectory, solve_nonlinear
from .inverse import (
    explicit_selection,
    gamma0_selection,
    partial_data_experiment,
    stability_experiment,
)
from .linearization import convergence_study
from .nonlinearity import PRESETS, NonlinearitySpec, validate_spec
from .profiles import GENERATORS, generate, sine_bump_family
from .records import render_table
from .spectral import (
    banach_algebra_constant,
    build_grid,
    eigendecompose,
    fit_propagator_constant,
    sobolev_norm,
)

THREADS_ENV = "NLSINVERSE_THREADS"
SUBCOMMANDS = ("solve", "linearize", "carleman-check", "fbi-check", "recover-p", "recover-q", "partial-data")
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("nlsinverse.cli")


class ManifestError(ConfigurationError):
    """Manifest problems; ``problems`` lists ``(key path, message)`` pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        text = "; ".join(f"{k}: {m}" for k, m in self.problems)
        super().__init__(f"invalid manifest: {text}")


# manifest schema ---------------------------------------------------------------

_NUM = (int, float)
_TOP = {
    "name": str,
    "description": str,
    "seed": int,
    "domain": dict,
    "coefficients": dict,
    "nonlinearity": dict,
    "solver": dict,
    "data": dict,
    "experiment": dict,
}
_DOMAIN = {"dim": int, "extent": (int, float, list), "points": (int, list), "collar": _NUM}
_SOLVER = {"T": _NUM, "dt": _NUM, "rule": str, "picard_tol": _NUM, "picard_max_iter": int}
_PROFILE = {"generator": str, "params": dict}
_NONLIN = {"preset": str, "inline": dict, "file": str}
_EXPERIMENT = {"operation": str, "params": dict, "outputs": dict}

# parameters and output names accepted per operation
_PARAMS = {
    "solve": {"amplitude": _NUM, "certify": bool, "samples": int},
    "linearize": {"order": int, "eps_ladder": list, "amplitude": _NUM},
    "carleman-check": {
        "x0": list,
        "lambda": (int, float, str),
        "T1": _NUM,
        "s0": (int, float, str),
        "s0_candidates": list,
        "ladder": list,
        "estimate": str,
        "n_times": int,
    },
    "fbi-check": {"gammas": list, "zeta_points": int, "threshold": _NUM},
    "recover-p": {
        "x0": list,
        "family_scale": _NUM,
        "family_size": int,
        "full_eps": _NUM,
        "full_members": list,
        "gamma_minus": _NUM,
        "gamma_plus": _NUM,
        "agreement_tol": _NUM,
    },
    "partial-data": {
        "kind": str,
        "x0": list,
        "fraction": _NUM,
        "facets": list,
        "family_scale": _NUM,
        "family_size": int,
        "fractions": list,
        "gamma_star": _NUM,
        "T0": _NUM,
        "gamma_minus": _NUM,
        "gamma_plus": _NUM,
    },
}
_PARAMS["recover-q"] = dict(_PARAMS["recover-p"])
_OUTPUTS = {
    "solve": {"trajectory": "trajectory.csv", "certificate": "picard_certificate.csv"},
    "linearize": {"convergence": "convergence.csv"},
    "carleman-check": {"ratios": "carleman_ratio.csv"},
    "fbi-check": {"kernel": "fbi_kernel.csv"},
    "recover-p": {"report": "stability.csv"},
    "recover-q": {"report": "stability.csv"},
    "partial-data": {
        "report": "partial_data.csv",
        "lipschitz": "lipschitz.csv",
        "shrink": "shrink.csv",
        "observability": "observability.csv",
    },
}


def _check_block(block, schema, path, problems, required=()):
    if not isinstance(block, dict):
        problems.append((path, "must be an object"))
        return
    for key, val in block.items():
        if key not in schema:
            problems.append((f"{path}.{key}", "unknown key"))
            continue
        types = schema[key] if isinstance(schema[key], tuple) else (schema[key],)
        if not isinstance(val, types) or (isinstance(val, bool) and bool not in types):
            problems.append((f"{path}.{key}", f"wrong type {type(val).__name__}"))
    for key in required:
        if key not in block:
            problems.append((f"{path}.{key}", "missing"))


def _check_profile(block, path, problems):
    _check_block(block, _PROFILE, path, problems, required=("generator",))
    if isinstance(block, dict) and isinstance(block.get("generator"), str):
        if block["generator"] not in GENERATORS:
            problems.append((f"{path}.generator", f"unknown generator {block['generator']!r}"))


def validate_manifest(manifest, subcommand=None) -> dict:
    """Check keys and types of every block; raises :class:`ManifestError` listing all problems."""
    problems = []
    if not isinstance(manifest, dict):
        raise ManifestError([("$", "manifest must be a JSON object")])
    _check_block(manifest, _TOP, "$", problems, required=("domain", "solver", "experiment"))
    if isinstance(manifest.get("domain"), dict):
        _check_block(manifest["domain"], _DOMAIN, "$.domain", problems, required=("dim", "extent", "points", "collar"))
    if isinstance(manifest.get("solver"), dict):
        _check_block(manifest["solver"], _SOLVER, "$.solver", problems, required=("T", "dt"))
    coeffs = manifest.get("coefficients", {})
    if isinstance(coeffs, dict):
        for key, val in coeffs.items():
            if key not in ("p", "q"):
                problems.append((f"$.coefficients.{key}", "unknown key"))
            else:
                _check_profile(val, f"$.coefficients.{key}", problems)
    if "data" in manifest:
        _check_profile(manifest["data"], "$.data", problems)
    nl = manifest.get("nonlinearity")
    if isinstance(nl, dict):
        _check_block(nl, _NONLIN, "$.nonlinearity", problems)
        if len(nl) != 1:
            problems.append(("$.nonlinearity", "give exactly one of preset, inline, file"))
        if isinstance(nl.get("preset"), str) and nl["preset"] not in PRESETS:
            problems.append(("$.nonlinearity.preset", f"unknown preset {nl['preset']!r}"))
    exp = manifest.get("experiment")
    if isinstance(exp, dict):
        _check_block(exp, _EXPERIMENT, "$.experiment", problems)
        op = exp.get("operation", subcommand)
        if subcommand is not None and op != subcommand:
            problems.append(("$.experiment.operation", f"{op!r} does not match subcommand {subcommand!r}"))
        if op in _PARAMS:
            _check_block(exp.get("params", {}), _PARAMS[op], "$.experiment.params", problems)
            for key in exp.get("outputs", {}):
                if key not in _OUTPUTS[op]:
                    problems.append((f"$.experiment.outputs.{key}", "unknown output"))
        elif op is not None:
            problems.append(("$.experiment.operation", f"unknown operation {op!r}"))
    if problems:
        raise ManifestError(problems)
    return manifest


def dump_manifest(manifest) -> str:
    """Canonical serialization: sorted keys, two-space indent, trailing newline."""
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def load_manifest(path, subcommand=None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ManifestError([("$", f"cannot read {path}: {exc.strerror}")]) from exc
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError([("$", f"not valid JSON: {exc}")]) from exc
    return validate_manifest(manifest, subcommand)


# building blocks -------------------------------------------------------------------


class Context:
    """Objects built from a validated manifest."""

    def __init__(self, manifest, base_dir=Path(".")):
        self.manifest = manifest
        self.base_dir = Path(base_dir)
        d = manifest["domain"]
        self.grid = build_grid(d["dim"], d["extent"], d["points"], d["collar"])
        self.seed = int(manifest.get("seed", 0))
        s = manifest["solver"]
        self.cfg = SolveConfig(
            T=float(s["T"]),
            dt=float(s["dt"]),
            rule=s.get("rule", "exponential"),
            picard_tol=float(s.get("picard_tol", 1e-13)),
            picard_max_iter=int(s.get("picard_max_iter", 200)),
        )
        coeffs = manifest.get("coefficients", {})
        self.p = self._profile(coeffs.get("p"), "$.coefficients.p")
        self.q = self._profile(coeffs.get("q"), "$.coefficients.q")
        self.f = self._profile(manifest.get("data", {"generator": "sine_mode"}), "$.data")
        self.spec = self._nonlinearity(manifest.get("nonlinearity", {"preset": "z1*z2"}))
        exp = manifest["experiment"]
        self.params = exp.get("params", {})
        self._op = None

    def _profile(self, block, path):
        if block is None:
            return np.zeros(self.grid.n)
        try:
            return generate(self.grid, block["generator"], block.get("params"))
        except ConfigurationError as exc:
            raise ManifestError([(path, str(exc))]) from exc

    def _nonlinearity(self, block):
        try:
            if "preset" in block:
                return PRESETS[block["preset"]]()
            if "inline" in block:
                return NonlinearitySpec.from_dict(block["inline"])
            path = Path(block["file"])
            path = path if path.is_absolute() else self.base_dir / path
            return NonlinearitySpec.loads(path.read_text())
        except (ConfigurationError, OSError, json.JSONDecodeError) as exc:
            raise ManifestError([("$.nonlinearity", str(exc))]) from exc

    @property
    def op(self):
        if self._op is None:
            self._op = eigendecompose(self.grid, self.p)
        return self._op

    def rng(self, stream=0):
        return np.random.default_rng([self.seed, stream])


def _with_manifest(text, manifest):
    """Insert the canonical manifest right after the schema line."""
    head, _, rest = text.partition("\n")
    echo = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    return f"{head}\n# manifest={echo}\n{rest}"


class Writer:
    """Single writer per output path; collects what was written."""

    def __init__(self, out_dir, manifest, outputs):
        self.out_dir = Path(out_dir)
        self.manifest = manifest
        self.outputs = outputs
        self.written = []

    def path(self, key):
        return self.out_dir / self.outputs[key]

    def table(self, key, text):
        path = self.path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_with_manifest(text, self.manifest))
        self.written.append(str(path.relative_to(self.out_dir)))


# operations -------------------------------------------------------------------------


def run_solve(ctx: Context, writer: Writer, summary: dict):
    prm = ctx.params
    f = float(prm.get("amplitude", 1.0)) * ctx.f
    radius = None
    if prm.get("certify", False):
        k_star = banach_algebra_constant(ctx.grid, prm.get("samples", 200), ctx.rng(1))
        c1 = fit_propagator_constant(ctx.op, ctx.cfg.times, prm.get("samples", 50), ctx.rng(2))
        qn = float(sobolev_norm(ctx.q, ctx.grid, 2))
        radius = contraction_radius(ctx.spec, k_star, c1, ctx.cfg.T, qn)
        summary["constants"].update({"C1": c1, "K*": k_star, "radius": radius})
    traj, cert = solve_nonlinear(ctx.op, ctx.spec, ctx.q, f, ctx.cfg, radius=radius)
    writer.table("trajectory", render_trajectory(traj))
    writer.table("certificate", cert.render())
    summary["checks"]["picard_converged"] = cert.converged
    summary["constants"]["picard_iterations"] = cert.iterations
    summary["constants"]["max_contraction_factor"] = cert.max_factor


def run_linearize(ctx: Context, writer: Writer, summary: dict):
    prm = ctx.params
    order = int(prm.get("order", ctx.spec.k))
    ladder = [float(e) for e in prm.get("eps_ladder", [])]
    f = float(prm.get("amplitude", 1.0)) * ctx.f
    if not ladder:
        log.warning("empty epsilon ladder: writing a header-only convergence table")
        text = render_table("convergence", ["epsilon", "error", "fitted_order"], [], {"order": order})
        writer.table("convergence", text)
        summary["checks"]["ladder_nonempty"] = False
        return
    rep = convergence_study(ctx.op, ctx.spec, ctx.q, f, order, ladder, ctx.cfg, workers=ctx.threads)
    writer.table("convergence", rep.render())
    summary["constants"]["fitted_order"] = rep.fitted_order
    summary["checks"]["monotone"] = rep.monotone


def run_carleman(ctx: Context, writer: Writer, summary: dict):
    prm = ctx.params
    x0 = prm.get("x0", [-1.0] * ctx.grid.dim)
    T1 = float(prm.get("T1", ctx.cfg.T))
    lam = prm.get("lambda", "auto")
    lam0 = smallest_lambda(ctx.grid, x0, T1)
    lam = lam0 if lam == "auto" else float(lam)
    summary["constants"]["Lambda0"] = lam0
    suite = manufactured_suite(ctx.op, seed=ctx.seed)
    estimate = prm.get("estimate", "full")
    n_times = int(prm.get("n_times", 2000))
    ladder = [float(m) for m in prm.get("ladder", [1, 2, 4, 8])]
    s0 = prm.get("s0", "auto")
    if s0 == "auto":
        cands = [float(c) for c in prm.get("s0_candidates", [0.25, 0.5, 1.0, 2.0])]
        s0, table = find_s0(ctx.op, x0, lam, T1, suite, cands, estimate, n_times, ladder)
        if s0 is None:
            log.warning("no candidate s0 passed; reporting the last ladder")
    else:
        s0 = float(s0)
        table = carleman_ratio_sweep(ctx.op, x0, lam, T1, [s0 * m for m in ladder], suite, estimate, n_times)
    writer.table("ratios", table.render())
    summary["constants"]["s0"] = s0
    summary["constants"]["ratio_constant"] = table.constant
    summary["checks"]["non_increasing"] = table.non_increasing()
    summary["checks"]["bounded"] = table.bounded


def run_fbi(ctx: Context, writer: Writer, summary: dict):
    prm = ctx.params
    rep = fbi_kernel_bound_check(
        prm.get("gammas", [50, 100, 400]), int(prm.get("zeta_points", 4001)), float(prm.get("threshold", 0.5))
    )
    rows = list(zip(rep.gammas, rep.maxima))
    meta = {"threshold": rep.threshold, "zeta_points": rep.zeta_points, "passed": rep.passed}
    writer.table("kernel", render_table("fbi_kernel", ["gamma", "max_ratio"], rows, meta))
    summary["constants"]["kernel_constant"] = rep.constant
    summary["checks"]["kernel_bound"] = rep.passed


def _family(ctx):
    prm = ctx.params
    return sine_bump_family(ctx.grid, float(prm.get("family_scale", 0.01)), int(prm.get("family_size", 5)))


def run_recover(ctx: Context, writer: Writer, summary: dict, mode):
    prm = ctx.params
    sel = gamma0_selection(ctx.grid, prm.get("x0", [-0.5] * ctx.grid.dim))
    rep = stability_experiment(
        mode,
        ctx.op,
        ctx.f,
        _family(ctx),
        sel,
        ctx.cfg,
        spec=ctx.spec,
        q_base=ctx.q,
        full_eps=prm.get("full_eps"),
        full_members=prm.get("full_members"),
        gamma_minus=prm.get("gamma_minus"),
        gamma_plus=prm.get("gamma_plus"),
        agreement_tol=float(prm.get("agreement_tol", 0.05)),
        workers=ctx.threads,
    )
    writer.table("report", rep.render())
    summary["constants"]["C"] = rep.constant
    summary["checks"]["stability"] = rep.passed


def run_partial(ctx: Context, writer: Writer, summary: dict):
    prm = ctx.params
    kind = prm.get("kind", "q")
    if kind not in ("p", "q"):
        raise ManifestError([("$.experiment.params.kind", "must be 'p' or 'q'")])
    g0 = gamma0_selection(ctx.grid, prm.get("x0", [-0.5] * ctx.grid.dim))
    gamma = explicit_selection(ctx.grid, prm["facets"]) if "facets" in prm else g0.subset(float(prm.get("fraction", 0.25)))
    rep = partial_data_experiment(
        "partial-data-" + kind,
        ctx.op,
        ctx.f,
        _family(ctx),
        gamma,
        g0,
        ctx.cfg,
        spec=ctx.spec,
        q_base=ctx.q,
        fractions=[float(x) for x in prm.get("fractions", [1.0, 0.75, 0.5, 0.25])],
        gamma_star=prm.get("gamma_star"),
        T0=prm.get("T0"),
        gamma_minus=prm.get("gamma_minus"),
        gamma_plus=prm.get("gamma_plus"),
        workers=ctx.threads,
    )
    writer.table("report", rep.log_report.render())
    writer.table("lipschitz", rep.lipschitz_report.render())
    rows = list(zip(rep.shrink_fractions, rep.shrink_deltas))
    writer.table("shrink", render_table("shrink", ["fraction", "delta"], rows, {"monotone": rep.shrink_monotone}))
    if rep.observability is not None:
        writer.table("observability", rep.observability.render())
        summary["constants"]["observability_C"] = rep.observability.C
        summary["constants"]["mu"] = rep.observability.mu
    summary["constants"]["C"] = rep.log_report.constant
    summary["constants"]["C_lipschitz"] = rep.lipschitz_report.constant
    summary["checks"]["partial_data"] = rep.passed


OPERATIONS = {
    "solve": run_solve,
    "linearize": run_linearize,
    "carleman-check": run_carleman,
    "fbi-check": run_fbi,
    "recover-p": lambda c, w, s: run_recover(c, w, s, "recover-p"),
    "recover-q": lambda c, w, s: run_recover(c, w, s, "recover-q"),
    "partial-data": run_partial,
}


# summary and logging ---------------------------------------------------------------


def render_summary(subcommand, summary, failed=None) -> str:
    """Fixed-order digest; a failed run starts with the FAILED marker line."""
    lines = []
    if failed is not None:
        lines.append(f"FAILED: {failed}")
    checks = summary.get("checks", {})
    status = "pass" if checks and all(checks.values()) else ("fail" if checks else "n/a")
    if failed is not None:
        status = "error"
    lines.append(f"subcommand: {subcommand}")
    lines.append(f"status: {status}")
    for key in sorted(checks):
        lines.append(f"check {key}: {'pass' if checks[key] else 'fail'}")
    for key in sorted(summary.get("constants", {})):
        val = summary["constants"][key]
        lines.append(f"constant {key}: {val!r}" if not isinstance(val, float) else f"constant {key}: {val:.6g}")
    for path in summary.get("outputs", []):
        lines.append(f"output: {path}")
    return "\n".join(lines) + "\n"


def _setup_log(out_dir):
    handler = logging.FileHandler(Path(out_dir) / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("nlsinverse")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    logging.captureWarnings(True)
    logging.getLogger("py.warnings").addHandler(handler)
    return handler


def resolve_threads(flag=None) -> int:
    """``--threads`` wins, then the environment variable, then 1."""
    if flag is not None:
        n = flag
    else:
        env = os.environ.get(THREADS_ENV)
        try:
            n = int(env) if env else 1
        except ValueError as exc:
            raise ManifestError([(THREADS_ENV, f"not an integer: {env!r}")]) from exc
    if n < 1:
        raise ManifestError([("threads", "must be at least 1")])
    return n


def run_manifest(subcommand, manifest_path, out_dir=None, threads=None) -> int:
    """Run one subcommand; returns the process exit code."""
    manifest_path = Path(manifest_path)
    out = Path(out_dir) if out_dir is not None else manifest_path.parent / (manifest_path.stem + "_out")
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    handler = _setup_log(out)
    summary = {"checks": {}, "constants": {}, "outputs": []}
    t0 = time.perf_counter()
    try:
        log.info("nlsinverse %s, python %s, numpy %s", __version__, platform.python_version(), np.__version__)
        import scipy

        log.info("scipy %s; manifest %s; subcommand %s", scipy.__version__, manifest_path, subcommand)
        manifest = load_manifest(manifest_path, subcommand)
        outputs = dict(_OUTPUTS[subcommand])
        outputs.update(manifest["experiment"].get("outputs", {}))
        writer = Writer(out, manifest, outputs)
        ctx = Context(manifest, manifest_path.parent)
        ctx.threads = resolve_threads(threads)
        log.info("grid %s, threads %d, seed %d", ctx.grid.metadata(), ctx.threads, ctx.seed)
        report = validate_spec(ctx.spec)
        if not report.passed:
            log.warning("nonlinearity fails structural checks: %s", report.failures())
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            OPERATIONS[subcommand](ctx, writer, summary)
        summary["outputs"] = writer.written
        for key, val in sorted(summary["constants"].items()):
            log.info("constant %s = %r", key, val)
        log.info("wall time %.3f s", time.perf_counter() - t0)
        (out / "summary.txt").write_text(render_summary(subcommand, summary))
        return EXIT_OK
    except (ConfigurationError, HypothesisViolation, GridMismatchError, UnderResolvedError, ValueError) as exc:
        code, kind = EXIT_VALIDATION, "validation"
        failure = exc
    except Exception as exc:  # noqa: BLE001 - any runtime failure is reported, not raised
        code, kind = EXIT_RUNTIME, "runtime"
        failure = exc
    finally:
        logging.getLogger("nlsinverse").removeHandler(handler)
        logging.getLogger("py.warnings").removeHandler(handler)
    msg = f"{kind} error: {failure}"
    with open(out / "run.log", "a") as fh:
        fh.write(f"ERROR {msg}\n")
        for key, text in getattr(failure, "problems", []):
            fh.write(f"ERROR key {key}: {text}\n")
    if "writer" in locals():
        summary["outputs"] = writer.written
    marker.write_text(msg + "\n")
    (out / "summary.txt").write_text(render_summary(subcommand, summary, failed=msg))
    print(msg, file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlsinverse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True, help="JSON manifest")
        p.add_argument("--out", default=None, help="output directory (default: <manifest stem>_out)")
        p.add_argument("--threads", type=int, default=None, help=f"worker threads (else ${THREADS_ENV})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run_manifest(args.subcommand, args.manifest, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
