"""Command-line entry point.

Every subcommand accepts ``--format json|csv|text``, ``--config`` (a JSON or
``key = value`` document supplying option defaults), ``--seed`` (master seed)
and ``--out`` (directory receiving the result file and ``manifest.json``).
Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__

FORMATS = ("json", "csv", "text")


class UsageError(Exception):
    """Bad command-line or config input (exit code 2)."""


@dataclass
class Result:
    """Output of a subcommand.

    ``data`` is the JSON payload, ``rows`` the table used for CSV (and for
    text when ``text`` is empty), ``files`` extra outputs already written.
    """

    data: object
    rows: list = field(default_factory=list)
    columns: list | None = None
    text: str = ""
    files: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# documents, seeds, formatting


def _value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_document(path) -> dict:
    """Read a JSON object or a ``key = value`` document with dotted keys.

    Values are decoded as JSON when possible and kept as strings otherwise;
    ``a.b = 1`` becomes ``{"a": {"b": 1}}``.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = None
    if data is not None:
        if not isinstance(data, dict):
            raise UsageError(f"{path}: expected a JSON object")
        return data
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split(sep, 1))
        node = out
        *head, last = key.split(".")
        for part in head:
            node = node.setdefault(part, {})
        node[last] = _value(val)
    return out


def derive_seed(master: int, *counters: int) -> int:
    """Counter-based child seed: independent of how many other streams exist."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(c) for c in counters))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(Fraction(v)) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(str(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad rational {text!r}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _render_csv(rows: list, columns: list | None) -> str:
    columns = columns or (list(rows[0].keys()) if rows else [])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _jsonable(v) for k, v in r.items()})
    return buf.getvalue()


def _render(result: Result, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_jsonable(result.data), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        if not result.rows:
            raise UsageError("this command has no tabular output; use --format json or text")
        return _render_csv(result.rows, result.columns)
    if result.text:
        return result.text if result.text.endswith("\n") else result.text + "\n"
    if result.rows:
        cols = result.columns or list(result.rows[0].keys())
        lines = ["\t".join(cols)]
        lines += ["\t".join(str(_jsonable(r.get(c, ""))) for c in cols) for r in result.rows]
        return "\n".join(lines) + "\n"
    return json.dumps(_jsonable(result.data), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_symbols(args) -> Result:
    import re

    from .symbols import HomogeneityParams, generate_model_space, homogeneity, render, sort_symbols

    params = HomogeneityParams(kappa=args.kappa, d=args.d)
    space = generate_model_space(params, gamma=args.gamma, extended=args.extended)
    pool = space.W_ex if args.extended else space.W
    syms = sort_symbols([t for t in pool if homogeneity(t, params).value(params.kappa) < args.gamma], params)
    rows = []
    for t in syms:
        h = homogeneity(t, params)
        rows.append({"render": render(t), "homogeneity": str(h), "homogeneity_a": str(h.a),
                     "homogeneity_b": str(h.b), "count": 1})
    if args.families:
        merged: dict = {}
        for r in rows:
            key = (re.sub(r"X_\d+", "X_i", r["render"]), r["homogeneity"])
            if key in merged:
                merged[key]["count"] += 1
            else:
                merged[key] = dict(r, render=key[0])
        rows = list(merged.values())
    cols = ["render", "homogeneity", "homogeneity_a", "homogeneity_b", "count"]
    text = "\n".join(f"{r['render']:<28} {r['homogeneity']}" + (f"  (x{r['count']})" if r["count"] > 1 else "")
                     for r in rows)
    return Result(rows, rows, cols, text)


def cmd_coproduct(args) -> Result:
    from .hopf import delta
    from .symbols import HomogeneityParams, parse, render

    params = HomogeneityParams(kappa=args.kappa, d=args.d)
    tau = parse(args.symbol, params)
    terms = sorted(((render(l), str(r), str(c)) for (l, r), c in delta(tau, params).items()))
    rows = [{"left": l, "right": r, "coeff": c} for l, r, c in terms]
    text = "\n".join(f"{c} * {l} (x) {r}" for l, r, c in terms)
    return Result([list(t) for t in terms], rows, ["left", "right", "coeff"], text)


def cmd_renorm_eq(args) -> Result:
    import sympy

    from .renorm import renormalized_equation, renormalized_equation_extended

    names = ("Ct1", "Ct2", "Ct3", "Ct4") if args.extended else ("C1", "C2", "C3", "C4", "C5")
    given = {f"c{i}": getattr(args, f"c{i}") for i in range(1, 6)}
    subs = {}
    for i, name in enumerate(names, 1):
        if given[f"c{i}"] is not None:
            try:
                subs[sympy.Symbol(name)] = sympy.sympify(given[f"c{i}"])
            except (sympy.SympifyError, TypeError) as exc:
                raise UsageError(f"--c{i}: cannot parse {given[f'c{i}']!r}") from exc
    if args.extended:
        a = sympy.sympify(args.a) if args.a is not None else None
        pde = renormalized_equation_extended(a=a)
        stated = None
    else:
        pde = renormalized_equation()
        C2, C4 = sympy.symbols("C2 C4")
        stated = -(C2 + 3 * C4)
    data = {k: str(sympy.simplify(getattr(pde, k).subs(subs))) for k in ("mass", "constant", "cubic", "quintic")}
    data["extended"] = bool(args.extended)
    data["mass_sign"] = "-mass*u" if args.extended else "+mass*u"
    if stated is not None:
        data["constant_derived"] = data["constant"]
        data["constant_stated"] = str(sympy.simplify(stated.subs(subs)))
    rows = [{"term": k, "coefficient": v} for k, v in data.items() if isinstance(v, str)]
    return Result(data, rows, ["term", "coefficient"])


_CONSTANTS = {"c1", "c3"} | {f"ng{i}" for i in range(1, 6)} | {f"ext{i}" for i in range(1, 5)}


def _one_constant(which: str, eps: float, samples: int, seed: int, intensity: float):
    from .kernels import Noise, constant_C1, constant_C3, constants_extended, constants_nonGaussian

    if which == "c1":
        return constant_C1(eps, samples, seed, noise=Noise("gaussian"))
    if which == "c3":
        return constant_C3(eps, samples, seed)
    if which.startswith("ng"):
        return constants_nonGaussian(eps, Noise("shot", intensity), samples, seed)[f"C{which[2:]}"]
    return constants_extended(eps, samples=samples, seed=seed)[f"Ct{which[3:]}"]


def cmd_constants(args) -> Result:
    from .kernels import fit_exponent

    which = args.which.lower()
    if which not in _CONSTANTS:
        raise UsageError(f"--which must be one of {sorted(_CONSTANTS)}")
    rows = []
    for i, eps in enumerate(args.eps):
        r = _one_constant(which, eps, args.samples, derive_seed(args.seed, i), args.intensity)
        rows.append({"eps": eps, "value": float(r.value), "stderr": float(r.stderr)})
    data = {"which": which, "rows": rows}
    if len(rows) >= 2:
        e = [r["eps"] for r in rows]
        v = [r["value"] for r in rows]
        s = [r["stderr"] for r in rows]
        raw = fit_exponent(e, v, s)
        data["raw_exponent"] = {"exponent": raw.exponent, "stderr": raw.stderr}
        if len(rows) >= 3:
            off = fit_exponent(e, v, s, offset=True)
            data["offset_exponent"] = {"exponent": off.exponent, "stderr": off.stderr, "offset": off.offset}
    return Result(data, rows, ["eps", "value", "stderr"])


def cmd_graph(args) -> Result:
    from .kernels import GraphSpec, Noise, graph_integral, power_count

    try:
        g = GraphSpec.from_json(Path(args.spec).read_text())
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    noise = Noise(args.noise, args.intensity)
    rows = []
    for i, eps in enumerate(args.eps):
        r = graph_integral(g, eps, args.samples, derive_seed(args.seed, i), noise=noise)
        rows.append({"eps": eps, "value": float(r.value), "stderr": float(r.stderr)})
    data = {"graph": g.to_dict(), "power_count": power_count(g, 3), "rows": rows}
    return Result(data, rows, ["eps", "value", "stderr"])


def _noise_spec(text: str) -> tuple[str, dict]:
    kind, _, rest = text.partition(":")
    opts = {}
    for item in filter(None, rest.split(",")):
        k, sep, v = item.partition("=")
        if not sep:
            raise UsageError(f"bad noise option {item!r}; expected key=value")
        opts[k.strip()] = float(Fraction(v.strip()))
    return kind.strip(), opts


def cmd_lift(args) -> Result:
    from .models import Grid, canonical_lift, default_kernel, sample_noise, save_model, smooth_trig_noise
    from .symbols import HomogeneityParams, generate_model_space, homogeneity

    if not args.out:
        raise UsageError("lift needs --out <dir>")
    kind, opts = _noise_spec(args.noise)
    grid = Grid(args.d, args.n, args.n_t)
    params = HomogeneityParams(kappa=args.kappa, d=args.d)
    eps = opts.get("eps")
    if kind == "trig":
        xi = smooth_trig_noise(args.d, grid.T, grid.L).on_grid(grid)
    elif kind in ("white", "mollified", "poisson"):
        xi = sample_noise(grid, kind, seed=derive_seed(args.seed, 0), eps=eps,
                          intensity=opts.get("intensity", 1.0))
    else:
        raise UsageError(f"unknown noise kind {kind!r}")
    space = generate_model_space(params, gamma=args.gamma)
    syms = {t for t in space.U + space.W if homogeneity(t, params).value(params.kappa) < args.gamma}
    syms = {t for t in syms if t.kind != "X"}
    model = canonical_lift(xi, _closure(syms), kernel=default_kernel(grid, args.kernel_N), eps=eps, params=params)
    model.build_all()
    out = save_model(model, args.out)
    data = {"directory": str(out), "grid": grid.to_dict(), "noise": {"kind": kind, **opts},
            "symbols": [str(s) for s in model.symbols]}
    return Result(data, text=f"model with {len(model.symbols)} symbols written to {out}",
                  files=[str(out / "header.json")])


def _closure(syms: set) -> list:
    out = set()
    stack = list(syms)
    while stack:
        t = stack.pop()
        if t in out or t.kind == "X":
            continue
        out.add(t)
        stack.extend(t.children)
    return list(out)


def cmd_check_model(args) -> Result:
    from .models import check_admissibility, load_model

    model = _load(load_model, args.model)
    lambdas = args.lambdas
    if lambdas is None:
        dx = model.grid.dx
        lambdas = [2.0**-k for k in range(2, 7) if 2.0**-k >= 4 * dx]
        if len(lambdas) < 2:
            lambdas = [2.0**-k for k in range(1, 7) if 2.0**-k >= 2 * dx][-2:]
    rep = check_admissibility(model, lambdas=lambdas, n_pairs=args.pairs, seed=derive_seed(args.seed, 0))
    rows = []
    for s in rep.homogeneities:
        rows.append({"symbol": str(s), "homogeneity": float(rep.homogeneities[s]),
                     "slope": float(rep.slopes.get(s, float("nan"))),
                     "gamma_ratio": float(rep.gamma_ratios.get(s, 0.0))})
    data = {"algebraic_residual": rep.algebraic, "lambdas": list(lambdas), "symbols": rows}
    return Result(data, rows, ["symbol", "homogeneity", "slope", "gamma_ratio"])


def _load(loader, path):
    try:
        return loader(path)
    except FileNotFoundError as exc:
        raise ValueError(f"no model at {path}: {exc}") from exc


def cmd_reconstruct(args) -> Result:
    import sympy

    from .models import deformed_product_check, load_model, multiply, reconstruct, taylor_lift
    from .symbols import ONE, parse

    model = _load(load_model, args.model)
    grid = model.grid
    if args.ansatz == "deformed":
        err = deformed_product_check(grid, seed=derive_seed(args.seed, 0))
        return Result({"ansatz": "deformed", "relative_error": err})
    # phi4: Phi = Taylor lift of phi (gamma 3/2) + I(Xi); R(Phi^3) against (phi + K*xi)^3
    t, x1 = sympy.symbols("t x1")
    expr = args.amplitude * sympy.cos(2 * sympy.pi * x1 / grid.L)
    i_xi = parse("I(Xi)", model.params)
    k_xi = model.pi(i_xi).values
    # Pi_x I(Xi) vanishes at x, so the value K*xi sits on the unit symbol
    Phi = taylor_lift(grid, expr, Fraction(3, 2), model.params)
    Phi.coeffs[ONE] = Phi.coeffs[ONE] + k_xi
    Phi.coeffs[i_xi] = np.ones(grid.shape)
    cube = multiply(multiply(Phi, Phi), Phi)
    rf = reconstruct(cube, model).values
    phi = args.amplitude * np.cos(2 * np.pi * np.broadcast_to(grid.coordinate(1), grid.shape) / grid.L)
    target = (phi + k_xi) ** 3
    err = float(np.max(np.abs(rf - target)) / max(np.max(np.abs(target)), 1e-300))
    data = {"ansatz": "phi4", "relative_error": err, "mean": float(rf.mean()), "max": float(np.abs(rf).max())}
    files = []
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        p = Path(args.out) / "reconstruction.bin"
        np.ascontiguousarray(rf, dtype="<f8").tofile(p)
        files.append(str(p))
    return Result(data, files=files)


def cmd_wick(args) -> Result:
    import sympy

    from .cumulants import hermite_coefficients, hermite_polynomial

    try:
        c = sympy.sympify(args.variance)
    except sympy.SympifyError as exc:
        raise UsageError(f"--variance: cannot parse {args.variance!r}") from exc
    coeffs = hermite_coefficients(args.n, c)
    poly = hermite_polynomial(args.n, c)
    rows = [{"power": k, "coefficient": str(v)} for k, v in enumerate(coeffs)]
    data = {"n": args.n, "variance": str(c), "polynomial": str(sympy.expand(poly)),
            "coefficients": [str(v) for v in coeffs]}
    return Result(data, rows, ["power", "coefficient"], f"H_{args.n}(x, {c}) = {sympy.expand(poly)}")


def _equation_spec(path):
    from .solver import EquationSpec

    try:
        doc = load_document(path)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    try:
        return EquationSpec.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def cmd_simulate(args) -> Result:
    from .solver import integrate

    spec = _equation_spec(args.spec)
    spec.validate()
    traj = integrate(spec, seed=args.seed)
    rows = [{"t": float(t), "mean": float(np.mean(u)), "l2": float(np.sqrt(np.sum(u**2) * spec.dx**spec.d)),
             "sup": float(np.max(np.abs(u)))} for t, u in zip(traj.times, traj.fields)]
    files = []
    if args.out:
        traj.save(Path(args.out) / "trajectory")
        files.append(str(Path(args.out) / "trajectory" / "header.json"))
    return Result({"spec": spec.to_dict(), "seed": args.seed, "snapshots": rows}, rows,
                  ["t", "mean", "l2", "sup"], files=files)


def cmd_converge(args) -> Result:
    from .solver import OBSERVABLES, Potential, ensemble_converge, wick_family

    if len(args.eps) < 2:
        raise ValueError("converge needs at least two eps values for a trend")
    if args.observable not in OBSERVABLES:
        raise UsageError(f"--observable must be one of {sorted(OBSERVABLES)}")
    spec = _equation_spec(args.spec)
    if args.renormalise == "wick":
        family = wick_family(spec)
    elif args.renormalise == "none":
        family = lambda eps: Potential.cubic(0.0)  # noqa: E731
    else:
        family = None
    table = ensemble_converge(spec, args.eps, args.samples, observable=args.observable, coupling=args.coupling,
                              potential_for=family, seed=derive_seed(args.seed, 0), statistic=args.statistic)
    data = {"rows": table.rows(), "trend": table.trend, "trend_error": table.trend_error,
            "verdict": table.verdict, "samples": table.samples}
    cols = ["eps", "mean", "stderr", "blowups", "diff_next", "diff_next_err"]
    return Result(data, table.rows(), cols)


def cmd_rough(args) -> Result:
    from .roughpaths import (ControlledPath, Path as RPath, chen_defect, holder_exponent, rough_integral,
                             second_level_from_smooth, young_integral)

    try:
        raw = np.loadtxt(args.input, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from exc
    if raw.shape[1] < 2:
        raise ValueError("input needs a time column and at least one path column")
    W = RPath(raw[:, 0], raw[:, 1:])
    m = W.dim
    alpha = holder_exponent(W)
    if args.op == "young":
        res = young_integral(W.values, W)
        rows = [{"t": float(t), "value": float(v)} for t, v in zip(res.times, res.values)]
        data = {"op": "young", "endpoint": res.endpoint, "cauchy": res.cauchy, "status": res.status,
                "holder_exponent": alpha}
        return Result(data, rows, ["t", "value"])
    WW = second_level_from_smooth(W)
    if args.op == "area":
        idx = np.arange(len(W.times))
        vals = WW.between(np.zeros_like(idx), idx)
        rows = []
        for t, M in zip(W.times, vals):
            row = {"t": float(t)}
            row.update({f"WW_{a + 1}{b + 1}": float(M[a, b]) for a in range(m) for b in range(m)})
            rows.append(row)
        n = len(W.times) - 1
        defect = float(np.max(np.abs(chen_defect(WW, 0, n // 2, n)))) if n >= 2 else 0.0
        data = {"op": "area", "chen_defect": defect, "holder_exponent": alpha,
                "endpoint": vals[-1].tolist()}
        return Result(data, rows, list(rows[0].keys()))
    Z = ControlledPath(W.values, np.broadcast_to(np.eye(m), (len(W.times), m, m)).copy())
    Y, res = rough_integral(Z, W, WW)
    rows = [{"t": float(t), "value": float(v)} for t, v in zip(res.times, res.values)]
    data = {"op": "integral", "endpoint": res.endpoint, "cauchy": res.cauchy, "status": res.status,
            "holder_exponent": alpha}
    return Result(data, rows, ["t", "value"])


# ---------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--format", choices=FORMATS, default="json")
    p.add_argument("--config", help="JSON or key = value document with option defaults")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", help="output directory (result file plus manifest.json)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="regstruct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("symbols", cmd_symbols, "census of symbols below a homogeneity cutoff")
    p.add_argument("--gamma", type=_fraction, default=Fraction(0))
    p.add_argument("--kappa", type=_fraction, default=Fraction(1, 100))
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--extended", action="store_true")
    p.add_argument("--families", action="store_true", help="group the X_i family into one line")

    p = add("coproduct", cmd_coproduct, "coproduct of a symbol")
    p.add_argument("--symbol", required=True)
    p.add_argument("--kappa", type=_fraction, default=Fraction(1, 100))
    p.add_argument("--d", type=int, default=3)

    p = add("renorm-eq", cmd_renorm_eq, "counterterms of the renormalised equation")
    p.add_argument("--extended", action="store_true")
    p.add_argument("--a", default=None, help="quintic coupling (symbolic by default)")
    for i in range(1, 6):
        p.add_argument(f"--c{i}", default=None, help=f"value or expression for constant {i}")

    p = add("constants", cmd_constants, "Monte Carlo renormalisation constants")
    p.add_argument("--eps", type=_float_list, required=True)
    p.add_argument("--which", default="c1", help="c1, c3, ng1..ng5 (shot noise), ext1..ext4")
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--intensity", type=float, default=1.0, help="shot-noise intensity")

    p = add("graph", cmd_graph, "Monte Carlo value of a Feynman graph")
    p.add_argument("--spec", required=True, help="GraphSpec JSON file")
    p.add_argument("--eps", type=_float_list, default=[0.1])
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--noise", choices=("gaussian", "shot", "white"), default="gaussian")
    p.add_argument("--intensity", type=float, default=1.0)

    p = add("lift", cmd_lift, "canonical lift of a grid noise")
    p.add_argument("--noise", default="mollified:eps=1/8",
                   help="white | mollified:eps=E | poisson:eps=E,intensity=L | trig")
    p.add_argument("--gamma", type=_fraction, default=Fraction(0))
    p.add_argument("--kappa", type=_fraction, default=Fraction(1, 100))
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--n-t", dest="n_t", type=int, default=64)
    p.add_argument("--kernel-N", dest="kernel_N", type=int, default=4)

    p = add("check-model", cmd_check_model, "admissibility diagnostics of a saved model")
    p.add_argument("model")
    p.add_argument("--pairs", type=int, default=6)
    p.add_argument("--lambdas", type=_float_list, default=None, help="test-function scales")

    p = add("reconstruct", cmd_reconstruct, "reconstruct a modelled distribution")
    p.add_argument("model")
    p.add_argument("--ansatz", choices=("phi4", "deformed"), default="phi4")
    p.add_argument("--amplitude", type=float, default=0.5)

    p = add("wick", cmd_wick, "Hermite polynomial H_n(x, c)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--variance", default="c")

    p = add("simulate", cmd_simulate, "integrate the stochastic equation")
    p.add_argument("--spec", required=True, help="key = value or JSON document mirroring EquationSpec")

    p = add("converge", cmd_converge, "ensemble convergence across eps")
    p.add_argument("--spec", required=True)
    p.add_argument("--eps", type=_float_list, required=True)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--observable", default="pairing")
    p.add_argument("--coupling", choices=("same-noise", "independent"), default="same-noise")
    p.add_argument("--renormalise", choices=("wick", "none", "spec"), default="spec")
    p.add_argument("--statistic", choices=("pathwise", "mean"), default="pathwise")

    p = add("rough", cmd_rough, "rough-path operations on sampled paths")
    p.add_argument("--input", required=True, help="CSV with header: t, w1, ..., wm")
    p.add_argument("--op", choices=("young", "area", "integral"), required=True)
    return parser


def _peek_config(argv: list) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _parse(parser: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    path = _peek_config(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    choices = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    if path is None or command not in choices:
        return parser.parse_args(argv)
    try:
        cfg = load_document(path)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    sub = choices[command]
    known = {a.dest for a in sub._actions}  # noqa: SLF001
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = set(cfg) - known - {"config"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    # command-line flags win over config values
    sub.set_defaults(**cfg)
    for action in sub._actions:  # noqa: SLF001
        if action.dest in cfg:
            action.required = False
    args = parser.parse_args(argv)
    for action in sub._actions:  # noqa: SLF001
        val = getattr(args, action.dest, None)
        if action.dest not in cfg:
            continue
        if action.type is _float_list and isinstance(val, (int, float)):
            setattr(args, action.dest, [float(val)])
        elif action.type is _float_list and isinstance(val, list):
            setattr(args, action.dest, [float(v) for v in val])
        elif isinstance(val, str) and action.type is not None:
            setattr(args, action.dest, action.type(val))
        elif isinstance(val, (int, float)) and action.type is str:
            setattr(args, action.dest, str(val))
    return args


def _config_hash(args: argparse.Namespace) -> str:
    payload = {k: _jsonable(v) for k, v in vars(args).items() if k not in ("func", "out", "format")}
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _write_outputs(args, argv, result: Result, rendered: str, started: str) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = {"json": "json", "csv": "csv", "text": "txt"}[args.format]
    name = f"{args.command}.{ext}"
    (out / name).write_text(rendered)
    manifest = {
        "command": ["regstruct", *argv],
        "config_hash": _config_hash(args),
        "seed": args.seed,
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [name, *result.files],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def main(argv: list | None = None) -> int:
    """Run the CLI and return the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    started = datetime.now(timezone.utc).isoformat()
    try:
        result = args.func(args)
        rendered = _render(result, args.format)
        if args.out:
            _write_outputs(args, argv, result, rendered, started)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(rendered)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
