"""Command-line harness: ``susylab <command> [--config FILE] [flags]``.

Every command takes its parameters from an optional JSON config, with
flags overriding config keys.  Single runs write a JSON report, sweeps a
CSV table.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, detkit, findim, gaussian, wick, wzlg
from .gaussian import GaussianSpec, McEstimate, block_generator
from .spectral import SpectralField, laplacian_multiplier

SEED_ENV = "SUSYLAB_SEED"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
STREAM_CLI = 41
SCHEMA_PATH = Path(__file__).with_name("report.schema.json")


class ConfigError(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    pass


NUMERIC_ERRORS = (
    detkit.NearZeroDeterminant,
    wzlg.SingularBasePoint,
    findim.DegenerateRoot,
    findim.InsufficientDecay,
    NumericalFailure,
    np.linalg.LinAlgError,
)


@dataclass(frozen=True)
class Param:
    kind: str  # int | float | str | json | list
    default: Any = None
    check: Callable[[Any], bool] | None = None
    help: str = ""


def _positive(x) -> bool:
    return x > 0


def _nonneg(x) -> bool:
    return x >= 0


PARAMS: dict[str, dict[str, Param]] = {
    "detk": {
        "matrix": Param("json", None, help="square matrix; complex entries as [re, im]"),
        "operator": Param("str", None, lambda x: x in ("smoothing",), "built-in operator instead of --matrix"),
        "N": Param("int", 8, _positive, "truncation for --operator"),
        "p": Param("float", -1.0, help="exponent of (1 - Delta) for --operator"),
        "k": Param("int", 2, _positive, "regularisation order"),
    },
    "findim": {
        "map": Param("str", "identity", lambda x: x in findim.REGISTRY, "registry map id"),
        "mode": Param("str", "degree", lambda x: x in ("degree", "zeros", "pushforward", "phase"), ""),
        "n_samples": Param("int", 2000, _positive),
        "grid": Param("int", 801, lambda x: x >= 11, "quadrature points per axis"),
        "radius": Param("float", 8.0, _positive),
        "starts": Param("int", 200, _positive),
        "y": Param("json", None, help="target value for --mode zeros (default: random)"),
    },
    "gaussian": {
        "mode": Param("str", "charfun", lambda x: x in ("charfun", "cm"), ""),
        "N": Param("int", 8, _positive),
        "t": Param("float", 1.0, _positive),
        "s": Param("float", 0.0, _nonneg),
        "n": Param("int", 100000, lambda x: x >= 2),
        "norm": Param("float", 1.0, _nonneg, "L2 norm of the random test field"),
        "shift": Param("float", 0.5, _nonneg, "t * ||v||_{2s} of the Cameron-Martin shift"),
    },
    "wzlg": {
        "poly": Param("list", [0.0, -1.0, 0.0, 1.0 / 3.0], help="ascending coefficients of P"),
        "s": Param("float", 2.0, _positive),
        "t": Param("float", 16.0, _positive),
        "N": Param("int", 6, _positive),
        "samples": Param("int", 100, _positive),
        "starts": Param("int", 64, _nonneg),
        "variant": Param("str", "both", lambda x: x in ("frechet", "literal", "both"), ""),
        "base": Param("str", None, help="base point y (complex, default: a transversal root of P')"),
        "max_failure_fraction": Param("float", 0.95, lambda x: 0 <= x <= 1, "exit 3 above this"),
    },
    "fz": {
        "n": Param("int", 2, lambda x: 0 <= x <= 4),
        "matrix_size": Param("int", 2, lambda x: x >= 2),
        "matrices": Param("json", None, help="n Hermitian matrices (default: random)"),
        "points": Param("json", None, help="[z, w, z_1, ..., z_n] (default: random)"),
        "s": Param("float", 2.0, lambda x: x > 0.5),
        "N": Param("int", 3, lambda x: 1 <= x <= 6),
        "t": Param("float", 1.0, _positive),
        "algebra": Param("str", "gl", lambda x: x in ("gl", "sl"), ""),
    },
    "sweep": {
        "command": Param("str", None, lambda x: x in ("detk", "findim", "gaussian", "wzlg", "fz"), ""),
        "axis": Param("str", None, help="numeric parameter to vary"),
        "values": Param("list", None, help="comma-separated values"),
        "base": Param("json", {}, help="base parameters of the swept command"),
    },
}
COMMON = ("seed", "workers", "output")


def version_string() -> str:
    """Package version, suffixed with ``git describe`` output when available."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _coerce(name: str, p: Param, value):
    try:
        if p.kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            v = int(value)
        elif p.kind == "float":
            v = float(value)
        elif p.kind == "str":
            v = str(value)
        elif p.kind == "json":
            v = json.loads(value) if isinstance(value, str) else value
        elif p.kind == "list":
            if isinstance(value, str):
                v = [_number(x) for x in value.split(",") if x.strip()]
            else:
                v = [_number(x) for x in value]
        else:  # pragma: no cover
            raise AssertionError(p.kind)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name!r}: {value!r}") from exc
    if v is not None and p.check is not None and not p.check(v):
        raise ConfigError(f"value out of range for {name!r}: {v!r}")
    return v


def _parse_complex(name: str, x) -> complex:
    try:
        return complex(str(x).replace(" ", ""))
    except ValueError as exc:
        raise ConfigError(f"bad complex value for {name!r}: {x!r}") from exc


def _number(x):
    if isinstance(x, (int, float)):
        return x
    x = str(x).strip()
    for conv in (int, float, complex):
        try:
            return conv(x)
        except ValueError:
            continue
    raise ValueError(x)


def resolve(command: str, config: dict, overrides: dict) -> tuple[dict, int, str]:
    """Merge config and flag overrides, validate, and settle the seed."""
    spec = PARAMS[command]
    merged = dict(config)
    named = merged.pop("command", None) if command != "sweep" else None
    if named not in (None, command):
        raise ConfigError(f"config is for {named!r}, not {command!r}")
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - set(spec) - set(COMMON))
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {unknown}")
    params = {name: _coerce(name, p, merged[name]) if name in merged else p.default for name, p in spec.items()}
    if "seed" in merged:
        seed, source = merged["seed"], "config"
    elif os.environ.get(SEED_ENV):
        seed, source = os.environ[SEED_ENV], "env"
    else:
        seed, source = 0, "default"
    try:
        seed = int(seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer, got {seed!r}") from exc
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    return params, seed, source


def _cplx(z) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _matrix(data) -> np.ndarray:
    A = np.asarray(data, dtype=float)
    if A.ndim == 3 and A.shape[-1] == 2:
        A = A[..., 0] + 1j * A[..., 1]
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.size == 0:
        raise ConfigError("matrix must be a non-empty square 2D array")
    return A


def run_detk(p: dict, seed: int, workers: int) -> dict:
    if (p["matrix"] is None) == (p["operator"] is None):
        raise ConfigError("give exactly one of matrix or operator")
    if p["matrix"] is not None:
        K = _matrix(p["matrix"])
    else:
        K = np.diag(laplacian_multiplier(p["N"], p["p"]).ravel())
    k = p["k"]
    det_k = detkit.det_k(K, k)
    try:
        ph = _cplx(detkit.phase(det_k, detkit.default_phase_tol(K.shape[0])))
    except detkit.NearZeroDeterminant:
        ph = None
    return {
        "dim": K.shape[0],
        "det": _cplx(detkit.fredholm_det(K)),
        "det_k": _cplx(det_k),
        "phase": ph,
        "schatten_norms": {str(j): detkit.schatten_norm(K, j) for j in (1, 2, 3)},
    }


def run_findim(p: dict, seed: int, workers: int) -> dict:
    m = findim.get_map(p["map"])
    out: dict[str, Any] = {"map": m.name, "dim": m.dim}
    if p["mode"] == "degree":
        q = findim.degree_quadrature(m, p["radius"], p["grid"])
        out.update(degree_quadrature=q, degree=int(round(q)))
    elif p["mode"] == "zeros":
        y = np.asarray(p["y"], dtype=float) if p["y"] is not None else block_generator(seed, STREAM_CLI, 0).standard_normal(m.dim)
        roots = findim.preimages(m, y, n_starts=p["starts"], rng=block_generator(seed, STREAM_CLI, 1))
        out.update(
            y=y.tolist(),
            preimages=[{"x": r.x.tolist(), "sign": r.sign, "degenerate": r.degenerate} for r in roots],
            degree=findim.degree_zero_count(m, y, n_starts=p["starts"], rng=block_generator(seed, STREAM_CLI, 1)),
        )
    elif p["mode"] == "pushforward":
        out["mass"] = findim.pushforward_expectation(m, None, p["n_samples"], seed, p["starts"]).as_dict()
    else:
        lhs, rhs = findim.phase_relation_check(m, None, p["n_samples"], seed, p["radius"], p["grid"], n_starts=p["starts"])
        out.update(lhs=lhs, rhs=rhs.as_dict(), holds=findim.phase_relation_holds(lhs, rhs))
    return out


def _random_field(N: int, norm: float, rng: np.random.Generator) -> SpectralField:
    c = rng.standard_normal((2 * N + 1, 2 * N + 1)) + 1j * rng.standard_normal((2 * N + 1, 2 * N + 1))
    return SpectralField(N, c * (norm / np.linalg.norm(c)))


def run_gaussian(p: dict, seed: int, workers: int) -> dict:
    spec = GaussianSpec(p["N"], p["t"], p["s"])
    rng = block_generator(seed, STREAM_CLI, 0)
    phi = _random_field(p["N"], p["norm"], rng)
    if p["mode"] == "charfun":
        est = gaussian.characteristic_functional_mc(spec, phi, p["n"], seed)
        exact = gaussian.characteristic_functional_exact(spec, phi)
        return {"estimate": est.as_dict(), "exact": exact, "within_3_stderr": est.within(exact)}
    # keep t^2 ||v||_{2s}^2 = shift^2 so the density has variance exp(shift^2) - 1
    w = _random_field(p["N"], p["shift"] / p["t"], rng)
    v = SpectralField(p["N"], w.coeffs * laplacian_multiplier(p["N"], -p["s"]))
    shifted, weighted = gaussian.cameron_martin_check(spec, v, phi, p["n"], seed)
    diff = abs(shifted.mean - weighted.mean)
    bound = 3 * math.hypot(shifted.stderr, weighted.stderr)
    return {"shifted": shifted.as_dict(), "weighted": weighted.as_dict(), "within_3_stderr": diff <= bound}


def run_wzlg(p: dict, seed: int, workers: int) -> dict:
    base = None if p["base"] is None else _parse_complex("base", p["base"])
    model = wzlg.WzlgModel(tuple(p["poly"]), p["s"], p["t"], p["N"], base)
    variants = wzlg.VARIANTS if p["variant"] == "both" else (p["variant"],)
    run = wzlg.run_pullback(model, p["samples"], seed, p["starts"], variants, workers)
    target = model.degree - 1
    phase = {}
    for v in variants:
        if v in run.undefined:
            phase[v] = {"undefined": run.undefined[v]}
            continue
        est = run.phase_integral(v)
        phase[v] = {
            **est.as_dict(),
            "abs_within_3_stderr_of_target": abs(abs(est.mean) - target) <= 3 * est.stderr,
            "singular_branches": run.singular_branches[v],
        }
    fail = run.newton_failures / max(run.newton_starts, 1)
    out = {
        "mass": run.mass.as_dict(),
        "phase_integral": phase,
        "target": target,
        "branch_histogram": {str(k): v for k, v in run.branch_histogram.items()},
        "newton_failures": run.newton_failures,
        "newton_starts": run.newton_starts,
        "base": _cplx(model.base),
        "mean_distance_to_constants": float(np.mean(run.min_distance_to_constants)),
    }
    if fail > p["max_failure_fraction"]:
        raise NumericalFailure(f"Newton failure fraction {fail:.3f} exceeds {p['max_failure_fraction']}")
    return out


def _random_hermitian(n: int, rng) -> np.ndarray:
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def fz_scenario(p: dict, seed: int):
    """Inputs of a Frenkel-Zhu comparison; missing pieces drawn from ``seed``."""
    rng = block_generator(seed, STREAM_CLI, 0)
    n, m = p["n"], p["matrix_size"]
    if p["matrices"] is not None:
        x = [_matrix(a) for a in p["matrices"]]
        if len(x) != n or any(a.shape != (m, m) for a in x):
            raise ConfigError(f"need {n} matrices of size {m}")
    else:
        x = [_random_hermitian(m, rng) for _ in range(n)]
    if p["points"] is not None:
        pts = np.asarray(p["points"], dtype=float)
        if pts.shape != (n + 2, 2):
            raise ConfigError(f"points must be [z, w, z_1..z_n], shape ({n + 2}, 2)")
    else:
        pts = rng.uniform(0, 2 * np.pi, (n + 2, 2))
    phi = [rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)) for _ in range(2)]
    xi = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    vd = wick.VData(phi[0], phi[1], complex(xi[0]), complex(xi[1]))
    return x, (pts[0], pts[1], list(pts[2:])), vd


def run_fz(p: dict, seed: int, workers: int) -> dict:
    x, points, vd = fz_scenario(p, seed)
    spec = GaussianSpec(p["N"], p["t"], p["s"])
    try:
        kern = wick.kernel_table(spec, points[0], points[1], points[2])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sides = {}
    for alg in ("gl", "sl"):
        basis = wick.LieBasisSpec(p["matrix_size"], alg)
        rhs = wick.frenkel_zhu_rhs(x, kern, vd, basis)
        ora = wick.gaussian_moment_oracle(x, points, vd, spec, basis)
        sides[alg] = {
            "rhs": _cplx(rhs),
            "oracle": _cplx(ora),
            "difference": _cplx(rhs - ora),
            "relative_error": abs(rhs - ora) / max(abs(ora), 1e-300),
        }
    chosen = sides[p["algebra"]]
    return {**chosen, "completeness": sides, "configurations": len(wick.enumerate_cycles_chain(p["n"]))}


RUNNERS = {"detk": run_detk, "findim": run_findim, "gaussian": run_gaussian, "wzlg": run_wzlg, "fz": run_fz}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, complex):
        return _cplx(x)
    return x


def run(command: str, params: dict, seed: int, seed_source: str = "config", workers: int = 1) -> dict:
    """Run one command and return its report (may raise config/numerical errors)."""
    t0 = time.perf_counter()
    results = RUNNERS[command](params, seed, workers)
    return _jsonable(
        {
            "command": command,
            "version": version_string(),
            "inputs": params,
            "seed": seed,
            "seed_source": seed_source,
            "results": results,
            "execution": {"workers": workers, "wall_clock": time.perf_counter() - t0},
        }
    )


def deterministic_part(report: dict) -> dict:
    """Report without its execution block, the part fixed by (config, seed)."""
    return {k: v for k, v in report.items() if k != "execution"}


def _flatten(prefix: str, x, out: dict) -> None:
    if isinstance(x, dict):
        for k, v in x.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(x, bool):
        out[prefix] = int(x)
    elif isinstance(x, (int, float)):
        out[prefix] = x
    elif isinstance(x, list) and len(x) == 2 and all(isinstance(v, (int, float)) for v in x):
        out[prefix + ".re"], out[prefix + ".im"] = x


def sweep(params: dict, seed: int, seed_source: str = "config", workers: int = 1) -> str:
    """CSV with one row per value of ``axis``."""
    command, axis, values = params["command"], params["axis"], params["values"]
    if command is None or axis is None:
        raise ConfigError("sweep needs command and axis")
    if not values:
        raise ConfigError("sweep needs at least one value")
    spec = PARAMS[command]
    if axis not in spec or spec[axis].kind not in ("int", "float"):
        raise ConfigError(f"{axis!r} is not a numeric parameter of {command}")
    rows = []
    for val in values:
        base = dict(params["base"] or {})
        base[axis] = val
        p, _, _ = resolve(command, base, {})
        report = run(command, p, seed, seed_source, workers)
        flat: dict = {}
        _flatten("", report["results"], flat)
        rows.append({axis: p[axis], **flat})
    cols = [axis] + sorted({c for r in rows for c in r} - {axis})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in cols})
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="susylab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"susylab {version_string()}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, spec in PARAMS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file of parameters")
        sp.add_argument("--seed", default=None, help=f"64-bit seed (default: config, ${SEED_ENV}, then 0)")
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--output", "-o", default=None, help="report path (default: stdout)")
        for key, p in spec.items():
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, help=p.help or None)
    return parser


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.subcommand
    try:
        config = _load_config(args.config)
        overrides = {k: getattr(args, k) for k in PARAMS[command]}
        if args.seed is not None:
            overrides["seed"] = args.seed
        workers = config.pop("workers", 1)
        workers = args.workers if args.workers is not None else workers
        if not isinstance(workers, int):
            raise ConfigError("workers must be an integer")
        output = args.output or config.pop("output", None)
        config.pop("output", None)
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        params, seed, source = resolve(command, config, overrides)
        if command == "sweep":
            text = sweep(params, seed, source, workers)
        else:
            text = json.dumps(run(command, params, seed, source, workers), indent=2, sort_keys=True) + "\n"
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
