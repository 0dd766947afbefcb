"""Benchmark driver: eigenvalue estimates and iteration counts per configuration.

Examples::

    stokes-fetidp --dim 2 --subs 4x4 --ratio 8 --precond lumped,dirichlet
    stokes-fetidp --preset 2d-subs --format pretty
    stokes-fetidp --dim 3 --subs 3x3x3 --ratio 3,4 --alpha 1/2 --out rows.csv
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from . import fem
from .krylov import PcgConfig
from .mesh import ConfigError, build_mesh
from .preconditioners import KINDS, SPACINGS, PrecondConfig
from .solver import setup, solve

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json", "pretty")
COLUMNS = ("H/h", "#sub", "preconditioner", "alpha", "lambda_min", "lambda_max", "iterations", "converged")

PRESETS = {
    "2d-subs": dict(dim=2, subs=["4x4", "8x8", "16x16"], ratio=[8], precond=["lumped", "dirichlet"]),
    "2d-ratio": dict(dim=2, subs=["8x8"], ratio=[4, 8, 16], precond=["lumped", "dirichlet"]),
    "3d-subs": dict(dim=3, subs=["3x3x3", "4x4x4"], ratio=[4], precond=["lumped", "dirichlet"]),
    "3d-ratio": dict(dim=3, subs=["3x3x3"], ratio=[3, 4], precond=["lumped", "dirichlet"]),
}


@dataclass(frozen=True)
class RunConfig:
    dim: int = 2
    subs: tuple[int, ...] = (4, 4)
    ratio: int = 8
    precond: str = "dirichlet"
    alpha: float = 1.0
    tol: float = 1e-6
    max_iters: int = 500
    format: str = "csv"
    verify: bool = False
    spacing: str = "node"
    parallel: bool = False

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if len(self.subs) != self.dim:
            raise ConfigError(f"subs {self.subs} does not match dim {self.dim}")
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}")
        # reuse the solver-side validation
        self.precond_config()
        self.pcg_config()

    def precond_config(self) -> PrecondConfig:
        try:
            return PrecondConfig(self.precond, self.alpha, self.spacing)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def pcg_config(self) -> PcgConfig:
        try:
            return PcgConfig(tol=self.tol, max_iters=self.max_iters)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def sub_label(self) -> str:
        return "x".join(str(s) for s in self.subs)


@dataclass
class Row:
    ratio: int
    subs: str
    preconditioner: str
    alpha: float
    lambda_min: float
    lambda_max: float
    iterations: int
    converged: bool
    timings: dict = field(default_factory=dict)
    error: str | None = None
    residuals: list[float] = field(default_factory=list, repr=False)
    verification: dict | None = None

    def values(self) -> list:
        return [
            self.ratio,
            self.subs,
            self.preconditioner,
            self.alpha,
            self.lambda_min,
            self.lambda_max,
            self.iterations,
            self.converged,
        ]


def parse_subs(text: str, dim: int | None = None) -> tuple[int, ...]:
    try:
        subs = tuple(int(t) for t in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"cannot parse subdomain layout {text!r}; expected AxB or AxBxC") from None
    if len(subs) == 1 and dim:
        subs = subs * dim
    if len(subs) not in (2, 3) or min(subs) < 1:
        raise ConfigError(f"bad subdomain layout {text!r}")
    return subs


def parse_alpha(text) -> float:
    try:
        return float(Fraction(str(text)))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot parse alpha {text!r}") from None


def run_case(cfg: RunConfig, system=None) -> Row:
    """Solve one configuration; failures are reported in the row, never raised."""
    t0 = time.perf_counter()
    row = Row(cfg.ratio, cfg.sub_label, cfg.precond, cfg.alpha, float("nan"), float("nan"), 0, False)
    try:
        mesh = build_mesh(cfg.dim, cfg.subs, cfg.ratio)
        sys_ = system if system is not None else setup(mesh, parallel=cfg.parallel)
        t1 = time.perf_counter()
        res = solve(mesh, fem.manufactured_case(cfg.dim), cfg.precond_config(), cfg.pcg_config(), system=sys_)
        t2 = time.perf_counter()
        rep = res.report
        row.lambda_min, row.lambda_max = rep.lambda_min, rep.lambda_max
        row.iterations, row.converged = rep.iterations, rep.converged
        row.residuals = list(rep.residuals)
        row.timings = {"setup": t1 - t0, "solve": t2 - t1}
        if cfg.verify:
            from .verify import verify

            row.verification = asdict(verify(mesh, fetidp=res.solution))
    except Exception as exc:  # a failed row is data, not a crash
        logger.error("row %s H/h=%d %s failed: %s", cfg.sub_label, cfg.ratio, cfg.precond, exc)
        row.error = f"{type(exc).__name__}: {exc}"
        row.converged = False
    return row


def run_sweep(configs, parallel_subdomains: bool = False) -> list[Row]:
    """Run configurations in order, reusing the factored system between rows on the same mesh."""
    rows = []
    cache_key, cache = None, None
    for cfg in configs:
        key = (cfg.dim, cfg.subs, cfg.ratio)
        if key != cache_key:
            if cache is not None:
                cache.close()
            cache_key, cache = key, None
            try:
                cache = setup(build_mesh(*key), parallel=parallel_subdomains or cfg.parallel)
            except Exception as exc:
                logger.error("setup for %s failed: %s", key, exc)
        rows.append(run_case(cfg, system=cache))
    if cache is not None:
        cache.close()
    return rows


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def to_csv(rows: list[Row], verify: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = list(COLUMNS) + (["velocity_discrepancy"] if verify else [])
    w.writerow(header)
    for r in rows:
        vals = [_fmt(v) for v in r.values()]
        if verify:
            vd = (r.verification or {}).get("velocity_discrepancy")
            vals.append("" if vd is None else _fmt(vd))
        w.writerow(vals)
    return buf.getvalue()


def to_json(rows: list[Row]) -> str:
    out = []
    for r in rows:
        d = dict(zip(COLUMNS, r.values()))
        d["timings"] = r.timings
        if r.error:
            d["error"] = r.error
        if r.verification is not None:
            d["verification"] = r.verification
        out.append(d)
    return json.dumps(out, indent=2, allow_nan=True)


def to_pretty(rows: list[Row]) -> str:
    cells = [list(COLUMNS)]
    for r in rows:
        v = r.values()
        cells.append(
            [str(v[0]), v[1], v[2], _fmt(v[3]), f"{v[4]:.4f}", f"{v[5]:.2f}", str(v[6]), "yes" if v[7] else "NO"]
        )
    width = [max(len(c[j]) for c in cells) for j in range(len(COLUMNS))]
    lines = ["  ".join(c[j].rjust(width[j]) for j in range(len(COLUMNS))) for c in cells]
    lines.insert(1, "  ".join("-" * n for n in width))
    return "\n".join(lines) + "\n"


def emit(rows: list[Row], fmt: str = "csv", out: str | Path | None = None, verify: bool = False) -> str:
    if fmt == "csv":
        text = to_csv(rows, verify)
    elif fmt == "json":
        text = to_json(rows)
    elif fmt == "pretty":
        text = to_pretty(rows)
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    if out is not None:
        Path(out).write_text(text)
    return text


def write_traces(rows: list[Row], directory: str | Path) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, r in enumerate(rows):
        p = d / f"trace_{k:03d}_{r.subs}_r{r.ratio}_{r.preconditioner}_a{_fmt(r.alpha)}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "residual"])
            for i, v in enumerate(r.residuals):
                w.writerow([i, repr(v)])
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stokes-fetidp", description=__doc__.split("\n")[0])
    ap.add_argument("--config", help="JSON file with run settings; flags override it")
    ap.add_argument("--preset", choices=sorted(PRESETS), help="predefined sweep")
    ap.add_argument("--dim", type=int)
    ap.add_argument("--subs", help="subdomains per axis, e.g. 4x4 or 3x3x3; comma separated for a sweep")
    ap.add_argument("--ratio", help="elements per subdomain axis H/h; comma separated for a sweep")
    ap.add_argument("--precond", help=f"one or more of {','.join(KINDS)}")
    ap.add_argument("--alpha", help="pressure block weight, e.g. 1 or 1/2; comma separated for a sweep")
    ap.add_argument("--spacing", choices=SPACINGS, help="length in the pressure block scale (default node)")
    ap.add_argument("--tol", type=float)
    ap.add_argument("--max-iters", type=int)
    ap.add_argument("--format", choices=FORMATS)
    ap.add_argument("--out", help="write the table here instead of stdout")
    ap.add_argument("--verify", action="store_true", default=None, help="compare with a direct solve")
    ap.add_argument("--trace", metavar="DIR", help="write per-row residual histories as CSV into DIR")
    ap.add_argument("--parallel-subdomains", action="store_true", help="thread subdomain solves")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _listify(v) -> list:
    if v is None:
        return []
    if isinstance(v, (list, tuple)):
        return list(v)
    return [t.strip() for t in str(v).split(",") if t.strip()]


def resolve(args: argparse.Namespace) -> tuple[list[RunConfig], dict]:
    """Merge preset, config file and flags (later wins) into the list of rows."""
    settings: dict = {}
    if args.preset:
        settings.update(PRESETS[args.preset])
    if args.config:
        try:
            settings.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    known = {f.name for f in fields(RunConfig)} | {"out", "trace"}
    for k in settings:
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
    for name in ("dim", "subs", "ratio", "precond", "alpha", "spacing", "tol", "format", "verify", "out", "trace"):
        v = getattr(args, name)
        if v is not None:
            settings[name] = v
    if args.max_iters is not None:
        settings["max_iters"] = args.max_iters
    if args.parallel_subdomains:
        settings["parallel"] = True

    dim = int(settings.get("dim", 2))
    subs_list = _listify(settings.get("subs")) or ["x".join(["4"] * dim)]
    subs_list = [tuple(s) if isinstance(s, (list, tuple)) else parse_subs(str(s), dim) for s in subs_list]
    try:
        ratios = [int(r) for r in (_listify(settings.get("ratio")) or [8])]
    except ValueError:
        raise ConfigError(f"bad ratio {settings.get('ratio')!r}") from None
    kinds = _listify(settings.get("precond")) or ["dirichlet"]
    alphas = [parse_alpha(a) for a in (_listify(settings.get("alpha")) or [1])]
    base = RunConfig(
        dim=dim,
        subs=subs_list[0],
        ratio=ratios[0],
        precond=kinds[0],
        alpha=alphas[0],
        tol=float(settings.get("tol", 1e-6)),
        max_iters=int(settings.get("max_iters", 500)),
        format=settings.get("format", "csv"),
        verify=bool(settings.get("verify", False)),
        spacing=settings.get("spacing", "node"),
        parallel=bool(settings.get("parallel", False)),
    )
    configs = [
        replace(base, subs=s, ratio=r, precond=k, alpha=a)
        for s, r, a, k in itertools.product(subs_list, ratios, alphas, kinds)
    ]
    extra = {"out": settings.get("out"), "trace": settings.get("trace")}
    return configs, extra


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        configs, extra = resolve(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = run_sweep(configs, parallel_subdomains=bool(args.parallel_subdomains))
    fmt = configs[0].format if configs else "csv"
    verify = bool(configs and configs[0].verify)
    try:
        text = emit(rows, fmt, extra["out"], verify=verify)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 2
    if extra["out"] is None:
        sys.stdout.write(text)
    if extra["trace"]:
        write_traces(rows, extra["trace"])
    for r in rows:
        if r.error:
            print(f"row {r.subs} H/h={r.ratio} {r.preconditioner}: {r.error}", file=sys.stderr)
    return 0 if all(r.converged for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
