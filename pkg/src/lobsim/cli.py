"""Command-line front end: ``lobsim run | sweep | analyze``.

Exit codes: 0 success, 1 runtime failure (including corrupted run
directories), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import analytics as A
from .engine import DepthProfile
from .simulator import ConfigError, EventLog, SimConfig, SimOutput, ensemble, run

MANIFEST = "manifest.json"
RUN_FILES = ("steps.csv", "market_orders.csv", "depth.csv")
ACF_MAX_LAG = 200
IMPACT_BINS = 20
PDF_BINS = 61


class UsageError(Exception):
    """Bad flags or configuration; exit code 2."""


class RunError(Exception):
    """Failure while running or reading outputs; exit code 1."""


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    seeds: list[int]
    out_dir: str
    files: dict[str, str] = field(default_factory=dict)  # name -> sha256

    def write(self, out_dir: Path) -> Path:
        path = out_dir / MANIFEST
        payload = {"config": self.config, "seeds": self.seeds, "out_dir": self.out_dir,
                   "files": dict(sorted(self.files.items()))}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, run_dir: Path) -> "RunManifest":
        path = run_dir / MANIFEST
        if not path.is_file():
            raise RunError(f"{path}: manifest not found")
        try:
            data = json.loads(path.read_text())
            return cls(data["config"], list(data["seeds"]), data["out_dir"], dict(data["files"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise RunError(f"{path}: malformed manifest ({exc})") from None

    def verify(self, run_dir: Path) -> None:
        for name, digest in self.files.items():
            path = run_dir / name
            if not path.is_file():
                raise RunError(f"{path}: listed in manifest but missing")
            if sha256(path) != digest:
                raise RunError(f"{path}: digest mismatch, refusing to analyze corrupted input")


def load_config(path: Optional[str]) -> SimConfig:
    if path is None:
        return SimConfig()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        return SimConfig.from_toml(p)
    except ConfigError as exc:
        raise UsageError(f"{p}: {exc}") from None


def _with_overrides(config: SimConfig, args: argparse.Namespace) -> SimConfig:
    changes = {}
    if getattr(args, "depth_every", None) is not None:
        changes["depth_every"] = args.depth_every
    try:
        return config.replace(**changes)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _seeds(args: argparse.Namespace, config: SimConfig) -> list[int]:
    if args.seeds:
        return sorted(set(args.seeds))
    if args.seed is not None:
        return [args.seed]
    return [config.seed]


# ---- run -----------------------------------------------------------------

def write_run(config: SimConfig, out_dir: Path, events: bool = False) -> RunManifest:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config.to_dict(), [config.seed], str(out_dir))
    event_fh = open(out_dir / "events.csv", "w", newline="") if events else None
    try:
        output = run(config, EventLog(event_fh) if event_fh else None)
    finally:
        if event_fh is not None:
            event_fh.close()
    writers = {
        "steps.csv": output.write_steps_csv,
        "market_orders.csv": output.write_market_orders_csv,
        "depth.csv": output.write_depth_csv,
    }
    for name, write in writers.items():
        with open(out_dir / name, "w", newline="") as fh:
            write(fh)
    names = list(writers) + (["events.csv"] if events else [])
    manifest.files = {name: sha256(out_dir / name) for name in names}
    manifest.write(out_dir)
    return manifest


def cmd_run(args: argparse.Namespace) -> int:
    config = _with_overrides(load_config(args.config), args)
    seeds = _seeds(args, config)
    out = Path(args.out)
    if len(seeds) == 1:
        m = write_run(config.replace(seed=seeds[0]), out, args.events)
        print(f"wrote {len(m.files)} files to {out}")
        return 0
    for s in seeds:
        write_run(config.replace(seed=s), out / f"seed_{s}", args.events)
    print(f"wrote {len(seeds)} runs under {out}")
    return 0


# ---- sweep ---------------------------------------------------------------

def _estimate(fn: Callable[[], float], label: str) -> float:
    """Run one estimator; a degenerate series (e.g. a frozen market) gives nan."""
    try:
        return fn()
    except ValueError as exc:
        print(f"warning: {label}: {exc}", file=sys.stderr)
        return math.nan


def pooled_kurtosis(outputs: Sequence[SimOutput]) -> tuple[float, float]:
    values, errors = [], []
    for out in sorted(outputs, key=lambda o: o.seed):
        r = out.returns
        values.append(_estimate(lambda: A.kurtosis(r), f"seed {out.seed} kurtosis"))
        errors.append(_estimate(lambda: A.bootstrap_error(A.kurtosis, r),
                                f"seed {out.seed} kurtosis error"))
    return A.pool(values, errors)


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _with_overrides(load_config(args.config), args)
    param = args.param
    if param not in config.to_dict():
        raise UsageError(f"unknown parameter {param!r}")
    if any(not v > 0 for v in args.values):
        raise UsageError(f"{param} values must be positive, got {args.values}")
    seeds = _seeds(args, config)
    rows = []
    for v in args.values:
        try:
            cfg = SimConfig.from_mapping({**config.to_dict(), param: v})
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        ens = ensemble(cfg, seeds, workers=args.workers)
        k, err = pooled_kurtosis(ens.outputs)
        rows.append((v, k, err))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        A.write_xy_csv(fh, (param, "kurtosis", "stderr"), rows)
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 0


# ---- analyze -------------------------------------------------------------

@dataclass
class RunData:
    columns: dict[str, np.ndarray]
    market_orders: np.ndarray  # (step, signed_volume, dmid)
    depth: list[DepthProfile]


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise RunError(f"{path}: required file missing")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RunError(f"{path}: empty file")
    return rows[0], rows[1:]


def load_run(run_dir: Path) -> RunData:
    manifest = RunManifest.read(run_dir)
    for name in RUN_FILES:
        if name not in manifest.files:
            raise RunError(f"{run_dir / name}: required file missing from manifest")
    manifest.verify(run_dir)
    header, rows = _read_csv(run_dir / "steps.csv")
    table = np.array(rows, dtype=float).reshape(-1, len(header))
    columns = {name: table[:, i] for i, name in enumerate(header)}
    _, rows = _read_csv(run_dir / "market_orders.csv")
    orders = np.array(rows, dtype=float).reshape(-1, 3)
    _, rows = _read_csv(run_dir / "depth.csv")
    snaps: dict[int, DepthProfile] = {}
    for step, side, dist, vol in rows:
        snap = snaps.setdefault(int(step), DepthProfile(math.nan, [], []))
        (snap.bid if side == "bid" else snap.ask).append((float(dist), int(vol)))
    return RunData(columns, orders, [snaps[k] for k in sorted(snaps)])


def _acf_rows(x: np.ndarray, label: str) -> list[tuple]:
    n = x.size
    max_lag = min(ACF_MAX_LAG, n - 1)
    rho = _estimate(lambda: A.autocorrelation(x, max_lag), label)
    if not isinstance(rho, np.ndarray):
        return []
    band = A.noise_band(n)
    return [(lag, v, band) for lag, v in enumerate(rho)]


def analyze_runs(runs: Sequence[RunData]) -> dict[str, tuple[tuple[str, ...], list[tuple]]]:
    """All analysis tables; Hurst exponents are pooled across runs, the rest
    use the runs concatenated in order."""
    hurst: dict[str, list[tuple[float, float]]] = {}
    for data in runs:
        c = data.columns
        for name, x in A.hurst_series(c["ret"], c["volume"], c["spread"]).items():
            res = _estimate(lambda: A.dfa_hurst(x), f"hurst {name}")
            if isinstance(res, A.DfaResult):
                hurst.setdefault(name, []).append((res.hurst, res.stderr))
            else:
                hurst.setdefault(name, []).append((math.nan, math.nan))
    hurst_rows = [(name, *A.pool([v for v, _ in vals], [e for _, e in vals]))
                  for name, vals in hurst.items()]

    cat = {k: np.concatenate([d.columns[k] for d in runs]) for k in runs[0].columns}
    r, spread, dv = cat["ret"], cat["spread"], cat["delta_v"]
    tables = {
        "hurst.csv": (("series", "hurst", "stderr"), hurst_rows),
        "acf_returns.csv": (("lag", "acf", "band"), _acf_rows(r, "returns acf")),
        "acf_volatility.csv": (("lag", "acf", "band"), _acf_rows(np.abs(r), "volatility acf")),
        "acf_spread.csv": (("lag", "acf", "band"),
                           _acf_rows(spread[np.isfinite(spread)], "spread acf")),
        "imbalance.csv": (("lag", "acf", "band"), _acf_rows(dv, "imbalance acf")),
    }

    pdf = _estimate(lambda: A.histogram_pdf(r, PDF_BINS), "returns pdf")
    pdf_rows = [] if not isinstance(pdf, A.Pdf) else list(zip(pdf.centers, pdf.density,
                                                               pdf.gaussian))
    tables["pdf_returns.csv"] = (("x", "density", "gaussian"), pdf_rows)

    orders = np.concatenate([d.market_orders for d in runs])
    impact_rows = []
    if orders.shape[0]:
        curve = _estimate(lambda: A.impact_function(orders[:, 1:], IMPACT_BINS), "impact")
        if isinstance(curve, A.ImpactCurve):
            impact_rows = list(zip(curve.centers, curve.mean_dmid, curve.counts))
    tables["impact.csv"] = (("volume", "mean_dmid", "count"), impact_rows)

    depth = [s for d in runs for s in d.depth]
    shape_rows = list(zip(*A.average_book_shape(depth))) if depth else []
    tables["book_shape.csv"] = (("distance", "volume"), shape_rows)

    summary = [
        ("samples", r.size),
        ("zero_fraction", A.zero_fraction(r)),
        ("kurtosis", _estimate(lambda: A.kurtosis(r), "kurtosis")),
        ("volatility_volume_corr",
         _estimate(lambda: A.cross_correlation(np.abs(r), cat["volume"]), "vol/volume corr")),
        ("imbalance_mean", float(dv.mean())),
        ("imbalance_std", float(dv.std())),
        ("market_orders", orders.shape[0]),
    ]
    tables["summary.csv"] = (("quantity", "value"), summary)
    return tables


def cmd_analyze(args: argparse.Namespace) -> int:
    runs = [load_run(Path(d)) for d in args.run_dir]
    tables = analyze_runs(runs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in tables.items():
        with open(out / name, "w", newline="") as fh:
            A.write_xy_csv(fh, header, rows)
    print(f"wrote {len(tables)} files to {out}")
    return 0


# ---- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lobsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML file of simulation parameters (default: built-in)")
        p.add_argument("--seed", type=int, help="single seed (overrides the config)")
        p.add_argument("--seeds", type=int, nargs="+", help="several seeds")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--depth-every", type=int, metavar="K",
                       help="book depth snapshot cadence in steps (0 disables)")

    p = sub.add_parser("run", help="simulate and write steps/market orders/depth CSVs")
    common(p)
    p.add_argument("--events", action="store_true", help="also write the event log")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="pooled returns kurtosis across parameter values")
    common(p)
    p.add_argument("--param", default="phi_0")
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--workers", type=int, default=1, help="parallel runs per value")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="estimate stylized facts from run directories")
    p.add_argument("run_dir", nargs="+", help="directories written by 'run'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RunError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
