"""Command-line front end.

    astpa estimate --benchmark bimodal_convex --reps 100 --seed 7 --out runs/
    astpa tables --reps 50 --out tables/
    astpa oracle --benchmark himmelblau --method quadrature
    astpa trace --benchmark bimodal_convex --seed 3 --out trace/

Every replication is seeded from ``(seed, replication index)`` alone, so the
output files are byte-identical for a repeated command regardless of
``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .benchmarks import (
    BENCHMARK_NAMES,
    DECIC_GAMMAS,
    MULTISTORY_REFERENCE,
    crude_monte_carlo,
    get_benchmark,
    quadrature_reference_2d,
)
from .discovery import DiscoveryError, write_trace_csv
from .pipeline import (
    Aggregate,
    Estimate,
    RunArtifacts,
    RunConfig,
    aggregate,
    config_for,
    replication_rng,
    run_astpa,
    run_replications,
)

AGGREGATE_COLUMNS = ["benchmark", "d", "E[N_total]", "CoV", "E[CoV-Anal]", "E[p_F]", "failures"]
CONFIG_FLAGS = ("sigma", "q", "p0", "n_level", "n_chains", "chain_length", "m_iis")
PARAM_FLAGS = ("gamma", "y0", "beta_r", "dim")


@dataclass
class RunManifest:
    """Everything needed to reproduce one ``estimate`` invocation."""

    benchmark: str = "bimodal_convex"
    reps: int = 1
    seed: int = 0
    workers: int = 1
    out: str = "."
    config: dict = field(default_factory=dict)  # RunConfig overrides
    params: dict = field(default_factory=dict)  # benchmark variant: gamma, y0, ...
    max_failure_fraction: float = 0.1

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        """Accepts the nested layout of :meth:`to_dict` or flat flag-named keys."""
        data = dict(data)
        names = {f.name for f in fields(cls)}
        config = dict(data.pop("config", {}))
        params = dict(data.pop("params", {}))
        for key in list(data):
            if key in CONFIG_FLAGS or key in _run_config_keys():
                config[key] = data.pop(key)
            elif key in PARAM_FLAGS:
                params[key] = data.pop(key)
        unknown = set(data) - names
        unknown |= set(config) - _run_config_keys()
        unknown |= set(params) - set(PARAM_FLAGS)
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(config=config, params=params, **data)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_config_keys() -> set:
    return {f.name for f in fields(RunConfig)}


# --------------------------------------------------------------------------
# output helpers


def _clean(value):
    # JSON has no NaN/inf; write them as null
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    return value


def estimate_record(index: int, est: Estimate) -> dict:
    rec = {"replication": index}
    rec.update(_clean(est.to_dict()))
    return rec


def write_jsonl(path: Path, records) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def estimates_from_jsonl(path: str | Path) -> list[Estimate]:
    names = {f.name for f in fields(Estimate)}
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kw = {k: (float("nan") if v is None else v) for k, v in rec.items() if k in names}
        out.append(Estimate(**kw))
    return out


def _fmt(x: float) -> str:
    return "%.6e" % x


def aggregate_row(name: str, dim: int, agg: Aggregate) -> list[str]:
    return [name, str(dim), _fmt(agg.mean_n_total), _fmt(agg.cov), _fmt(agg.mean_cov_anal),
            _fmt(agg.mean_p), str(agg.failures)]


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# --------------------------------------------------------------------------
# commands


def _build_config(spec, overrides: dict) -> RunConfig:
    return config_for(spec, **overrides)


def cmd_estimate(manifest: RunManifest) -> int:
    spec = get_benchmark(manifest.benchmark, **manifest.params)
    config = _build_config(spec, manifest.config)
    out = Path(manifest.out)
    out.mkdir(parents=True, exist_ok=True)
    ests = run_replications(manifest.benchmark, config, manifest.reps, manifest.seed,
                            params=manifest.params, workers=manifest.workers)
    stem = _stem(manifest.benchmark, manifest.params)
    write_jsonl(out / f"{stem}.jsonl", (estimate_record(i, e) for i, e in enumerate(ests)))
    agg = aggregate(ests)
    row = aggregate_row(stem, spec.dim, agg)
    write_csv(out / f"{stem}_aggregate.csv", AGGREGATE_COLUMNS, [row])
    print(",".join(AGGREGATE_COLUMNS))
    print(",".join(row))
    for i, e in enumerate(ests):
        if e.failed:
            print(f"replication {i} failed: {e.reason}", file=sys.stderr)
    if manifest.reps and agg.failures / manifest.reps > manifest.max_failure_fraction:
        return 1
    return 0


def _stem(name: str, params: dict) -> str:
    parts = [name] + [f"{k}{params[k]}" for k in sorted(params)]
    return "_".join(str(p) for p in parts)


def table_suite(full: bool) -> list[tuple[str, dict]]:
    rows = [("bimodal_convex", {}), ("quartic_bimodal", {}), ("himmelblau", {}),
            ("changing_topology", {})]
    y0s = sorted(MULTISTORY_REFERENCE) if full else [0.22]
    rows += [("multistory", {"y0": y0}) for y0 in y0s]
    gammas = DECIC_GAMMAS if full else (10,)
    rows += [("decic", {"gamma": g}) for g in gammas]
    return rows


def cmd_tables(args) -> int:
    reps = args.reps if args.reps is not None else (500 if args.full else 50)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suite = table_suite(args.full)
    if args.benchmark:
        suite = [(n, p) for n, p in suite if n == args.benchmark]
        if args.gamma is not None or args.y0 is not None:
            want = {k: v for k, v in (("gamma", args.gamma), ("y0", args.y0)) if v is not None}
            suite = [(n, {**p, **want}) for n, p in suite[:1]] if suite else []
    if not suite:
        raise SystemExit(f"no table rows selected for {args.benchmark!r}")
    header = AGGREGATE_COLUMNS + ["reference p_F", "published E[N_total]", "published CoV",
                                  "published CoV-Anal", "published E[p_F]"]
    rows = []
    for name, params in suite:
        spec = get_benchmark(name, **params)
        config = _build_config(spec, _flag_overrides(args))
        ests = run_replications(name, config, reps, args.seed, params=params, workers=args.workers)
        stem = _stem(name, params)
        write_jsonl(out / f"{stem}.jsonl", (estimate_record(i, e) for i, e in enumerate(ests)))
        row = aggregate_row(stem, spec.dim, aggregate(ests))
        published = spec.published
        row += [_fmt(spec.reference_probability)]
        row += ([_fmt(published.n_total), _fmt(published.cov), _fmt(published.cov_anal), _fmt(published.p_f)]
                if published else [""] * 4)
        rows.append(row)
        print(",".join(row), flush=True)
    write_csv(out / "tables.csv", header, rows)
    md = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    md += ["| " + " | ".join(r) + " |" for r in rows]
    (out / "tables.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    return 0


def cmd_oracle(args, parser) -> int:
    params = _param_overrides(args)
    try:
        spec = get_benchmark(args.benchmark, **params)
    except KeyError as err:
        parser.error(str(err))
    ls = spec.limit_state()
    record = {"benchmark": _stem(args.benchmark, params), "d": spec.dim, "method": args.method,
              "reference_probability": spec.reference_probability,
              "reference_source": spec.reference_source}
    if args.method == "mc":
        if args.budget is None or args.budget <= 0:
            parser.error("oracle --method mc needs a positive --budget (number of samples)")
        res = crude_monte_carlo(ls, int(args.budget), np.random.default_rng(args.seed),
                                workers=args.workers)
        record.update(p_hat=res.p_hat, cov=res.cov, hits=res.hits, n=res.n, flagged=res.flagged)
    else:
        if args.budget is not None and args.budget <= 0:
            parser.error("--budget must be positive")
        if spec.dim != 2:
            parser.error("quadrature is available for two-dimensional benchmarks only")
        res = quadrature_reference_2d(ls, tolerance=args.tolerance, full_output=True)
        record.update(p_hat=res.probability, error_bound=res.error_bound, depth=res.depth,
                      n_evaluations=res.n_evaluations)
    text = json.dumps(_clean(record), sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"oracle_{record['benchmark']}_{args.method}.json").write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_trace(args) -> int:
    params = _param_overrides(args)
    spec = get_benchmark(args.benchmark, **params)
    config = _build_config(spec, _flag_overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts()
    est = run_astpa(spec, config, replication_rng(args.seed, 0), art)
    stem = _stem(args.benchmark, params)
    if art.discovery is None:
        print(f"trace: {est.reason}", file=sys.stderr)
        return 1
    write_trace_csv(art.discovery, out / f"{stem}_discovery.csv")
    if art.chains is not None:
        ch = art.chains
        d = ch.samples.shape[2]
        rows = []
        for c in range(ch.n_chains):
            for t in range(ch.samples.shape[1]):
                rows.append([c, t, int(ch.accepted[c, t]), _fmt(ch.betas[c, t]), _fmt(ch.g[c, t])]
                            + [_fmt(v) for v in ch.samples[c, t]])
        write_csv(out / f"{stem}_chains.csv",
                  ["chain", "step", "accepted", "beta", "g"] + [f"x{i + 1}" for i in range(d)], rows)
    write_jsonl(out / f"{stem}_estimate.jsonl", [estimate_record(0, est)])
    print(f"levels={art.discovery.n_levels} seeds={len(art.discovery.seeds)} p_hat={_fmt(est.p_hat)}")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _flag_overrides(args) -> dict:
    return {k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k, None) is not None}


def _param_overrides(args) -> dict:
    return {k: getattr(args, k) for k in PARAM_FLAGS if getattr(args, k, None) is not None}


def _add_common(p: argparse.ArgumentParser, *, benchmark_required: bool = False) -> None:
    p.add_argument("--benchmark", choices=BENCHMARK_NAMES, required=benchmark_required,
                   default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--gamma", type=int, default=None)
    p.add_argument("--y0", type=float, default=None)
    p.add_argument("--beta-r", dest="beta_r", type=float, default=None)
    p.add_argument("--dim", type=int, default=None)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--p0", type=float)
    p.add_argument("--n-level", dest="n_level", type=int)
    p.add_argument("--n-chains", dest="n_chains", type=int)
    p.add_argument("--chain-length", dest="chain_length", type=int)
    p.add_argument("--m-iis", dest="m_iis", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="astpa", description="Rare-event probability estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run independent replications of one benchmark")
    _add_common(est)
    _add_config_flags(est)
    est.add_argument("--reps", type=int)
    est.add_argument("--config", help="JSON manifest; command-line flags take precedence")
    est.add_argument("--max-failure-fraction", dest="max_failure_fraction", type=float)

    tab = sub.add_parser("tables", help="regenerate the benchmark result tables")
    _add_common(tab)
    _add_config_flags(tab)
    tab.add_argument("--reps", type=int)
    tab.add_argument("--full", action="store_true", help="500 reps over every multistory and decic row")

    ora = sub.add_parser("oracle", help="reference probability by crude MC or 2-d quadrature")
    _add_common(ora, benchmark_required=True)
    ora.add_argument("--method", choices=("mc", "quadrature"), default="quadrature")
    ora.add_argument("--budget", type=int, help="number of MC samples")
    ora.add_argument("--tolerance", type=float, default=0.01)

    tr = sub.add_parser("trace", help="dump discovery and chain traces as CSV")
    _add_common(tr, benchmark_required=True)
    _add_config_flags(tr)
    return parser


def _manifest_from_args(args, parser) -> RunManifest:
    base = {}
    if args.config:
        try:
            base = RunManifest.load(args.config).to_dict()
        except (OSError, ValueError, TypeError) as err:
            parser.error(f"--config: {err}")
    for key in ("benchmark", "reps", "seed", "workers", "out", "max_failure_fraction"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    base.setdefault("config", {}).update(_flag_overrides(args))
    base.setdefault("params", {}).update(_param_overrides(args))
    try:
        manifest = RunManifest.from_dict(base)
    except (ValueError, TypeError) as err:
        parser.error(str(err))
    if manifest.benchmark not in BENCHMARK_NAMES:
        parser.error(f"unknown benchmark {manifest.benchmark!r}")
    if manifest.reps < 1:
        parser.error("--reps must be >= 1")
    return manifest


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "estimate":
        manifest = _manifest_from_args(args, parser)
        try:
            return cmd_estimate(manifest)
        except (KeyError, ValueError) as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
    for key, default in (("seed", 0), ("workers", 1), ("out", ".")):
        # oracle prints its record and only writes a file when asked to
        if getattr(args, key) is None and not (key == "out" and args.command == "oracle"):
            setattr(args, key, default)
    try:
        if args.command == "tables":
            return cmd_tables(args)
        if args.command == "oracle":
            return cmd_oracle(args, parser)
        return cmd_trace(args)
    except (KeyError, ValueError, DiscoveryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
