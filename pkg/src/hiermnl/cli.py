"""Command-line front end: fit, compare, explore, simulate, summarize.

All randomness flows from ``--seed``; outputs carry a metadata sidecar
with the package version, the resolved configuration and the seed, and
contain no timestamps, so a rerun of the same command writes byte-identical
files.  Results are computed fully before anything is written, so partial
outputs never appear.

Exit codes are stable: 0 success, 2 data/schema problems, 3 sampler
initialization failure, 64 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import re
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from hiermnl import __version__

from .data import Schema, load_counts, load_events, schema_for, write_counts_csv
from .design import build_layout, preset, spec_from_json, spec_to_json
from .errors import DataError, SamplerInitError, SchemaError
from .explore import (chi_square, chi_square_to_json, coords_to_csv,
                      correspondence, explore_table, inertia_to_csv,
                      mean_profiles, profiles_to_csv)
from .inference import (compare, comparison_to_csv, comparison_to_text, dic,
                        dic_to_json, interval_table, summarize,
                        summarize_chains, summary_to_csv)
from .sampler import (RNG_ALGORITHM, RNG_DERIVATION, SamplerConfig, run)
from .simulate import generate_full, sim_spec_from_json, truth_to_json
from .svgplot import interval_chart_svg, line_chart_svg, scatter_svg

EXIT_OK = 0
EXIT_DATA = 2
EXIT_SAMPLER = 3
EXIT_USAGE = 64

OUT_DIR_ENV = "HIERMNL_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 64, not argparse's 2
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="hiermnl",
        description="Hierarchical baseline-category logit models for "
                    "longitudinal categorical counts.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p):
        p.add_argument("--data", required=True, help="input CSV")
        p.add_argument("--schema", help="schema JSON (defaults to "
                       "<data>.schema.json when present)")
        p.add_argument("--format", choices=["events", "counts", "auto"],
                       default="auto",
                       help="input layout: one row per event, or one row per "
                            "(subject, week) with count columns")

    def sampler_flags(p):
        p.add_argument("--chains", type=int, default=None)
        p.add_argument("--iter", type=int, default=None)
        p.add_argument("--burnin", type=int, default=None)
        p.add_argument("--thin", type=int, default=None)
        p.add_argument("--workers", type=int, default=1,
                       help="processes for chain-parallel sampling")

    def common_flags(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help=f"output directory (default: "
                       f"${OUT_DIR_ENV} or the working directory)")

    p_fit = sub.add_parser("fit", help="sample one model's posterior")
    data_flags(p_fit)
    p_fit.add_argument("--model", required=True,
                       help="preset name (model1, model2) or model JSON path")
    sampler_flags(p_fit)
    common_flags(p_fit)
    p_fit.add_argument("--svg", action="store_true",
                       help="also write per-term interval charts")

    p_cmp = sub.add_parser("compare", help="fit several models, rank by DIC")
    data_flags(p_cmp)
    p_cmp.add_argument("--models", required=True,
                       help="comma-separated presets/JSON paths")
    sampler_flags(p_cmp)
    common_flags(p_cmp)

    p_exp = sub.add_parser("explore",
                           help="chi-square, correspondence analysis, profiles")
    data_flags(p_exp)
    p_exp.add_argument("--group",
                       help="comma-separated grouping factors "
                            "(default: all factors crossed)")
    common_flags(p_exp)
    p_exp.add_argument("--svg", action="store_true",
                       help="also write biplot and profile charts")

    p_sim = sub.add_parser("simulate", help="draw a table from known truth")
    p_sim.add_argument("--spec", required=True, help="simulation spec JSON")
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the spec's seed")
    p_sim.add_argument("--out")

    p_sum = sub.add_parser("summarize",
                           help="re-summarize an existing draws CSV")
    p_sum.add_argument("--draws", required=True, help="draws CSV from fit")
    p_sum.add_argument("--out")
    return parser


# ---------------------------------------------------------------------------
# Shared plumbing


def _out_dir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {path}")
    return p.read_text(encoding="utf-8")


def _load_schema(args) -> Schema | None:
    if args.schema:
        return Schema.from_json(_read_text(args.schema))
    sidecar = Path(str(args.data) + ".schema.json")
    if sidecar.exists():
        return Schema.from_json(sidecar.read_text(encoding="utf-8"))
    return None


def _load_table(args):
    schema = _load_schema(args)
    text = _read_text(args.data)
    fmt = args.format
    if fmt == "auto":
        header = text.splitlines()[0].split(",") if text else []
        has_counts = (schema is not None and schema.categories is not None
                      and all(c in header for c in schema.categories.labels))
        fmt = "counts" if has_counts else "events"
    if fmt == "counts":
        table = load_counts(io.StringIO(text), schema)
    else:
        table = load_events(io.StringIO(text), schema)
    return table, fmt


def _resolve_model(value: str, table):
    factor_names = [f.name for f in table.factors]
    if value in ("model1", "model2"):
        return preset(value, factor_names)
    return spec_from_json(_read_text(value))


def _sampler_config(args) -> SamplerConfig:
    defaults = SamplerConfig()
    return SamplerConfig(
        n_chains=args.chains if args.chains is not None else defaults.n_chains,
        n_iter=args.iter if args.iter is not None else defaults.n_iter,
        n_burnin=args.burnin if args.burnin is not None else defaults.n_burnin,
        thin=args.thin if args.thin is not None else defaults.thin,
        seed=args.seed,
    )


def _config_dict(config: SamplerConfig) -> dict:
    d = asdict(config)
    d["n_kept"] = config.n_kept
    return d


def _metadata(args, command: str, outputs, **extra) -> str:
    doc = {
        "artifact": {"name": "hiermnl", "version": __version__},
        "command": command,
        "seed": getattr(args, "seed", None),
        "rng": {"algorithm": RNG_ALGORITHM, "derivation": RNG_DERIVATION},
        "outputs": sorted(outputs),
    }
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write_all(out_dir: Path, files: dict[str, str]):
    for name, text in sorted(files.items()):
        (out_dir / name).write_text(text, encoding="utf-8")


def _safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", label).strip("-") or "x"


def _draws_csv(draws) -> str:
    thin = draws.config.thin
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["chain", "iter", *draws.param_names])
    for c in range(draws.n_chains):
        for k in range(draws.n_kept):
            writer.writerow([c, (k + 1) * thin,
                             *[repr(float(v)) for v in draws.draws[c, k]]])
    return buf.getvalue()


def _read_draws_csv(text: str):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[:2] != ["chain", "iter"]:
        raise DataError("draws CSV must start with 'chain,iter' columns")
    names = header[2:]
    by_chain: dict[int, list[list[float]]] = {}
    for line, rec in enumerate(reader, start=2):
        if not rec:
            continue
        try:
            chain = int(rec[0])
            values = [float(v) for v in rec[2:]]
        except ValueError as exc:
            raise DataError(f"line {line}: {exc}") from None
        if len(values) != len(names):
            raise DataError(f"line {line}: expected {len(names)} values")
        by_chain.setdefault(chain, []).append(values)
    if not by_chain:
        raise DataError("draws CSV has no draws")
    lengths = {len(v) for v in by_chain.values()}
    if len(lengths) != 1:
        raise DataError("chains have unequal draw counts")
    arr = np.array([by_chain[c] for c in sorted(by_chain)])
    return names, arr


def _rhat_warnings(summary):
    bad = [(r.name, r.rhat) for r in summary.rows
           if np.isfinite(r.rhat) and r.rhat > 1.1]
    if bad:
        bad.sort(key=lambda nr: -nr[1])
        worst = ", ".join(f"{n}={v:.3f}" for n, v in bad[:5])
        print(f"warning: R-hat above 1.1 for {len(bad)} parameter(s); "
              f"worst: {worst}", file=sys.stderr)


def _interval_svgs(summary) -> dict[str, str]:
    layout = summary.layout
    files = {}
    for block in layout.blocks:
        for level in block.col_labels:
            series = {}
            for cat in layout.nonref_categories:
                tab = interval_table(summary, block.term.name, cat,
                                     level=level)
                series[cat] = [(r.mean, r.ci_low, r.ci_high) for r in tab.rows]
            label = block.term.name + (f" {level}" if level else "")
            name = f"intervals_{_safe_name(label)}.svg"
            files[name] = interval_chart_svg(
                layout.weeks, series, f"{label}: posterior mean and 95% CI",
                "log-odds vs reference")
    return files


# ---------------------------------------------------------------------------
# Subcommands


def cmd_fit(args) -> int:
    table, fmt = _load_table(args)
    model = _resolve_model(args.model, table)
    config = _sampler_config(args)
    layout = build_layout(model, table)
    draws = run(layout, table, model.priors, config, workers=args.workers)
    summary = summarize(draws)
    report = dic(layout, table, model.priors, draws)
    _rhat_warnings(summary)
    files = {
        "draws.csv": _draws_csv(draws),
        "summary.csv": summary_to_csv(summary),
        "dic.json": dic_to_json(report),
    }
    if args.svg:
        files.update(_interval_svgs(summary))
    files["metadata.json"] = _metadata(
        args, "fit", list(files) + ["metadata.json"],
        config=_config_dict(config),
        data={"path": args.data, "format": fmt,
              "fingerprint": table.fingerprint()},
        model=json.loads(spec_to_json(model)),
        sampler={
            "chain_seeds": [list(s) for s in draws.chain_seeds],
            "acceptance_rates": {
                name: [round(float(draws.acceptance[c, b]), 6)
                       for c in range(draws.n_chains)]
                for b, name in enumerate(draws.block_names)},
            "rhat": {r.name: (r.rhat if np.isfinite(r.rhat) else None)
                     for r in summary.rows},
            "ess": {r.name: (r.ess if np.isfinite(r.ess) else None)
                    for r in summary.rows},
        },
    )
    out = _out_dir(args)
    _write_all(out, files)
    print(f"{model.name}: DIC {report.dic:.1f} (pd {report.pd:.1f}); "
          f"wrote {len(files)} file(s) to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    names = [m.strip() for m in args.models.split(",") if m.strip()]
    if len(names) < 2:
        raise _UsageError("--models needs at least two entries")
    if len(set(names)) != len(names):
        raise _UsageError("--models lists the same model twice")
    table, fmt = _load_table(args)
    config = _sampler_config(args)
    reports = []
    descriptions = {}
    files: dict[str, str] = {}
    for name in names:
        model = _resolve_model(name, table)
        layout = build_layout(model, table)
        draws = run(layout, table, model.priors, config, workers=args.workers)
        report = dic(layout, table, model.priors, draws)
        reports.append((model.name, report))
        descriptions[model.name] = model.describe()
        files[f"dic_{_safe_name(model.name)}.json"] = dic_to_json(report)
    ranking = compare(reports)
    files["comparison.csv"] = comparison_to_csv(ranking, descriptions)
    files["comparison.txt"] = comparison_to_text(ranking, descriptions)
    files["metadata.json"] = _metadata(
        args, "compare", list(files) + ["metadata.json"],
        config=_config_dict(config),
        data={"path": args.data, "format": fmt,
              "fingerprint": table.fingerprint()},
        models=names,
    )
    out = _out_dir(args)
    _write_all(out, files)
    sys.stdout.write(files["comparison.txt"])
    return EXIT_OK


def cmd_explore(args) -> int:
    table, fmt = _load_table(args)
    group = ([g.strip() for g in args.group.split(",") if g.strip()]
             if args.group else [f.name for f in table.factors])
    if not group:
        raise _UsageError("the table has no factors; pass --group")
    cont = explore_table(table, group)
    chi = chi_square(cont)
    ca = correspondence(cont)
    profiles = mean_profiles(table, group)
    files = {
        "chi_square.json": chi_square_to_json(chi),
        "ca_coords.csv": coords_to_csv(ca),
        "ca_inertia.csv": inertia_to_csv(ca),
        "profiles.csv": profiles_to_csv(profiles),
    }
    if args.svg:
        def planar(coords):  # a one-dimensional solution plots on the axis
            second = (coords[:, 1] if coords.shape[1] > 1
                      else np.zeros(coords.shape[0]))
            return zip(coords[:, 0], second)

        points = [(float(x), float(y), lab, "row")
                  for lab, (x, y) in zip(ca.row_labels, planar(ca.row_coords))]
        points += [(float(x), float(y), lab, "col")
                   for lab, (x, y) in zip(ca.col_labels, planar(ca.col_coords))]
        share = ca.inertia_share
        two = float(share[:2].sum()) * 100.0
        files["ca_biplot.svg"] = scatter_svg(
            points, f"correspondence biplot ({two:.1f}% in two dimensions)",
            f"dim 1 ({share[0] * 100.0:.1f}%)",
            f"dim 2 ({share[1] * 100.0:.1f}%)" if ca.n_dims > 1 else "dim 2")
        by_group: dict[str, dict[str, list]] = {}
        for row in profiles:
            by_group.setdefault(row.group, {}).setdefault(
                row.category, []).append(row.proportion)
        for label, series in by_group.items():
            files[f"profiles_{_safe_name(label)}.svg"] = line_chart_svg(
                table.weeks, series, f"mean profile: {label}", "proportion")
    files["metadata.json"] = _metadata(
        args, "explore", list(files) + ["metadata.json"],
        data={"path": args.data, "format": fmt,
              "fingerprint": table.fingerprint()},
        group=group,
    )
    out = _out_dir(args)
    _write_all(out, files)
    print(f"chi-square {chi.statistic:.3f} (df {chi.df}, p {chi.p_value:.4g}); "
          f"wrote {len(files)} file(s) to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = sim_spec_from_json(_read_text(args.spec))
    if args.seed is not None:
        from dataclasses import replace
        spec = replace(spec, seed=args.seed)
    result = generate_full(spec)
    buf = io.StringIO()
    write_counts_csv(result.table, buf)
    files = {
        "data.csv": buf.getvalue(),
        "data.csv.schema.json": schema_for(result.table).to_json(),
        "truth.json": truth_to_json(result),
    }
    files["metadata.json"] = _metadata(
        args, "simulate", list(files) + ["metadata.json"],
        seed=result.spec.seed,
        spec_path=args.spec,
        table={"fingerprint": result.table.fingerprint(),
               "subjects": result.table.n_subjects,
               "weeks": result.table.n_weeks,
               "trials": spec.trials},
    )
    out = _out_dir(args)
    _write_all(out, files)
    print(f"wrote {result.table.n_subjects} subjects x "
          f"{result.table.n_weeks} weeks to {out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    names, arr = _read_draws_csv(_read_text(args.draws))
    rows = summarize_chains(names, arr)
    files = {"summary.csv": summary_to_csv(rows)}
    files["metadata.json"] = _metadata(
        args, "summarize", list(files) + ["metadata.json"],
        draws={"path": args.draws, "chains": int(arr.shape[0]),
               "kept": int(arr.shape[1])},
    )
    out = _out_dir(args)
    _write_all(out, files)
    print(f"summarized {arr.shape[2]} parameter(s) from {arr.shape[0]} "
          f"chain(s)")
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "compare": cmd_compare,
    "explore": cmd_explore,
    "simulate": cmd_simulate,
    "summarize": cmd_summarize,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SamplerInitError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
