"""Command-line front end: ``analyze``, ``flag`` and ``render``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from ._validation import InputError, InvariantError, check_choice
from .clustering import LINKAGES, Dendrogram, HierarchicalClustering, check_dendrogram, select_linkage
from .dissimilarity import NORMALIZE_MODES, SCHEME_MODES, ExamDissimilarity
from .flagging import CollusionFlagger
from .ingest import CohortFilter, load_cohort
from .report import cluster_panel_data, render_boxplots, render_cluster_panels, render_dendrogram

log = logging.getLogger("exam_collusion")

COHORTS = ("test", "comparison")


@dataclass
class CohortPaths:
    events: Path
    scores: Path
    catalog: Path
    events_format: str | None = None


@dataclass
class RunConfig:
    test: CohortPaths | None = None
    comparison: CohortPaths | None = None
    scheme: str = "paper"
    normalize: str = "range"
    linkage: str = "auto"
    k_lowest: int = 6
    filter: CohortFilter = field(default_factory=CohortFilter)
    comparison_filter: CohortFilter | None = None
    out: Path = Path("out")
    figures: bool = True
    strict: bool = False

    def validate(self, need_comparison=False):
        check_choice(self.scheme, SCHEME_MODES, "scheme")
        check_choice(self.normalize, NORMALIZE_MODES, "normalize")
        check_choice(self.linkage, ("auto",) + LINKAGES, "linkage")
        if int(self.k_lowest) != self.k_lowest or self.k_lowest < 1:
            raise InputError(f"k_lowest must be a positive integer, got {self.k_lowest!r}")
        if self.test is None:
            raise InputError("config has no test cohort")
        if need_comparison and self.comparison is None:
            raise InputError("flag needs a comparison cohort")
        for name in COHORTS:
            paths = getattr(self, name)
            if paths is None:
                continue
            for kind in ("events", "scores", "catalog"):
                p = getattr(paths, kind)
                if not p.is_file():
                    raise InputError(f"{name} {kind} file not found: {p}")
        return self

    def cohort_filter(self, name):
        if name == "comparison" and self.comparison_filter is not None:
            return self.comparison_filter
        return self.filter


def _cohort_paths(doc, base, name):
    if doc is None:
        return None
    try:
        return CohortPaths(
            events=base / doc["events"],
            scores=base / doc["scores"],
            catalog=base / doc["catalog"],
            events_format=doc.get("events_format"),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"{name} cohort needs events, scores and catalog paths") from exc


def _filter_from(doc, default=None):
    base = default or CohortFilter()
    if doc is None:
        return base
    return CohortFilter(
        min_active_minutes=float(doc.get("min_active_minutes", base.min_active_minutes)),
        min_points_fraction=float(doc.get("min_points_fraction", base.min_points_fraction)),
        excluded_ids=frozenset(doc.get("excluded_ids", base.excluded_ids)),
    )


def load_config(path):
    """Read a JSON run config. Relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from exc
    base = path.parent
    cfg = RunConfig(
        test=_cohort_paths(doc.get("test"), base, "test"),
        comparison=_cohort_paths(doc.get("comparison"), base, "comparison"),
        scheme=doc.get("scheme", "paper"),
        normalize=doc.get("normalize", "range"),
        linkage=doc.get("linkage", "auto"),
        k_lowest=doc.get("k_lowest", 6),
        filter=_filter_from(doc.get("filter")),
        out=base / doc.get("out", "out"),
        figures=bool(doc.get("figures", True)),
        strict=bool(doc.get("strict", False)),
    )
    if "comparison_filter" in doc:
        cfg.comparison_filter = _filter_from(doc["comparison_filter"], cfg.filter)
    return cfg


def _apply_overrides(cfg, args):
    changes = {}
    for name in ("scheme", "normalize", "linkage", "k_lowest", "strict"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "out", None) is not None:
        changes["out"] = Path(args.out)
    if getattr(args, "no_figures", False):
        changes["figures"] = False
    if getattr(args, "min_active_minutes", None) is not None or getattr(args, "min_points_fraction", None) is not None:
        f = cfg.filter
        changes["filter"] = CohortFilter(
            args.min_active_minutes if args.min_active_minutes is not None else f.min_active_minutes,
            args.min_points_fraction if args.min_points_fraction is not None else f.min_points_fraction,
            f.excluded_ids,
        )
    return replace(cfg, **changes)


def dumps(obj):
    """Canonical JSON: sorted keys, shortest round-trip float repr."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_artifacts(out_dir, files):
    """Write ``{relative_name: text}`` under ``out_dir``, each file atomically."""
    out_dir = Path(out_dir)
    for name in sorted(files):
        target = out_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(files[name])
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    return [out_dir / name for name in sorted(files)]


def _load(cfg, name):
    paths = getattr(cfg, name)
    exams, removals, catalog = load_cohort(
        paths.events, paths.scores, paths.catalog, cfg.cohort_filter(name), paths.events_format
    )
    if len(exams) < 2:
        raise InputError(f"{name} cohort has {len(exams)} students after filtering; need at least 2")
    return exams, removals, catalog


def _matrix(cfg, exams, catalog):
    return ExamDissimilarity(catalog, cfg.scheme, cfg.normalize).fit_transform(exams)


def analyze_cohort(cfg, name):
    """Cluster one cohort; returns ``({filename: text}, summary)``."""
    exams, removals, catalog = _load(cfg, name)
    dm = _matrix(cfg, exams, catalog)
    n = len(dm)
    table = select_linkage(dm)[1] if n >= 3 else {}
    model = HierarchicalClustering(linkage=cfg.linkage, k_lowest=cfg.k_lowest).fit(dm)
    tree = model.dendrogram_
    check_dendrogram(tree)
    clusters = model.lowest_clusters_
    panels = cluster_panel_data(exams, clusters, catalog)

    files = {
        f"{name}/matrix.csv": dm.to_csv(),
        f"{name}/matrix.json": dumps(dm.to_dict()),
        f"{name}/dendrogram.nwk": tree.to_newick() + "\n",
        f"{name}/dendrogram.json": dumps(tree.to_dict()),
        f"{name}/linkage.json": dumps({
            "requested": cfg.linkage,
            "selected": model.linkage_,
            "cophenetic_correlations": table,
        }),
        f"{name}/clusters.json": dumps(panels),
        f"{name}/removals.json": dumps([{"student_id": r.student_id, "reason": r.reason} for r in removals]),
    }
    if cfg.figures:
        files.update(_figures_for(name, tree, panels))
    summary = {
        "cohort": name,
        "n_students": n,
        "n_removed": len(removals),
        "linkage": model.linkage_,
        "table": table,
        "clusters": panels["clusters"],
    }
    return files, summary


def _figures_for(name, tree, panels):
    files = {f"{name}/dendrogram.svg": render_dendrogram(tree, len(panels["clusters"]), title=f"{name} cohort")}
    for fname, svg in render_cluster_panels(panels).items():
        files[f"{name}/{fname}"] = svg
    return files


def _print_analysis(summary, stream):
    print(f"[{summary['cohort']}] {summary['n_students']} students "
          f"({summary['n_removed']} removed), linkage: {summary['linkage']}", file=stream)
    if summary["table"]:
        print("  linkage    cophenetic C", file=stream)
        for lk in LINKAGES:
            print(f"  {lk:<10} {summary['table'][lk]:.3f}", file=stream)
    print("  cluster  height   members", file=stream)
    for cl in summary["clusters"]:
        ids = ", ".join(m["id"] for m in cl["members"])
        print(f"  {cl['label']:<8} {cl['height']:.3f}    {ids}", file=stream)


def cmd_analyze(cfg, stream=sys.stdout):
    cfg.validate()
    files, summaries = {}, []
    for name in COHORTS:
        if getattr(cfg, name) is None:
            continue
        f, s = analyze_cohort(cfg, name)
        files.update(f)
        summaries.append(s)
    written = write_artifacts(cfg.out, files)
    for s in summaries:
        _print_analysis(s, stream)
    return written


def cmd_flag(cfg, stream=sys.stdout):
    cfg.validate(need_comparison=True)
    test, _, test_catalog = _load(cfg, "test")
    comp, _, comp_catalog = _load(cfg, "comparison")
    if len(test) < 3 or len(comp) < 3:
        raise InputError("both cohorts need at least 3 students to flag pairs")
    d_test = _matrix(cfg, test, test_catalog)
    d_comp = _matrix(cfg, comp, comp_catalog)
    report = CollusionFlagger(strict=cfg.strict).fit(d_comp).report(d_test)
    doc = report.to_dict()
    files = {"flags.json": dumps(doc)}
    if cfg.figures:
        files["boxplot.svg"] = render_boxplots(doc)
    written = write_artifacts(cfg.out, files)
    print(f"bound (Q1 - 3 IQR, standardized comparison): {report.bound:.3f}", file=stream)
    print(f"flagged pairs: {len(report.flagged)}", file=stream)
    for p in report.flagged:
        print(f"  {p.a} {p.b}  D={p.d_raw:.3f}  z={p.z:.3f}", file=stream)
    return written


def cmd_render(out_dir, k_lowest=None, stream=sys.stdout):
    """Redraw every figure from the JSON artifacts in ``out_dir``."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise InputError(f"artifact directory not found: {out_dir}")
    files = {}
    for name in COHORTS:
        tree_path = out_dir / name / "dendrogram.json"
        if not tree_path.is_file():
            continue
        tree = Dendrogram.from_dict(_read_json(tree_path))
        clusters_path = out_dir / name / "clusters.json"
        panels = _read_json(clusters_path) if clusters_path.is_file() else {"clusters": []}
        if k_lowest is not None:
            panels = dict(panels, clusters=panels["clusters"][:k_lowest])
        files.update(_figures_for(name, tree, panels))
    flags = out_dir / "flags.json"
    if flags.is_file():
        files["boxplot.svg"] = render_boxplots(_read_json(flags))
    if not files:
        raise InputError(f"no artifacts to render in {out_dir}")
    written = write_artifacts(out_dir, files)
    print(f"rendered {len(written)} figures into {out_dir}", file=stream)
    return written


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def build_parser():
    parser = argparse.ArgumentParser(
        prog="exam-collusion",
        description="Screen exam event logs for suspiciously similar students.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, with_config_required):
        p.add_argument("--config", required=with_config_required, help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip SVG output")

    for name, helptext in (("analyze", "cluster cohorts and report the lowest clusters"),
                           ("flag", "flag test pairs below the comparison cohort's fence")):
        p = sub.add_parser(name, help=helptext)
        common(p, with_config_required=True)
        p.add_argument("--scheme", choices=SCHEME_MODES)
        p.add_argument("--normalize", choices=NORMALIZE_MODES)
        p.add_argument("--linkage", choices=("auto",) + LINKAGES)
        p.add_argument("--k-lowest", dest="k_lowest", type=int)
        p.add_argument("--min-active-minutes", type=float)
        p.add_argument("--min-points-fraction", type=float)
        if name == "flag":
            p.add_argument("--strict", action="store_true", default=None,
                           help="also require z below the comparison minimum")

    p = sub.add_parser("render", help="redraw figures from JSON artifacts")
    common(p, with_config_required=False)
    p.add_argument("--k-lowest", dest="k_lowest", type=int)
    return parser


def main(argv=None, stream=None):
    stream = stream or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "render":
            if args.out is not None:
                out = Path(args.out)
            elif args.config is not None:
                out = load_config(args.config).out
            else:
                raise InputError("render needs --out or --config")
            if args.no_figures:
                return 0
            cmd_render(out, args.k_lowest, stream)
            return 0
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "analyze":
            cmd_analyze(cfg, stream)
        else:
            cmd_flag(cfg, stream)
        return 0
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvariantError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a bug, not bad input
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
