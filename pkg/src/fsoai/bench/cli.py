"""bench: reproduce the crawl-vs-harvest experiments on a synthetic corpus.

  bench gen --out DIR --files 1000 [--orphan-fraction 0.88]
  bench touch --manifest DIR.manifest.json --fraction 0.25 --mtime 2002-01-01
  bench run --manifest M --tool crawler --phase update --mirror MIRROR --report runs.csv
  bench sweep --docroot DIR --verb ListIdentifiers --sizes 1,10,50,100,500 --report sweep.csv
  bench report runs.csv sweep.csv --out all.csv
  bench experiment --workdir W --files 1000 --fraction 0.25
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile

from ..metadata import DEFAULT_BYVALUE_THRESHOLD
from ..timeutil import parse_datestamp
from .corpus import BASELINE_MTIME, TOUCH_MTIME, CorpusSpec, Manifest, generate_corpus, touch_fraction
from .report import emit_report, read_csv, summary, write_csv
from .runner import ServiceProcess, run_crawl, run_harvest, sweep_page_sizes


def _append(path: str, reports) -> None:
    existing = read_csv(path) if os.path.exists(path) else []
    write_csv(existing + list(reports), path)


def _sizes(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_gen(args) -> int:
    spec = CorpusSpec(
        file_count=args.files,
        html_fraction=args.html_fraction,
        max_depth=args.max_depth,
        size_distribution=(args.min_bytes, args.max_bytes, args.distribution),
        link_fanout=args.fanout,
        seed=args.seed,
        baseline_mtime=parse_datestamp(args.baseline_mtime),
        orphan_fraction=args.orphan_fraction,
        dynamic_fraction=args.dynamic_fraction,
    )
    manifest = generate_corpus(spec, args.out)
    path = args.manifest or args.out.rstrip("/") + ".manifest.json"
    manifest.save(path)
    print(f"{len(manifest.files)} files ({len(manifest.orphans())} orphans) in {args.out}; manifest {path}")
    return 0


def cmd_touch(args) -> int:
    manifest = Manifest.load(args.manifest)
    touched = touch_fraction(manifest, args.fraction, parse_datestamp(args.mtime), args.seed)
    manifest.save(args.manifest)
    sys.stdout.write("".join(p + "\n" for p in touched))
    return 0


def cmd_run(args) -> int:
    manifest = Manifest.load(args.manifest)
    workdir = args.workdir or tempfile.mkdtemp(prefix="bench-run-")
    kwargs = {"byvalue_threshold": args.threshold}
    if args.page_size:
        key = "page_size_records" if args.verb == "ListRecords" else "page_size_identifiers"
        kwargs[key] = args.page_size
    with ServiceProcess(manifest.root, workdir, **kwargs) as svc:
        if args.tool == "crawler":
            if not args.mirror:
                print("bench run: the crawler needs --mirror", file=sys.stderr)
                return 2
            report = run_crawl(svc, args.seed_mode, args.mirror, not args.no_timestamping,
                               manifest=manifest, phase=args.phase)
        else:
            report = run_harvest(svc, args.verb, args.from_, args.page_size,
                                 mirror_dir=args.mirror, phase=args.phase)
    if args.report:
        _append(args.report, [report])
    sys.stdout.write(summary([report]))
    return 0


def cmd_sweep(args) -> int:
    workdir = args.workdir or tempfile.mkdtemp(prefix="bench-sweep-")
    reports = sweep_page_sizes(args.docroot, args.verb, _sizes(args.sizes), workdir,
                               repeats=args.repeats, byvalue_threshold=args.threshold)
    if args.report:
        _append(args.report, reports)
    sys.stdout.write(summary(reports))
    return 0


def cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        reports.extend(read_csv(path))
    if args.out:
        sys.stdout.write(emit_report(reports, args.out))
    else:
        sys.stdout.write(summary(reports))
    return 0


def cmd_experiment(args) -> int:
    """Baseline + update rounds for crawler and harvester, each on a fresh service."""
    w = args.workdir
    os.makedirs(w, exist_ok=True)
    docroot = os.path.join(w, "docroot")
    spec = CorpusSpec(file_count=args.files, seed=args.seed, orphan_fraction=args.orphan_fraction)
    manifest = generate_corpus(spec, docroot)
    manifest.save(os.path.join(w, "manifest.json"))
    crawl_mirror = os.path.join(w, "mirror-crawl")
    harvest_mirror = os.path.join(w, "mirror-harvest")
    reports = []

    def fresh(name):
        return ServiceProcess(docroot, os.path.join(w, name), byvalue_threshold=args.threshold)

    for phase, from_ in (("baseline", None), ("update", args.from_)):
        if phase == "update":
            touch_fraction(manifest, args.fraction, TOUCH_MTIME, args.seed)
        with fresh(f"{phase}-crawl") as svc:
            reports.append(run_crawl(svc, "manifest", crawl_mirror, True, manifest=manifest, phase=phase))
        with fresh(f"{phase}-ids") as svc:
            reports.append(run_harvest(svc, "ListIdentifiers", from_, phase=phase))
        with fresh(f"{phase}-recs") as svc:
            reports.append(run_harvest(svc, "ListRecords", from_, mirror_dir=harvest_mirror, phase=phase))
    sys.stdout.write(emit_report(reports, os.path.join(w, "report.csv")))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="crawl-vs-harvest benchmark harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--files", type=int, required=True)
    p.add_argument("--html-fraction", type=float, default=0.3)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--min-bytes", type=int, default=256)
    p.add_argument("--max-bytes", type=int, default=8192)
    p.add_argument("--distribution", choices=("uniform", "lognormal", "fixed"), default="uniform")
    p.add_argument("--fanout", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline-mtime", default=BASELINE_MTIME.strftime("%Y-%m-%d"))
    p.add_argument("--orphan-fraction", type=float, default=0.0)
    p.add_argument("--dynamic-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("touch", help="advance the mtime of a fraction of the corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--mtime", default=TOUCH_MTIME.strftime("%Y-%m-%d"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_touch)

    p = sub.add_parser("run", help="one crawler or harvester run against a fresh service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tool", choices=("crawler", "harvester"), required=True)
    p.add_argument("--phase", choices=("baseline", "update"), default="baseline")
    p.add_argument("--seed-mode", choices=("index", "manifest"), default="manifest")
    p.add_argument("--no-timestamping", action="store_true")
    p.add_argument("--verb", choices=("ListIdentifiers", "ListRecords"), default="ListIdentifiers")
    p.add_argument("--from", dest="from_")
    p.add_argument("--page-size", type=int)
    p.add_argument("--threshold", type=int, default=DEFAULT_BYVALUE_THRESHOLD)
    p.add_argument("--mirror")
    p.add_argument("--workdir")
    p.add_argument("--report", help="CSV file to append the run to")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="resumptionToken page-size sweep")
    p.add_argument("--docroot", required=True)
    p.add_argument("--verb", choices=("ListIdentifiers", "ListRecords"), required=True)
    p.add_argument("--sizes", default="1,10,50,100,500")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--threshold", type=int, default=DEFAULT_BYVALUE_THRESHOLD)
    p.add_argument("--workdir")
    p.add_argument("--report")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="merge run CSVs and print the summary tables")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("experiment", help="baseline + update rounds end to end")
    p.add_argument("--workdir", required=True)
    p.add_argument("--files", type=int, default=1000)
    p.add_argument("--fraction", type=float, default=0.25)
    p.add_argument("--from", dest="from_", default="2001-01-01")
    p.add_argument("--orphan-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=int, default=DEFAULT_BYVALUE_THRESHOLD)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
