from argparse import ArgumentParser
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
import json
import logging
from time import perf_counter
import pkg_resources
import sys
import pandas as pd
from bifactorid.estimate import DivergenceError, StemConfig, fit_dataset, rmse
from bifactorid.fit_cache import FitCache
from bifactorid.fitter import BenchCell, Fitter, fit_cell
from bifactorid.fixtures import fixture
from bifactorid.ident import CONSTRUCTIONS, CertificateError, PreconditionError, certify, check
from bifactorid.loader import SpecError, get_model_from_document, load_dataset, load_model
from bifactorid.model import InvalidParameterError, validate
from bifactorid.moments import observable_moments
from bifactorid.simulate import simulate

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_INVALID = 2
EXIT_NON_IDENTIFIABLE = 3
EXIT_UNDETERMINED = 4
EXIT_INCOMPLETE = 5
STATUS_CODES = {
    "identifiable": EXIT_OK,
    "non_identifiable": EXIT_NON_IDENTIFIABLE,
    "undetermined": EXIT_UNDETERMINED,
}
DESK_REPS = 100
FULL_SCALE_REPS = 500

logger = logging.getLogger(__name__)


class BifidParser(ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, "{}: error: {}\n".format(self.prog, message))


@dataclass
class BenchReport:
    case: int
    link: str
    n_grid: tuple
    reps: int
    seed: int
    config: dict
    rmse: dict = field(default_factory=dict)
    verdict: dict = field(default_factory=dict)
    certificate: dict = None
    complete: bool = True
    n_cells: int = 0
    n_fitted: int = 0
    failed: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "case": self.case,
            "link": self.link,
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "seed": self.seed,
            "config": self.config,
            "rmse": self.rmse,
            "verdict": self.verdict,
            "certificate": self.certificate,
            "complete": self.complete,
            "n_cells": self.n_cells,
            "n_fitted": self.n_fitted,
            "failed": self.failed,
            "timing": self.timing,
        }

    def to_frame(self):
        rows = [
            (self.case, self.link, n, group, value)
            for group, by_n in self.rmse.items()
            for n, value in by_n.items()
        ]
        return pd.DataFrame(rows, columns=["case", "link", "N", "group", "rmse"])


class Bifid:
    """
    A class for checking identifiability of bifactor-family models,
    building equivalence certificates and running the simulate-and-fit
    benchmarks.
    """

    def __init__(self):
        self.command = None
        self.source = None
        self.data_file = None
        self.write_filename = None
        self.seed = 0
        self.verbose = False
        self.probe = False
        self.construction = "auto"
        self.output_format = "json"
        self.n_respondents = None
        self.kind = None
        self.n_iter = None
        self.burn_in = None
        self.trace_file = None
        self.case = None
        self.link = "probit"
        self.n_grid = (1000, 2000, 4000)
        self.reps = None
        self.paper_scale = False
        self.max_minutes = None
        self.n_jobs = 1
        self.csv_file = None
        self.use_cache = True
        self.cache_file = "bifidcache"

    def parse_input(self, argv=None):
        """
        Parse command-line information.
        """
        pkg_env = pkg_resources.Environment()
        description = "Check identifiability of bifactor, extended bifactor \
and two-tier models, build observational-equivalence certificates and run \
simulation benchmarks."
        self.parser = BifidParser(prog="bifid", description=description)

        try:
            version = "{}".format(pkg_env[self.__module__.split(".")[0]][0].version)
        except IndexError:
            version = "dev"
        self.parser.add_argument(
            "--version", action="version", version="%(prog)s {0}".format(version)
        )
        common = ArgumentParser(add_help=False)
        common.add_argument(
            "-f",
            "--file",
            dest="filename",
            help="write output to FILE [default: stdout]",
            metavar="FILE",
            default=None,
        )
        common.add_argument(
            "-v",
            "--verbose",
            action="store_true",
            dest="verbose",
            default=False,
            help="report progress on stderr",
        )
        common.add_argument("--seed", type=int, dest="seed", default=0, help="master seed")
        commands = self.parser.add_subparsers(dest="command", metavar="COMMAND")
        commands.required = True
        spec_help = "model spec: JSON file, CSV with .json sidecar, case:N[:link] \
or example:NAME"

        sub = commands.add_parser("check", parents=[common], help="identifiability verdict")
        sub.add_argument("source", metavar="SPEC", help=spec_help)
        sub.add_argument(
            "--probe",
            action="store_true",
            default=False,
            help="search numerically for an equivalent parameter set when \
no sufficient condition applies",
        )

        sub = commands.add_parser(
            "certificate", parents=[common], help="observational-equivalence certificate"
        )
        sub.add_argument("source", metavar="SPEC", help=spec_help)
        sub.add_argument(
            "--construction",
            choices=("auto",) + CONSTRUCTIONS,
            default="auto",
            help="construction to use [default: auto]",
        )

        sub = commands.add_parser("moments", parents=[common], help="implied moments")
        sub.add_argument("source", metavar="SPEC", help=spec_help)
        sub.add_argument(
            "--format", choices=("json", "csv"), dest="output_format", default="json"
        )

        sub = commands.add_parser("simulate", parents=[common], help="simulate responses")
        sub.add_argument("source", metavar="SPEC", help=spec_help)
        sub.add_argument("--n", type=int, dest="n_respondents", required=True)

        sub = commands.add_parser("fit", parents=[common], help="fit a dataset")
        sub.add_argument("data_file", metavar="DATA", help="dataset CSV")
        sub.add_argument("source", metavar="PATTERN", help="model spec giving the pattern")
        sub.add_argument("--kind", choices=("standard", "extended", "two_tier"), default=None)
        sub.add_argument("--n-iter", type=int, dest="n_iter", default=None)
        sub.add_argument("--burn-in", type=int, dest="burn_in", default=None)
        sub.add_argument("--trace", dest="trace_file", metavar="FILE", default=None)

        sub = commands.add_parser(
            "bench",
            parents=[common],
            help="simulate-and-fit benchmark",
            epilog="Exits with status 5 when the report is incomplete: the time \
budget ran out or some replications diverged. Diverged replications are \
listed under \"failed\" and left out of the RMSE.",
        )
        sub.add_argument("--case", type=int, choices=range(1, 7), required=True)
        sub.add_argument("--link", choices=("linear", "probit"), default="probit")
        sub.add_argument("--n", dest="n_grid", default="1000,2000,4000", metavar="N1,N2,...")
        sub.add_argument("--reps", type=int, default=None)
        sub.add_argument("--n-iter", type=int, dest="n_iter", default=None)
        sub.add_argument("--burn-in", type=int, dest="burn_in", default=None)
        sub.add_argument("--paper-scale", action="store_true", dest="paper_scale", default=False)
        sub.add_argument("--max-minutes", type=float, dest="max_minutes", default=None)
        sub.add_argument("--jobs", type=int, dest="n_jobs", default=1)
        sub.add_argument("--csv", dest="csv_file", metavar="FILE", default=None)
        sub.add_argument(
            "--disable-cache",
            action="store_false",
            dest="use_cache",
            default=True,
            help="do not store fits in local cache",
        )
        sub.add_argument(
            "--cache-file",
            dest="cache_file",
            help="write cache to FILE [default: bifidcache]",
            metavar="FILE",
            default="bifidcache",
        )

        args = self.parser.parse_args(argv)

        self.command = args.command
        self.write_filename = args.filename
        self.verbose = args.verbose
        self.seed = args.seed
        for name in (
            "source",
            "probe",
            "construction",
            "output_format",
            "n_respondents",
            "data_file",
            "kind",
            "n_iter",
            "burn_in",
            "trace_file",
            "case",
            "link",
            "reps",
            "paper_scale",
            "max_minutes",
            "n_jobs",
            "csv_file",
            "use_cache",
            "cache_file",
        ):
            if hasattr(args, name):
                setattr(self, name, getattr(args, name))
        if self.command == "bench":
            try:
                self.n_grid = tuple(int(n) for n in args.n_grid.split(","))
            except ValueError:
                self.parser.error("--n expects comma-separated integers")

    def run(self):
        """Run the parsed command and return its exit status."""
        return getattr(self, "cmd_{}".format(self.command))()

    def write_output(self, text):
        if self.write_filename is not None:
            with open(self.write_filename, "w") as outfile:
                outfile.write(text)
        else:
            print(text, end="")

    def write_json(self, document):
        self.write_output(json.dumps(document, indent=2) + "\n")

    def load_params(self):
        params = load_model(self.source)
        validate(params)
        return params

    def cmd_check(self):
        verdict = check(self.load_params(), probe=self.probe, seed=self.seed)
        self.write_json(verdict.to_dict())
        return STATUS_CODES[verdict.status]

    def cmd_certificate(self):
        params = self.load_params()
        try:
            certificate = certify(params, self.construction, seed=self.seed)
        except PreconditionError as e:
            verdict = check(params, seed=self.seed)
            self.write_json({"status": verdict.status, "rule": verdict.rule, "refused": str(e)})
            return EXIT_OK if verdict.identifiable else EXIT_UNDETERMINED
        except CertificateError as e:
            self.write_json({"status": "undetermined", "error": str(e)})
            return EXIT_UNDETERMINED
        self.write_json(certificate.to_dict())
        return EXIT_NON_IDENTIFIABLE

    def cmd_moments(self):
        moments = observable_moments(self.load_params())
        if self.output_format == "csv":
            self.write_output(moments.to_frame().to_csv())
        else:
            self.write_json(moments.to_dict())
        return EXIT_OK

    def cmd_simulate(self):
        data = simulate(self.load_params(), self.n_respondents, seed=self.seed)
        if self.write_filename is not None:
            data.to_csv(self.write_filename)
        else:
            self.write_output(data.to_frame().to_csv(index=False))
        return EXIT_OK

    def stem_config(self):
        overrides = {"seed": self.seed}
        if self.n_iter is not None:
            overrides["n_iter"] = self.n_iter
        if self.burn_in is not None:
            overrides["burn_in"] = self.burn_in
        elif self.n_iter is not None:
            overrides["burn_in"] = self.n_iter // 2
        try:
            if self.paper_scale:
                return StemConfig.paper_scale(**overrides)
            return StemConfig(**overrides)
        except ValueError as e:
            self.parser.error(str(e))

    def cmd_fit(self):
        data = load_dataset(self.data_file)
        pattern = load_model(self.source)
        kind = self.kind or pattern.kind
        fit = fit_dataset(data, pattern.structure, kind, self.stem_config())
        if self.trace_file is not None:
            fit.trace.to_csv(self.trace_file, index=False)
        document = fit.to_dict()
        if data.truth is not None:
            document["rmse"] = rmse([fit], data.truth).groups
        self.write_json(document)
        return EXIT_OK

    def bench_cells(self, config):
        reps = self.reps if self.reps is not None else (FULL_SCALE_REPS if self.paper_scale else DESK_REPS)
        return [
            BenchCell(self.case, self.link, n, n_index, rep, self.seed, config)
            for n_index, n in enumerate(self.n_grid)
            for rep in range(reps)
        ]

    def fit_cells_serial(self, cells, fitter, deadline):
        records, failures = {}, {}
        for cell in cells:
            if deadline is not None and perf_counter() > deadline:
                return records, failures, False
            if self.verbose:
                sys.stderr.write(
                    "Fitting case {} N={} rep {}...".format(cell.case, cell.n, cell.rep)
                )
            try:
                record = fitter.get_record(cell)
            except DivergenceError as e:
                failures[cell] = str(e)
                if self.verbose:
                    sys.stderr.write("diverged\n")
                continue
            if self.verbose:
                sys.stderr.write("{}\n".format(record.get("message", "")))
            records[cell] = record
        return records, failures, True

    def fit_cells_parallel(self, cells, fitter, deadline):
        records, failures = {}, {}
        pending = []
        for cell in cells:
            record = fitter.lookup(cell) if hasattr(fitter, "lookup") else None
            if record is not None:
                records[cell] = record
            else:
                pending.append(cell)
        finished = True
        with ProcessPoolExecutor(max_workers=self.n_jobs) as pool:
            futures = {pool.submit(fit_cell, cell): cell for cell in pending}
            remaining = set(futures)
            while remaining:
                timeout = None if deadline is None else max(deadline - perf_counter(), 0.0)
                done, remaining = wait(remaining, timeout=timeout, return_when=FIRST_COMPLETED)
                if not done:
                    finished = False
                    for future in remaining:
                        future.cancel()
                    break
                for future in done:
                    cell = futures[future]
                    try:
                        records[cell] = future.result()
                    except DivergenceError as e:
                        failures[cell] = str(e)
                        continue
                    if hasattr(fitter, "store"):
                        fitter.store(cell, records[cell])
                    if self.verbose:
                        sys.stderr.write(
                            "Fitted case {} N={} rep {}\n".format(cell.case, cell.n, cell.rep)
                        )
        return records, failures, finished

    def fit_cells(self, cells, record_fitter=Fitter):
        """Fit every cell through the cache (unless disabled) and return
        (records by cell, divergence messages by cell, finished). A cell
        that diverges is left out of the records; finished is False when
        the time budget ran out."""
        deadline = None
        if self.max_minutes is not None:
            deadline = perf_counter() + 60.0 * self.max_minutes
        if self.use_cache:
            opened = FitCache(self.cache_file, record_fitter)
        else:
            opened = record_fitter(filename=self.cache_file)
        with opened as fitter:
            if self.n_jobs > 1:
                return self.fit_cells_parallel(cells, fitter, deadline)
            return self.fit_cells_serial(cells, fitter, deadline)

    def build_report(self, record_fitter=Fitter):
        start = perf_counter()
        truth = fixture(self.case, self.link)
        verdict = check(truth, seed=self.seed)
        certificate = None
        if not verdict.identifiable:
            try:
                certificate = certify(truth, seed=self.seed).to_dict(include_params=False)
            except (PreconditionError, CertificateError) as e:
                logger.warning("no certificate for case %d: %s", self.case, e)
        config = self.stem_config()
        cells = self.bench_cells(config)
        records, failures, finished = self.fit_cells(cells, record_fitter)
        for cell, message in failures.items():
            logger.warning("case %d N=%d rep %d left out: %s", cell.case, cell.n, cell.rep, message)

        table = {}
        for n in self.n_grid:
            fits = [
                get_model_from_document(records[cell]["estimates"])
                for cell in sorted(records, key=lambda c: (c.n, c.rep))
                if cell.n == n
            ]
            if not fits:
                continue
            for group, value in rmse(fits, truth).groups.items():
                table.setdefault(group, {})[n] = value
        return BenchReport(
            case=self.case,
            link=self.link,
            n_grid=self.n_grid,
            reps=len(cells) // len(self.n_grid),
            seed=self.seed,
            config=config.to_dict(),
            rmse=table,
            verdict=verdict.to_dict(),
            certificate=certificate,
            complete=finished and not failures,
            n_cells=len(cells),
            n_fitted=len(records),
            failed=[
                {"N": cell.n, "rep": cell.rep, "error": failures[cell]}
                for cell in sorted(failures, key=lambda c: (c.n, c.rep))
            ],
            timing={"seconds": perf_counter() - start},
        )

    def cmd_bench(self, record_fitter=Fitter):
        report = self.build_report(record_fitter)
        if self.csv_file is not None:
            report.to_frame().to_csv(self.csv_file, index=False)
        self.write_json(report.to_dict())
        if not report.complete:
            logger.warning(
                "incomplete benchmark: %d of %d cells fitted, %d diverged",
                report.n_fitted,
                report.n_cells,
                len(report.failed),
            )
            return EXIT_INCOMPLETE
        return EXIT_OK


def bifid(argv=None):
    """Function to run bifid. This is the function called when the bifid
    script is run."""
    bifid = Bifid()
    bifid.parse_input(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if bifid.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        status = bifid.run()
    except SpecError as e:
        print(e, file=sys.stderr)
        status = EXIT_PARSE
    except (InvalidParameterError, DivergenceError) as e:
        print(e, file=sys.stderr)
        status = EXIT_INVALID
    sys.exit(status)


if __name__ == "__main__":
    bifid()
