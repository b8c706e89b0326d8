"""
Command-line interface
----------------------

    permsaddle ksample   --input data.csv [--scores rank|raw] [--u-grid a,b,c]
    permsaddle twosample --input data.csv [--u-grid a,b,c]
    permsaddle table1 | table2 | table3

Common flags: ``--sphere-samples M``, ``--mc-reps R``, ``--seed S``,
``--format text|csv|json``, ``--output PATH``, ``--jobs J`` and ``-v``/``-vv``.

The report is assembled in full before anything is written; on failure a JSON error
object ``{"error": {"code": ..., "message": ...}}`` goes to stderr and the exit
status is 2.
"""
import argparse
import json
import logging
import re
import sys
from collections import namedtuple

import pandas as pd
from numpy import asarray, isfinite

from ._errors import DomainError, MalformedCsv, MixedArity, PermSaddleError
from ._permtest import check_u_grid, encode_groups, ksample_test, twosample_test
from ._simulate import (
    Dataset,
    data_rng,
    rank_scores_table1,
    sample_ksample_exponential,
    sample_twosample_exponential,
)
from ._tail import DEFAULT_M
from ._types import ModelKind, Statistic

__all__ = ["RunConfig", "main", "parse_input", "render", "run", "execute"]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COMMANDS = ("ksample", "twosample", "table1", "table2", "table3")
FORMATS = ("text", "csv", "json")

DEFAULT_GRIDS = {
    "table1": (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "table2": (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8),
    "table3": (0.3, 0.4, 0.5, 0.6, 0.7),
}
DEFAULT_SCORES = {"ksample": "rank", "table1": "rank", "table2": "raw"}

COMPARATOR_LABELS = {
    Statistic.KRUSKAL_WALLIS: "MC K-W",
    Statistic.ANOVA_SS: "MC ANOV",
    Statistic.QUADRATIC: "Quadratic",
}

_LINE = re.compile(r"line (\d+)")


class RunConfig(
    namedtuple(
        "RunConfig",
        "command input scores u_grid M mc_reps seed format output n_jobs verbose",
    )
):
    """
    Validated settings of one command-line run.

    ``u_grid`` is None for the observed-statistic mode.
    """

    __slots__ = ()

    def validate(self):
        if self.command not in COMMANDS:
            raise DomainError(f"unknown command {self.command!r}")
        if self.command in ("ksample", "twosample") and not self.input:
            raise DomainError(f"{self.command} needs --input")
        if self.scores not in ("rank", "raw"):
            raise DomainError(f"unknown score mode {self.scores!r}")
        if self.format not in FORMATS:
            raise DomainError(f"unknown format {self.format!r}")
        if self.u_grid is not None:
            check_u_grid(self.u_grid)
        if self.M < 1:
            raise DomainError(f"--sphere-samples must be at least 1, got {self.M}")
        if self.mc_reps < 0:
            raise DomainError(f"--mc-reps must be nonnegative, got {self.mc_reps}")
        if self.n_jobs == 0:
            raise DomainError("--jobs must be nonzero")
        return self


def _parse_grid(text):
    if text is None:
        return None
    text = text.strip()
    if text == "":
        return None
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as e:
        raise DomainError(f"invalid --u-grid {text!r}") from e


def _numeric(frame, columns, arity_error):
    values = frame[columns].apply(pd.to_numeric, errors="coerce")
    bad = ~isfinite(values.to_numpy(float)).all(axis=1)
    if bad.any():
        row = int(bad.argmax())
        missing = frame[columns].iloc[row].isna().any()
        line = row + 2
        if missing and arity_error:
            raise MixedArity(f"line {line}: row has fewer values than the header")
        raise MalformedCsv("non-numeric or missing value", line=line)
    return values.to_numpy(float)


def parse_input(path, command) -> Dataset:
    """
    Read a grouped dataset from a CSV file with a header row.

    ``ksample`` files have columns ``group,value``; ``twosample`` files have columns
    ``group,v1,…,vl``. Group labels are arbitrary strings and rows may come in any
    order.

    Raises
    ------
    MalformedCsv
        Empty file, wrong header, unparsable or missing values; the message carries
        the line number when there is one.
    MixedArity
        Rows of a two-sample file with different numbers of values.
    """
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_values=[""],
            skip_blank_lines=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as e:
        raise MalformedCsv("file is empty", line=1) from e
    except pd.errors.ParserError as e:
        m = _LINE.search(str(e))
        line = int(m.group(1)) if m else None
        if command == "twosample":
            raise MixedArity(f"line {line}: {e}" if line else str(e)) from e
        raise MalformedCsv(str(e), line=line) from e
    except UnicodeDecodeError as e:
        raise MalformedCsv(f"not UTF-8: {e}") from e

    columns = [c.strip() for c in frame.columns]
    frame.columns = columns
    if command == "ksample":
        if columns != ["group", "value"]:
            raise MalformedCsv(f"expected header group,value, got {','.join(columns)}", 1)
        value_columns = ["value"]
    else:
        value_columns = columns[1:]
        expected = [f"v{i + 1}" for i in range(len(value_columns))]
        if columns[:1] != ["group"] or not value_columns or value_columns != expected:
            raise MalformedCsv(
                f"expected header group,v1,...,vl, got {','.join(columns)}", 1
            )

    if frame.shape[0] == 0:
        raise MalformedCsv("no data rows", line=2)

    groups = frame["group"]
    if groups.isna().any():
        raise MalformedCsv("missing group label", line=int(groups.isna().argmax()) + 2)
    values = _numeric(frame, value_columns, command == "twosample")
    if command == "ksample":
        values = values[:, 0]

    logger.info("read %d rows from %s", frame.shape[0], path)
    return Dataset(groups=asarray(groups.str.strip().tolist()), values=values)


def _dataset(config: RunConfig) -> Dataset:
    if config.command in ("ksample", "twosample"):
        return parse_input(config.input, config.command)
    if config.command == "table1":
        return rank_scores_table1()
    random = data_rng(config.seed)
    if config.command == "table2":
        return sample_ksample_exponential(4, 10, random)
    return sample_twosample_exponential(40, 3, random)


def execute(config: RunConfig):
    """
    Run the test a configuration asks for.

    Returns
    -------
    labels : list
        Sorted group labels.
    reports : list of TestReport
        One report in observed mode, one per grid value otherwise.
    """
    data = _dataset(config)
    options = dict(
        u_grid=config.u_grid,
        M=config.M,
        seed=config.seed,
        mc_reps=config.mc_reps,
        n_jobs=config.n_jobs,
        verbose=config.verbose,
    )
    if config.command in ("twosample", "table3"):
        result = twosample_test(data.groups, data.values, **options)
    else:
        result = ksample_test(
            data.groups, data.values, use_ranks=config.scores == "rank", **options
        )
    labels, _ = encode_groups(data.groups)
    reports = [result] if config.u_grid is None else result
    return labels, reports


def _comparator(report):
    if report.kind is ModelKind.TWOSAMPLE_MV:
        return Statistic.QUADRATIC
    return Statistic.KRUSKAL_WALLIS if report.metadata["scores"] == "rank" else Statistic.ANOVA_SS


def _outcome_dict(outcome):
    if outcome is None:
        return None
    return dict(
        tail_prob=float(outcome.tail_prob),
        se=float(outcome.se),
        threshold=float(outcome.threshold),
        statistic=outcome.statistic.name,
        exact=bool(outcome.exact),
        count=int(outcome.count),
        total=int(outcome.total),
        boundary=int(outcome.boundary),
    )


def _cell_dict(report, comparator):
    t = report.tail
    return dict(
        u=float(report.u_obs),
        lam=float(report.lambda_obs),
        G=float(t.G),
        G_se=float(t.G_se),
        u_star=float(t.u_star),
        p_lr=float(t.p_lr),
        p_bn=float(t.p_bn),
        p_chisq=float(t.p_chisq),
        M=int(t.M),
        seed=int(t.seed),
        clamped=bool(t.clamped),
        comparator=comparator.name,
        comparison=float(report.comparison),
        mc=_outcome_dict(report.mc),
        mc_comparison=_outcome_dict(report.mc_comparison),
    )


def _render_json(config, labels, reports, comparator):
    meta = reports[0].metadata
    document = dict(
        schema_version=SCHEMA_VERSION,
        command=config.command,
        kind=reports[0].kind.name,
        mode=meta["mode"],
        labels=[str(v) for v in labels],
        sizes=[int(n) for n in reports[0].design.sizes],
        N=int(meta["N"]),
        d0=int(meta["d0"]),
        d1=int(meta["d1"]),
        M=int(config.M),
        mc_reps=int(config.mc_reps),
        seed=int(config.seed),
        scores=config.scores,
        cells=[_cell_dict(r, comparator) for r in reports],
    )
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def _render_csv(reports, comparator):
    rows = []
    for r in reports:
        cell = _cell_dict(r, comparator)
        mc, mcc = cell.pop("mc"), cell.pop("mc_comparison")
        cell["mc_tail"] = None if mc is None else mc["tail_prob"]
        cell["mc_se"] = None if mc is None else mc["se"]
        cell["mc_boundary"] = None if mc is None else mc["boundary"]
        cell["mc_comparison_tail"] = None if mcc is None else mcc["tail_prob"]
        cell["mc_comparison_se"] = None if mcc is None else mcc["se"]
        rows.append(cell)
    return pd.DataFrame(rows).to_csv(index=False, float_format="%.10g")


def _render_text(reports, comparator):
    d1 = reports[0].metadata["d1"]
    width = 10
    head = "û".ljust(width) + "".join(f"{r.u_obs:>9.4g}" for r in reports)
    lines = []
    if reports[0].metadata["mode"] == "observed":
        r = reports[0]
        lines.append(f"λ_obs = {r.lambda_obs:.6g}")
        lines.append(f"{comparator.name} = {r.comparison:.6g}")
    lines.append(head)

    def row(label, values):
        lines.append(label.ljust(width) + "".join(f"{v:>9.4f}" for v in values))

    if reports[0].mc is not None:
        row("MC Λ", [r.mc.tail_prob for r in reports])
        if comparator is not Statistic.QUADRATIC:
            row(COMPARATOR_LABELS[comparator], [r.mc_comparison.tail_prob for r in reports])
    row(f"χ²_{d1}", [r.tail.p_chisq for r in reports])
    row("SP LR Λ", [r.tail.p_lr for r in reports])
    row("SP BN Λ", [r.tail.p_bn for r in reports])
    if reports[0].mc is not None and comparator is Statistic.QUADRATIC:
        row("Quadratic", [r.mc_comparison.tail_prob for r in reports])
    return "\n".join(lines) + "\n"


def render(config: RunConfig, labels, reports):
    """ Serialize reports in the configured format. """
    reports = [r._replace(metadata=dict(r.metadata, scores=config.scores)) for r in reports]
    comparator = _comparator(reports[0])
    if config.format == "json":
        return _render_json(config, labels, reports, comparator)
    if config.format == "csv":
        return _render_csv(reports, comparator)
    return _render_text(reports, comparator)


def _error_object(e):
    code = e.code if isinstance(e, PermSaddleError) else type(e).__name__
    return json.dumps({"error": {"code": code, "message": str(e)}}, sort_keys=True)


def run(config: RunConfig, stdout=None, stderr=None) -> int:
    """
    Execute a configuration and emit its report.

    Returns
    -------
    int
        Exit status: 0 on success, 2 on any error.
    """
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        config.validate()
        labels, reports = execute(config)
        text = render(config, labels, reports)
        if config.output:
            with open(config.output, "w", encoding="utf-8") as f:
                f.write(text)
        else:
            stdout.write(text)
    except (PermSaddleError, OSError) as e:
        logger.debug("run failed", exc_info=True)
        print(_error_object(e), file=stderr)
        return 2
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        print(_error_object(e), file=stderr)
        return 2
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="permsaddle",
        description="Saddlepoint tail probabilities for permutation tests.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--input", help="CSV file for ksample/twosample")
    parser.add_argument("--scores", choices=("rank", "raw"), default=None)
    parser.add_argument(
        "--u-grid", default=None, help='comma-separated u values; "" tests the observed data'
    )
    parser.add_argument(
        "--sphere-samples", "--M", dest="M", type=int, default=DEFAULT_M
    )
    parser.add_argument("--mc-reps", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--format", choices=FORMATS, default="text")
    parser.add_argument("--output", default=None)
    parser.add_argument("--jobs", dest="n_jobs", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def config_from_args(argv=None) -> RunConfig:
    args = _build_parser().parse_args(argv)
    if args.u_grid is None:
        u_grid = DEFAULT_GRIDS.get(args.command)
    else:
        u_grid = _parse_grid(args.u_grid)
    scores = args.scores or DEFAULT_SCORES.get(args.command, "raw")
    logging.basicConfig(
        stream=sys.stderr,
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    return RunConfig(
        command=args.command,
        input=args.input,
        scores=scores,
        u_grid=u_grid,
        M=args.M,
        mc_reps=args.mc_reps,
        seed=args.seed,
        format=args.format,
        output=args.output,
        n_jobs=args.n_jobs,
        verbose=args.verbose > 0,
    )


def main(argv=None) -> int:
    try:
        config = config_from_args(argv)
    except DomainError as e:
        print(_error_object(e), file=sys.stderr)
        return 2
    return run(config)
