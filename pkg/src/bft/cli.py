"""Command line interface.

Examples::

    bft --test ttest --stats therapy.json --hypothesis "mu = 5; mu < 5"
    bft --test variances --data reaction.csv --outcome accuracy --group ADHD \
        --hypothesis "Controls = TS < ADHD; Controls < TS = ADHD"
    bft --test correlations --data memory.csv --outcome Im,Del,Wmn --group Group

Input is either a CSV data file (``--data``) or a JSON file with sufficient
statistics (``--stats``).  Without ``--hypothesis`` only the exploratory
tests are reported.  Exit codes: 2 for hypothesis/constraint errors, 3 for
data errors, 4 for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import adapters
from .adapters import DataError
from .engine import MeasureTable, RandomStream, aggregate_imputations, evaluate_system
from .parser import ParameterSpace, ParseError, add_complement, parse, pretty
from .spaces import ConstraintError

DEFAULT_SEED = 20191116
DEFAULT_DRAWS = 100_000
TESTS = ("ttest", "lm", "variances", "correlations", "gaussian")


def _build_argparser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bft",
        description="Bayes factor tests of equality and order constraints")
    src = ap.add_argument_group("input")
    src.add_argument("--data", metavar="CSV", help="data file with a header row")
    src.add_argument("--stats", metavar="JSON", help="sufficient statistics file")
    src.add_argument("--imputations", metavar="DIR",
                     help="directory of imputed CSV datasets (results are "
                          "averaged on the measure scale)")
    ap.add_argument("--test", choices=TESTS,
                    help="analysis type (inferred from --stats when omitted)")
    ap.add_argument("--outcome", help="outcome column, or comma-separated list "
                                      "(variables for --test correlations)")
    ap.add_argument("--predictors", help="comma-separated predictor columns")
    ap.add_argument("--group", help="grouping column")
    ap.add_argument("--null", type=float, default=None,
                    help="null value for t tests (default 0)")
    ap.add_argument("--hypothesis", help="hypotheses separated by ';', "
                                         "constraints joined by '&'")
    ap.add_argument("--prior", help="comma-separated prior hypothesis weights "
                                    "(include the complement)")
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ap.add_argument("--draws", type=int, default=DEFAULT_DRAWS,
                    help=f"Monte Carlo draws (default {DEFAULT_DRAWS})")
    ap.add_argument("--format", choices=("table", "json"), default="table")
    return ap


def _split(arg):
    return [s.strip() for s in arg.split(",") if s.strip()] if arg else []


def _model_from_data(df, args):
    if not args.test:
        raise DataError("--data requires --test")
    null = args.null if args.null is not None else 0.0
    outcome = _split(args.outcome)
    if args.test == "ttest":
        if len(outcome) != 1:
            raise DataError("t test needs exactly one --outcome column")
        y = adapters.outcome_matrix(df, outcome)[:, 0]
        if args.group:
            return adapters.ttest_two_from_data(y, df[args.group].to_numpy(), null=null)
        return adapters.ttest_from_data(y, null=null)
    if args.test == "variances":
        if len(outcome) != 1 or not args.group:
            raise DataError("variance test needs one --outcome and a --group")
        y = adapters.outcome_matrix(df, outcome)[:, 0]
        return adapters.variance_model_from_data(y, df[args.group].to_numpy())
    if args.test == "correlations":
        if len(outcome) < 2:
            raise DataError("correlation test needs at least two --outcome columns")
        return adapters.correlation_model_from_data(
            df, outcome, args.group, seed=args.seed, prior_draws=args.draws)
    if args.test == "lm":
        preds = _split(args.predictors)
        if not outcome or not preds:
            raise DataError("lm needs --outcome and --predictors")
        X, pred_names = adapters.design_matrix(df, preds)
        Y = adapters.outcome_matrix(df, outcome)
        groups = df[args.group].to_numpy() if args.group else None
        return adapters.lm_model(X, Y, pred_names, outcome, groups=groups)
    raise DataError(f"--test {args.test} requires --stats input")


def _model_from_stats_file(path, args):
    try:
        with open(path) as fh:
            stats = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read statistics file: {e}")
    except json.JSONDecodeError as e:
        raise DataError(f"statistics file is not valid JSON: {e}")
    if args.test and stats.get("test") != args.test:
        raise DataError(f"--test {args.test} does not match statistics file "
                        f"('{stats.get('test')}')")
    if args.null is not None and stats.get("test") == "ttest":
        stats = dict(stats, null=args.null)
    return adapters.model_from_stats(stats, seed=args.seed, prior_draws=args.draws)


def _build_system(model, args):
    space = ParameterSpace(model.names)
    aliases = getattr(model, "aliases", None)
    cms = parse(args.hypothesis, space, aliases=aliases)
    weights = None
    if args.prior:
        try:
            weights = [float(w) for w in _split(args.prior)]
        except ValueError:
            raise ParseError("prior weights must be numbers")
    try:
        system = add_complement(cms, space, prior_weights=weights)
    except ValueError as e:
        raise ParseError(str(e))
    return space, system


# ---------------------------------------------------------------------------
# rendering


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _table(headers, rows, indent="  ") -> str:
    cells = [[""] + list(headers)] + [[r[0]] + [_fmt(v) for v in r[1:]] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
    lines = []
    for ri, row in enumerate(cells):
        parts = [row[0].ljust(widths[0])]
        parts += [c.rjust(w + 2) for c, w in zip(row[1:], widths[1:])]
        lines.append(indent + "".join(parts).rstrip())
    return "\n".join(lines)


def _render_text(result: dict) -> str:
    out = []
    ex = result.get("exploratory")
    if ex:
        out.append("Exploratory posterior probabilities:")
        out.append(_table(ex["columns"],
                          [[r] + list(v) for r, v in zip(ex["rows"], ex["values"])]))
        out.append("")
    if "hypotheses" in result:
        out.append("Hypotheses:")
        for h in result["hypotheses"]:
            out.append(f"  {h['label']}: {h['text']}")
        out.append("")
        out.append("Posterior probabilities:")
        out.append(_table(["Pr(hypothesis|data)"],
                          [[h["label"], p] for h, p in
                           zip(result["hypotheses"], result["posterior_probs"])]))
        out.append("")
        labels = [h["label"] for h in result["hypotheses"]]
        out.append("Evidence matrix (Bayes factors):")
        out.append(_table(labels,
                          [[lab] + list(row) for lab, row in
                           zip(labels, result["evidence_matrix"])]))
        out.append("")
        out.append("Specification table:")
        cols = ["comp_E", "comp_O", "fit_E", "fit_O", "BF_E", "BF_O", "BF", "PHP"]
        rows = []
        for h, m, p in zip(result["hypotheses"], result["measures"],
                           result["posterior_probs"]):
            rows.append([h["label"], m["comp_e"], m["comp_o"], m["fit_e"],
                         m["fit_o"], m["bf_e"], m["bf_o"], m["bf"], p])
        out.append(_table(cols, rows))
        out.append("")
    return "\n".join(out)


def _measure_dict(m) -> dict:
    return {
        "comp_e": m.comp_e, "comp_o": m.comp_o,
        "fit_e": m.fit_e, "fit_o": m.fit_o,
        "comp_e_se": m.comp_e_se, "comp_o_se": m.comp_o_se,
        "fit_e_se": m.fit_e_se, "fit_o_se": m.fit_o_se,
        "bf_e": m.bf_e, "bf_o": m.bf_o, "bf": m.bf,
    }


def _result_dict(model, args, table: MeasureTable = None, texts=None,
                 exploratory=None, n_sets=None) -> dict:
    result = {
        "schema": "bf-result/1",
        "test": args.test,
        "parameters": list(model.names),
        "seed": args.seed,
        "draws": args.draws,
    }
    if n_sets is not None:
        result["imputations"] = n_sets
    if exploratory is not None:
        rows, columns, values = exploratory
        result["exploratory"] = {"rows": list(rows), "columns": list(columns),
                                 "values": [list(map(float, v)) for v in values]}
    if table is not None:
        result["hypotheses"] = [{"label": lab, "text": txt}
                                for lab, txt in zip(table.labels, texts)]
        result["prior_weights"] = [float(w) for w in table.weights]
        result["measures"] = [_measure_dict(m) for m in table.measures]
        result["posterior_probs"] = [float(p) for p in table.php]
        result["evidence_matrix"] = [[float(x) for x in row]
                                     for row in table.evidence_matrix()]
    return result


# ---------------------------------------------------------------------------


def _run(args) -> int:
    sources = [s for s in (args.data, args.stats, args.imputations) if s]
    if len(sources) != 1:
        raise DataError("supply exactly one of --data, --stats, or --imputations")

    if args.imputations:
        if not args.hypothesis:
            raise DataError("--imputations requires --hypothesis")
        files = sorted(Path(args.imputations).glob("*.csv"))
        if len(files) < 2:
            raise DataError("--imputations needs at least two CSV files")
        tables, model, system = [], None, None
        for f in files:
            m = _model_from_data(adapters.load_table(f), args)
            if model is None:
                model = m
                _, system = _build_system(m, args)
            elif list(m.names) != list(model.names):
                raise DataError(f"imputed dataset {f.name} has different parameters")
            tables.append(evaluate_system(m, system, args.seed, args.draws))
        table = aggregate_imputations(tables)
        texts = _hypothesis_texts(model, system, table)
        result = _result_dict(model, args, table, texts, n_sets=len(files))
    else:
        if args.stats:
            model = _model_from_stats_file(args.stats, args)
            if not args.test:
                with open(args.stats) as fh:
                    args.test = json.load(fh).get("test")
        else:
            model = _model_from_data(adapters.load_table(args.data), args)
        exploratory = model.exploratory(RandomStream(args.seed, 0), args.draws)
        table = texts = None
        if args.hypothesis:
            _, system = _build_system(model, args)
            table = evaluate_system(model, system, args.seed, args.draws)
            texts = _hypothesis_texts(model, system, table)
        result = _result_dict(model, args, table, texts, exploratory=exploratory)

    if args.format == "json":
        print(json.dumps(result, sort_keys=True, separators=(",", ":")))
    else:
        print(_render_text(result))
    return 0


def _hypothesis_texts(model, system, table: MeasureTable):
    space = ParameterSpace(model.names)
    by_label = dict(zip(system.labels, system.hypotheses))
    return [pretty(by_label[lab], space) for lab in table.labels]


def main(argv=None) -> int:
    args = _build_argparser().parse_args(argv)
    try:
        return _run(args)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ConstraintError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
