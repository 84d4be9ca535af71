"""Command-line front end.

Subcommands
-----------
simulate   write a generated two-stage dataset as CSV
fit        fit estimators to a CSV dataset; write per-row psi tables and summary trees
evaluate   run a simulation study and write the per-(scenario, method, stage) table
reproduce  run a scaled-down version of a published table, with reference values and deltas

Dataset CSV schema: a header row, then columns ``x1_<name>`` (reals), ``a1``
(+/-1), ``x2_<name>`` (reals), ``a2`` (+/-1) and ``y2`` (integer labels, any
K >= 2 distinct values; remapped to 1..K in sorted order). No missing values.

A JSON ``--config`` file may hold any of the flag names as flat keys
(``scenario`` and ``estimator`` as lists); flags given on the command line
take precedence.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 sampler divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import fitfit, simlab
from .dtr import ESTIMATORS, BootstrapConfig, TwoStageDataset, fit_estimator
from .probit import SamplerDivergence
from .reference import PSI_COLUMNS, REFERENCE, TABLE_SPECS, VALUE_COLUMNS
from .stats import SeededRng

log = logging.getLogger("ordinal_dtr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
MIN_N = 200  # smaller training sets make the 8-covariate probit MLE separate routinely
OUT_OF_SCOPE = "n/a (out of scope)"
PSI_TABLE_COLUMNS = ("id", "stage", "psi_point", "lo", "hi", "action", "tie_flag")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# dataset I/O

def _parse_real(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: {text!r} is not a number") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return v


def ingest_dataset(path) -> TwoStageDataset:
    """Read and validate a two-stage dataset CSV.

    Row numbers in error messages count data rows from 1 (the header is not
    counted). Outcome labels are remapped to 1..K and the mapping is kept in
    ``label_map``.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError("empty file: a header row is required")
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in header")
        x1_cols = [h for h in header if h.startswith("x1_")]
        x2_cols = [h for h in header if h.startswith("x2_")]
        missing = [c for c in ("a1", "a2", "y2") if c not in header]
        if missing:
            raise DataError(f"missing required column(s): {', '.join(missing)}")
        if not x1_cols:
            raise DataError("need at least one baseline column named x1_<name>")
        extra = [h for h in header if h not in ("a1", "a2", "y2") and h not in x1_cols + x2_cols]
        if extra:
            raise DataError(f"unexpected column(s): {', '.join(extra)}")
        pos = {h: i for i, h in enumerate(header)}
        x1, x2, a1, a2, y2 = [], [], [], [], []
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"row {r}: expected {len(header)} fields, found {len(rec)}")
            rec = [c.strip() for c in rec]
            for h in header:
                if rec[pos[h]] == "":
                    raise DataError(f"row {r}, column {h!r}: missing value")
            x1.append([_parse_real(rec[pos[c]], r, c) for c in x1_cols])
            x2.append([_parse_real(rec[pos[c]], r, c) for c in x2_cols])
            for name, dest in (("a1", a1), ("a2", a2)):
                v = _parse_real(rec[pos[name]], r, name)
                if v not in (1.0, -1.0):
                    raise DataError(f"row {r}, column {name!r}: treatment must be +1 or -1, got {rec[pos[name]]!r}")
                dest.append(int(v))
            v = _parse_real(rec[pos["y2"]], r, "y2")
            if v != int(v):
                raise DataError(f"row {r}, column 'y2': outcome must be an integer, got {rec[pos['y2']]!r}")
            y2.append(int(v))
    if not y2:
        raise DataError("no data rows")
    labels = sorted(set(y2))
    if len(labels) < 2:
        raise DataError(f"outcome has a single category ({labels[0]}); need at least two")
    mapping = {lab: k + 1 for k, lab in enumerate(labels)}
    if any(lab != k for lab, k in mapping.items()):
        log.info("outcome labels remapped: %s", ", ".join(f"{a} -> {b}" for a, b in mapping.items()))
    y = np.array([mapping[v] for v in y2], dtype=np.int64)
    return TwoStageDataset(np.array(x1), a1, np.array(x2).reshape(len(y2), len(x2_cols)), a2, y,
                           len(labels), tuple(c[3:] for c in x1_cols), tuple(c[3:] for c in x2_cols),
                           mapping)


def dataset_to_csv(data: TwoStageDataset, path_or_buf=None) -> str:
    """Write ``data`` in the ingest schema (labels mapped back if a map is present)."""
    inverse = {v: k for k, v in (data.label_map or {}).items()}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x1_{n}" for n in data.x1_names] + ["a1"] + [f"x2_{n}" for n in data.x2_names]
               + ["a2", "y2"])
    for i in range(data.n):
        w.writerow([repr(float(v)) for v in data.x1[i]] + [int(data.a1[i])]
                   + [repr(float(v)) for v in data.x2[i]]
                   + [int(data.a2[i]), inverse.get(int(data.y2[i]), int(data.y2[i]))])
    text = buf.getvalue()
    if path_or_buf is not None:
        Path(path_or_buf).write_text(text)
    return text


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    command: str
    scenario: list = field(default_factory=lambda: [1])
    estimator: list = field(default_factory=lambda: list(ESTIMATORS))
    ntr: int = 1000
    nte: int = 1000
    reps: int = 100
    draws: int | None = None
    burnin: int | None = None
    trees: int | None = None
    rql: int | None = None
    rbml: int | None = None
    B: int | None = None
    profile: str = "full"
    seed: int = 0
    threads: int = 1
    data: str | None = None
    table: str | None = None
    scale: float = 0.1
    out: str | None = None

    def __post_init__(self):
        for name in ("ntr", "nte", "reps", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("draws", "burnin", "trees", "rql", "rbml", "B"):
            v = getattr(self, name)
            if v is not None and int(v) < (0 if name == "burnin" else 1):
                raise ConfigError(f"{name} must be positive")
        if isinstance(self.scenario, int):
            self.scenario = [self.scenario]
        if isinstance(self.estimator, str):
            self.estimator = [self.estimator]
        bad = [e for e in self.estimator if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimator(s) {bad}; choose from {list(ESTIMATORS)}")
        bad = [s for s in self.scenario if s not in simlab.SCENARIOS]
        if bad:
            raise ConfigError(f"unknown scenario(s) {bad}; choose from 1..{len(simlab.SCENARIOS)}")
        if self.profile not in ("full", "desk"):
            raise ConfigError("profile must be 'full' or 'desk'")
        if self.draws is not None and self.rbml is not None and self.draws != self.rbml:
            raise ConfigError("--draws and --rbml both set the number of kept draws; they disagree")
        if not 0 < self.scale <= 1:
            raise ConfigError("scale must lie in (0, 1]")
        if self.B is not None and self.B < 100:
            raise ConfigError("B must be at least 100")

    def study_config(self) -> simlab.StudyConfig:
        base = simlab.StudyConfig.desk() if self.profile == "desk" else simlab.StudyConfig()
        s = base.sampler
        kw = {}
        if self.draws is not None or self.rbml is not None:
            kw["R_bml"] = self.rbml if self.rbml is not None else self.draws
        if self.burnin is not None:
            kw["burn2"] = kw["burn1"] = self.burnin
        if self.trees is not None:
            kw["M"] = self.trees
        boot = base.bootstrap
        if self.B is not None:
            boot = replace(boot or BootstrapConfig(), B=self.B)
        return simlab.StudyConfig(R_ql=self.rql if self.rql is not None else base.R_ql,
                                  bootstrap=boot, sampler=replace(s, **kw))


def load_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(RunConfig)} - {"command"}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for k, v in vars(args).items():
        if k in ("config", "command", "func", "verbose") or v is None:
            continue
        values[k] = v
    try:
        return RunConfig(command=args.command, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: RunConfig) -> int:
    spec = simlab.get_scenario(cfg.scenario[0])
    data, _ = simlab.generate(spec, cfg.ntr, SeededRng(cfg.seed, 0).child("simulate", spec.id))
    text = dataset_to_csv(data, cfg.out)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        log.info("wrote %d trajectories of %s to %s", data.n, spec.name, cfg.out)
    return EXIT_OK


def _write_psi_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PSI_TABLE_COLUMNS)
        for i, stage, p, lo, hi, a, tie in rows:
            w.writerow([i, stage, f"{p:.6f}", f"{lo:.6f}", f"{hi:.6f}", a, int(tie)])


def cmd_fit(cfg: RunConfig) -> int:
    if not cfg.data:
        raise ConfigError("fit needs --data PATH")
    data = ingest_dataset(cfg.data)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    study = cfg.study_config()
    control = fitfit.CartControl()
    for name in cfg.estimator:
        rng = SeededRng(cfg.seed, 0).child("fit", name)
        fit = fit_estimator(name, data, rng, R_ql=study.R_ql, bootstrap=study.bootstrap,
                            sampler=study.sampler)
        _write_psi_table(fit.psi_table(), out / f"psi_{name}.csv")
        for stage, X, names in ((1, data.H1, data.h1_names), (2, data.H2, data.h2_names)):
            if data.n < control.min_split:
                log.warning("skipping summary tree: %d rows < min_split %d", data.n, control.min_split)
                break
            tree = fitfit.fit_summary_tree(X, fit.estimate(stage).mean, control, names)
            (out / f"tree_{name}_stage{stage}.txt").write_text(
                f"# R2 = {tree.r2:.4f}\n" + fitfit.render(tree))
            (out / f"tree_{name}_stage{stage}.dot").write_text(fitfit.to_dot(tree))
        log.info("%s: wrote results to %s", name, out)
    return EXIT_OK


def _run_study(cfg: RunConfig, scenarios, n_tr, n_te, reps):
    res = simlab.run_study(scenarios, cfg.estimator, n_tr, n_te, reps, cfg.seed,
                           cfg.study_config(), threads=cfg.threads)
    diverged = any(m.startswith("divergence") for msgs in res.failures.values() for m in msgs)
    for key, msgs in sorted(res.failures.items()):
        log.warning("scenario %d, %s: %d failed replication(s): %s", key[0], key[1], len(msgs), msgs[0])
    return res, diverged


def cmd_evaluate(cfg: RunConfig) -> int:
    res, diverged = _run_study(cfg, cfg.scenario, cfg.ntr, cfg.nte, cfg.reps)
    text = res.to_csv(cfg.out)
    if cfg.out is None:
        sys.stdout.write(text)
    log.info("study finished in %.1f s", res.elapsed)
    return EXIT_DIVERGENCE if diverged else EXIT_OK


def reproduce_rows(table: str, res: simlab.StudyResult | None, scenarios, estimators):
    """Reference-table rows with our value, the reference value and their difference per column."""
    n_tr, kind = TABLE_SPECS[table]
    columns = PSI_COLUMNS if kind == "psi" else VALUE_COLUMNS
    header = ["scenario", "method"]
    for c in columns:
        header += [c, f"{c}_reference_value", f"{c}_delta"]
    rows = [header]
    for s in scenarios:
        for method in ("qlearning", "dwols", "bml-bp", "bml-obart"):
            ref = REFERENCE[table][(s, method)]
            if method == "dwols" or method not in estimators:
                line = [s, method]
                note = OUT_OF_SCOPE if method == "dwols" else "not run"
                for c in columns:
                    line += [note, f"{ref[c]:.3f}", note]
                rows.append(line)
                continue
            line = [s, method]
            for c in columns:
                metric, stage = c.rsplit("_", 1)
                ours = res.row(s, method, int(stage)).mean[metric]
                line += [f"{ours:.3f}", f"{ref[c]:.3f}", f"{ours - ref[c]:+.3f}"]
            rows.append(line)
    return rows


def cmd_reproduce(cfg: RunConfig) -> int:
    if cfg.table not in TABLE_SPECS:
        raise ConfigError(f"table must be one of {sorted(TABLE_SPECS)}")
    n_tr, _ = TABLE_SPECS[cfg.table]
    n_tr = max(MIN_N, round(n_tr * cfg.scale))
    n_te = max(MIN_N, round(1000 * cfg.scale))
    reps = max(1, round(100 * cfg.scale))
    log.info("%s at scale %g: n_tr=%d, n_te=%d, %d replications", cfg.table, cfg.scale, n_tr, n_te, reps)
    res, diverged = _run_study(cfg, cfg.scenario, n_tr, n_te, reps)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(
        reproduce_rows(cfg.table, res, cfg.scenario, cfg.estimator))
    if cfg.out is None:
        sys.stdout.write(buf.getvalue())
    else:
        Path(cfg.out).write_text(buf.getvalue())
    return EXIT_DIVERGENCE if diverged else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate,
            "reproduce": cmd_reproduce}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ordinal-dtr", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run settings")
    g.add_argument("--config", help="JSON file with flat keys named like the flags")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="worker processes for replications")
    g.add_argument("--scenario", type=int, nargs="+", help="scenario ids (1-12)")
    g.add_argument("--estimator", nargs="+", choices=ESTIMATORS)
    g.add_argument("--ntr", type=int, help="training size")
    g.add_argument("--nte", type=int, help="test size")
    g.add_argument("--reps", type=int, help="replications")
    g.add_argument("--draws", type=int, help="kept stage-2 draws (same as --rbml)")
    g.add_argument("--burnin", type=int, help="burn-in iterations for both stages")
    g.add_argument("--trees", type=int, help="trees per forest")
    g.add_argument("--rql", type=int, help="pseudo-outcome repetitions for Q-learning")
    g.add_argument("--rbml", type=int, help="imputations for the Bayesian estimators")
    g.add_argument("--B", type=int, dest="B", help="bootstrap replicates for Q-learning")
    g.add_argument("--profile", choices=("full", "desk"),
                   help="base chain lengths: full defaults or shorter desk-scale runs")
    g.add_argument("--out", help="output file (simulate, evaluate, reproduce) or directory (fit)")
    g.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a generated dataset")
    f = sub.add_parser("fit", parents=[common], help="fit estimators to a dataset CSV")
    f.add_argument("--data", help="dataset CSV")
    sub.add_parser("evaluate", parents=[common], help="run a simulation study")
    r = sub.add_parser("reproduce", parents=[common], help="scaled reproduction of a reference table")
    r.add_argument("table", choices=sorted(TABLE_SPECS))
    r.add_argument("--scale", type=float, help="fraction of the reference sizes and replications")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except SamplerDivergence as exc:
        log.error("sampler divergence: %s", exc)
        return EXIT_DIVERGENCE
    except ValueError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
