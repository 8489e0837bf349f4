"""Command-line front end: config ingestion, task dispatch and deterministic output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Callable

import click
import numpy as np

from . import __version__, catalog, entropy, keepswitch, linrep, pmp, rotational
from .instrument import Instrument, InstrumentError, check_assumptions

log = logging.getLogger("unraveling_lab")

TASKS = ("info", "enumerate", "pressure", "rate", "ep", "exponents", "clt", "gibbs-diag",
         "fdr", "convert", "rotational")
FORMATS = ("csv", "json")
ROTATIONAL_ACTIONS = ("construct-delta", "probe", "derivative", "support")
EXIT_OK, EXIT_SCHEMA, EXIT_BUDGET = 0, 2, 3
DEFAULT_ALPHAS = tuple(np.linspace(-2.0, 3.0, 11))
ASSUMPTION_LOG_T = 3


class ConfigError(ValueError):
    """The experiment configuration does not match the schema."""


# ---------------------------------------------------------------- configuration


@dataclass
class ExperimentConfig:
    task: str
    source: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out: str | None = None
    format: str = "csv"
    seed: int = 0
    workers: int = 1
    budget: int = linrep.DEFAULT_BUDGET

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("the configuration must be a JSON object")
        known = {"task", "family", "params", "instrument", "measure", "theta", "delta_S",
                 "task_params", "out", "format", "seed", "workers", "budget"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        source = {k: doc[k] for k in ("family", "params", "instrument", "measure", "theta",
                                      "delta_S") if k in doc}
        cfg = cls(task=doc.get("task", ""), source=source,
                  params=dict(doc.get("task_params") or {}), out=doc.get("out"),
                  format=doc.get("format", "csv"), seed=doc.get("seed", 0),
                  workers=doc.get("workers", 1),
                  budget=doc.get("budget", linrep.DEFAULT_BUDGET))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        if not isinstance(self.budget, int) or self.budget < 1:
            raise ConfigError("budget must be a positive integer")
        kinds = [k for k in ("family", "instrument", "measure") if k in self.source]
        needs_source = self.task not in ("fdr", "rotational")
        if needs_source and len(kinds) != 1:
            raise ConfigError("give exactly one of 'family', 'instrument' or 'measure'")
        for key in ("alphas", "s"):
            grid = self.params.get(key)
            if grid is not None:
                if not isinstance(grid, list) or not all(isinstance(x, (int, float)) for x in grid):
                    raise ConfigError(f"task parameter {key!r} must be a list of numbers")
                if list(grid) != sorted(grid):
                    raise ConfigError(f"task parameter {key!r} must be sorted")

    def canonical(self) -> dict:
        return {"task": self.task, "source": self.source, "task_params": self.params,
                "format": self.format, "seed": self.seed}

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Source:
    """The measure under study together with its reversal data."""

    family: catalog.FamilyParams | None = None
    built: catalog.BuiltFamily | None = None
    instrument: Instrument | None = None
    measure: Any = None
    theta: dict | None = None
    delta_S: dict | None = None

    @property
    def two_time(self) -> bool:
        return self.delta_S is not None

    def pair(self):
        if self.instrument is not None:
            return entropy.reversal_pair(self.instrument)
        return entropy.reversal_pair(pmp.as_pmp(self.measure), self.theta)

    def spectral_source(self):
        if self.instrument is not None:
            return self.instrument
        return pmp.as_pmp(self.measure)

    @property
    def keep_switch(self) -> keepswitch.KSParams | None:
        if self.family is not None and self.family.family == "keep_switch":
            return keepswitch.KSParams(self.family.params["q1"], self.family.params["q2"])
        return None


def resolve_source(cfg: ExperimentConfig) -> Source:
    src = cfg.source
    if "family" in src:
        fp = catalog.FamilyParams.from_json({"family": src["family"],
                                             "params": src.get("params", {})})
        built = catalog.build_instrument(fp)
        return Source(family=fp, built=built, instrument=built.instrument,
                      theta=dict(built.theta), delta_S=built.delta_S)
    if "instrument" in src:
        inst = Instrument.from_json(src["instrument"])
        return Source(instrument=inst, theta=dict(inst.theta), delta_S=inst.delta_S)
    if "measure" in src:
        doc = src["measure"]
        kinds = {"pmp": pmp.PMPSpec, "hm": pmp.HMSpec, "fm": pmp.FMSpec}
        kind = doc.get("kind")
        if kind not in kinds:
            raise ConfigError(f"measure kind must be one of {sorted(kinds)}")
        spec = kinds[kind].from_json(doc)
        alphabet = pmp.as_pmp(spec).alphabet
        theta = src.get("theta") or {a: a for a in alphabet}
        return Source(measure=spec, theta=dict(theta), delta_S=src.get("delta_S"))
    return Source()


# ---------------------------------------------------------------- results


@dataclass
class Table:
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)


@dataclass
class Document:
    body: dict


def fmt_number(x) -> str:
    """17 significant digits, '.' decimal, explicit inf/nan markers."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    if x is None:
        return ""
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isfinite(x):
            return float(format(x, ".17g"))
        return fmt_number(x)
    return x


def provenance(cfg: ExperimentConfig) -> dict:
    return {"tool": "unraveling-lab", "version": __version__, "task": cfg.task,
            "config_sha256": cfg.digest()}


def render(result, cfg: ExperimentConfig) -> str:
    prov = provenance(cfg)
    if isinstance(result, Table) and cfg.format == "csv":
        buf = io.StringIO()
        buf.write("# " + " ".join(f"{k}={v}" for k, v in prov.items()) + "\n")
        for k, v in result.meta.items():
            buf.write(f"# {k}={fmt_number(v)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(result.columns)
        for row in result.rows:
            writer.writerow([fmt_number(v) for v in row])
        return buf.getvalue()
    if isinstance(result, Table):
        body = {"columns": result.columns, "rows": result.rows, **result.meta}
    else:
        body = result.body
    return json.dumps({"provenance": prov, **_jsonable(body)}, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- tasks


def _alphas(params) -> list:
    return [float(a) for a in params.get("alphas", DEFAULT_ALPHAS)]


def _pressure_functions(src: Source, params: dict, budget: int):
    """(numeric e, closed-form e or None, description of the numeric route)."""
    closed = None
    if src.family is not None:
        def closed(a, fp=src.family):
            return catalog.closed_form(fp, "pressure", a)
    ks = src.keep_switch
    if src.two_time:
        source = src.spectral_source()
        labels = src.delta_S
        return (lambda a: entropy.pressure_spectral(source, a, labels)), closed, "spectral"
    if ks is not None:
        return (lambda a: keepswitch.ks_pressure_matrix(ks, a)), closed, "tilted matrix"
    T = int(params.get("T", 10))
    P, Phat = src.pair()
    return (lambda a: entropy.finite_pressure(P, Phat, a, T, budget) / T), closed, f"e_T/T at T={T}"


def _safe(f: Callable[[float], float] | None, a: float) -> float:
    if f is None:
        return math.nan
    try:
        return float(f(a))
    except catalog.UndefinedQuantityError:
        return math.nan


def task_info(cfg, src: Source):
    body = {"alphabet": list(src.spectral_source().alphabet), "two_time": src.two_time,
            "theta": src.theta}
    if src.family is not None:
        body["family"] = src.family.to_json()
        body["degenerate"] = src.built.degenerate
        try:
            body["ep_closed_form"] = catalog.closed_form(src.family, "ep")
        except catalog.UndefinedQuantityError as exc:
            body["ep_closed_form"] = None
            body["ep_note"] = str(exc)
    if src.instrument is not None:
        body["dim"] = src.instrument.dim
        body["assumptions"] = check_assumptions(
            src.instrument, int(cfg.params.get("T", ASSUMPTION_LOG_T))).as_dict()
    else:
        spec = pmp.as_pmp(src.measure)
        body["dim"] = spec.dim
        body["gibbs_constant"] = pmp.gibbs_constant(spec)
    return Document(body)


def task_enumerate(cfg, src: Source):
    T = int(cfg.params.get("T", 4))
    P, Phat = src.pair()
    alphabet = P.alphabet
    rows = []
    for words, (lp, lh) in linrep.enumerate_words([P, Phat], T, budget=cfg.budget):
        for w, a, b in zip(words, lp, lh):
            sigma = a - b if np.isfinite(b) else math.inf
            rows.append(["".join(str(alphabet[i]) for i in w), a, b, sigma])
    return Table(["word", "log_p", "log_p_hat", "sigma"], rows, {"T": T})


def task_pressure(cfg, src: Source):
    numeric, closed, route = _pressure_functions(src, cfg.params, cfg.budget)
    rows = []
    for a in _alphas(cfg.params):
        e_num = float(numeric(a))
        e_cf = _safe(closed, a)
        diff = abs(e_num - e_cf) if np.isfinite(e_cf) and np.isfinite(e_num) else math.nan
        rows.append([a, e_num, e_cf, diff])
    return Table(["alpha", "e_numeric", "e_closed_form", "abs_diff"], rows, {"route": route})


def task_rate(cfg, src: Source):
    numeric, _, route = _pressure_functions(src, cfg.params, cfg.budget)
    curve = entropy.pressure_curve(numeric, _alphas(cfg.params))
    rate = entropy.rate_function(curve, cfg.params.get("s"))
    rows = [list(r) for r in rate.to_rows()[1:]]
    return Table(["s", "rate", "gc_residual"], rows, {"route": route, "local": rate.local})


def task_ep(cfg, src: Source):
    ks = src.keep_switch
    if src.two_time:
        res = entropy.entropy_production(src.spectral_source(), delta_S=src.delta_S)
    elif ks is not None:
        # the second derivative jumps at 0, so only a one-sided rule is accurate
        res = entropy.entropy_production(
            None, pressure=lambda a: keepswitch.ks_pressure_matrix(ks, a), side=1)
    else:
        P, Phat = src.pair()
        T_list = tuple(cfg.params.get("T_list", (8, 10, 12)))
        res = entropy.entropy_production(None, P=P, Phat=Phat, T_list=T_list, budget=cfg.budget)
    closed = math.nan
    if src.family is not None:
        try:
            closed = catalog.closed_form(src.family, "ep")
        except catalog.UndefinedQuantityError:
            pass
    diff = abs(res.value - closed) if np.isfinite(closed) and np.isfinite(res.value) else math.nan
    return Table(["ep_numeric", "ep_closed_form", "abs_diff", "method"],
                 [[res.value, closed, diff, res.method]])


def task_exponents(cfg, src: Source):
    numeric, _, route = _pressure_functions(src, cfg.params, cfg.budget)
    ep_table = task_ep(cfg, src)
    ep = float(ep_table.rows[0][0])
    P, Phat = src.pair()
    T_list = tuple(cfg.params.get("T_list", ()))
    ex = entropy.error_exponents(P, Phat, numeric, ep, T_list, cfg.budget)
    s_grid = [float(s) for s in cfg.params.get("s", [0.5 * ep, 0.25 * ep])]
    return Document({"route": route, "stein": ex.stein, "chernoff": ex.chernoff,
                     "chernoff_alpha": ex.chernoff_alpha,
                     "hoeffding": {fmt_number(s): ex.hoeffding(s) for s in s_grid},
                     "chernoff_finite_T": ex.chernoff_finite_T})


def task_clt(cfg, src: Source):
    ks = src.keep_switch
    if ks is None:
        if src.family is None:
            raise ConfigError("the clt task needs a catalog family")
        var = catalog.closed_form(src.family, "clt_variance")
        return Document({"law": "gaussian", "variance_closed_form": var})
    T, N = int(cfg.params.get("T", 10_000)), int(cfg.params.get("N", 100_000))
    sample = keepswitch.ks_clt_sampler(ks, T, N, cfg.seed, cfg.workers)
    cons = keepswitch.ks_ep_and_clt(ks)
    fit = keepswitch.ks_goodness_of_fit(sample.standardized, cons["VarZ1"], cons["VarZ2"])
    mean_target = keepswitch.limit_law_mean(cons["VarZ2"])
    summ = sample.summary()
    return Document({"law": "Z1 - |Z2|", "constants": cons, "sample": summ,
                     "mean_target": mean_target,
                     "mean_within_3_se": abs(summ["mean"] - mean_target) <= 3 * summ["std_error"],
                     "goodness_of_fit": fit, "seed": cfg.seed})


def task_gibbs(cfg, src: Source):
    T = int(cfg.params.get("T", 10))
    P, _ = src.pair()
    diag = entropy.weak_gibbs_diagnostic(P, T, int(cfg.params.get("samples", 0)),
                                         seed=cfg.seed, budget=cfg.budget)
    body = {"T": T, "diagnostic": diag}
    if src.measure is not None or (src.built is not None and src.built.pmp is not None):
        spec = pmp.as_pmp(src.measure) if src.measure is not None else src.built.pmp
        body["gibbs_constant"] = pmp.gibbs_constant(spec)
    return Document(body)


def task_fdr(cfg, src: Source):
    rep = keepswitch.fdr_compute(tuple(cfg.params.get("T_list", (4, 8, 12))),
                                 float(cfg.params.get("step", 1e-4)))
    return Document(rep.as_dict())


def task_convert(cfg, src: Source):
    if src.measure is None:
        raise ConfigError("convert needs a 'measure' source (pmp, hm or fm)")
    target = cfg.params.get("to")
    if target not in ("pmp", "hm", "fm"):
        raise ConfigError("convert needs task parameter 'to' in {pmp, hm, fm}")
    out = pmp.convert(src.measure, target)
    back = pmp.convert(out, pmp.kind_of(src.measure))
    T = int(cfg.params.get("T", 8))
    a, b = pmp.as_pmp(src.measure).rep, pmp.as_pmp(back).rep
    worst = 0.0
    for _, (la, lb) in linrep.enumerate_words([a, b], T, budget=cfg.budget, prune=False):
        both = np.isfinite(la) & np.isfinite(lb)
        if np.any(np.isfinite(la) != np.isfinite(lb)):
            worst = math.inf
        if both.any():
            worst = max(worst, float(np.max(np.abs(la[both] - lb[both]))))
    return Document({"converted": out.to_json(), "round_trip_T": T,
                     "round_trip_max_log_diff": worst})


def task_rotational(cfg, src: Source):
    p = cfg.params
    action = p.get("action", "construct-delta")
    if action not in ROTATIONAL_ACTIONS:
        raise ConfigError(f"rotational action must be one of {ROTATIONAL_ACTIONS}")
    if action == "support":
        T = int(p.get("T", 8))
        inst = rotational.rotational_instrument(float(p.get("delta", 0.6180339887498949)))
        rows = []
        for t in range(1, T + 1):
            count = sum(w.shape[0] for w, _ in linrep.enumerate_words([inst.rep], t,
                                                                      budget=cfg.budget))
            rows.append([t, count, rotational.count_words_without_11(t)])
        return Table(["T", "support_size", "words_without_11"], rows)
    gamma = p.get("gamma", "T2")
    interval = p.get("interval", [0.3, 0.4])
    if isinstance(interval, str):
        interval = [float(x) for x in interval.split(",")]
    if len(interval) != 2:
        raise ConfigError("interval must have two endpoints")
    angle = rotational.construct_delta(gamma, tuple(interval))
    if action == "construct-delta":
        return Document(angle.to_json())
    if action == "probe":
        rep = rotational.pressure_divergence_probe(angle, float(p.get("alpha", 2.0)))
        rows = [[r.index, r.T, r.log_T, "" if r.witness is None else rotational.mp_str(r.witness),
                 rotational.mp_str(r.log_witness)] for r in rep.rows]
        return Table(["i", "T", "log_T", "witness", "log_witness"], rows,
                     {"alpha": rep.alpha, "verdict": "infinite" if rep.diverges else "undecided"})
    rep = rotational.derivative_probe(angle)
    rows = [[i, v] for i, v in enumerate(rep.log_derivative_sequence)]
    return Table(["i", "log_lower_bound"], rows,
                 {"gamma": gamma, "increment_bound": rep.increment_bound,
                  "increment_bound_finite": rep.bound_finite,
                  "lower_bound_increasing": rep.derivative_sequence_increasing})


TASK_FUNCTIONS = {
    "info": task_info, "enumerate": task_enumerate, "pressure": task_pressure,
    "rate": task_rate, "ep": task_ep, "exponents": task_exponents, "clt": task_clt,
    "gibbs-diag": task_gibbs, "fdr": task_fdr, "convert": task_convert,
    "rotational": task_rotational,
}

SCHEMA_ERRORS = (ConfigError, catalog.ParameterError, pmp.SpecError, InstrumentError,
                 keepswitch.KSParameterError, rotational.RotationalError, KeyError,
                 json.JSONDecodeError)


def run(cfg: ExperimentConfig) -> tuple[int, str]:
    """Execute a task; returns (exit status, rendered output or error message)."""
    try:
        cfg.validate()
        src = resolve_source(cfg)
        if src.instrument is not None and cfg.task not in ("info", "rotational", "fdr"):
            report = check_assumptions(src.instrument, ASSUMPTION_LOG_T)
            log.info("assumptions %s", json.dumps(report.as_dict(), sort_keys=True))
        result = TASK_FUNCTIONS[cfg.task](cfg, src)
        return EXIT_OK, render(result, cfg)
    except linrep.BudgetExceededError as exc:
        return EXIT_BUDGET, f"budget exhausted: {exc}"
    except SCHEMA_ERRORS as exc:
        return EXIT_SCHEMA, f"configuration error: {exc}"


# ---------------------------------------------------------------- click layer


def _load(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _common(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="JSON experiment configuration."),
        click.option("--out", "out", type=click.Path(dir_okay=False), help="Output file."),
        click.option("--format", "fmt", type=click.Choice(FORMATS), help="Output format."),
        click.option("--workers", type=int, help="Worker processes."),
        click.option("--seed", type=int, help="Unsigned 64-bit seed."),
        click.option("--budget", type=int, help="Enumeration node budget."),
        click.option("--set", "overrides", multiple=True, metavar="KEY=JSON",
                     help="Task parameter override, e.g. --set T=12."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _execute(task: str, config_path, out, fmt, workers, seed, budget, overrides, extra=None):
    try:
        doc = _load(config_path)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_SCHEMA)
    doc["task"] = task
    tp = dict(doc.get("task_params") or {})
    for item in overrides:
        key, _, raw = item.partition("=")
        try:
            tp[key] = json.loads(raw)
        except json.JSONDecodeError:
            tp[key] = raw
    tp.update({k: v for k, v in (extra or {}).items() if v is not None})
    doc["task_params"] = tp
    for key, val in (("format", fmt), ("workers", workers), ("seed", seed), ("budget", budget)):
        if val is not None:
            doc[key] = val
    try:
        cfg = ExperimentConfig.from_dict(doc)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_SCHEMA)
    code, text = run(cfg)
    if code != EXIT_OK:
        click.echo(text, err=True)
        sys.exit(code)
    target = out or cfg.out
    if target:
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="unraveling-lab")
@click.option("-v", "--verbose", is_flag=True, help="Log the assumption report to stderr.")
def main(verbose):
    """Entropic statistics of repeated quantum measurements."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)


def _simple(task: str, help_text: str):
    @main.command(name=task, help=help_text)
    @_common
    def command(config_path, out, fmt, workers, seed, budget, overrides):
        _execute(task, config_path, out, fmt, workers, seed, budget, overrides)

    return command


for _task, _help in (
        ("info", "Describe the source and its assumption report."),
        ("enumerate", "List every word of length T with log P, log P_hat and sigma."),
        ("pressure", "Entropic pressure on an alpha grid, numeric against closed form."),
        ("rate", "Large-deviation rate function by Legendre transform."),
        ("ep", "Entropy production rate."),
        ("exponents", "Stein, Chernoff and Hoeffding error exponents."),
        ("clt", "Central limit law of the entropy production."),
        ("gibbs-diag", "Weak-Gibbs diagnostic at length T."),
        ("fdr", "Keep-Switch Onsager and diffusion matrices."),
):
    _simple(_task, _help)


@main.command(name="convert", help="Convert between FM, HM and PMP measure specifications.")
@_common
@click.option("--to", "target", type=click.Choice(["pmp", "hm", "fm"]))
def convert_cmd(config_path, out, fmt, workers, seed, budget, overrides, target):
    _execute("convert", config_path, out, fmt or "json", workers, seed, budget, overrides,
             {"to": target})


@main.command(name="rotational", help="Rotational instrument: angle construction and probes.")
@click.argument("action", type=click.Choice(ROTATIONAL_ACTIONS))
@_common
@click.option("--gamma", type=click.Choice(rotational.GAMMA_TAGS))
@click.option("--interval", help="Interval lo,hi inside [0,2].")
@click.option("--alpha", type=float, help="Alpha outside [0,1] for the divergence probe.")
def rotational_cmd(action, config_path, out, fmt, workers, seed, budget, overrides, gamma,
                   interval, alpha):
    if action == "construct-delta" and fmt is None:
        fmt = "json"
    _execute("rotational", config_path, out, fmt, workers, seed, budget, overrides,
             {"action": action, "gamma": gamma, "interval": interval, "alpha": alpha})


if __name__ == "__main__":
    main()
