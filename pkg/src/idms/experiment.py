"""End-to-end evaluation runs: config parsing, the pipeline and report rendering."""
from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import costmodel
from .baseline import euclid_fit, mf_fit
from .delayspace import DelayMatrix, PeriodIndex
from .matrix_service import build_pdm, delta
from .metrics import (OTIV_MARGIN, PTIV_MARGIN, UndefinedRatioError, link_errors, summarize,
                      tiv_accuracy)
from .overlay import Overlay
from .protocols import ProtocolLog, distribute_pdm, run_udm_broadcast, run_udm_construction
from .simnet import Simulator
from .workload import (LCN_HOUR, MCN_HOUR, ConfigError, Workload, WorkloadConfig, config_lines,
                       generate, load_workload, parse_config)

ACCURACY_NAME = "accuracy.csv"
TIV_NAME = "tiv.csv"
COST_SIM_NAME = "cost_sim.csv"
COST_FIG_NAME = "cost_figures.csv"
STORAGE_NAME = "storage.txt"
MEMBERSHIP_NAME = "membership.csv"
CONFIG_NAME = "config.txt"
REPORT_NAME = "report.txt"
REPORT_FILES = (ACCURACY_NAME, TIV_NAME, COST_SIM_NAME, COST_FIG_NAME, STORAGE_NAME)


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    workload_dir: str = ""
    out_dir: str = "idms-out"
    sn_ratio: float = 0.1
    k: int = 2
    slice_count: int = 0          # 0: ceil(sqrt(#SNs))
    c_intra_ms: float = 10.0
    samples: int = 3
    probe_jitter: float = 0.0
    probe_timeout_ms: float = 3000.0
    detection_delay_ms: float = 5000.0
    delta_threshold_ms: float = 20.0
    msg_event_bytes: int = 20
    msg_overhead_bytes: int = 40
    pdm_days: int = 3
    udm_day: int = 3
    lcn_hour: int = LCN_HOUR
    mcn_hour: int = MCN_HOUR
    short_cutoff_ms: float = 50.0
    mf_dims: int = 10
    mf_refs: int = 32
    mf_rounds: int = 100
    n_seeds: int = 10
    euclid_dims: int = 5
    euclid_rounds: int = 400
    otiv_margin_ms: float = OTIV_MARGIN
    ptiv_margin_ms: float = PTIV_MARGIN
    tiv_mode: str = "triple"
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("k", "must be >= 1")
        if not 0 < self.sn_ratio <= 1:
            raise ConfigError("sn_ratio", "must lie in (0, 1]")
        if self.samples < 1:
            raise ConfigError("samples", "must be >= 1")
        if self.probe_jitter < 0:
            raise ConfigError("probe_jitter", "must be >= 0")
        if self.pdm_days < 1:
            raise ConfigError("pdm_days", "must be >= 1")
        if self.udm_day < self.pdm_days:
            raise ConfigError("udm_day", "must come after the PDM source days")
        for key in ("lcn_hour", "mcn_hour"):
            if not 0 <= getattr(self, key) < 24:
                raise ConfigError(key, "must lie in 0..23")
        if self.mcn_hour <= self.lcn_hour:
            raise ConfigError("mcn_hour", "must come after lcn_hour")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds", "must be >= 1")
        if self.tiv_mode not in ("triple", "edge"):
            raise ConfigError("tiv_mode", "must be 'triple' or 'edge'")
        if self.workload_dir:
            if not Path(self.workload_dir).is_dir():
                raise ConfigError("workload_dir", f"{self.workload_dir} does not exist")
        else:
            self.workload.validate()
            if self.workload.days <= self.udm_day:
                raise ConfigError("days", f"workload needs more than {self.udm_day} days")


_WORKLOAD_KEYS = {f.name for f in dataclasses.fields(WorkloadConfig)} - {"seed"}
_EXPERIMENT_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"workload"}


def parse_experiment(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines; workload keys sit in the same flat namespace."""
    exp_raw, wl_raw = {}, {}
    for ln, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(s.split()[0], f"line {ln}: expected 'key = value'")
        key, _, value = s.partition("=")
        key, value = key.strip(), value.strip()
        if key in _EXPERIMENT_KEYS:
            exp_raw[key] = value
        elif key in _WORKLOAD_KEYS:
            wl_raw[key] = value
        else:
            raise ConfigError(key, "unknown key")
    for key, value in overrides.items():
        if value is not None:
            exp_raw[key] = str(value)
    exp = parse_config(ExperimentConfig, exp_raw)
    wl = parse_config(WorkloadConfig, wl_raw)
    cfg = replace(exp, workload=replace(wl, seed=exp.seed))
    cfg.validate()
    return cfg


def load_experiment(path=None, **overrides) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_experiment(text, **overrides)


def experiment_lines(cfg: ExperimentConfig) -> list:
    out = []
    for f in dataclasses.fields(cfg):
        if f.name == "workload":
            continue
        v = getattr(cfg, f.name)
        out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    out += [ln for ln in config_lines(cfg.workload) if not ln.startswith("seed ")]
    return out


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6f}"


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([c if isinstance(c, str) else _fmt(c) for c in r])
    return buf.getvalue()


@dataclass
class ScenarioResult:
    hour: int
    reference: DelayMatrix
    udm: DelayMatrix
    pdm: DelayMatrix
    days: list
    construction: ProtocolLog
    broadcast: ProtocolLog
    distribution: ProtocolLog
    delta_entries: int | None
    n_sns: int


@dataclass
class RunResult:
    config: ExperimentConfig
    workload: Workload
    overlay: Overlay
    scenarios: dict
    accuracy: list
    tiv: list
    cost_sim: list


def _workload(cfg: ExperimentConfig) -> Workload:
    if cfg.workload_dir:
        w = load_workload(cfg.workload_dir)
        if w.truth.days <= cfg.udm_day:
            raise ConfigError("udm_day", f"workload has only {w.truth.days} days")
        return w
    return generate(cfg.workload)


def _scenario(cfg, w, overlay, sim, hour, previous) -> ScenarioResult:
    period = PeriodIndex(cfg.udm_day, hour)
    src_days = list(range(cfg.udm_day - cfg.pdm_days, cfg.udm_day))
    sim.advance(max(sim.now, period.start_ms))
    pdm = build_pdm(w.series, hour, src_days)
    dist = distribute_pdm(overlay, sim, pdm, cfg.msg_overhead_bytes)
    for oid in overlay.ons():
        on = overlay.node(oid)
        if on.associated_sns and (on.pdm is None or on.pdm.stamp != pdm.stamp):
            raise ExperimentError(f"PDM for hour {hour} did not reach {oid}")
    if PeriodIndex.at(sim.now) != period:
        raise ExperimentError(f"clock left {period} before construction started")
    udm, cons = run_udm_construction(overlay, sim, period, cfg.samples,
                                     cfg.msg_event_bytes, cfg.msg_overhead_bytes)
    bcast = run_udm_broadcast(overlay, sim, udm, previous, cfg.delta_threshold_ms,
                              cfg.msg_event_bytes, cfg.msg_overhead_bytes)
    n_delta = len(delta(previous, udm, cfg.delta_threshold_ms)) if previous is not None else None
    reference = w.series.get(period)
    days = [w.series.get(PeriodIndex(d, hour)) for d in src_days]
    return ScenarioResult(hour, reference, udm, pdm.matrix, days, cons, bcast, dist, n_delta,
                          len(overlay.live_sns()))


def _accuracy_rows(cfg, scen: dict, mf_models: dict) -> list:
    day_names = [f"day{d + 1}" for d in range(cfg.udm_day - cfg.pdm_days, cfg.udm_day)]
    header = ["links", "scenario", "metric", "baseline_mf"] + day_names + ["idms_pdm", "idms_udm"]
    rows = [header]
    for links in ("all", "short"):
        for name, res in (("LCN", scen["LCN"]), ("MCN", scen["MCN"])):
            def summ(est):
                le = link_errors(res.reference, est)
                if links == "short":
                    le = le.short(cfg.short_cutoff_ms)
                return summarize(le.re)
            mf = [summ(m.prediction()) for m in mf_models[name]]
            cols = [tuple(float(np.mean([getattr(s, k) for s in mf])) for k in ("npred", "mean", "median"))]
            for est in res.days + [res.pdm, res.udm]:
                s = summ(est)
                cols.append((s.npred, s.mean, s.median))
            for mi, metric in enumerate(("npred", "mean", "median")):
                rows.append([links, name, metric] + [c[mi] for c in cols])
    return rows


def _tiv_row(ref, est, margin, mode):
    try:
        return tiv_accuracy(ref, est, margin, mode)
    except UndefinedRatioError:
        return None


def _tiv_rows(cfg, scen: dict, mf_models: dict, euclid_models: dict) -> list:
    rows = [["scenario", "kind", "mode", "estimator", "n_reference", "n_estimate", "n_hit",
             "tiv_v", "tiv_f"]]
    for name in ("LCN", "MCN"):
        res = scen[name]
        for kind, margin in (("OTIV", cfg.otiv_margin_ms), ("PTIV", cfg.ptiv_margin_ms)):
            for mode in ("triple", "edge"):
                ests = [("idms_pdm", [res.pdm]),
                        ("baseline_mf", [m.prediction() for m in mf_models[name]]),
                        ("baseline_euclid", [euclid_models[name].prediction()])]
                for est_name, preds in ests:
                    accs = [_tiv_row(res.reference, p, margin, mode) for p in preds]
                    if any(a is None for a in accs):
                        # no reference TIVs: the ratios are undefined
                        rows.append([name, kind, mode, est_name, 0, "nan", "nan", "nan", "nan"])
                        continue
                    mean = lambda k: float(np.mean([getattr(a, k) for a in accs]))
                    rows.append([name, kind, mode, est_name, accs[0].n_reference,
                                 mean("n_estimate"), mean("n_hit"), mean("victory"), mean("failure")])
    return rows


def _cost_rows(cfg, scen: dict) -> list:
    m, b = cfg.msg_event_bytes, cfg.msg_overhead_bytes
    rows = [["scenario", "phase", "L", "n_sns", "sim_msgs", "formula_msgs", "sim_bytes",
             "formula_bytes", "bytes_diff"]]
    for name in ("LCN", "MCN"):
        res = scen[name]
        L = res.udm.n
        f_msgs = costmodel.construction_messages(L)
        f_bytes = costmodel.construction_bytes(L, m, b)
        rows.append([name, "construction", L, res.n_sns, res.construction.messages, f_msgs,
                     res.construction.total_bytes, f_bytes, res.construction.total_bytes - f_bytes])
        # q: the fraction of the 2L^2-byte file that goes over the wire
        if res.delta_entries is None:
            z_q = 2 * L * L
        else:
            z_q = 2 * res.delta_entries
        sns = res.n_sns
        f_msgs = 2 * sns
        f_bytes = sns * (m + b) + sns * z_q
        rows.append([name, "broadcast", L, sns, res.broadcast.messages, f_msgs,
                     res.broadcast.total_bytes, f_bytes, res.broadcast.total_bytes - f_bytes])
    return rows


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    w = _workload(cfg)
    overlay = Overlay(w.mapping, w.bootstrap_ip, k=cfg.k,
                      slice_count=cfg.slice_count or None, c_intra=cfg.c_intra_ms)
    overlay.populate(w.hosts, cfg.sn_ratio)
    sim = Simulator(w.truth, seed=cfg.seed, jitter=cfg.probe_jitter, timeout_ms=cfg.probe_timeout_ms,
                    detection_delay_ms=cfg.detection_delay_ms)
    if tuple(overlay.asns()) != w.series.labels:
        raise ExperimentError("overlay ASes do not match the workload's matrix labels")
    scen = {}
    lcn = _scenario(cfg, w, overlay, sim, cfg.lcn_hour, None)
    scen["LCN"] = lcn
    scen["MCN"] = _scenario(cfg, w, overlay, sim, cfg.mcn_hour, lcn.udm)

    seeds = [cfg.seed * 1000 + s for s in range(cfg.n_seeds)]
    mf_models = {name: [mf_fit(res.reference, cfg.mf_dims, min(cfg.mf_refs, res.reference.n - 1),
                               cfg.mf_rounds, seed=s) for s in seeds]
                 for name, res in scen.items()}
    euclid_models = {name: euclid_fit(res.reference, cfg.euclid_dims, cfg.euclid_rounds, seed=cfg.seed)
                     for name, res in scen.items()}
    return RunResult(cfg, w, overlay, scen, _accuracy_rows(cfg, scen, mf_models),
                     _tiv_rows(cfg, scen, mf_models, euclid_models), _cost_rows(cfg, scen))


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text("\n".join(experiment_lines(result.config)) + "\n")
    (out / ACCURACY_NAME).write_text(_csv(result.accuracy))
    (out / TIV_NAME).write_text(_csv(result.tiv))
    (out / COST_SIM_NAME).write_text(_csv(result.cost_sim))
    (out / COST_FIG_NAME).write_text(costmodel.cost_csv(costmodel.figure_table()))
    (out / STORAGE_NAME).write_text(costmodel.storage_note(555))
    (out / MEMBERSHIP_NAME).write_text(result.overlay.membership_csv())
    (out / REPORT_NAME).write_text(render_report(out))
    return out


def cmd_run(cfg: ExperimentConfig, out_dir=None) -> Path:
    return write_run(run_experiment(cfg), out_dir or cfg.out_dir)


# --------------------------------------------------------------------------
# report rendering
# --------------------------------------------------------------------------

def _read_csv(path: Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _table(rows) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.rjust(wd) if k else c.ljust(wd) for c, wd in zip(r, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * wd for wd in widths))
    return "\n".join(lines)


def render_report(directory) -> str:
    """Plain-text summary of a run directory; depends only on its CSV/text files."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    missing = [n for n in REPORT_FILES if not (d / n).exists()]
    if missing:
        raise FileNotFoundError(f"{d} lacks {', '.join(missing)}")
    parts = [
        "prediction accuracy (relative error; npred = 90th percentile)",
        _table(_read_csv(d / ACCURACY_NAME)),
        "",
        "triangle inequality violations",
        _table(_read_csv(d / TIV_NAME)),
        "",
        "simulated versus closed-form message cost",
        _table(_read_csv(d / COST_SIM_NAME)),
        "",
        "closed-form cost, IDMS versus Phoenix",
        _table(_read_csv(d / COST_FIG_NAME)),
        "",
        (d / STORAGE_NAME).read_text().rstrip(),
    ]
    return "\n".join(parts) + "\n"
