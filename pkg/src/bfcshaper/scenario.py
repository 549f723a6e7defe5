"""Declarative scenarios: flat key = value configs, presets, and runners.

A config is a list of ``key = value`` lines. Units live in the key name
(``*_hz`` are ordinary frequencies, ``*_s`` seconds, ``*_rad`` radians).
Numbers may be arithmetic in ``pi``, lists are comma separated. A
``[curve LABEL]`` header starts a curve that overrides the base keys; in a
calibration config the header is ``[target LABEL]``.
"""
from __future__ import annotations

import ast
import csv
import io
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, calibration
from .comb import TWO_PI, Mode, ShaperConfig, apply_phases, make_distinct_grid, make_shared_grid
from .detection import (
    ImpulseResponse,
    bin_and_sample,
    convolve_response,
    curve_fwhm,
    normalize_family,
    rect_filter_reference,
    write_histogram_csv,
)
from .wavepacket import Method, TauGrid, wavepacket

KINDS = ("wavepacket", "impulse", "calibration")


class ConfigError(ValueError):
    """Validation failure pointing at ``source:line``."""

    def __init__(self, source, line, key, message):
        self.source, self.line, self.key = source, line, key
        where = f"{source}:{line}" if line else str(source)
        super().__init__(f"{where}: {key}: {message}" if key else f"{where}: {message}")


# -- value parsing ---------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def eval_number(text: str) -> float:
    """Evaluate a numeric literal or arithmetic expression in ``pi``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        return ev(ast.parse(text.strip(), mode="eval"))
    except SyntaxError:
        raise ValueError(f"not a number: {text!r}") from None
    except ZeroDivisionError:
        raise ValueError(f"division by zero in {text!r}") from None


def _as_int(s):
    v = eval_number(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _as_bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _as_list(s):
    return tuple(eval_number(p) for p in s.split(",") if p.strip())


def _as_names(s):
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _as_method(s):
    t = s.strip().lower()
    table = {"quad": Method.QUADRATURE, "quadrature": Method.QUADRATURE, "closed": Method.CLOSED_FORM}
    if t not in table:
        raise ValueError(f"method must be quad or closed, got {s!r}")
    return table[t]


def _as_mode(s):
    return Mode(s.strip().lower())


# key -> (parser, default). ``None`` default means "derived/optional".
SCHEMA = {
    "name": (str.strip, "scenario"),
    "kind": (str.strip, "wavepacket"),
    "mode": (_as_mode, Mode.SHARED),
    "d": (_as_int, 1),
    "bin_spacing_hz": (eval_number, 3e9),
    "gamma_hz": (eval_number, 1.3e9),
    "subcomb_separation_hz": (eval_number, 27e9),
    "fsr_hz": (eval_number, 115e9),
    "signal_phases_rad": (_as_list, None),
    "idler_phases_rad": (_as_list, None),
    "channel_phases_rad": (_as_list, None),
    "response_fwhm_s": (eval_number, 80e-12),
    "bin_width_s": (eval_number, 20e-12),
    "tau_range_s": (_as_list, (-2.5e-9, 2.5e-9)),
    "tau_step_s": (eval_number, 1e-12),
    "total_counts": (_as_int, 100_000),
    "seed": (_as_int, 1),
    "method": (_as_method, Method.CLOSED_FORM),
    "noisy": (_as_bool, True),
    "normalize": (_as_bool, True),
    "envelope": (_as_bool, False),
    "outputs": (_as_names, ("histogram", "metrics", "plot")),
    "filter_width_hz": (eval_number, 50e9),
    "noise_rms_rad": (eval_number, 0.0),
    "tolerance_rad": (eval_number, 1e-3),
    "max_iter": (_as_int, 10),
    "damping": (eval_number, 0.7),
    "actuator_gain": (eval_number, 1.0),
    "actuator_gain_spread": (eval_number, 0.2),
    "initial_drive": (eval_number, 0.0),
}
SECTION_KEYS = {"d", "signal_phases_rad", "idler_phases_rad", "channel_phases_rad"}
OUTPUT_KINDS = {"histogram", "metrics", "plot", "fit", "family"}


@dataclass
class _Entry:
    value: object
    line: int
    raw: str


def parse_config(text: str, source="<config>"):
    """Split a config into base entries and ordered sections, with line numbers."""
    base: dict[str, _Entry] = {}
    sections: list[tuple[str, str, int, dict]] = []
    current = base
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(source, lineno, None, "unterminated section header")
            parts = line[1:-1].split(None, 1)
            if len(parts) != 2 or parts[0] not in ("curve", "target"):
                raise ConfigError(source, lineno, None, "expected [curve LABEL] or [target LABEL]")
            current = {}
            sections.append((parts[0], parts[1].strip(), lineno, current))
            continue
        if "=" not in line:
            raise ConfigError(source, lineno, None, f"expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(source, lineno, key, "unknown key")
        if current is not base and key not in SECTION_KEYS:
            raise ConfigError(source, lineno, key, "not allowed inside a section")
        if key in current:
            raise ConfigError(source, lineno, key, f"duplicate key (first on line {current[key].line})")
        try:
            parsed = SCHEMA[key][0](value)
        except (ValueError, KeyError) as exc:
            raise ConfigError(source, lineno, key, str(exc) or f"bad value {value!r}") from None
        current[key] = _Entry(parsed, lineno, value)
    return base, sections


# -- scenario types --------------------------------------------------------


@dataclass(frozen=True)
class Curve:
    label: str
    d: int
    signal_phases: tuple
    idler_phases: tuple | None
    config: ShaperConfig = field(repr=False, compare=False)


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    mode: Mode
    d: int
    bin_spacing_hz: float
    gamma_hz: float
    subcomb_separation_hz: float
    fsr_hz: float
    response_fwhm_s: float
    bin_width_s: float
    tau_range_s: tuple
    tau_step_s: float
    total_counts: int
    seed: int
    method: Method
    noisy: bool
    normalize: bool
    envelope: bool
    outputs: tuple
    curves: tuple = ()
    filter_width_hz: float = 50e9
    noise_rms_rad: float = 0.0
    tolerance_rad: float = 1e-3
    max_iter: int = 10
    damping: float = 0.7
    actuator_gain: float = 1.0
    actuator_gain_spread: float = 0.2
    initial_drive: float = 0.0
    source: str = "<config>"

    @property
    def tau_grid(self) -> TauGrid:
        return TauGrid(self.tau_range_s[0], self.tau_range_s[1], self.tau_step_s)

    @property
    def response(self) -> ImpulseResponse:
        return ImpulseResponse.gaussian(self.response_fwhm_s)

    def with_overrides(self, seed=None, method=None) -> "Scenario":
        from dataclasses import replace

        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if method is not None:
            kw["method"] = _as_method(method) if isinstance(method, str) else Method(method)
        return replace(self, **kw)


def _build_config(sc: dict, d: int, sig, idl, chan) -> ShaperConfig:
    spacing = TWO_PI * sc["bin_spacing_hz"]
    gamma = TWO_PI * sc["gamma_hz"]
    fsr = TWO_PI * sc["fsr_hz"]
    if sc["mode"] is Mode.SHARED:
        cfg = make_shared_grid(d, spacing, fsr=fsr, gamma=gamma)
    else:
        cfg = make_distinct_grid(d, spacing, TWO_PI * sc["subcomb_separation_hz"], fsr=fsr, gamma=gamma)
    if chan is not None:
        return calibration.with_channel_phases(cfg, chan)
    sig = np.zeros(d) if sig is None else np.asarray(sig)
    if sc["mode"] is Mode.DISTINCT and idl is None:
        idl = np.zeros(d)
    return apply_phases(cfg, sig, idl)


def scenario_from_text(text: str, source="<config>") -> Scenario:
    """Parse and validate a scenario; every failure names ``source:line``."""
    base, sections = parse_config(text, source)

    def get(key):
        return base[key].value if key in base else SCHEMA[key][1]

    def line(key, fallback=0):
        return base[key].line if key in base else fallback

    vals = {k: get(k) for k in SCHEMA}
    kind = vals["kind"]
    if kind not in KINDS:
        raise ConfigError(source, line("kind"), "kind", f"must be one of {', '.join(KINDS)}")

    checks = [
        ("gamma_hz", vals["gamma_hz"] > 0, "must be positive"),
        ("bin_spacing_hz", vals["bin_spacing_hz"] > 0, "must be positive"),
        ("response_fwhm_s", vals["response_fwhm_s"] > 0, "must be positive"),
        ("bin_width_s", vals["bin_width_s"] > 0, "must be positive"),
        ("tau_step_s", vals["tau_step_s"] > 0, "must be positive"),
        ("tau_range_s", len(vals["tau_range_s"]) == 2 and vals["tau_range_s"][0] < vals["tau_range_s"][1],
         "needs two increasing values"),
        ("total_counts", vals["total_counts"] > 0, "must be positive"),
        ("seed", vals["seed"] >= 0, "must be nonnegative"),
        ("bin_width_s", vals["bin_width_s"] >= vals["tau_step_s"], "must not be below tau_step_s"),
        ("tau_step_s", vals["tau_step_s"] <= vals["response_fwhm_s"] / 8 * (1 + 1e-9),
         "must resolve the response (at most response_fwhm_s / 8)"),
        ("filter_width_hz", vals["filter_width_hz"] > 0, "must be positive"),
        ("noise_rms_rad", vals["noise_rms_rad"] >= 0, "must be nonnegative"),
        ("tolerance_rad", vals["tolerance_rad"] > 0, "must be positive"),
        ("max_iter", vals["max_iter"] >= 1, "must be at least 1"),
        ("damping", 0 < vals["damping"] <= 1, "must be in (0, 1]"),
        ("actuator_gain", vals["actuator_gain"] > 0, "must be positive"),
        ("actuator_gain_spread", 0 <= vals["actuator_gain_spread"] < 1, "must be in [0, 1)"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(source, line(key), key, msg)
    bad = set(vals["outputs"]) - OUTPUT_KINDS
    if bad:
        raise ConfigError(source, line("outputs"), "outputs", f"unknown output kinds {sorted(bad)}")

    # curves / targets
    want = "target" if kind == "calibration" else "curve"
    specs = []
    for sec_kind, label, ln, entries in sections:
        if sec_kind != want:
            raise ConfigError(source, ln, None, f"[{sec_kind}] sections are not valid for kind={kind}")
        specs.append((label, ln, entries))
    if not specs:
        specs = [(vals["name"], line("d", 1), {})]
    labels = [s[0] for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError(source, specs[-1][1], None, "duplicate section label")

    curves = []
    if kind != "impulse":
        for label, ln, entries in specs:
            def sec(key):
                return entries[key].value if key in entries else vals[key]

            def sec_line(key):
                return entries[key].line if key in entries else line(key, ln)

            d = sec("d")
            sig, idl, chan = sec("signal_phases_rad"), sec("idler_phases_rad"), sec("channel_phases_rad")
            try:
                if chan is not None and (sig is not None or idl is not None):
                    raise ConfigError(source, sec_line("channel_phases_rad"), "channel_phases_rad",
                                      "give channel phases or signal/idler phases, not both")
                if d < 1:
                    raise ConfigError(source, sec_line("d"), "d", "must be at least 1")
                for key, vec in (("signal_phases_rad", sig), ("idler_phases_rad", idl)):
                    if vec is not None and len(vec) != d:
                        raise ConfigError(source, sec_line(key), key, f"needs {d} values, got {len(vec)}")
                if vals["mode"] is Mode.SHARED and idl is not None and sig is None:
                    sig = tuple(idl[::-1])
                cfg = _build_config(vals, d, sig, idl, chan)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(source, ln, f"{want} {label}", str(exc)) from None
            if kind == "wavepacket" and vals["method"] is Method.CLOSED_FORM:
                if cfg.grid.bin_spacing < cfg.overlap_guard * cfg.gamma:
                    raise ConfigError(source, line("gamma_hz"), "gamma_hz",
                                      "closed form needs bin spacing >= 2 gamma")
            curves.append(Curve(label, d, tuple(cfg.signal_phases), tuple(cfg.idler_phases), cfg))
        if kind == "calibration":
            dims = {c.d for c in curves}
            if len(dims) != 1:
                raise ConfigError(source, specs[0][1], "d", "all targets must share d")
        if kind == "wavepacket":
            span = vals["tau_range_s"][1] - vals["tau_range_s"][0]
            if span < 2 * vals["bin_width_s"]:
                raise ConfigError(source, line("tau_range_s"), "tau_range_s", "shorter than two bins")

    return Scenario(
        name=vals["name"], kind=kind, mode=vals["mode"], d=curves[0].d if curves else vals["d"],
        bin_spacing_hz=vals["bin_spacing_hz"], gamma_hz=vals["gamma_hz"],
        subcomb_separation_hz=vals["subcomb_separation_hz"], fsr_hz=vals["fsr_hz"],
        response_fwhm_s=vals["response_fwhm_s"], bin_width_s=vals["bin_width_s"],
        tau_range_s=tuple(vals["tau_range_s"]), tau_step_s=vals["tau_step_s"],
        total_counts=vals["total_counts"], seed=vals["seed"], method=vals["method"],
        noisy=vals["noisy"], normalize=vals["normalize"], envelope=vals["envelope"],
        outputs=tuple(vals["outputs"]), curves=tuple(curves),
        filter_width_hz=vals["filter_width_hz"], noise_rms_rad=vals["noise_rms_rad"],
        tolerance_rad=vals["tolerance_rad"], max_iter=vals["max_iter"], damping=vals["damping"],
        actuator_gain=vals["actuator_gain"], actuator_gain_spread=vals["actuator_gain_spread"],
        initial_drive=vals["initial_drive"], source=str(source),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(path, 0, None, f"cannot read config ({exc.strerror})") from None
    return scenario_from_text(text, path)


# -- presets ---------------------------------------------------------------


def _fig2c(d):
    return f"""name = fig2c_d{d}
mode = shared
d = {d}
envelope = true
"""


def _linear(step, d=3):
    return ", ".join(f"{k}*({step})" for k in range(d))


def _fig3(name, settings, both):
    lines = [f"name = {name}", "mode = distinct", "d = 3", "tau_range_s = -1.5e-9, 1.5e-9"]
    for label, step in settings:
        lines.append(f"[curve {label}]")
        lines.append(f"idler_phases_rad = {_linear(step)}")
        lines.append(f"signal_phases_rad = {_linear(step) if both else '0, 0, 0'}")
    return "\n".join(lines) + "\n"


FIG3C = [("dphi_i_0", "0"), ("dphi_i_pi_2", "pi/2"), ("dphi_i_pi", "pi"), ("dphi_i_3pi_2", "3*pi/2")]
FIG3D = [("dphi_si_0", "0"), ("dphi_si_pi_4", "pi/4"), ("dphi_si_pi_2", "pi/2"), ("dphi_si_3pi_4", "3*pi/4")]
FIG4 = [
    ("signal_mid_pi_2", "0, pi/2, 0", "0, 0, 0"),
    ("idler_mid_pi_2", "0, 0, 0", "0, pi/2, 0"),
    ("both_mid_pi_2", "0, pi/2, 0", "0, pi/2, 0"),
    ("conjugate_mid", "0, -pi/2, 0", "0, pi/2, 0"),
]


def _fig4(name, kind):
    head = "curve" if kind == "wavepacket" else "target"
    lines = [f"name = {name}", f"kind = {kind}", "mode = distinct", "d = 3"]
    if kind == "wavepacket":
        lines.append("tau_range_s = -1.5e-9, 1.5e-9")
    for label, sig, idl in FIG4:
        lines += [f"[{head} {label}]", f"signal_phases_rad = {sig}", f"idler_phases_rad = {idl}"]
    return "\n".join(lines) + "\n"


def _calib(name, settings, both):
    lines = [f"name = {name}", "kind = calibration", "mode = distinct", "d = 3"]
    for label, step in settings:
        lines += [
            f"[target {label}]",
            f"idler_phases_rad = {_linear(step)}",
            f"signal_phases_rad = {_linear(step) if both else '0, 0, 0'}",
        ]
    return "\n".join(lines) + "\n"


PRESETS: dict[str, str] = {
    "fig2c_d1": _fig2c(1),
    "fig2c_d2": _fig2c(2),
    "fig2c_d3": _fig2c(3),
    "fig2c_d6": _fig2c(6),
    "fig3c_family": _fig3("fig3c_family", FIG3C, both=False),
    "fig3d_family": _fig3("fig3d_family", FIG3D, both=True),
    "fig4": _fig4("fig4", "wavepacket"),
    "appendixA": "name = appendixA\nkind = impulse\nfilter_width_hz = 50e9\n"
    "tau_range_s = -0.5e-9, 0.5e-9\ntau_step_s = 0.1e-12\nbin_width_s = 1e-12\n",
    "figS4a": _calib("figS4a", FIG3C, both=False),
    "figS4b": _calib("figS4b", FIG3D, both=True),
    "figS4c": _fig4("figS4c", "calibration"),
    "calib_shared_d6": "name = calib_shared_d6\nkind = calibration\nmode = shared\nd = 6\n",
}

PRESET_DESCRIPTIONS = {
    "fig2c_d1": "shared filters, d=1, zero phase (envelope reference)",
    "fig2c_d2": "shared filters, d=2, zero phase",
    "fig2c_d3": "shared filters, d=3, zero phase",
    "fig2c_d6": "shared filters, d=6, zero phase",
    "fig3c_family": "distinct filters, idler linear phase 0, pi/2, pi, 3pi/2",
    "fig3d_family": "distinct filters, equal signal/idler linear phase 0..3pi/4",
    "fig4": "distinct filters, middle-bin phases incl. conjugate compensation",
    "appendixA": "rectangular 50 GHz filters, detector response FWHM check",
    "figS4a": "phase programming targets of the fig3c family",
    "figS4b": "phase programming targets of the fig3d family",
    "figS4c": "phase programming targets of the fig4 settings",
    "calib_shared_d6": "phase programming, shared filters, d=6, zero target",
}


def preset(name: str) -> Scenario:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return scenario_from_text(PRESETS[name], f"<preset {name}>")


# -- runners ---------------------------------------------------------------


@dataclass
class RunResult:
    scenario: Scenario
    artifacts: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    histograms: dict = field(default_factory=dict)
    records: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.records.values())


def _f(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_rows(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_f(v) for v in r])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in label)


def _curve_pipeline(sc: Scenario, curve: Curve, h: ImpulseResponse):
    wp = wavepacket(curve.config, sc.tau_grid, sc.method)
    conv = convolve_response(wp, h)
    meta = {"d": curve.d, "scenario": sc.name, "curve": curve.label}
    expected = bin_and_sample(conv, sc.bin_width_s, sc.total_counts, noisy=False, meta=meta)
    sampled = (
        bin_and_sample(conv, sc.bin_width_s, sc.total_counts, sc.seed, noisy=True, meta=meta)
        if sc.noisy
        else expected
    )
    return wp, expected, sampled


def run_scenario(sc: Scenario, out_dir, *, seed=None, method=None) -> RunResult:
    """Run a wavepacket or impulse scenario and write its artifacts to ``out_dir``."""
    sc = sc.with_overrides(seed, method)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if sc.kind == "calibration":
        return run_calibration(sc, out)
    if sc.kind == "impulse":
        return _run_impulse(sc, out)

    res = RunResult(sc)
    h = sc.response
    pipes = [(c, *_curve_pipeline(sc, c, h)) for c in sc.curves]
    multi = len(pipes) > 1

    if "histogram" in sc.outputs:
        for c, _, _, hist in pipes:
            p = out / (f"{sc.name}__{_safe(c.label)}.csv" if multi else f"{sc.name}.csv")
            write_histogram_csv(hist, p, sc.name)
            res.artifacts.append(p)
    for c, _, exp, hist in pipes:
        res.histograms[c.label] = hist

    expected = [e for _, _, e, _ in pipes]
    same_d = len({c.d for c in sc.curves}) == 1
    normed = normalize_family(expected, same_d=same_d) if sc.normalize else expected
    if multi or "family" in sc.outputs:
        p = out / f"{sc.name}_family.csv"
        rows = zip(normed[0].bin_centers, *[n.counts for n in normed])
        write_rows(p, ["tau_s", *[c.label for c in sc.curves]], rows)
        res.artifacts.append(p)

    if "metrics" in sc.outputs or "fit" in sc.outputs:
        ref = expected[0]
        dw = TWO_PI * sc.bin_spacing_hz
        rows = []
        for (c, wp, exp, hist) in pipes:
            row = {"label": c.label, "d": c.d}
            try:
                fm = analysis.fringe_metrics(exp, ref if multi else None, gamma=TWO_PI * sc.gamma_hz)
                row.update(period_s=fm.period, raw_period_s=fm.raw_period,
                           shift_s=fm.shift, contrast=fm.contrast)
            except ValueError:
                row.update(period_s=float("nan"), raw_period_s=float("nan"),
                           shift_s=float("nan"), contrast=float("nan"))
            th = c.config.biphoton_phases
            row["predicted_shift_s"] = (th[1] - th[0]) / dw if c.d > 1 else 0.0
            row["fwhm_s"] = curve_fwhm(exp)
            if "fit" in sc.outputs and c.d == 1:
                fit = analysis.fit_gamma(hist, h)
                row.update(fit_gamma_hz=fit.gamma / TWO_PI, fit_converged=fit.converged)
            rows.append(row)
        keys = []
        for r in rows:
            keys += [k for k in r if k not in keys]
        p = out / f"{sc.name}_metrics.csv"
        write_rows(p, keys, [[r.get(k, "") for k in keys] for r in rows])
        res.artifacts.append(p)
        res.metrics = rows

    if "plot" in sc.outputs:
        p = out / f"{sc.name}.svg"
        env = None
        if sc.envelope:
            tau = np.asarray(normed[0].bin_centers)
            single = make_shared_grid(1, gamma=TWO_PI * sc.gamma_hz)
            e = Curve("d=1 envelope", 1, (0.0,), (0.0,), single)
            _, e_exp, _ = _curve_pipeline(sc, e, h)
            e_exp = normalize_family([e_exp])[0]
            env = (tau, np.asarray(e_exp.counts))
        _plot_family(p, sc, normed, pipes, env)
        res.artifacts.append(p)
    return res


def _run_impulse(sc: Scenario, out: Path) -> RunResult:
    res = RunResult(sc)
    h = sc.response
    grid = sc.tau_grid
    raw = rect_filter_reference(TWO_PI * sc.filter_width_hz, None, grid)
    conv = convolve_response(raw, h)
    rows = [
        ("filter_width_hz", sc.filter_width_hz),
        ("unconvolved_fwhm_s", curve_fwhm(raw)),
        ("convolved_fwhm_s", curve_fwhm(conv)),
        ("response_fwhm_s", sc.response_fwhm_s),
    ]
    res.metrics = [dict(rows)]
    p = out / f"{sc.name}_metrics.csv"
    write_rows(p, ["quantity", "value"], rows)
    res.artifacts.append(p)
    p = out / f"{sc.name}_curves.csv"
    g_raw = raw.g2 / raw.g2.max()
    g_conv = conv.g2 / conv.g2.max()
    write_rows(p, ["tau_s", "unconvolved", "convolved"], zip(raw.tau, g_raw, g_conv))
    res.artifacts.append(p)
    if "plot" in sc.outputs:
        p = out / f"{sc.name}.svg"
        fig, ax = _figure()
        ax.plot(raw.tau * 1e12, g_raw, label="rectangular filters")
        ax.plot(conv.tau * 1e12, g_conv, label="with detector response")
        _finish(fig, ax, p, sc.name)
        res.artifacts.append(p)
    return res


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "bfcshaper"
    fig, ax = plt.subplots(figsize=(6, 3.5))
    return fig, ax


def _finish(fig, ax, path, title):
    import matplotlib.pyplot as plt

    ax.set_xlabel("delay (ps)")
    ax.set_ylabel("normalised coincidences")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _plot_family(path, sc, normed, pipes, env):
    fig, ax = _figure()
    for (c, *_), n in zip(pipes, normed):
        ax.plot(np.asarray(n.bin_centers) * 1e12, n.counts, label=c.label)
    if env is not None:
        ax.plot(env[0] * 1e12, env[1], "--", color="0.4", label="d=1 envelope")
    _finish(fig, ax, path, sc.name)


def _targets(sc: Scenario):
    return [(c.label, calibration.channel_phases(c.config), c.config) for c in sc.curves]


def run_calibration(sc: Scenario, out_dir, *, seed=None) -> RunResult:
    """Program every target of a calibration scenario and write reports."""
    sc = sc.with_overrides(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = RunResult(sc)
    rng = np.random.default_rng(sc.seed)
    summary = []
    for label, target, cfg in _targets(sc):
        acts = calibration.random_actuators(target.size, rng, sc.actuator_gain, sc.actuator_gain_spread)
        if sc.initial_drive:
            acts = [calibration.PhaseActuator(a.gain, a.offset, sc.initial_drive) for a in acts]
        rec = calibration.program_phases(
            target, acts, cfg, noise_rms=sc.noise_rms_rad, tolerance=sc.tolerance_rad,
            max_iter=sc.max_iter, damping=sc.damping, seed=int(rng.integers(2**32)),
        )
        res.records[label] = rec
        stem = f"{sc.name}__{_safe(label)}" if len(sc.curves) > 1 else sc.name
        p = out / f"{stem}_report.csv"
        calibration.write_calibration_report(rec, p, target)
        res.artifacts.append(p)
        p = out / f"{stem}_loop.csv"
        calibration.write_loop_log(rec, p)
        res.artifacts.append(p)
        summary.append([label, rec.iterations, rec.residual, rec.converged])
    p = out / f"{sc.name}_summary.csv"
    write_rows(p, ["target", "iterations", "residual_rad", "converged"], summary)
    res.artifacts.append(p)
    res.metrics = [dict(zip(["target", "iterations", "residual_rad", "converged"], s)) for s in summary]
    return res

