"""Scenario pipelines, one per figure panel, and their file outputs.

Each ``run_*`` function is pure and returns tables (lists of row dicts).
:func:`run_scenario` wires options, seeds and the output directory together
and writes CSV artifacts plus a ``manifest.json``.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from clearkit import __version__
from clearkit.cavity import (
    Trajectory,
    calibrate_drive,
    free_decay,
    simulate_both,
    steady_state_kerr,
)
from clearkit.core import (
    BRANCHES,
    DEVICE_KEYS,
    ConfigError,
    LoadedParams,
    QubitState,
    SystemParams,
    TWO_PI,
    params_to_mapping,
)
from clearkit.design import ClearSpec, clear_envelope, make_square_pulse, solve_clear
from clearkit.optim import MeasurementEmulator, OptimSettings, optimize_ringdown
from clearkit.ramsey import (
    RamseyConfig,
    fit_exponential_decay,
    fit_ramsey,
    synthesize_trace,
)

SCENARIOS = (
    "decay_sweep",
    "power_sweep",
    "trajectory_compare",
    "clear_vs_square",
    "shortened_clear",
    "optimize_run",
    "ramsey_single",
)

_COMMON = {
    "noise_sigma": 0.01,
    "phi0": 0.0,
    "ramsey_detuning_mhz": 10.0,
    "t_m1": 2.0,
    "workers": 1,
}
_CLEAR = {"t_up1": 0.15, "t_up2": 0.15, "t_dn1": 0.15, "t_dn2": 0.15}
_POWER_GRID = [0.25, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0]

DEFAULTS: dict[str, dict[str, Any]] = {
    "decay_sweep": {**_COMMON, "p_norm": 2.0, "kerr": False,
                    "t_relax_grid": [float(t) for t in np.linspace(0.0, 1.0, 8)]},
    "power_sweep": {**_COMMON, "p_norm_grid": _POWER_GRID, "t_relax": 0.04, "kerr": True},
    "trajectory_compare": {**_COMMON, **_CLEAR, "p_norm": 3.6, "p_thermal": 0.2,
                           "sample_interval": 0.024, "kerr": False},
    "clear_vs_square": {**_COMMON, **_CLEAR, "p_norm_grid": _POWER_GRID, "kerr": False,
                        "residual_threshold": 0.01},
    "shortened_clear": {**_COMMON, **_CLEAR, "t_dn1": 0.12, "t_dn2": 0.12,
                        "p_norm_grid": _POWER_GRID, "kerr": True},
    "optimize_run": {**_COMMON, **_CLEAR, "t_dn1": 0.12, "t_dn2": 0.12, "p_norm": 10.0,
                     "kerr": True, "max_iterations": 300, "f_tol": 1e-3,
                     "seed_policy": "fresh", "scalarization": "max"},
    "ramsey_single": {"noise_sigma": 0.01, "ramsey_detuning_mhz": 10.0, "n0": 0.9, "phi0": 0.3},
}


def ramsey_config(params: SystemParams, opts: Mapping[str, Any]) -> RamseyConfig:
    return RamseyConfig(
        detuning=TWO_PI * float(opts.get("ramsey_detuning_mhz", 10.0)),
        gamma2=params.gamma2,
        noise_sigma=float(opts.get("noise_sigma", 0.0)),
    )


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def measure_n0(
    n_true: float,
    params: SystemParams,
    cfg: RamseyConfig,
    rng: np.random.Generator,
    phi0: float = 0.0,
):
    """Synthesize a Ramsey trace for population ``n_true`` and fit it."""
    trace = synthesize_trace(n_true, phi0, params, cfg, rng=rng)
    return fit_ramsey(trace, params), trace


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map, optionally across processes."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def clear_spec_for(params: SystemParams, p_norm: float, opts: Mapping[str, Any]) -> ClearSpec:
    """Linear-model CLEAR spec whose ring-up plus flat segment lasts ``t_m1``."""
    eps = calibrate_drive(params).eps_for(p_norm)
    t_up = float(opts["t_up1"]) + float(opts["t_up2"])
    t_flat = max(float(opts["t_m1"]) - t_up, 0.0)
    spec = ClearSpec(
        eps_steady=eps,
        t_up1=float(opts["t_up1"]),
        t_up2=float(opts["t_up2"]),
        t_flat=t_flat,
        t_dn1=float(opts["t_dn1"]),
        t_dn2=float(opts["t_dn2"]),
    )
    return solve_clear(params, spec).spec


# --- decay sweep ------------------------------------------------------------


@dataclass(frozen=True)
class _DecayPoint:
    params: SystemParams
    cfg: RamseyConfig
    n_end: dict
    t_relax: float
    index: int
    seed: int
    phi0: float


def _decay_point(pt: _DecayPoint) -> list[dict]:
    rows = []
    for b, s in enumerate(BRANCHES):
        n_true = free_decay(pt.n_end[s], pt.params.kappa, pt.t_relax)
        fit, _ = measure_n0(n_true, pt.params, pt.cfg, _rng(pt.seed, pt.index, b), pt.phi0)
        rows.append({"t_relax_us": pt.t_relax, "state": s.value, "n_true": n_true,
                     "n0_fit": fit.n0, "n0_err": fit.n0_err, "converged": int(fit.converged)})
    return rows


@dataclass(frozen=True)
class DecaySweep:
    rows: list[dict]
    fits: dict


def run_decay_sweep(
    params: SystemParams,
    p_norm: float,
    t_relax_grid: Sequence[float],
    *,
    noise_sigma: float = 0.01,
    seed: int = 0,
    kerr: bool = False,
    t_m1: float = 2.0,
    phi0: float = 0.0,
    ramsey_detuning_mhz: float = 10.0,
    workers: int = 1,
    floor: float = 1e-3,
) -> DecaySweep:
    """n0 versus wait time after a square pulse, with an exponential fit per branch."""
    if not p_norm > 0:
        raise ConfigError("p_norm must be > 0")
    eps = calibrate_drive(params).eps_for(p_norm)
    traj = simulate_both(params, make_square_pulse(eps, t_m1), kerr)
    n_end = {s: float(traj.n(s)[-1]) for s in BRANCHES}
    cfg = ramsey_config(params, {"noise_sigma": noise_sigma, "ramsey_detuning_mhz": ramsey_detuning_mhz})
    pts = [_DecayPoint(params, cfg, n_end, float(t), i, seed, phi0) for i, t in enumerate(t_relax_grid)]
    rows = [r for chunk in _pmap(_decay_point, pts, workers) for r in chunk]
    fits = {}
    for s in BRANCHES:
        data = [(r["t_relax_us"], r["n0_fit"]) for r in rows if r["state"] == s.value]
        fits[s] = fit_exponential_decay(data, floor=floor)
    return DecaySweep(rows, fits)


# --- power sweep ------------------------------------------------------------


def run_power_sweep(
    params: SystemParams,
    p_norm_grid: Sequence[float],
    t_relax: float,
    kerr: bool = True,
    *,
    noise_sigma: float = 0.01,
    seed: int = 0,
    phi0: float = 0.0,
    ramsey_detuning_mhz: float = 10.0,
) -> list[dict]:
    """n0 after a steady square drive and a wait ``t_relax``, per power and branch."""
    if any(p <= 0 for p in p_norm_grid):
        raise ConfigError("p_norm grid must be positive")
    cal = calibrate_drive(params)
    cfg = ramsey_config(params, {"noise_sigma": noise_sigma, "ramsey_detuning_mhz": ramsey_detuning_mhz})
    decay = math.exp(-params.kappa * t_relax)
    rows = []
    for i, p in enumerate(p_norm_grid):
        eps = cal.eps_for(p)
        model = {s: steady_state_kerr(params, eps, s) for s in BRANCHES}
        for b, s in enumerate(BRANCHES):
            n_ss = model[s].n if kerr else p
            n_true = free_decay(n_ss, params.kappa, t_relax)
            fit, _ = measure_n0(n_true, params, cfg, _rng(seed, i, b), phi0)
            rows.append({
                "p_norm": p,
                "state": s.value,
                "n_linear": p * decay,
                "n_kerr_model_g": model[QubitState.GROUND].n * decay,
                "n_kerr_model_e": model[QubitState.EXCITED].n * decay,
                "n_true": n_true,
                "n0_fit": fit.n0,
                "n0_err": fit.n0_err,
                "bistable": int(model[s].bistable),
            })
    return rows


# --- trajectories -----------------------------------------------------------


def thermal_mix(traj: Trajectory, p_excited: float) -> Trajectory:
    """Averaged field seen for each prepared state with thermal excitation ``p``."""
    if not 0.0 <= p_excited <= 1.0:
        raise ConfigError("thermal population must be in [0, 1]")
    g = traj.alpha[QubitState.GROUND]
    e = traj.alpha[QubitState.EXCITED]
    return Trajectory(
        traj.times,
        {QubitState.GROUND: (1 - p_excited) * g + p_excited * e,
         QubitState.EXCITED: (1 - p_excited) * e + p_excited * g},
        traj.sample_interval,
    )


def run_trajectory_compare(
    params: SystemParams,
    p_norm: float,
    spec: ClearSpec,
    p_thermal: float = 0.2,
    sample_interval: float = 0.024,
    kerr: bool = False,
    t_m1: float = 2.0,
) -> dict[str, Trajectory]:
    """Square and CLEAR trajectories, pure and thermally mixed."""
    eps = calibrate_drive(params).eps_for(p_norm)
    square = make_square_pulse(eps, t_m1, spec.ringdown_duration)
    clear = clear_envelope(solve_clear(params, spec).spec)
    out = {}
    for name, pulse in (("square", square), ("clear", clear)):
        traj = simulate_both(params, pulse, kerr, sample_interval)
        out[name] = traj
        out[f"{name}_measured"] = thermal_mix(traj, p_thermal)
    return out


# --- CLEAR versus square ----------------------------------------------------


def _final_n(params: SystemParams, pulse, kerr: bool) -> dict[QubitState, float]:
    traj = simulate_both(params, pulse, kerr)
    return {s: float(traj.n(s)[-1]) for s in BRANCHES}


def run_clear_vs_square(
    params: SystemParams,
    p_norm_grid: Sequence[float],
    opts: Mapping[str, Any],
    kerr: bool = False,
    *,
    noise_sigma: float = 0.01,
    seed: int = 0,
    phi0: float = 0.0,
) -> list[dict]:
    """Residual n0 right after CLEAR and after square-plus-matching-delay."""
    cfg = ramsey_config(params, {**opts, "noise_sigma": noise_sigma})
    rows = []
    for i, p in enumerate(p_norm_grid):
        spec = clear_spec_for(params, p, opts)
        square = make_square_pulse(spec.eps_steady, float(opts["t_m1"]), spec.ringdown_duration)
        shapes = {"clear": clear_envelope(spec), "square": square}
        for j, (shape, pulse) in enumerate(shapes.items()):
            finals = _final_n(params, pulse, kerr)
            for b, s in enumerate(BRANCHES):
                fit, _ = measure_n0(finals[s], params, cfg, _rng(seed, i, j, b), phi0)
                rows.append({"p_norm": p, "shape": shape, "state": s.value,
                             "n_true": finals[s], "n0_fit": fit.n0, "n0_err": fit.n0_err})
    return rows


@dataclass(frozen=True)
class Speedup:
    square_time: float
    clear_ringdown: float
    clear_residual: float
    speedup: float
    t_cav: float


def reset_speedup(
    params: SystemParams, p_norm: float, spec_opts: Mapping[str, Any], threshold: float = 0.01
) -> Speedup:
    """Time saved by CLEAR over a square pulse left to decay freely (linear model).

    The square-pulse time is measured from the end of the drive until the
    free decay drops below ``threshold`` photons.
    """
    spec = clear_spec_for(params, p_norm, spec_opts)
    n_clear = max(_final_n(params, clear_envelope(spec), False).values())
    if n_clear > threshold:
        raise ConfigError(f"CLEAR residual {n_clear:.3g} is above the threshold {threshold}")
    n_end = max(_final_n(params, make_square_pulse(spec.eps_steady, float(spec_opts["t_m1"])), False).values())
    t_square = max(math.log(n_end / threshold), 0.0) / params.kappa
    return Speedup(t_square, spec.ringdown_duration, n_clear, t_square - spec.ringdown_duration, params.t_cav)


def run_shortened_clear(
    params: SystemParams,
    p_norm_grid: Sequence[float],
    opts: Mapping[str, Any],
    kerr: bool = True,
    *,
    noise_sigma: float = 0.01,
    seed: int = 0,
    phi0: float = 0.0,
) -> list[dict]:
    """n0 at t_relax = 0 after a CLEAR pulse with (shortened) re-solved ring-down."""
    cfg = ramsey_config(params, {**opts, "noise_sigma": noise_sigma})
    rows = []
    for i, p in enumerate(p_norm_grid):
        spec = clear_spec_for(params, p, opts)
        finals = _final_n(params, clear_envelope(spec), kerr)
        for b, s in enumerate(BRANCHES):
            fit, _ = measure_n0(finals[s], params, cfg, _rng(seed, i, b), phi0)
            rows.append({"p_norm": p, "state": s.value, "n_true": finals[s],
                         "n0_fit": fit.n0, "n0_err": fit.n0_err})
    return rows


# --- optimization -----------------------------------------------------------


@dataclass(frozen=True)
class OptimizeResult:
    run: Any
    initial_spec: ClearSpec
    final_spec: ClearSpec
    traces: dict


def run_optimize(params: SystemParams, opts: Mapping[str, Any], seed: int = 0) -> OptimizeResult:
    """Tune ring-down amplitudes on the emulated device; keep before/after traces."""
    spec = clear_spec_for(params, float(opts["p_norm"]), opts)
    cfg = ramsey_config(params, opts)
    emulator = MeasurementEmulator(
        params, spec, cfg,
        kerr_enabled=bool(opts["kerr"]),
        seed_policy=opts.get("seed_policy", "fresh"),
        base_seed=seed,
        scalarization=opts.get("scalarization", "max"),
        phi0=float(opts.get("phi0", 0.0)),
    )
    settings = OptimSettings(f_tol=float(opts["f_tol"]), max_iterations=int(opts["max_iterations"]), rng_seed=seed)
    run = optimize_ringdown(emulator, (spec.amp_dn1, spec.amp_dn2), settings)
    final = spec.with_values(**run.best_values)
    traces = {}
    for tag, sp, idx in (("before", spec, 0), ("after", final, run.best.iteration)):
        finals = emulator.final_fields(sp)
        rng = np.random.default_rng(seed + idx)
        for s in BRANCHES:
            traces[(tag, s)] = synthesize_trace(abs(finals[s]) ** 2, emulator.phi0, params, cfg, rng=rng)
    return OptimizeResult(run, spec, final, traces)


# --- output -----------------------------------------------------------------


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def table_csv(rows: Sequence[Mapping[str, Any]], header_comments: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for c in header_comments:
        buf.write(f"# {c}\n")
    if rows:
        keys = list(rows[0].keys())
        buf.write(",".join(keys) + "\n")
        for r in rows:
            buf.write(",".join(_fmt(r[k]) for k in keys) + "\n")
    return buf.getvalue()


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o: Any):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def _sha256(text: str | bytes) -> str:
    data = text.encode() if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def parse_value(raw: str) -> Any:
    """Parse a ``--set`` value: JSON, a comma list of numbers, or a bare string."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    if "," in raw:
        try:
            return [float(x) for x in raw.split(",") if x.strip()]
        except ValueError:
            pass
    low = raw.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    return raw


def resolve_options(scenario: str, overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Scenario defaults merged with overrides, coerced to the default's type."""
    if scenario not in DEFAULTS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    opts = dict(DEFAULTS[scenario])
    for key, value in overrides.items():
        if key not in opts:
            raise ConfigError(f"unknown option {key!r} for scenario {scenario}")
        default = opts[key]
        try:
            if isinstance(default, bool):
                value = parse_value(value) if isinstance(value, str) else value
                if not isinstance(value, bool):
                    raise ValueError
            elif isinstance(default, int):
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
            elif isinstance(default, list):
                value = [float(v) for v in (value if isinstance(value, list) else [value])]
            else:
                value = str(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for option {key!r}: {value!r}") from exc
        opts[key] = value
    return opts


def split_overrides(pairs: Iterable[str]) -> tuple[dict[str, Any], dict[str, Any]]:
    """Separate ``key=value`` pairs into device keys and scenario options."""
    device, options = {}, {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        value = parse_value(raw)
        (device if key in DEVICE_KEYS else options)[key] = value
    return device, options


@dataclass
class ScenarioOutput:
    out_dir: Path
    files: dict[str, str] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


def run_scenario(
    name: str,
    loaded: LoadedParams,
    overrides: Mapping[str, Any],
    out_dir: str | Path,
    seed: int = 0,
) -> ScenarioOutput:
    """Run one scenario and write its CSV artifacts and manifest to ``out_dir``."""
    opts = resolve_options(name, overrides)
    params = loaded.params
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from exc

    inputs = {
        "tool": "clearkit",
        "version": __version__,
        "scenario": name,
        "device": loaded.source,
        "resolved_params": params_to_mapping(params),
        "derived": loaded.derived,
        "options": opts,
        "seed": seed,
    }
    manifest_hash = _sha256(_canonical(inputs))
    head = [f"clearkit {name}", f"manifest_sha256 {manifest_hash}"]
    files: dict[str, str] = {}
    summary: dict[str, Any] = {}
    noise = {"noise_sigma": opts.get("noise_sigma", 0.0), "seed": seed, "phi0": opts.get("phi0", 0.0)}

    if name == "decay_sweep":
        res = run_decay_sweep(params, opts["p_norm"], opts["t_relax_grid"], kerr=opts["kerr"],
                              t_m1=opts["t_m1"], ramsey_detuning_mhz=opts["ramsey_detuning_mhz"],
                              workers=opts["workers"], **noise)
        files["decay_sweep.csv"] = table_csv(res.rows, head)
        fit_rows = [{"state": s.value, "amplitude": f.amplitude, "rate": f.rate, "t_cav_us": f.time_constant,
                     "rate_err": f.rate_err, "goodness": f.goodness, "n_used": f.n_used,
                     "n_excluded": f.n_excluded} for s, f in res.fits.items()]
        files["decay_fit.csv"] = table_csv(fit_rows, head)
    elif name == "power_sweep":
        rows = run_power_sweep(params, opts["p_norm_grid"], opts["t_relax"], opts["kerr"],
                               ramsey_detuning_mhz=opts["ramsey_detuning_mhz"], **noise)
        files["power_sweep.csv"] = table_csv(rows, head)
    elif name == "trajectory_compare":
        spec = clear_spec_for(params, opts["p_norm"], opts)
        trajs = run_trajectory_compare(params, opts["p_norm"], spec, opts["p_thermal"],
                                       opts["sample_interval"], opts["kerr"], opts["t_m1"])
        for key, traj in trajs.items():
            files[f"{key}.csv"] = "".join(f"# {c}\n" for c in head) + traj.to_csv()
    elif name == "clear_vs_square":
        rows = run_clear_vs_square(params, opts["p_norm_grid"], opts, opts["kerr"], **noise)
        files["clear_vs_square.csv"] = table_csv(rows, head)
        sp = reset_speedup(params, 1.0, opts, opts["residual_threshold"])
        summary["speedup"] = sp.__dict__
        files["speedup.csv"] = table_csv([sp.__dict__], head)
    elif name == "shortened_clear":
        rows = run_shortened_clear(params, opts["p_norm_grid"], opts, opts["kerr"], **noise)
        files["shortened_clear.csv"] = table_csv(rows, head)
    elif name == "optimize_run":
        res = run_optimize(params, opts, seed)
        files["history.csv"] = "".join(f"# {c}\n" for c in head) + res.run.history_csv()
        for (tag, s), trace in res.traces.items():
            files[f"ramsey_{tag}_{s.value}.csv"] = "".join(f"# {c}\n" for c in head) + trace.to_csv()
        files["final_spec.json"] = json.dumps(design_json(params, res.final_spec), indent=2, sort_keys=True) + "\n"
        summary["best"] = {"objective": res.run.best.objective, **res.run.best_values,
                           "evaluations": len(res.run.history), "stop_reason": res.run.stop_reason}
    elif name == "ramsey_single":
        cfg = ramsey_config(params, opts).with_values(rng_seed=seed)
        trace = synthesize_trace(opts["n0"], opts["phi0"], params, cfg)
        fit = fit_ramsey(trace, params)
        files["trace.csv"] = "".join(f"# {c}\n" for c in head) + trace.to_csv()
        files["fit.json"] = fit.to_json() + "\n"

    for fname, text in files.items():
        (out_dir / fname).write_text(text)
    manifest = {**inputs, "manifest_sha256": manifest_hash,
                "artifacts": {k: _sha256(v) for k, v in sorted(files.items())}, "summary": summary}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return ScenarioOutput(out_dir, files, manifest)


def design_json(params: SystemParams, spec: ClearSpec, kerr_check: bool = True) -> dict:
    """Solved spec plus condition numbers and predicted end-of-pulse residuals."""
    design = solve_clear(params, spec)
    solved = design.spec
    env = clear_envelope(solved)
    linear = _final_n(params, env, False)
    out = {
        **solved.to_dict(),
        "p_norm": calibrate_drive(params).p_norm_of(solved.eps_steady),
        "condition_up": design.condition_up,
        "condition_down": design.condition_down,
        "residual_linear": {s.value: n for s, n in linear.items()},
    }
    if kerr_check:
        out["residual_kerr"] = {s.value: n for s, n in _final_n(params, env, True).items()}
    return out
