"""Command-line orchestration: configs, runs, diagnostics, scattering and convergence.

Config files are line-oriented ``key = value`` text with ``[section]``
headers; ``#`` starts a comment.  Every key outside ``[weights]`` must be
known.  Each ``[weights]`` entry names a weighted-sup diagnostic::

    sup_nonzero = 0 0 0 nonzero none     # a_plus a_minus a_x projection derivative

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 acceptance-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import scipy.fft as sfft

from . import __version__
from .analysis import (
    GhostAccumulator,
    WeightSpec,
    energy,
    fit_decay,
    records_to_csv,
    summary_json,
    weighted_sup,
)
from .coeffs import (
    NonlinearitySpec,
    check_partial_null,
    check_symmetry,
    check_transformed_null,
    derive_transformed,
    load_spec,
    preset,
)
from .dynamics import (
    PROFILES,
    SimConfig,
    SimState,
    checkpoint_load,
    checkpoint_save,
    energy0,
    run,
)
from .errors import ConfigError, IntegrationError, ParameterError
from .grid import Grid
from .jets import JetContext
from .kernels import numba_enabled
from .scattering import (
    DuhamelSink,
    modal_energy0,
    modal_scattering_error,
    profile_save,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3
SPEC_KINDS = ("zero", "chaplygin", "membrane", "lagrangian_k", "wave_maps", "file")
PROPAGATORS = ("exact", "rk4")


# ------------------------------------------------------------------ config
def _opt(section: str, kind, default):
    return field(default=default, metadata={"section": section, "kind": kind})


@dataclass
class ExperimentConfig:
    run_id: str = _opt("run", str, "run")
    output_dir: str = _opt("run", str, "out")
    nx: int = _opt("grid", int, 64)
    L: float = _opt("grid", float, 30.0)
    ny: int = _opt("grid", int, 8)
    preset: str = _opt("spec", str, "zero")
    k: int = _opt("spec", int, 1)
    m: int = _opt("spec", int, 1)
    C: float = _opt("spec", float, 1.0)
    file: str = _opt("spec", str, "")
    dt: float = _opt("time", float, 0.1)
    t_final: float = _opt("time", float, 10.0)
    sweeps: int = _opt("time", int, 1)
    dealias: bool = _opt("time", bool, True)
    output_every: int = _opt("time", int, 1)
    checkpoint_every: int = _opt("time", int, 0)
    epsilon: float = _opt("data", float, 1e-3)
    profile: str = _opt("data", str, "gaussian")
    sigma: float = _opt("data", float, 2.0)
    support: Optional[float] = _opt("data", "optfloat", None)
    energy_k: int = _opt("diagnostics", int, -1)
    ghost: bool = _opt("diagnostics", bool, False)
    ghost_k: int = _opt("diagnostics", int, 1)
    scattering: bool = _opt("scattering", bool, False)
    store_every: int = _opt("scattering", int, 0)
    propagator: str = _opt("scattering", str, "exact")
    fit_start: Optional[float] = _opt("scattering", "optfloat", None)
    fit_end: Optional[float] = _opt("scattering", "optfloat", None)
    weights: dict = field(default_factory=dict, metadata={"section": "weights", "kind": "weights"})

    # -------------------------------------------------------- derived
    def grid(self) -> Grid:
        return Grid(self.nx, self.L, self.ny)

    def spec(self) -> NonlinearitySpec:
        if self.preset == "zero":
            return NonlinearitySpec.zeros(self.m)
        if self.preset == "file":
            return load_spec(self.file)
        if self.preset == "lagrangian_k":
            return preset("lagrangian_k", {"k": self.k})
        if self.preset == "wave_maps":
            return preset("wave_maps", {"m": self.m, "C": self.C})
        return preset(self.preset)

    def sim_config(self, spec: Optional[NonlinearitySpec] = None) -> SimConfig:
        return SimConfig(
            grid=self.grid(),
            spec=spec if spec is not None else self.spec(),
            dt=self.dt,
            t_final=self.t_final,
            epsilon=self.epsilon,
            profile=self.profile,
            dealias=self.dealias,
            checkpoint_every=self.checkpoint_every,
            output_every=self.output_every,
            sweeps=self.sweeps,
            sigma=self.sigma,
            support=self.support,
        )

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_id


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_SECTIONS = {}
for _f in dataclasses.fields(ExperimentConfig):
    _SECTIONS.setdefault(_f.metadata["section"], []).append(_f.name)


def _convert(kind, text: str, key: str, line: int):
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == "optfloat":
            return None if text.lower() in ("none", "") else float(text)
        return text
    except ValueError:
        name = kind if isinstance(kind, str) else kind.__name__
        raise ConfigError(f"cannot read {text!r} as {name}", key=key, line=line) from None


def _parse_weight(text: str, key: str, line: int) -> WeightSpec:
    parts = text.split()
    if len(parts) != 5:
        raise ConfigError("weight needs 'a_plus a_minus a_x projection derivative'", key=key, line=line)
    try:
        return WeightSpec(float(parts[0]), float(parts[1]), float(parts[2]), parts[3], parts[4])
    except (ValueError, ParameterError) as exc:
        raise ConfigError(str(exc), key=key, line=line) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a config; errors name the key and line."""
    values, lines = {}, {}
    weights = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"malformed section header {s!r}", line=n)
            section = s[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", key=section, line=n)
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', got {s!r}", line=n)
        key, val = (p.strip() for p in s.split("=", 1))
        if section is None:
            raise ConfigError("key outside any [section]", key=key, line=n)
        if section == "weights":
            if key in weights:
                raise ConfigError("duplicate weight", key=key, line=n)
            weights[key] = _parse_weight(val, key, n)
            lines[key] = n
            continue
        if key not in _SECTIONS[section] or key == "weights":
            raise ConfigError(f"unknown key in [{section}]", key=key, line=n)
        if key in values:
            raise ConfigError("duplicate key", key=key, line=n)
        values[key] = _convert(_FIELDS[key].metadata["kind"], val, key, n)
        lines[key] = n
    cfg = ExperimentConfig(**values, weights=weights)
    validate(cfg, lines)
    return cfg


def validate(cfg: ExperimentConfig, lines: Optional[dict] = None) -> None:
    """Contract checks before any allocation (CFL, wrap-around, choices)."""
    lines = lines or {}

    def fail(msg, key):
        raise ConfigError(msg, key=key, line=lines.get(key))

    if cfg.preset not in SPEC_KINDS:
        fail(f"preset must be one of {SPEC_KINDS}", "preset")
    if cfg.preset == "file" and not cfg.file:
        fail("preset = file needs 'file'", "file")
    if cfg.profile not in PROFILES:
        fail(f"profile must be one of {PROFILES}", "profile")
    if cfg.propagator not in PROPAGATORS:
        fail(f"propagator must be one of {PROPAGATORS}", "propagator")
    if cfg.m < 1:
        fail("m must be >= 1", "m")
    if cfg.store_every < 0:
        fail("store_every must be >= 0", "store_every")
    if cfg.ghost_k < 0 or cfg.ghost_k > 2:
        fail("ghost_k must be 0, 1 or 2", "ghost_k")
    if cfg.energy_k > 2:
        fail("energy_k must be <= 2", "energy_k")
    if not cfg.run_id or any(c in cfg.run_id for c in "/\\"):
        fail("run_id must be a plain name", "run_id")
    try:
        cfg.grid()
    except ValueError as exc:
        key = str(exc).split()[0]
        fail(str(exc), key if key in ("nx", "L", "ny") else "nx")
    if not cfg.dt > 0:
        fail(f"dt must be positive, got {cfg.dt}", "dt")
    sim = SimConfig(
        cfg.grid(), NonlinearitySpec.zeros(1), cfg.dt, cfg.t_final, cfg.epsilon, cfg.profile, cfg.dealias,
        cfg.checkpoint_every, cfg.output_every, cfg.sweeps, cfg.sigma, cfg.support,
    )
    try:
        sim.validate()
    except ConfigError as exc:
        raise ConfigError(exc.args[0].split(": ", 1)[-1], key=exc.key, line=lines.get(exc.key)) from None


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(serialize(c)) == c``."""
    out = []
    for section, names in _SECTIONS.items():
        out.append(f"[{section}]")
        if section == "weights":
            for name, w in cfg.weights.items():
                out.append(f"{name} = {w.a_plus!r} {w.a_minus!r} {w.a_x!r} {w.projection} {w.derivative}")
        else:
            for name in names:
                out.append(f"{name} = {_fmt(getattr(cfg, name))}")
        out.append("")
    return "\n".join(out)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


# ------------------------------------------------------------- diagnostics
class DiagnosticsSink:
    """Run sink recording E0, the configured weighted sups, E_k and the ghost integral."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.every = cfg.output_every
        self.ghost = GhostAccumulator(cfg.ghost_k) if cfg.ghost else None

    def evaluate(self, jc: JetContext) -> list:
        t = jc.t
        recs = [(t, "E0", modal_energy0(jc.engine, jc.jet(0), jc.jet(1)))]
        for name, w in self.cfg.weights.items():
            recs.append((t, name, weighted_sup(jc, w)))
        if self.cfg.energy_k >= 0:
            rep = energy(jc, self.cfg.energy_k)
            recs.append((t, f"E_k{self.cfg.energy_k}", rep.E[self.cfg.energy_k]))
        if self.ghost is not None:
            recs.append((t, f"ghost_k{self.cfg.ghost_k}", self.ghost.add(jc)))
        return recs

    def __call__(self, ctx):
        return self.evaluate(JetContext.from_step(ctx))


def grid_hash(cfg: ExperimentConfig, spec: NonlinearitySpec) -> str:
    h = hashlib.sha256()
    h.update(repr((cfg.nx, float(cfg.L), cfg.ny)).encode())
    for name, arr in spec.tensors().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def write_manifest(cfg: ExperimentConfig, spec: NonlinearitySpec, command: str, extra: Optional[dict] = None) -> Path:
    d = cfg.run_dir
    d.mkdir(parents=True, exist_ok=True)
    man = {
        "run_id": cfg.run_id,
        "command": command,
        "version": __version__,
        "config": serialize(cfg),
        "grid_hash": grid_hash(cfg, spec),
        "spec": spec.to_dict(),
        "numba": numba_enabled(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    if extra:
        man.update(extra)
    p = d / "manifest.json"
    p.write_text(summary_json(man) + "\n")
    return p


def _write_records(path: Path, records, emit_plot: bool) -> None:
    path.write_text(records_to_csv(records))
    if emit_plot:
        pd = path.parent / "plot"
        pd.mkdir(exist_ok=True)
        names = sorted({r[1] for r in records})
        for name in names:
            rows = [(t, v) for t, n, v in records if n == name]
            (pd / f"{name}.dat").write_text("".join(f"{t!r} {v!r}\n" for t, v in rows))


def _progress(quiet: bool, n_steps: int):
    if quiet or n_steps == 0:
        return None
    mark = max(1, n_steps // 10)

    def cb(step, t):
        if step % mark == 0 or step == n_steps:
            print(f"  step {step}/{n_steps}  t = {t:.4g}", file=sys.stderr)

    return cb


# ---------------------------------------------------------------- commands
def cmd_check_null(args) -> int:
    if args.spec:
        spec = load_spec(args.spec)
        label = args.spec
    else:
        params = {}
        if args.k is not None:
            params["k"] = args.k
        if args.m is not None:
            params["m"] = args.m
        if args.C is not None:
            params["C"] = args.C
        spec = preset(args.preset, params)
        label = args.preset
    sym = check_symmetry(spec)
    null = check_partial_null(spec)
    ok = sym.passed and null.passed
    report = {
        "spec": label,
        "m": spec.m,
        "symmetry": "pass" if sym.passed else "fail",
        "symmetry_violations": len(sym.violations),
        "partial_null": "pass" if null.passed else "fail",
        "max_residual": null.max_residual,
        "failing_tensor": null.failing_tensor,
    }
    try:
        tn = check_transformed_null(derive_transformed(spec))
        report["transformed_null"] = "pass" if tn.passed else "fail"
        report["transformed_max_residual"] = tn.max_residual
        ok = ok and tn.passed
    except ValueError as exc:
        report["transformed_null"] = f"n/a ({exc})"
    report["result"] = "pass" if ok else "fail"
    if args.json:
        print(summary_json(report))
    else:
        for key, val in report.items():
            print(f"{key}: {val}")
    return EXIT_OK if ok else EXIT_CHECK


def _simulate(cfg: ExperimentConfig, args, command: str, scatter: bool) -> int:
    spec = cfg.spec()
    sim = cfg.sim_config(spec)
    sim.validate()
    d = cfg.run_dir
    d.mkdir(parents=True, exist_ok=True)
    write_manifest(cfg, spec, command)
    ck_dir = d / "checkpoints"

    def writer(step, state):
        ck_dir.mkdir(exist_ok=True)
        p = ck_dir / f"ckpt_{step:07d}.twl"
        p.write_bytes(checkpoint_save(state))
        return str(p)

    diag = DiagnosticsSink(cfg)
    sinks = [diag]
    duh = None
    if scatter:
        duh = DuhamelSink(spec, store_every=cfg.store_every or cfg.output_every)
        sinks.append(duh)
    res = run(sim, sinks, checkpoint_writer=writer, progress=_progress(args.quiet, sim.n_steps))
    records = [r for r in res.records if r[1] != "box_V_L2"]
    _write_records(d / "diagnostics.csv", records, args.emit_plot_data)
    if duh is None:
        return EXIT_OK
    box = [r for r in res.records if r[1] == "box_V_L2"]
    prof = duh.profile()
    (d / "profile.twsp").write_bytes(profile_save(prof))
    eng = duh.engine
    a0, b0 = eng.to_modal(prof.u0_inf), eng.to_modal(prof.u1_inf)
    dt = cfg.dt if cfg.propagator == "rk4" else None
    err = [(t, "scattering_error", modal_scattering_error(eng, uh, uth, a0, b0, t, cfg.propagator, dt)) for t, uh, uth in duh.stored]
    _write_records(d / "scattering.csv", err + box, args.emit_plot_data)
    summary = {
        "T_used": prof.T_used,
        "tail_indicator": prof.tail_indicator,
        "tail_ok": prof.tail_ok,
        "warning_nondecaying_integrand": prof.warning,
        "profile_norm": prof.norm_U,
        "propagator": cfg.propagator,
    }
    ts = np.array([e[0] for e in err])
    vs = np.array([e[2] for e in err])
    lo = cfg.fit_start if cfg.fit_start is not None else 0.0
    hi = cfg.fit_end if cfg.fit_end is not None else prof.T_used
    sel = (ts > 0) & (ts >= lo) & (ts <= hi) & (ts < prof.T_used) & (vs > 0)
    if sel.sum() >= 5:
        fit = fit_decay(ts[sel], vs[sel])
        summary["error_slope"] = fit.slope
        summary["error_fit_r2"] = fit.r2
    (d / "scattering_summary.json").write_text(summary_json(summary) + "\n")
    if not args.quiet:
        print(summary_json(summary))
    return EXIT_OK if prof.tail_ok else EXIT_CHECK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    return _simulate(cfg, args, "simulate", cfg.scattering)


def cmd_scatter(args) -> int:
    cfg = load_config(args.config)
    return _simulate(cfg, args, "scatter", True)


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.spec()
    d = Path(args.run_dir) if args.run_dir else cfg.run_dir
    files = sorted((d / "checkpoints").glob("*.twl"))
    if not files:
        raise ConfigError(f"no checkpoints found in {d / 'checkpoints'}")
    grid = cfg.grid()
    states = sorted((checkpoint_load(f.read_bytes(), grid) for f in files), key=lambda s: s.t)
    diag = DiagnosticsSink(cfg)
    records = []
    for s in states:
        records.extend(diag.evaluate(JetContext.from_state(s, spec, cfg.dealias, cfg.sweeps)))
    _write_records(d / "analysis.csv", records, args.emit_plot_data)
    return EXIT_OK


def restrict(state: SimState, grid: Grid) -> SimState:
    """Fourier restriction of a finer-x state onto ``grid`` (same L and ny)."""
    nf, nc = state.grid.nx, grid.nx
    if state.grid.ny != grid.ny or state.grid.L != grid.L or nf < nc:
        raise ParameterError("restriction needs the same L and ny and a finer x-grid")
    idx = np.fft.fftfreq(nc, 1.0 / nc).astype(int)

    def cut(f):
        fh = sfft.fft2(f, axes=(-3, -2))
        fh = fh[..., idx % nf, :, :][..., :, idx % nf, :] * (nc / nf) ** 2
        fh[..., nc // 2, :, :] = 0.0
        fh[..., :, nc // 2, :] = 0.0
        return sfft.ifft2(fh, axes=(-3, -2)).real

    return SimState(state.t, cut(state.u), cut(state.ut), grid)


def convergence_study(cfg: ExperimentConfig, kind: str = "dt", levels: int = 3, quiet: bool = True) -> dict:
    """Refinement ladder; the observed order is log2 of successive difference ratios."""
    if levels < 3:
        raise ParameterError("convergence needs at least 3 levels")
    spec = cfg.spec()
    finals = []
    rows = []
    for lev in range(levels):
        c = dataclasses.replace(cfg)
        if kind == "dt":
            c.dt = cfg.dt / 2**lev
        elif kind == "grid":
            c.nx = cfg.nx * 2**lev
        else:
            raise ParameterError("kind must be 'dt' or 'grid'")
        c.output_every = max(1, int(round(c.t_final / c.dt)))
        sim = c.sim_config(spec)
        sim.validate()
        res = run(sim, [], progress=None)
        finals.append(res.state)
        rows.append({"level": lev, "dt": c.dt, "nx": c.nx})
    base = cfg.grid()
    finals = [restrict(s, base) if s.grid.nx != base.nx else s for s in finals]
    diffs = []
    for a, b in zip(finals[:-1], finals[1:]):
        diffs.append(energy0(base, a.u - b.u, a.ut - b.ut) + float(np.sqrt(np.sum((a.u - b.u) ** 2) * base.cell_volume)))
    orders = []
    for d1, d2 in zip(diffs[:-1], diffs[1:]):
        orders.append(math.log2(d1 / d2) if d1 > 0 and d2 > 0 else float("inf"))
    return {"kind": kind, "levels": rows, "differences": diffs, "orders": orders}


def cmd_convergence(args) -> int:
    cfg = load_config(args.config)
    out = convergence_study(cfg, args.kind, args.levels)
    d = cfg.run_dir
    d.mkdir(parents=True, exist_ok=True)
    write_manifest(cfg, cfg.spec(), "convergence", {"kind": args.kind, "levels": args.levels})
    (d / f"convergence_{args.kind}.json").write_text(summary_json(out) + "\n")
    print(summary_json(out))
    if args.min_order is not None and (not out["orders"] or min(out["orders"]) < args.min_order):
        return EXIT_CHECK
    return EXIT_OK


# ------------------------------------------------------------------ driver
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twlab", description="Spectral laboratory for quasilinear waves on R^2 x T")
    p.add_argument("--version", action="version", version=f"twlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check-null", help="symmetry and partial null report")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="NonlinearitySpec JSON file")
    src.add_argument("--preset", choices=("chaplygin", "membrane", "lagrangian_k", "wave_maps"))
    c.add_argument("--k", type=int, help="lagrangian_k order")
    c.add_argument("--m", type=int, help="wave_maps components")
    c.add_argument("--C", type=float, help="wave_maps constant")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_check_null)

    for name, func, helptext in (
        ("simulate", cmd_simulate, "run and write checkpoints and diagnostics"),
        ("scatter", cmd_scatter, "run, build the scattering profile and error series"),
        ("analyze", cmd_analyze, "replay checkpoints through the diagnostics"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--emit-plot-data", action="store_true", help="also write per-diagnostic two-column files")
        s.add_argument("--quiet", action="store_true")
        if name == "analyze":
            s.add_argument("--run-dir", help="directory holding checkpoints/ (default: output_dir/run_id)")
        s.set_defaults(func=func)

    v = sub.add_parser("convergence", help="dt or grid refinement ladder")
    v.add_argument("--config", required=True)
    v.add_argument("--kind", choices=("dt", "grid"), default="dt")
    v.add_argument("--levels", type=int, default=3)
    v.add_argument("--min-order", type=float, default=None, help="exit 3 if an observed order is below this")
    v.set_defaults(func=cmd_convergence)
    return p


def _threads() -> int:
    env = os.environ.get("TWL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"TWL_THREADS must be an integer, got {env!r}", key="TWL_THREADS") from None
        if n < 1:
            raise ConfigError("TWL_THREADS must be >= 1", key="TWL_THREADS")
        return n
    return os.cpu_count() or 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        with sfft.set_workers(_threads()):
            return args.func(args)
    except (IntegrationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParameterError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
