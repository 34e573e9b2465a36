"""Command-line entry point: ``foldbs {kernels,gains,simulate,sweep,verify}``.

Configuration is an INI file; every key has a default, so an empty file (or none) runs
the reference scenario. Example::

    [plant]
    eps = 1.0
    lambda = table1          ; or coefficients, highest degree first: -4, -2, 6
    y0 = -0.05
    yhat0 = 0.05

    [kernels]
    tri_n = 101
    c1 = 5.0
    c2 = 5.0

    [observer]
    cc1 = 1.0
    cc2 = 1.0

    [sim]
    grid_n = 401
    dt = 0.005
    t_end = 3.0
    mode = output_fb
    stride = 10

    [sweep]
    y0 = -0.05, -0.30
    yhat0 = 0.05, -0.45
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import fit_decay, target_bound_constants, waterbed_metrics
from .core import TABLE1_LAMBDA, Grid1D, PlantSpec, folded_params, polynomial
from .gains import GainTable, assemble_feedback, assemble_h
from .kernel_aux import solve_qr
from .kernel_ctrl import ConvergenceError, solve_row1, solve_row2
from .kernel_obs import solve_observer_kernel
from .sim import MODES, SimConfig, build_observer, run

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class Settings:
    eps: float = 1.0
    lam: tuple = TABLE1_LAMBDA
    y0: float = -0.05
    yhat0: float = 0.05
    tri_n: int = 101
    c1: float = 5.0
    c2: float = 5.0
    tol: float = 1e-10
    max_iter: int = 200
    cc1: float = 1.0
    cc2: float = 1.0
    grid_n: int = 401
    dt: float = 0.005
    t_end: float = 3.0
    mode: str = "output_fb"
    stride: int = 10
    sweep_y0: tuple = (-0.05, -0.30)
    sweep_yhat0: tuple = (0.05, -0.45)
    config_path: str = ""

    def validate(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        for y0 in (self.y0, *self.sweep_y0):
            if not -1.0 < y0 <= 0.0:
                raise ConfigError(f"y0 must lie in (-1, 0], got {y0}")
        for yh in (self.yhat0, *self.sweep_yhat0):
            if not -1.0 < yh < 1.0:
                raise ConfigError(f"yhat0 must lie in (-1, 1), got {yh}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        if min(self.c1, self.c2, self.cc1, self.cc2) <= 0:
            raise ConfigError("c1, c2, cc1 and cc2 must be positive")
        if self.tri_n < 5 or self.grid_n < 5:
            raise ConfigError("tri_n and grid_n must be at least 5")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        grid = Grid1D(-1.0, 1.0, self.grid_n)
        for y in (self.y0, self.yhat0, *self.sweep_y0, *self.sweep_yhat0):
            if not grid.has_node(y):
                raise ConfigError(f"{y} is not a node of the {self.grid_n}-node simulation grid")
        return self

    def spec(self, y0: Optional[float] = None, yhat0: Optional[float] = None) -> PlantSpec:
        return PlantSpec(self.eps, polynomial(self.lam), self.y0 if y0 is None else y0,
                         self.yhat0 if yhat0 is None else yhat0)

    @property
    def grid(self) -> Grid1D:
        return Grid1D(-1.0, 1.0, self.grid_n)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def parse_lambda(text: str) -> tuple:
    text = text.strip()
    if text.lower() == "table1":
        return TABLE1_LAMBDA
    try:
        vals = _floats(text)
    except ValueError as exc:
        raise ConfigError(f"lambda must be 'table1' or comma-separated coefficients, got {text!r}") from exc
    if not vals:
        raise ConfigError("lambda needs at least one coefficient")
    return vals


def load_settings(path: Optional[str]) -> Settings:
    s = Settings()
    if not path:
        return s
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path}")
    s.config_path = str(path)
    get = {
        ("plant", "eps"): ("eps", float), ("plant", "lambda"): ("lam", parse_lambda),
        ("plant", "y0"): ("y0", float), ("plant", "yhat0"): ("yhat0", float),
        ("kernels", "tri_n"): ("tri_n", int), ("kernels", "c1"): ("c1", float),
        ("kernels", "c2"): ("c2", float), ("kernels", "tol"): ("tol", float),
        ("kernels", "max_iter"): ("max_iter", int),
        ("observer", "cc1"): ("cc1", float), ("observer", "cc2"): ("cc2", float),
        ("sim", "grid_n"): ("grid_n", int), ("sim", "dt"): ("dt", float), ("sim", "t_end"): ("t_end", float),
        ("sim", "mode"): ("mode", str), ("sim", "stride"): ("stride", int),
        ("sweep", "y0"): ("sweep_y0", _floats), ("sweep", "yhat0"): ("sweep_yhat0", _floats),
    }
    for section in cp.sections():
        for key, raw in cp.items(section):
            if (section, key) not in get:
                raise ConfigError(f"unknown config key [{section}] {key}")
            attr, conv = get[(section, key)]
            try:
                setattr(s, attr, conv(raw))
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return s


# ----------------------------------------------------------------- output


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _tri_rows(x, *grids):
    n = len(x)
    upper = grids[0].orientation == "upper"
    for i in range(n):
        for j in range(i, n) if upper else range(i + 1):
            yield (x[i], x[j], *(g.values[i, j] for g in grids))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, settings: Settings, scenario: str, files) -> Path:
    man = {
        "config_path": settings.config_path,
        "outputs_dir": str(out),
        "scenario_id": scenario,
        "checksums": {Path(f).name: _sha256(Path(f)) for f in sorted(files)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def _scenario_id(y0: float, yhat0: float) -> str:
    return f"y0_{y0:+.3f}_yhat0_{yhat0:+.3f}"


# ----------------------------------------------------------------- pipeline


@dataclass
class Synthesis:
    row1: object
    row2: object
    qr: object
    gains: GainTable
    observer: tuple = field(default=())


def synthesize(s: Settings, y0: float, yhat0: float, with_observer: bool = True) -> Synthesis:
    spec = s.spec(y0, yhat0)
    fp = folded_params(spec)
    r1 = solve_row1(fp, s.c1, s.tri_n, s.tol, s.max_iter)
    r2 = solve_row2(r1, fp, s.c2, tol=s.tol, max_iter=s.max_iter)
    qr = solve_qr(r2.g_trace, fp, s.c1, s.c2, tol=s.tol, max_iter=s.max_iter)
    gt = assemble_feedback(r1, assemble_h(r1, r2, qr), y0, s.grid)
    obs = ()
    if with_observer:
        fo = folded_params(spec, "observer")
        k = s.grid.index_of(yhat0)
        obs = (solve_observer_kernel(fo.lam1_fn, fo.eps1, s.cc1, k + 1, s.tol, s.max_iter),
               solve_observer_kernel(fo.lam2_fn, fo.eps2, s.cc2, s.grid_n - k, s.tol, s.max_iter))
    return Synthesis(r1, r2, qr, gt, obs)


def write_kernels(out: Path, syn: Synthesis) -> list:
    n = syn.row1.n
    x = np.linspace(0.0, 1.0, n)
    files = [out / n_ for n_ in ("K.csv", "p.csv", "q.csv", "r.csv", "Phi1.csv", "Phi2.csv")]
    write_csv(files[0], ["x", "y", "k11", "k12", "k21", "k22"],
              _tri_rows(x, syn.row1.k11, syn.row1.k12, syn.row2.k21, syn.row2.k22))
    write_csv(files[1], ["x", "p"], zip(x, syn.qr.p))
    write_csv(files[2], ["x", "y", "q"], _tri_rows(x, syn.qr.q))
    write_csv(files[3], ["x", "y", "r"], _tri_rows(x, syn.qr.r))
    for path, ok in zip(files[4:], syn.observer):
        xo = ok.Phi.nodes
        write_csv(path, ["x", "y", "Phi", "phi_x"],
                  ((xi, yj, v, ok.phi[int(round(xi * (ok.n - 1)))]) for xi, yj, v in _tri_rows(xo, ok.Phi)))
    return files


def write_gains(out: Path, gt: GainTable) -> Path:
    path = out / "gains.csv"
    write_csv(path, ["y", "F1", "F2"], gt.rows())
    return path


def write_trajectory(out: Path, tr, grid: Grid1D) -> list:
    path = out / "trajectory.csv"
    err = tr.norm_err if tr.norm_err is not None else np.zeros_like(tr.norm_u)
    write_csv(path, ["t", "norm_u", "norm_err", "U1", "U2"],
              ((t, nu, ne, c[0], c[1]) for t, nu, ne, c in zip(tr.times, tr.norm_u, err, tr.controls)))
    snap = out / "snapshots.csv"
    y = grid.nodes
    uh = tr.uhat_snapshots if tr.uhat_snapshots is not None else np.zeros_like(tr.u_snapshots)

    def rows():
        for k, t in enumerate(tr.times):
            for j in range(y.size):
                yield t, y[j], tr.u_snapshots[k, j], uh[k, j]

    write_csv(snap, ["t", "y", "u", "uhat"], rows())
    return [path, snap]


def simulate(s: Settings, syn: Synthesis, y0: float, yhat0: float, mode: Optional[str] = None):
    spec = s.spec(y0, yhat0)
    cfg = SimConfig(spec, s.grid, s.dt, s.t_end, s.c1, s.c2, s.cc1, s.cc2, mode=mode or s.mode, stride=s.stride)
    obs = build_observer(spec, s.grid, s.cc1, s.cc2, syn.observer) if syn.observer else None
    return run(cfg, syn.gains, obs)


def summarize(s: Settings, y0: float, yhat0: float, tr) -> dict:
    fp = folded_params(s.spec(y0, yhat0))
    Pi, gam = target_bound_constants(fp.a, s.c1, s.c2, fp.eps2)
    fit = fit_decay(tr.times, tr.norm_u)
    row = {"y0": y0, "yhat0": yhat0, "gamma_fit": fit.gamma_hat, "Pi_fit": fit.pi_hat}
    if tr.norm_err is not None:
        row["gamma_err_fit"] = fit_decay(tr.times, tr.norm_err).gamma_hat
    row.update(waterbed_metrics(tr.controls, tr.times))
    row.update({"gamma_target": gam, "Pi_target": Pi})
    return row


def _sweep_one(args):
    s, y0, yhat0, out = args
    sub = Path(out) / _scenario_id(y0, yhat0)
    sub.mkdir(parents=True, exist_ok=True)
    try:
        syn = synthesize(s, y0, yhat0, with_observer=s.mode in ("observer", "output_fb"))
        tr = simulate(s, syn, y0, yhat0)
        files = [write_gains(sub, syn.gains), *write_trajectory(sub, tr, s.grid)]
        write_manifest(sub, s, _scenario_id(y0, yhat0), files)
        return summarize(s, y0, yhat0, tr), None
    except (ConvergenceError, ValueError, np.linalg.LinAlgError) as exc:
        return {"y0": y0, "yhat0": yhat0}, f"{type(exc).__name__}: {exc}"


def _workers() -> int:
    raw = os.environ.get("FOLDBS_THREADS", "")
    if raw.strip():
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise ConfigError(f"FOLDBS_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(4, os.cpu_count() or 1))


# ----------------------------------------------------------------- commands


def cmd_kernels(s: Settings, out: Path) -> int:
    syn = synthesize(s, s.y0, s.yhat0)
    files = write_kernels(out, syn)
    write_manifest(out, s, _scenario_id(s.y0, s.yhat0), files)
    print(f"row1: iterations {syn.row1.iterations}, residual {syn.row1.residual:.3e}")
    print(f"row2: iterations {syn.row2.iterations}, residual {syn.row2.residual:.3e}")
    print(f"qr:   iterations {syn.qr.iterations}, residual {syn.qr.residual:.3e}")
    for i, ok in enumerate(syn.observer, 1):
        print(f"Phi{i}: iterations {ok.iterations}, nodes {ok.n}")
    return EXIT_OK


def cmd_gains(s: Settings, out: Path) -> int:
    syn = synthesize(s, s.y0, s.yhat0, with_observer=False)
    path = write_gains(out, syn.gains)
    write_manifest(out, s, _scenario_id(s.y0, s.yhat0), [path])
    print(f"F1 jump at y0: {syn.gains.jump(1):.3e}, F2 jump: {syn.gains.jump(2):.3e}")
    return EXIT_OK


def cmd_simulate(s: Settings, out: Path) -> int:
    syn = synthesize(s, s.y0, s.yhat0, with_observer=s.mode in ("observer", "output_fb"))
    tr = simulate(s, syn, s.y0, s.yhat0)
    files = write_trajectory(out, tr, s.grid)
    write_manifest(out, s, _scenario_id(s.y0, s.yhat0), files)
    last = tr.norm_u[-1]
    print(f"mode {s.mode}: ||u|| {tr.norm_u[0]:.4g} -> {last:.4g} at t = {tr.times[-1]:g}")
    return EXIT_OK


SUMMARY_KEYS = ["y0", "yhat0", "gamma_fit", "Pi_fit", "gamma_err_fit", "peak_U1", "peak_U2",
                "l2_time_U1", "l2_time_U2", "gamma_target", "Pi_target"]


def cmd_sweep(s: Settings, out: Path) -> int:
    jobs = [(s, y0, yh, str(out)) for y0 in s.sweep_y0 for yh in s.sweep_yhat0]
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    failed = [(r, e) for r, e in results if e]
    rows = [[r.get(k, float("nan")) for k in SUMMARY_KEYS] for r, _ in results]
    path = out / "summary.csv"
    write_csv(path, SUMMARY_KEYS, rows)
    write_manifest(out, s, "sweep", [path])
    for r, e in results:
        tag = "FAIL " + e if e else f"gamma_fit {r['gamma_fit']:.4f} peak_U1 {r['peak_U1']:.4f} peak_U2 {r['peak_U2']:.4f}"
        print(f"y0 {r['y0']:+.3f} yhat0 {r['yhat0']:+.3f}: {tag}")
    return EXIT_SOLVER if failed else EXIT_OK


def _smooth_fields(n: int, count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n)
    for _ in range(count):
        a = rng.normal(size=(2, 4))
        yield tuple(sum(a[c, k] * np.cos((k + 1) * np.pi * x + a[c, 0]) for k in range(4)) for c in range(2))


def run_checks(s: Settings) -> list:
    """(name, passed, detail) for the residual, collapse, Bessel and round-trip checks."""
    from .analysis import kernel_pde_residual, observer_pde_residual, qr_pde_residual
    from .kernel_aux import apply_second_transform, invert_second_transform
    from .kernel_ctrl import apply_volterra, invert_volterra
    from .kernel_obs import bessel_phi_closed_form

    out = []
    n1, n2 = s.tri_n, 2 * s.tri_n - 1
    fp = folded_params(s.spec())
    res = []
    for n in (n1, n2):
        r1 = solve_row1(fp, s.c1, n, s.tol, s.max_iter)
        r2 = solve_row2(r1, fp, s.c2, tol=s.tol, max_iter=s.max_iter)
        qr = solve_qr(r2.g_trace, fp, s.c1, s.c2, tol=s.tol, max_iter=s.max_iter)
        ok = solve_observer_kernel(fp.lam1_fn, fp.eps1, s.cc1, n, s.tol, s.max_iter)
        rk = kernel_pde_residual(r1, r2, fp)
        rq = qr_pde_residual(qr, r2.g_trace, fp, s.c1, s.c2)
        res.append({**rk, "q": rq["q"], "Phi": observer_pde_residual(ok)})
    for key in res[0]:
        a, b = res[0][key], res[1][key]
        ratio = a / b if b > 0 else float("inf")
        out.append((f"residual ratio {key} ({n1}->{n2})", ratio >= 1.8 or a < 1e-12,
                    f"{a:.3e} -> {b:.3e}, ratio {ratio:.2f}"))

    fp0 = folded_params(s.spec(y0=0.0))
    r1 = solve_row1(fp0, s.c1, n1, s.tol, s.max_iter)
    r2 = solve_row2(r1, fp0, s.c2, tol=s.tol, max_iter=s.max_iter)
    qr = solve_qr(r2.g_trace, fp0, s.c1, s.c2, tol=s.tol, max_iter=s.max_iter)
    gmax = float(np.max(np.abs(r2.g_trace)))
    scale = max(r1.k11.sup(), r2.k22.sup())
    pqr = max(float(np.max(np.abs(qr.p))), qr.q.sup(), qr.r.sup())
    out.append(("symmetric fold: g trace", gmax <= 1e-12 * (1 + scale), f"sup|g| = {gmax:.2e}"))
    out.append(("symmetric fold: p, q, r", pqr < 1e-10, f"max sup = {pqr:.2e}"))

    for lam in (0.0, 2.0):
        ok = solve_observer_kernel(lam, 1.0, 1.0, 201)
        X, Y = np.meshgrid(ok.Phi.nodes, ok.Phi.nodes, indexing="ij")
        m = (Y < X) & (X < 1.0)
        ex = bessel_phi_closed_form(X[m], Y[m], lam, 1.0, 1.0)
        rel = float(np.max(np.abs(np.abs(ok.Phi.values[m]) - np.abs(ex)) / np.abs(ex)))
        diag = float(np.max(np.abs(np.abs(np.diag(ok.Phi.values)) - (lam + 1.0) * (1.0 - ok.Phi.nodes) / 2.0)))
        out.append((f"Bessel closed form, lambda = {lam:g}", rel < 1e-6 and diag < 1e-8,
                    f"max rel {rel:.2e}, diagonal {diag:.2e}"))

    r1 = solve_row1(fp, s.c1, n1, s.tol, s.max_iter)
    r2 = solve_row2(r1, fp, s.c2, tol=s.tol, max_iter=s.max_iter)
    qr = solve_qr(r2.g_trace, fp, s.c1, s.c2, tol=s.tol, max_iter=s.max_iter)
    K = [[r1.k11, r1.k12], [r2.k21, r2.k22]]
    worst_v = worst_s = 0.0
    for U in _smooth_fields(n1, 5):
        W = invert_volterra(K, apply_volterra(K, U))
        worst_v = max(worst_v, *(float(np.max(np.abs(a - b))) for a, b in zip(W, U)))
        V = invert_second_transform(qr, apply_second_transform(qr, U))
        worst_s = max(worst_s, *(float(np.max(np.abs(a - b))) for a, b in zip(V, U)))
    out.append(("Volterra round trip", worst_v < 1e-8, f"sup error {worst_v:.2e}"))
    out.append(("second-transform round trip", worst_s < 1e-8, f"sup error {worst_s:.2e}"))
    return out


def cmd_verify(s: Settings, out: Path) -> int:
    results = run_checks(s)
    bad = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        bad += not ok
    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "pass", "detail"])
        w.writerows((name, int(ok), detail) for name, ok, detail in results)
    return EXIT_CHECK if bad else EXIT_OK


COMMANDS = {"kernels": cmd_kernels, "gains": cmd_gains, "simulate": cmd_simulate,
            "sweep": cmd_sweep, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="foldbs", description="Folding backstepping kernels, gains and simulations.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", default="foldbs_out", help="output directory")
    p.add_argument("--tri-n", type=int, dest="tri_n")
    p.add_argument("--grid-n", type=int, dest="grid_n")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--y0", type=float)
    p.add_argument("--yhat0", type=float)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        s = load_settings(args.config)
        for key in ("tri_n", "grid_n", "dt", "t_end", "mode", "y0", "yhat0"):
            val = getattr(args, key)
            if val is not None:
                setattr(s, key, val)
        s.validate()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](s, out)
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
