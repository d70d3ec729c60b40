"""Scenario-driven pipelines: parse a config, run assemble/spectra/report
stages, persist artifacts under a run directory with a hashed manifest, and
expose every check as a subcommand with a machine-readable exit status
(0 all checks passed, 2 a check failed, 1 execution/config error).
"""

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bands import band_sweep, band_to_csv, branch_regularity, threshold_set, thresholds_to_csv
from .commlab import conjugate_series, exponential_conjugation, ladder, random_pair, sector_bound_finite, w_theta_bound
from .dispersion import DispersionSpec, certify_bounds, certify_growth
from .errors import ConfigError, MissingStage, SpecdeformError
from .flow import build_flow_table, flow_table_to_csv
from .grids import MomentumGrid
from .mourre import (
    assemble_commutator,
    commutator_fd_oracle,
    default_rectangle,
    extract_constants,
    mourre_inequality_check,
    virial_check,
)
from .operators import (
    DeformationParams,
    adjoint_identity_check,
    assemble_H,
    assemble_H_theta,
    conjugation_check,
    dilated_kernel_norm_check,
    operator_norm_estimate,
    relative_bound_check,
    save_operator,
)
from .potential import (
    PotentialSpec,
    certify_decay,
    construct_embedded,
    embedded_residual,
    fourier_transform,
    save_constructed,
)
from .spectra import (
    FeshbachReducer,
    Rectangle,
    classify,
    eigendecompose,
    report_summary,
    report_to_csv,
    rectangle_scan,
    riesz_projection,
    sector_check,
    theta_independence,
    winding_number,
)

_SCHEMA = {
    "schema": None,
    "name": None,
    "seed": None,
    "dispersion": {"omega1": "dispersion_spec", "omega2": "dispersion_spec"},
    "potential": {"family": None, "amplitude": None, "width": None, "center": None,
                  "support_radius": None, "decay_rate": None, "fourier_method": None,
                  "quad_points": None},
    "grid": {"cutoff": None, "points": None, "dim": None},
    "theta": None,
    "xi": {"values": None, "start": None, "stop": None, "points": None},
    "rectangle": {"energy": None, "half_width": None, "depth_slope": None},
    "embedded": {"xi0": None, "bump_radius": None, "bump_amplitude": None,
                 "half_width": None, "step": None,
                 "sweep": {"start": None, "stop": None, "points": None}},
    "certify": {"xi_box": None, "strip": None, "resolution": None, "k_extent": None,
                "probe_points": None, "theta_samples": None},
    "tolerances": {"flow_tol": None, "eig_tol": None, "tail_tol": None,
                   "match_tol": None, "drift_tol": None, "arc_tol": None},
    "commlab": {"n": None, "seeds": None, "k_max": None, "theta_fraction": None},
    "output": {"dir": None},
}

_DISPERSION_KEYS = {"family", "coefficients", "exponent", "strip_radius", "dim",
                    "growth_exponent", "growth_constant"}

_DEFAULT_TOLERANCES = {
    "flow_tol": 1e-12,
    "eig_tol": 1e-8,
    "tail_tol": 1e-10,
    "match_tol": None,
    "drift_tol": 1e-5,
    "arc_tol": None,
}


def _validate_block(block, schema, path):
    if schema is None or not isinstance(block, dict):
        return
    for key, sub in block.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown scenario key {where!r}")
        if schema[key] == "dispersion_spec":
            bad = set(sub) - _DISPERSION_KEYS
            if bad:
                raise ConfigError(f"unknown scenario key {where}.{sorted(bad)[0]!r}")
        elif isinstance(schema[key], dict):
            _validate_block(sub, schema[key], where)


def _parse_theta(raw):
    if isinstance(raw, (int, float)):
        return complex(raw)
    if isinstance(raw, str):
        try:
            return complex(raw.replace(" ", "").replace("i", "j"))
        except ValueError as exc:
            raise ConfigError(f"cannot parse theta value {raw!r}") from exc
    raise ConfigError(f"theta entries must be numbers or strings, got {raw!r}")


@dataclass
class Scenario:
    raw: dict
    name: str
    seed: int
    omega1: DispersionSpec
    omega2: DispersionSpec
    potential_block: dict
    grid: MomentumGrid
    thetas: list
    xis: np.ndarray
    rectangle_block: dict
    embedded_block: dict | None
    certify_block: dict
    tolerances: dict
    commlab_block: dict
    out_dir: Path

    @property
    def scenario_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()
        ).hexdigest()


def _apply_overrides(raw: dict, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        dotted, value = item.split("=", 1)
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a non-object")
        node[parts[-1]] = parsed
    return raw


def load_scenario(path, overrides=None, out_dir=None) -> Scenario:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from exc
    raw = _apply_overrides(raw, overrides)
    _validate_block(raw, _SCHEMA, "")
    if raw.get("schema") != 1:
        raise ConfigError("scenario key 'schema' must be 1")

    def need(key):
        if key not in raw:
            raise ConfigError(f"missing scenario key {key!r}")
        return raw[key]

    disp = need("dispersion")
    omega1 = DispersionSpec(**disp["omega1"])
    omega2 = DispersionSpec(**disp["omega2"])
    gridb = dict(need("grid"))
    grid = MomentumGrid(float(gridb["cutoff"]), int(gridb["points"]),
                        int(gridb.get("dim", 1)))
    thetas = [_parse_theta(t) for t in raw.get("theta", ["0.1j"])]
    xib = raw.get("xi", {"values": [0.0]})
    if "values" in xib and xib["values"] is not None:
        xis = np.asarray(xib["values"], dtype=float)
    else:
        xis = np.linspace(float(xib["start"]), float(xib["stop"]), int(xib["points"]))
    tol = dict(_DEFAULT_TOLERANCES)
    tol.update(raw.get("tolerances", {}))
    out = Path(out_dir) if out_dir else None
    if out is None:
        root = os.environ.get("SPECDEFORM_OUT_ROOT", ".")
        out = Path(root) / raw.get("output", {}).get("dir", f"runs/{raw.get('name', 'run')}")
    return Scenario(
        raw=raw,
        name=raw.get("name", "run"),
        seed=int(raw.get("seed", 0)),
        omega1=omega1,
        omega2=omega2,
        potential_block=dict(need("potential")),
        grid=grid,
        thetas=thetas,
        xis=xis,
        rectangle_block=dict(raw.get("rectangle", {})),
        embedded_block=dict(raw["embedded"]) if "embedded" in raw else None,
        certify_block=dict(raw.get("certify", {})),
        tolerances=tol,
        commlab_block=dict(raw.get("commlab", {})),
        out_dir=out,
    )


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class RunContext:
    """Carries the scenario, memoized certified constants and the manifest."""

    def __init__(self, scenario: Scenario, workers: int = 1):
        self.sc = scenario
        self.workers = max(1, int(workers))
        self.out = scenario.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self._bounds = None
        self._kernel = None
        self._potential = None
        self._constants = None
        self._embedded_cache = {}

    # -- scenario objects -------------------------------------------------
    def potential(self, xi0=None) -> PotentialSpec:
        block = self.sc.potential_block
        if block["family"] == "constructed":
            emb = self.sc.embedded_block
            if emb is None:
                raise ConfigError("constructed potential needs an 'embedded' block")
            key = float(emb["xi0"] if xi0 is None else xi0)
            if key not in self._embedded_cache:
                bump = PotentialSpec(
                    "bump",
                    amplitude=float(emb.get("bump_amplitude", 1.0)),
                    support_radius=float(emb.get("bump_radius", 2.0)),
                )
                self._embedded_cache[key] = construct_embedded(
                    key, bump,
                    half_width=float(emb.get("half_width", 30.0)),
                    step=float(emb.get("step", 0.005)),
                )
            return self._embedded_cache[key]
        if self._potential is None:
            kwargs = {k: v for k, v in block.items() if v is not None}
            self._potential = PotentialSpec(**kwargs)
        return self._potential

    def bounds(self):
        if self._bounds is None:
            cb = self.sc.certify_block
            strip = float(cb.get("strip", min(self.sc.omega1.strip_radius,
                                              self.sc.omega2.strip_radius) / 2.0))
            self._bounds = certify_bounds(
                self.sc.omega1, self.sc.omega2,
                cb.get("xi_box", (-2.0, 2.0)),
                strip=strip,
                resolution=float(cb.get("resolution", 0.05)),
                k_extent=float(cb.get("k_extent", 8.0)),
            )
        return self._bounds

    def kernel(self):
        if self._kernel is None:
            self._kernel = certify_decay(self.potential(), seed=self.sc.seed)
        return self._kernel

    def constants(self) -> dict:
        if self._constants is not None:
            return self._constants
        path = self.out / "constants.json"
        if path.exists():
            with open(path) as fh:
                self._constants = json.load(fh)
            return self._constants
        self._constants = self._compute_constants()
        with open(path, "w") as fh:
            json.dump(self._constants, fh, indent=2, sort_keys=True)
        return self._constants

    def _compute_constants(self) -> dict:
        sc = self.sc
        bounds = self.bounds()
        kernel = self.kernel()
        pot = self.potential()
        strip = min(sc.omega1.strip_radius, sc.omega2.strip_radius)
        params = DeformationParams.compute(0.0, strip, pot.a_prime, bounds, sc.grid.dim)
        big_r = params.admissible_R
        cb = sc.certify_block
        probe_n = int(cb.get("probe_points", min(201, sc.grid.points)))
        probe = MomentumGrid(sc.grid.cutoff, probe_n, sc.grid.dim)
        xi = float(sc.xis[0])
        h0 = assemble_H(probe, sc.omega1, sc.omega2, pot, xi,
                        tail_tol=self._tail_tol())
        eye = np.eye(probe.size)
        resolvent = np.linalg.solve(h0.matrix + 1j * eye, eye)
        n_samples = int(cb.get("theta_samples", 6))
        big_m = operator_norm_estimate(h0.matrix @ resolvent)
        for j in range(n_samples):
            ang = np.pi * j / max(1, n_samples - 1)
            th = 0.9 * big_r * np.exp(1j * ang)
            hth = assemble_H_theta(probe, sc.omega1, sc.omega2, pot, xi, th,
                                   bounds, flow_tol=sc.tolerances["flow_tol"],
                                   tail_tol=self._tail_tol())
            big_m = max(big_m, operator_norm_estimate(hth.matrix @ resolvent))
        growth_c = max(1.0, big_m) / big_r
        return {
            "c_omega": bounds.c_omega,
            "c_omega_prime": bounds.c_omega_prime,
            "raw_c_omega": bounds.raw_c_omega,
            "raw_c_omega_prime": bounds.raw_c_omega_prime,
            "growth_constant_omega1": certify_growth(sc.omega1),
            "growth_constant_omega2": certify_growth(sc.omega2),
            "C_V": kernel.decay_constant,
            "a_prime": pot.a_prime,
            "admissible_R": big_r,
            "M": big_m,
            "C": growth_c,
            "R_prime": 1.0 / (3.0 * growth_c),
            "probe_points": probe_n,
        }

    def _tail_tol(self) -> float:
        return float(self.sc.tolerances["tail_tol"])

    def assemble(self, xi: float, theta: complex):
        pot = self.potential()
        if theta == 0:
            return assemble_H(self.sc.grid, self.sc.omega1, self.sc.omega2, pot,
                              xi, tail_tol=self._tail_tol())
        return assemble_H_theta(self.sc.grid, self.sc.omega1, self.sc.omega2, pot,
                                xi, theta, self.bounds(),
                                flow_tol=self.sc.tolerances["flow_tol"],
                                tail_tol=self._tail_tol())

    def rectangle(self, xi: float, energy: float | None = None) -> Rectangle:
        rb = self.sc.rectangle_block
        if energy is None:
            energy = rb.get("energy")
            if energy is None:
                raise ConfigError("rectangle block needs an 'energy'")
        hw, ds = rb.get("half_width", "auto"), rb.get("depth_slope", "auto")
        if hw == "auto" or ds == "auto" or hw is None or ds is None:
            ts = threshold_set(self.sc.omega1, self.sc.omega2, xi)
            rep = extract_constants(self.sc.grid, self.sc.omega1, self.sc.omega2,
                                    self.potential(), float(energy), xi, ts,
                                    with_compact=False)
            auto = default_rectangle(rep)
            hw = auto.half_width if hw in ("auto", None) else float(hw)
            ds = auto.depth_slope if ds in ("auto", None) else float(ds)
        return Rectangle(center_energy=float(energy), half_width=float(hw),
                         depth_slope=float(ds))

    # -- manifest ----------------------------------------------------------
    def record_stage(self, stage: str, status: str, elapsed: float, files, extra=None):
        path = self.out / "manifest.json"
        manifest = {"schema": 1, "stages": {}}
        if path.exists():
            with open(path) as fh:
                manifest = json.load(fh)
        manifest["scenario_hash"] = self.sc.scenario_hash
        manifest["version"] = __version__
        entry = {
            "status": status,
            "elapsed_s": round(elapsed, 3),
            "files": {str(Path(f).relative_to(self.out)): _sha256(Path(f))
                      for f in files},
        }
        if extra:
            entry["extra"] = extra
        manifest.setdefault("stages", {})[stage] = entry
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


def _write_json(path: Path, payload) -> Path:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
    return path


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Rectangle):
        return {"center_energy": obj.center_energy, "half_width": obj.half_width,
                "depth_slope": obj.depth_slope}
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _fmt_theta(theta: complex) -> str:
    return f"{theta.real:g}{theta.imag:+g}j"


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def stage_certify(ctx: RunContext):
    constants = ctx.constants()
    ok = all(np.isfinite(v) and v >= 0 for k, v in constants.items()
             if isinstance(v, float))
    return ok, {"constants": constants}, [ctx.out / "constants.json"]


def stage_thresholds(ctx: RunContext):
    rows = [(float(xi), threshold_set(ctx.sc.omega1, ctx.sc.omega2, float(xi)))
            for xi in ctx.sc.xis]
    path = thresholds_to_csv(rows, ctx.out / "thresholds.csv")
    ok = all(len(ts.critical_values) > 0 or ts.n_converged == 0 for _, ts in rows)
    return ok, {"points": len(rows)}, [path]


def stage_assemble(ctx: RunContext):
    sc = ctx.sc
    files, payload, ok = [], {}, True
    xi = float(sc.xis[0])
    pot = ctx.potential()
    for theta in sc.thetas:
        op = ctx.assemble(xi, theta)
        op_conj = ctx.assemble(xi, np.conj(theta))
        adj = adjoint_identity_check(op, op_conj)
        ok &= adj["passed"]
        entry = {"adjoint": adj}
        if pot.is_even:
            conj = conjugation_check(op, op_conj, pot)
            ok &= conj["passed"]
            entry["conjugation"] = conj
        norm_chk = dilated_kernel_norm_check(op, ctx.bounds(), ctx.kernel())
        ok &= norm_chk["passed"]
        entry["kernel_norm"] = norm_chk
        d = ctx.out / f"operator_xi{xi:g}_th{_fmt_theta(theta)}"
        save_operator(op, d)
        files += [d / "matrix.bin", d / "operator_manifest.json"]
        payload[_fmt_theta(theta)] = entry
    path = _write_json(ctx.out / "assemble_report.json", payload)
    files.append(path)
    return ok, payload, files


def _one_spectrum(ctx: RunContext, xi: float, theta: complex, rect=None,
                  exclude=()):
    op = ctx.assemble(xi, theta)
    rep = classify(eigendecompose(op, ctx.sc.tolerances["eig_tol"]),
                   match_tol=ctx.sc.tolerances["match_tol"],
                   arc_tol=ctx.sc.tolerances["arc_tol"])
    if rect is not None:
        rectangle_scan(rep, rect, exclude=exclude,
                       match_tol=ctx.sc.tolerances["match_tol"])
    return op, rep


def stage_spectrum(ctx: RunContext):
    sc = ctx.sc
    constants = ctx.constants()
    rect = None
    if sc.rectangle_block.get("energy") is not None:
        rect = ctx.rectangle(float(sc.xis[0]))
    files, payload, ok = [], {}, True

    def work(args):
        xi, theta = args
        return xi, theta, _one_spectrum(ctx, xi, theta, rect)

    jobs = [(float(xi), th) for xi in sc.xis for th in sc.thetas]
    if ctx.workers > 1:
        with ThreadPoolExecutor(max_workers=ctx.workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    for xi, theta, (op, rep) in results:
        sec = sector_check(rep, constants["C"], theta)
        ok &= sec["violations"] == 0
        ok &= int(np.count_nonzero(rep.flagged)) == 0
        tag = f"xi{xi:g}_th{_fmt_theta(theta)}_N{sc.grid.points}_K{sc.grid.cutoff:g}"
        files.append(report_to_csv(rep, ctx.out / f"spectrum_{tag}.csv"))
        summary = report_summary(rep)
        summary["sector"] = {"violations": sec["violations"],
                             "worst_margin": sec["worst_margin"]}
        payload[tag] = summary
        files.append(_write_json(ctx.out / f"summary_{tag}.json", summary))
    return ok, payload, files


def stage_sweep_theta(ctx: RunContext):
    sc = ctx.sc
    xi = float(sc.xis[0])
    energy = sc.rectangle_block.get("energy")
    if energy is None and sc.embedded_block is not None:
        energy = float(sc.embedded_block["xi0"]) ** 2
    rect = ctx.rectangle(xi, energy)
    ts = threshold_set(sc.omega1, sc.omega2, xi)
    kappa = ts.distance(rect.center_energy) / 4.0
    arc_window = (rect.center_energy - 2.0 * kappa, rect.center_energy + 2.0 * kappa)
    exclude = _embedded_reference(ctx) if sc.embedded_block is not None else ()
    reports, files, ok = [], [], True
    for theta in sc.thetas:
        _, rep = _one_spectrum(ctx, xi, theta, rect, exclude)
        reports.append(rep)
        tag = f"xi{xi:g}_th{_fmt_theta(theta)}"
        files.append(report_to_csv(rep, ctx.out / f"spectrum_{tag}.csv"))
    drift = theta_independence(reports, rect,
                               match_tol=ctx.sc.tolerances["match_tol"],
                               arc_window=arc_window)
    payload = {
        "drift_table": drift,
        "rectangle": rect,
        "stray_counts": [r.rectangle_stats["stray_count"] for r in reports],
    }
    if drift["max_drift"] is not None:
        ok &= drift["max_drift"] <= ctx.sc.tolerances["drift_tol"]
    files.append(_write_json(ctx.out / "theta_drift.json", payload))
    return ok, payload, files


def _embedded_reference(ctx: RunContext, xi0=None):
    """The overlap-identified discrete embedded eigenvalue at theta = 0."""
    sc = ctx.sc
    pot = ctx.potential(xi0)
    op0 = assemble_H(sc.grid, sc.omega1, sc.omega2, pot, 0.0,
                     tail_tol=ctx._tail_tol())
    w, v = np.linalg.eigh(op0.matrix.real)
    k = sc.grid.axis
    emb = sc.embedded_block
    bump = PotentialSpec("bump", amplitude=float(emb.get("bump_amplitude", 1.0)),
                         support_radius=float(emb.get("bump_radius", 2.0)))
    x0 = float(emb["xi0"] if xi0 is None else xi0)
    uhat = fourier_transform(bump, k.astype(complex), check_strip=False).real
    uhat = uhat / (k**2 + x0)
    uhat /= np.linalg.norm(uhat)
    idx = int(np.argmax(np.abs(v.T @ uhat)))
    return [complex(w[idx])]


def stage_sweep_xi(ctx: RunContext):
    sc = ctx.sc
    tol = sc.tolerances
    files, ok = [], True
    if sc.embedded_block is not None and sc.embedded_block.get("sweep"):
        sw = sc.embedded_block["sweep"]
        xi0s = np.linspace(float(sw["start"]), float(sw["stop"]), int(sw["points"]))
        theta = sc.thetas[0]
        rb = sc.rectangle_block

        def rect_at(x0):
            hw, ds = rb.get("half_width", "auto"), rb.get("depth_slope", "auto")
            if hw in ("auto", None) or ds in ("auto", None):
                ts = threshold_set(sc.omega1, sc.omega2, 0.0)
                rep = extract_constants(sc.grid, sc.omega1, sc.omega2,
                                        ctx.potential(x0), x0**2, 0.0, ts,
                                        with_compact=False)
                auto = default_rectangle(rep)
                hw = auto.half_width if hw in ("auto", None) else float(hw)
                ds = auto.depth_slope if ds in ("auto", None) else float(ds)
            return Rectangle(x0**2, float(hw), float(ds))

        def assemble(x0):
            return assemble_H_theta(sc.grid, sc.omega1, sc.omega2,
                                    ctx.potential(x0), 0.0, theta, ctx.bounds(),
                                    flow_tol=tol["flow_tol"],
                                    tail_tol=ctx._tail_tol())

        band = band_sweep(assemble, xi0s, rect_at, match_tol=tol["match_tol"])
        target = xi0s**2
        payload = {"mode": "embedded-reconstruction", "branches": len(band.branches),
                   "gaps": band.gaps}
        if band.branches:
            main = max(band.branches, key=len)
            lam = np.array([p.lam.real for p in main])
            got = np.array([p.xi for p in main]) ** 2
            payload["max_band_error"] = float(np.max(np.abs(lam - got)))
            payload["multiplicities"] = sorted({p.multiplicity for p in main})
            fit = branch_regularity(band, band.branches.index(main), 2)
            payload["fit_residual_deg2"] = fit["residual"]
            ok &= len(main) == len(xi0s) and payload["max_band_error"] <= 1e-4
        else:
            ok = False
        del target
    else:
        theta = sc.thetas[0]
        energy = sc.rectangle_block.get("energy")
        rect = ctx.rectangle(float(sc.xis[0]), energy)

        def assemble(xi):
            return ctx.assemble(float(xi), theta)

        band = band_sweep(assemble, sc.xis, rect, match_tol=tol["match_tol"])
        payload = {"mode": "fiber-momentum", "branches": len(band.branches),
                   "gaps": band.gaps}
    files.append(band_to_csv(band, ctx.out / "bands.csv"))
    files.append(_write_json(ctx.out / "bands_report.json", payload))
    return ok, payload, files


def stage_mourre(ctx: RunContext):
    sc = ctx.sc
    xi = float(sc.xis[0])
    energy = float(sc.rectangle_block.get("energy", 1.0))
    ts = threshold_set(sc.omega1, sc.omega2, xi)
    pot = ctx.potential()
    comm = assemble_commutator(sc.grid, sc.omega1, sc.omega2, pot, xi, xi)
    rep = extract_constants(sc.grid, sc.omega1, sc.omega2, pot, energy, xi, ts,
                            commutator=comm)
    herm = float(np.max(np.abs(comm.matrix - comm.matrix.conj().T)))
    oracle_errs = {}
    for h in (1e-3, 1e-4):
        orc = commutator_fd_oracle(sc.grid, sc.omega1, sc.omega2, pot, xi, xi, h,
                                   ctx.bounds(), tol=sc.tolerances["flow_tol"])
        oracle_errs[h] = float(np.max(np.abs(orc - comm.matrix)))
    h0 = assemble_H(sc.grid, sc.omega1, sc.omega2, pot, xi,
                    tail_tol=ctx._tail_tol())
    w, v = np.linalg.eigh(h0.matrix.real)
    below = w < np.min(ts.critical_values) - 1e-9 if len(ts.critical_values) else \
        np.zeros(len(w), dtype=bool)
    virials = virial_check(comm, v[:, below].astype(complex)) if np.any(below) else []
    chk = mourre_inequality_check(comm, h0.matrix, rep)
    chk_kfree = mourre_inequality_check(comm, h0.matrix, rep, include_p0=False)
    payload = {
        "e": rep.e, "kappa": rep.kappa, "C": rep.c_upper,
        "compact_norm": rep.compact_norm,
        "shell_argmin": rep.shell_argmin,
        "hermiticity_defect": herm,
        "oracle_errors": oracle_errs,
        "oracle_first_order": bool(
            oracle_errs[1e-3] / oracle_errs[1e-4] > 5.0
            if oracle_errs[1e-4] > 0 else True),
        "virials": list(map(float, virials)),
        "inequality_margin": chk["margin"],
        "inequality_margin_k_free": chk_kfree["margin"],
    }
    ok = (rep.e > 0 and herm <= 1e-12 * comm.norm_estimate
          and payload["oracle_first_order"]
          and chk["margin"] >= -1e-8)
    files = [_write_json(ctx.out / "mourre_report.json", payload)]
    return ok, payload, files


def stage_feshbach(ctx: RunContext):
    sc = ctx.sc
    if sc.embedded_block is None:
        raise ConfigError("feshbach stage needs an embedded scenario")
    xi = 0.0
    theta = sc.thetas[0]
    x0 = float(sc.embedded_block["xi0"])
    rect = ctx.rectangle(xi, x0**2)
    exclude = _embedded_reference(ctx)
    op, rep = _one_spectrum(ctx, xi, theta, rect, exclude)
    stats = rep.rectangle_stats
    if len(stats["matched"]) != 1:
        return False, {"error": "embedded eigenvalue not isolated in rectangle",
                       "stats": {"n_inside": stats["n_inside"],
                                 "strays": stats["stray_count"]}}, []
    mu = complex(stats["matched"][0])
    pot = ctx.potential()
    h0 = assemble_H(sc.grid, sc.omega1, sc.omega2, pot, xi, tail_tol=ctx._tail_tol())
    w0, v0 = np.linalg.eigh(h0.matrix.real)
    idx = int(np.argmin(np.abs(w0 - exclude[0].real)))
    psi = v0[:, idx].astype(complex)
    p0 = np.outer(psi, psi.conj())
    reducer = FeshbachReducer(op, p0, rank=1)
    det_at_mu = abs(np.linalg.det(reducer.at(mu)))
    probes = [mu + 0.1, mu - 0.1, mu + 0.1j, mu - 0.1j]
    det_probes = [abs(np.linalg.det(reducer.at(z))) for z in probes]
    wind = winding_number(op, p0, mu, min(5e-4, rect.half_width / 2), nodes=96)
    radius = min(5e-4, rect.half_width / 2)
    proj = riesz_projection(op, mu, radius, nodes=64,
                            eigenvalues=rep.eigenvalues)
    proj_b = riesz_projection(op, mu, radius * 1.1, nodes=128,
                              eigenvalues=rep.eigenvalues)
    payload = {
        "mu": mu,
        "det_at_mu": det_at_mu,
        "det_probes": det_probes,
        "winding": wind,
        "riesz_rank": proj.rank,
        "riesz_defect": proj.idempotency_defect,
        "riesz_rank_perturbed": proj_b.rank,
        "riesz_defect_perturbed": proj_b.idempotency_defect,
    }
    ok = (det_at_mu <= 1e-8 and min(det_probes) >= 1e-3 and wind == 1
          and proj.rank == 1 and proj.idempotency_defect <= 1e-8
          and proj_b.rank == 1 and proj_b.idempotency_defect <= 1e-8)
    files = [_write_json(ctx.out / "feshbach_report.json", payload)]
    return ok, payload, files


def stage_embedded(ctx: RunContext):
    sc = ctx.sc
    if sc.embedded_block is None:
        raise ConfigError("embedded stage needs an 'embedded' block")
    x0 = float(sc.embedded_block["xi0"])
    pot = ctx.potential()
    resid = embedded_residual(pot)
    pot_dir = ctx.out / "potential"
    save_constructed(pot, pot_dir)
    ref = _embedded_reference(ctx)[0]
    rect = ctx.rectangle(0.0, x0**2)
    theta = sc.thetas[0]
    _, rep = _one_spectrum(ctx, 0.0, theta, rect, exclude=ref and [ref])
    stats = rep.rectangle_stats
    payload = {
        "xi0": x0,
        "target": x0**2,
        "construction_residual": resid,
        "theta0_eigenvalue": ref,
        "theta0_error": abs(ref.real - x0**2),
        "rectangle": rect,
        "n_inside": stats["n_inside"],
        "stray_count": stats["stray_count"],
        "matched": [complex(z) for z in stats["matched"]],
    }
    ok = (resid <= 1e-6 and abs(ref.real - x0**2) <= 1e-4
          and len(stats["matched"]) >= 1 and stats["stray_count"] == 0)
    if stats["matched"]:
        mu = complex(stats["matched"][0])
        payload["deformed_im"] = mu.imag
        ok &= abs(mu.imag) <= 1e-6
    files = [pot_dir / "potential.csv", pot_dir / "potential_manifest.json",
             _write_json(ctx.out / "embedded_report.json", payload)]
    return ok, payload, files


def stage_commlab(ctx: RunContext):
    block = ctx.sc.commlab_block
    n = int(block.get("n", 40))
    n_seeds = int(block.get("seeds", 50))
    k_max = int(block.get("k_max", 60))
    frac = float(block.get("theta_fraction", 0.9))
    rows, ok = [], True
    for seed in range(ctx.sc.seed, ctx.sc.seed + n_seeds):
        pair = random_pair(n, seed)
        lad = ladder(pair, k_max)
        theta = frac * lad.radius
        series, tail = conjugate_series(pair, theta, k_max, lad)
        oracle = exponential_conjugation(pair, theta)
        rel = float(np.linalg.norm(series - oracle, 2)
                    / max(np.linalg.norm(oracle, 2), 1e-300))
        wb = w_theta_bound(pair, 0.5 * lad.radius, lad=lad)
        sec = sector_bound_finite(pair, 0.3j * lad.radius, lad.growth_constant)
        rows.append({
            "seed": seed, "C": lad.growth_constant, "R_prime": lad.radius,
            "series_rel_error": rel, "tail_bound": tail,
            "w_bound_ok": wb["passed"], "sector_violations": sec["violations"],
        })
        ok &= rel <= 1e-10 and wb["passed"] and sec["violations"] == 0
    payload = {"n": n, "seeds": n_seeds, "k_max": k_max,
               "worst_series_error": max(r["series_rel_error"] for r in rows),
               "rows": rows}
    files = [_write_json(ctx.out / "commlab_report.json", payload)]
    return ok, payload, files


def stage_plot_data(ctx: RunContext):
    """Re-emit computed artifacts as plot-ready CSV files (no rendering)."""
    out = ctx.out / "plots"
    produced = []
    spectra = sorted(ctx.out.glob("spectrum_*.csv"))
    bands = ctx.out / "bands.csv"
    thresholds = ctx.out / "thresholds.csv"
    if not spectra and not bands.exists() and not thresholds.exists():
        raise MissingStage(
            "no spectrum/band/threshold artifacts in the run directory; "
            "run a compute stage first"
        )
    out.mkdir(exist_ok=True)
    for src in spectra:
        dst = out / f"scatter_{src.stem.removeprefix('spectrum_')}.csv"
        with open(src) as fin, open(dst, "w") as fout:
            fout.write(fin.read())
        produced.append(dst)
    if bands.exists():
        dst = out / "band_curves.csv"
        dst.write_text(bands.read_text())
        produced.append(dst)
    if thresholds.exists():
        dst = out / "threshold_overlay.csv"
        dst.write_text(thresholds.read_text())
        produced.append(dst)
    return True, {"files": [str(p) for p in produced]}, produced


_STAGES = {
    "certify": stage_certify,
    "assemble": stage_assemble,
    "spectrum": stage_spectrum,
    "sweep-theta": stage_sweep_theta,
    "sweep-xi": stage_sweep_xi,
    "thresholds": stage_thresholds,
    "mourre": stage_mourre,
    "feshbach": stage_feshbach,
    "embedded": stage_embedded,
    "commlab": stage_commlab,
    "plot-data": stage_plot_data,
}


def run(subcommand: str, scenario_path, out_dir=None, overrides=None,
        workers: int = 1) -> int:
    """Run one pipeline stage; returns the exit status (0 pass, 2 check
    failure, 1 execution error)."""
    try:
        scenario = load_scenario(scenario_path, overrides, out_dir)
        ctx = RunContext(scenario, workers=workers)
        stage = _STAGES[subcommand]
        start = time.time()
        ok, payload, files = stage(ctx)
        ctx.record_stage(subcommand, "pass" if ok else "fail",
                         time.time() - start, files)
        print(json.dumps({"stage": subcommand, "status": "pass" if ok else "fail"},
                         sort_keys=True))
        return 0 if ok else 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SpecdeformError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="specdeform",
        description="Local spectral deformation pipelines for fiber Hamiltonians",
    )
    parser.add_argument("subcommand", choices=sorted(_STAGES))
    parser.add_argument("--scenario", required=True, help="scenario JSON path")
    parser.add_argument("--out", default=None, help="run directory")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY.PATH=VALUE")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.scenario, args.out, args.override,
               args.workers)


if __name__ == "__main__":
    sys.exit(main())
