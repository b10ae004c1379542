"""Command-line pipelines with reproducible JSON/CSV outputs.

Every run writes ``config.json`` (the fully resolved configuration) and a
``MANIFEST`` listing the operations exercised and the SHA-256 of every
output.  Re-running with ``--config out/config.json`` reproduces all outputs
byte for byte.

Exit codes: 1 precondition failure, 2 non-convergence, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.csgraph import dijkstra

from . import __version__
from .elliptic import (
    admissible_bound, gauss_bracket, poisson_norm_chain, solve_gauss, solve_poisson_zero_mean,
)
from .errors import CurvlabError, PreconditionError
from .fixed_point import FixedPointProblem, af_certificate, check_hypothesis, run_fixed_point
from .h4 import run_fixed_point_h4, solve_gauss_h4
from .invariants import (
    CRITERIA, af_window_table, asymptotic_genus, criterion_scan, eta_schedule, h4_degree_report, toledo,
)
from .io import IOFailure, sha256_file, tag, write_csv, write_json
from .ray import balance_ratio_values, check_slope_inequality, max_admissible_t, ray_derivatives, solve_ray
from .sections import build_balanced_family, build_section_norm, check_fgbal_bounds, cyclic_cover, local_zero_factor
from .surface import (
    GeometryConstants, conformal_edge_lengths, load_mesh, poisson_constant, spectral_gap, systole, uniformize,
)

log = logging.getLogger("curvlab")

VERBS = ("surface", "gauss", "ray", "poisson", "fixedpoint", "sections", "criterion", "h4", "reproduce-theorem-a")


@dataclass
class RunConfig:
    """Everything a run depends on; serialized verbatim to ``config.json``."""

    verb: str = "surface"
    mesh: str = "regular-octagon-genus2(6)"
    uniformize_tol: float = 1e-10
    gauss_tol: float = 1e-10
    eta: Optional[float] = None
    R: Optional[float] = None
    d: int = 1
    g: Optional[int] = None
    g_min: int = 2
    g_max: int = 10000
    schedule: str = "g^-3/4"
    target: str = "PU21"
    systole: Optional[float] = None
    spectral_gap: Optional[float] = None
    c_sob: Optional[float] = None
    A: Optional[float] = None
    C: Optional[float] = None
    data: str = "section:0"
    t: Optional[float] = None
    t_frac: float = 1.0
    k_list: List[int] = field(default_factory=lambda: [2, 3])
    zeros: List[int] = field(default_factory=lambda: [0])
    n_random: int = 50
    max_iter: int = 200
    drift_tol: float = 1e-8
    seed: int = 0
    override_hypothesis: bool = False

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise IOFailure("cannot read config %s: %s" % (path, exc)) from exc
        known = {f.name for f in fields(cls)}
        bad = sorted(set(raw) - known)
        if bad:
            raise PreconditionError("unknown config keys: %s" % ", ".join(bad))
        return cls(**raw)

    def eta_or(self, default):
        return default if self.eta is None else float(self.eta)

    def R_or(self, default):
        return default if self.R is None else float(self.R)


# construction helpers


def _surface(cfg: RunConfig):
    try:
        mesh = load_mesh(cfg.mesh)
    except OSError as exc:
        raise IOFailure("cannot read mesh %s: %s" % (cfg.mesh, exc)) from exc
    return uniformize(mesh, tol=cfg.uniformize_tol, systole=cfg.systole)


def _constants(cfg: RunConfig, surface) -> GeometryConstants:
    return poisson_constant(surface, c_sob=cfg.c_sob, systole=cfg.systole, spectral_gap_value=cfg.spectral_gap)


def _constant_provenance(cfg: RunConfig, prefix="constants"):
    out = {}
    if cfg.systole is not None:
        out[prefix + ".systole"] = "overridden"
    if cfg.spectral_gap is not None:
        out[prefix + ".spectral_gap"] = "overridden"
    if cfg.c_sob is not None:
        out[prefix + ".c_sob"] = "overridden"
    if cfg.systole is not None or cfg.spectral_gap is not None or cfg.c_sob is not None:
        out[prefix + ".C"] = "overridden"
    return out


def _distance_from(surface, vertex):
    A = surface.mesh.vertex_adjacency(conformal_edge_lengths(surface))
    return dijkstra(A, directed=False, indices=int(vertex))


def make_data(surface, spec: str, seed: int = 0) -> np.ndarray:
    """Nonnegative vertex data from a spec string.

    ``constant:c``, ``section:v1,v2,...`` (sup-normalized norm with simple
    zeros), ``bump`` (``1 + cos(dist to vertex 0)/2``) or ``random``
    (uniform on [1/2, 1] from ``seed``).
    """
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        c = float(arg)
        if c < 0:
            raise PreconditionError("constant data must be nonnegative")
        return np.full(surface.n_vertices, c)
    if kind == "section":
        zs = [int(v) for v in arg.split(",")] if arg else [0]
        return build_section_norm(surface, zs, seed=seed).f.values
    if kind == "bump":
        return 1.0 + 0.5 * np.cos(_distance_from(surface, 0))
    if kind == "random":
        return np.random.default_rng(seed).uniform(0.5, 1.0, surface.n_vertices)
    raise PreconditionError("unknown data spec %r" % spec)


def constant_gauss_root(g, eta, a=2.0):
    """Root of ``a e^{2u} - 1 + e^{-4u} g = 0`` in the admissible bracket (scalar oracle)."""
    lo, hi = gauss_bracket(eta) if a == 2.0 else (0.5 * math.log(4 / (4 + eta)), 0.0)
    h = lambda u: a * math.exp(2 * u) - 1 + math.exp(-4 * u) * g
    if g == 0:
        return -0.5 * math.log(a)
    return brentq(h, lo - 1e-9, hi + 1e-12, xtol=1e-15, rtol=4 * np.finfo(float).eps)


# verbs


def cmd_surface(cfg, out):
    s = _surface(cfg)
    K = _constants(cfg, s)
    rep = {
        "n_vertices": s.n_vertices, "n_faces": s.mesh.n_faces, "n_edges": s.mesh.n_edges,
        "genus": s.genus, "euler_characteristic": s.euler_characteristic,
        "volume": s.volume, "volume_gauss_bonnet": -2 * math.pi * s.euler_characteristic,
        "curvature_residual": s.curvature_residual, "uniformize_iterations": s.iterations,
        "negative_weights": int(s.negative_weights), "constants": K.as_dict(),
    }
    special = {"volume_gauss_bonnet": "exact", "genus": "exact", "euler_characteristic": "exact",
               "n_vertices": "exact", "n_faces": "exact", "n_edges": "exact"}
    special.update(_constant_provenance(cfg))
    write_json(out / "geometry.json", tag(rep, special=special))
    write_csv(out / "fields.csv", {"vertex": np.arange(s.n_vertices), "phi": s.phi, "mass": s.mass,
                                   "curvature": s.curvature()})
    return ["uniformization", "cotangent-laplacian", "spectral-gap", "sobolev-surrogate", "systole-estimate",
            "poisson-constant"]


def _gauss_t(cfg, fv, eta):
    if cfg.t is not None:
        return float(cfg.t)
    tm = max_admissible_t(fv, eta)
    return cfg.t_frac * tm if math.isfinite(tm) else 1.0


def cmd_gauss(cfg, out):
    s = _surface(cfg)
    eta = cfg.eta_or(0.5)
    fv = make_data(s, cfg.data, cfg.seed)
    t = _gauss_t(cfg, fv, eta)
    sol = solve_gauss(s, fv, eta, tol=cfg.gauss_tol, t=t)
    rep = {"eta": eta, "t": t, "data": cfg.data, "solution": sol.summary(), "admissible_bound": admissible_bound(eta),
           "bracket": list(gauss_bracket(eta))}
    special = {"admissible_bound": "exact", "bracket": "exact", "eta": "input", "t": "input"}
    if np.ptp(fv) == 0:
        ustar = constant_gauss_root(t * fv[0], eta)
        rep["analytic"] = {"u_star": ustar, "sup_error": float(np.max(np.abs(sol.u.values - ustar)))}
        special["analytic.u_star"] = "exact"
    write_json(out / "gauss.json", tag(rep, special=special))
    write_csv(out / "fields.csv", {"vertex": np.arange(s.n_vertices), "f": fv, "u": sol.u.values})
    return ["gauss-equation-solve", "sub-supersolution-bracket", "laplacian-bound"]


def cmd_ray(cfg, out):
    s = _surface(cfg)
    eta = cfg.eta_or(0.5)
    fv = make_data(s, cfg.data, cfg.seed)
    prof = ray_derivatives(s, solve_ray(s, fv, eta, tol=min(cfg.gauss_tol, 1e-12)))
    st = prof.structure()
    slope = check_slope_inequality(prof)
    rep = {"eta": eta, "data": cfg.data, "t_max": float(prof.t[-1]), "structure": st,
           "slope": {k: v for k, v in slope.items() if np.ndim(v) == 0}}
    write_json(out / "ray.json", tag(rep, special={"eta": "input", "structure.F0_exact": "exact"}))
    cols = {"t": prof.t, "F": prof.F, "Fdot": prof.Fdot, "Fddot": prof.Fddot, "residual": prof.residuals,
            "gap": slope["gap"]}
    write_csv(out / "ray.csv", cols)
    return ["gauss-ray-continuation", "volume-ray-monotonicity", "volume-ray-concavity", "slope-inequality"]


def cmd_poisson(cfg, out):
    s = _surface(cfg)
    K = _constants(cfg, s)
    gap = spectral_gap(s)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    first = None
    for i in range(cfg.n_random):
        r = rng.standard_normal(s.n_vertices)
        r -= s.mean(r)
        sol = solve_poisson_zero_mean(s, r, constants=K)
        ch = poisson_norm_chain(s, sol, gap.value)
        if first is None:
            first = sol
        rows.append({"sample": i, "mean": sol.norms["mean"], "residual": sol.residual_sup,
                     "stated_ok": ch["stated_ok"], "sharp_ok": ch["sharp_ok"],
                     "first_link_ratio": ch["first_link_ratio"]})
    phi1 = gap.eigenvectors[:, 0]
    esol = solve_poisson_zero_mean(s, -gap.value * phi1, constants=K)
    ech = poisson_norm_chain(s, esol, gap.value)
    rep = {
        "constants": K.as_dict(), "spectral_gap": gap.value,
        "random": {"n": cfg.n_random, "max_abs_mean": max(abs(r["mean"]) for r in rows),
                   "max_residual": max(r["residual"] for r in rows),
                   "all_stated_ok": all(r["stated_ok"] for r in rows), "all_sharp_ok": all(r["sharp_ok"] for r in rows)},
        "eigen": {"error_vs_phi1": float(np.max(np.abs(esol.v.values - phi1))),
                  "first_link_ratio": ech["first_link_ratio"], "inverse_gap": 1 / gap.value,
                  "stated_ok": ech["stated_ok"], "sharp_ok": ech["sharp_ok"]},
    }
    write_json(out / "poisson.json", tag(rep, special=_constant_provenance(cfg)))
    write_csv(out / "samples.csv", {k: [r[k] for r in rows] for k in rows[0]})
    write_csv(out / "fields.csv", {"vertex": np.arange(s.n_vertices), "rhs": first.rhs.values, "v": first.v.values})
    return ["poisson-zero-mean-solve", "poisson-norm-chain", "spectral-gap"]


def _fixed_point(cfg, s, fv, eta, R, A, K):
    prob = FixedPointProblem(s, fv, eta, R, A, K)
    cert = run_fixed_point(prob, max_iter=cfg.max_iter, drift_tol=cfg.drift_tol, override=cfg.override_hypothesis)
    af = af_certificate(s, cert.u, cert.v, cert.t, fv, eta, R)
    return cert, af


def cmd_fixedpoint(cfg, out):
    s = _surface(cfg)
    eta = cfg.eta_or(0.5)
    R = cfg.R_or(0.005)
    fv = make_data(s, cfg.data, cfg.seed)
    A = balance_ratio_values(s, fv) if cfg.A is None else float(cfg.A)
    K = _constants(cfg, s)
    cert, af = _fixed_point(cfg, s, fv, eta, R, A, K)
    rep = {"certificate": cert.summary(), "af_certificate": af, "constants": K.as_dict(), "A": A,
           "history": list(cert.history), "data": cfg.data}
    special = _constant_provenance(cfg)
    if cert.override_used:
        special["certificate"] = "overridden"
    write_json(out / "certificate.json", tag(rep, special=special))
    write_csv(out / "fields.csv", {"vertex": np.arange(s.n_vertices), "f": fv, "fhat": cert.fhat.values,
                                   "u": cert.u.values, "v": cert.v.values})
    return ["fixed-point-hypothesis", "volume-prescribed-gauss-solve", "zero-mean-poisson-solve",
            "conformal-weighting", "picard-iteration", "almost-fuchsian-certificate"]


def cmd_sections(cfg, out):
    s = _surface(cfg)
    spec = build_section_norm(s, cfg.zeros, seed=cfg.seed)
    delta = systole(s, override=cfg.systole).value
    bounds = [check_fgbal_bounds(spec, r, delta) for r in np.array([0.1, 0.2, 0.3, 0.4]) * delta]
    fam = build_balanced_family(spec, None, cfg.k_list, cfg.d)
    members = [{k: v for k, v in m.items() if not k.startswith("_")} for m in fam["members"]]
    rep = {"section": spec.summary(), "two_zone_bounds": bounds,
           "family": {k: v for k, v in fam.items() if k != "members"}, "members": members}
    write_json(out / "sections.json", tag(rep, special={"members.genus": "exact", "members.zero_count": "exact",
                                                        "members.degree_formula": "exact", "section.degree": "exact"}))
    write_csv(out / "fields.csv", {"vertex": np.arange(s.n_vertices), "psi": spec.psi.values, "f": spec.f.values})
    write_csv(out / "family.csv", {k: [m[k] for m in members] for k in
                                   ("k", "genus", "n_vertices", "systole", "spectral_gap", "bal", "bal_lift")})
    return ["section-norm", "balance-ratio", "two-zone-bounds", "cyclic-cover", "balanced-family"]


def cmd_criterion(cfg, out):
    C = 1.0 if cfg.C is None else float(cfg.C)
    A = 1.0 if cfg.A is None else float(cfg.A)
    sc = criterion_scan(cfg.target, A, C, cfg.d, cfg.schedule, cfg.g_min, cfg.g_max)
    asym = asymptotic_genus(cfg.target, A, C, cfg.d, cfg.schedule)
    g_rows = range(max(2, cfg.g_min), min(cfg.g_max, 50) + 1)
    tol_rows = [toledo(g, cfg.d).as_dict() for g in g_rows]
    rep = {"scan": sc.summary(), "asymptotic": asym, "display": CRITERIA[sc.target].display,
           "toledo": tol_rows, "window": af_window_table(range(2, 11))}
    write_json(out / "criterion.json", tag(rep, special={"toledo": "exact", "window": "exact", "scan.A": "input",
                                                         "scan.C": "input", "scan.d": "input"}))
    rows = list(sc.rows())
    write_csv(out / "criterion.csv", {k: [r[k] for r in rows] for k in rows[0]})
    return ["toledo-invariant", "liftability", "af-degree-window", "eta-schedule", "criterion-scan"]


def cmd_h4(cfg, out):
    s = _surface(cfg)
    eta = cfg.eta_or(0.4)
    R = cfg.R_or(0.003)
    fv = make_data(s, cfg.data, cfg.seed)
    a = solve_gauss_h4(s, fv, eta, R, exploratory=cfg.override_hypothesis)
    b = solve_gauss_h4(s, fv, eta, R, path="direct", exploratory=cfg.override_hypothesis)
    K = _constants(cfg, s)
    A = balance_ratio_values(s, fv) if cfg.A is None else float(cfg.A)
    cert = run_fixed_point_h4(s, fv, eta, R, A=A, constants=K, override=cfg.override_hypothesis,
                              max_iter=cfg.max_iter, drift_tol=cfg.drift_tol)
    g = cfg.g or s.genus
    rep = {"rescaled": a.summary(), "direct": b.summary(), "two_path_sup_difference": float(np.max(np.abs(a.u - b.u))),
           "certificate": cert.summary(), "constants": K.as_dict(), "A": A,
           "degree": h4_degree_report(g, max(cfg.d, 1)),
           "criterion": criterion_scan("H4", A, K.C, max(cfg.d, 1), cfg.schedule, 2, cfg.g_max).summary(),
           "display": CRITERIA["H4"].display}
    special = _constant_provenance(cfg)
    special["degree"] = "exact"
    if cert.override_used:
        special["certificate"] = "overridden"
    write_json(out / "h4.json", tag(rep, special=special))
    write_csv(out / "fields.csv", {"vertex": np.arange(s.n_vertices), "f": fv, "u": cert.u.values,
                                   "w": cert.w.values, "v": cert.v.values})
    return ["h4-rescaled-gauss-solve", "h4-direct-gauss-solve", "h4-fixed-point", "h4-degree-bookkeeping",
            "h4-criterion"]


def cmd_reproduce_theorem_a(cfg, out):
    """Section norm -> covers -> measured constants -> criterion -> fixed point -> certificate."""
    base = _surface(cfg)
    spec = build_section_norm(base, cfg.zeros, seed=cfg.seed)
    fam = build_balanced_family(spec, None, cfg.k_list, cfg.d)
    covers = []
    for m in fam["members"]:
        cov = m["_cover"]
        s = cov.surface
        g = s.genus
        K = _constants(cfg, s)
        eta = cfg.eta_or(eta_schedule(cfg.schedule, g))
        R = CRITERIA["PU21"].R(g, cfg.d)
        fv = m["_f"]
        A = float(m["bal"]) if cfg.A is None else float(cfg.A)
        scan = criterion_scan("PU21", A, K.C, cfg.d, cfg.schedule, 2, max(cfg.g_max, g))
        prob = FixedPointProblem(s, fv, eta, R, A, K)
        hyp = check_hypothesis(prob)
        entry = {"k": cov.k, "genus": g, "eta": eta, "R": R, "constants": K.as_dict(), "bal": m["bal"],
                 "hypothesis": hyp.as_dict(), "criterion": scan.summary(), "toledo": toledo(g, cfg.d).as_dict()}
        try:
            cert = run_fixed_point(prob, max_iter=cfg.max_iter, drift_tol=cfg.drift_tol,
                                   override=cfg.override_hypothesis or not hyp.ok)
            af = af_certificate(s, cert.u, cert.v, cert.t, fv, eta, R)
            entry.update({"certificate": cert.summary(), "af_certificate": af,
                          "HYPOTHESIS_OVERRIDDEN": cert.override_used})
        except CurvlabError as exc:
            entry.update({"certificate": None, "failure": str(exc), "HYPOTHESIS_OVERRIDDEN": not hyp.ok})
        covers.append(entry)
    rep = {
        "base": {"genus": base.genus, "n_vertices": base.n_vertices, "section": spec.summary()},
        "d": cfg.d, "covers": covers,
        "conclusion": [{"genus": c["genus"], "eta_bound": c["eta"],
                        "af_bound": (c["certificate"] or {}).get("af_bound"),
                        "af_pass": (c.get("af_certificate") or {}).get("pass", False),
                        "tol": c["toledo"]["tol"], "liftable": c["toledo"]["liftable"],
                        "HYPOTHESIS_OVERRIDDEN": c["HYPOTHESIS_OVERRIDDEN"]} for c in covers],
    }
    write_json(out / "report.json", tag(rep, special={"covers.toledo": "exact", "d": "input"}))
    return ["section-norm", "cyclic-cover", "balanced-family", "measured-constants", "criterion-scan",
            "fixed-point", "almost-fuchsian-certificate", "toledo-invariant"]


COMMANDS = {
    "surface": cmd_surface, "gauss": cmd_gauss, "ray": cmd_ray, "poisson": cmd_poisson,
    "fixedpoint": cmd_fixedpoint, "sections": cmd_sections, "criterion": cmd_criterion, "h4": cmd_h4,
    "reproduce-theorem-a": cmd_reproduce_theorem_a,
}


def _write_manifest(out: Path, cfg: RunConfig, ops):
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "MANIFEST")
    lines = ["curvlab %s" % __version__, "verb %s" % cfg.verb, "operations"]
    lines += ["  %s" % o for o in ops]
    lines.append("outputs")
    lines += ["  %s  %s" % (sha256_file(out / f), f) for f in files]
    (out / "MANIFEST").write_text("\n".join(lines) + "\n", encoding="utf-8")


def run(cfg: RunConfig, out) -> Path:
    """Execute one verb into directory ``out`` and return it."""
    if cfg.verb not in COMMANDS:
        raise PreconditionError("unknown verb %r" % cfg.verb)
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure("cannot create %s: %s" % (out, exc)) from exc
    write_json(out / "config.json", asdict(cfg))
    ops = COMMANDS[cfg.verb](cfg, out)
    _write_manifest(out, cfg, ops)
    return out


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def build_parser():
    p = argparse.ArgumentParser(prog="curvlab", description="Gauss-equation and fixed-point experiments on "
                                "hyperbolic surface meshes.")
    p.add_argument("--version", action="version", version="curvlab " + __version__)
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        q = sub.add_parser(verb)
        q.add_argument("--config", help="JSON config; explicit flags override it")
        q.add_argument("--out", default=None, help="output directory (default curvlab_out/VERB)")
        q.add_argument("--seed", type=int)
        q.add_argument("--override-hypothesis", action="store_true", default=None,
                       help="run fixed-point solves even when the hypothesis fails (stamped in outputs)")
        q.add_argument("--mesh", help="mesh file or generator such as 'regular-octagon-genus2(6)'")
        q.add_argument("--uniformize-tol", type=float)
        q.add_argument("--gauss-tol", type=float)
        q.add_argument("--eta", type=float)
        q.add_argument("--R", type=float)
        q.add_argument("--d", type=int)
        q.add_argument("--g", type=int)
        q.add_argument("--g-min", type=int)
        q.add_argument("--g-max", type=int)
        q.add_argument("--schedule")
        q.add_argument("--target", choices=sorted(CRITERIA))
        q.add_argument("--systole", type=float)
        q.add_argument("--spectral-gap", type=float)
        q.add_argument("--c-sob", type=float)
        q.add_argument("--A", type=float)
        q.add_argument("--C", type=float)
        q.add_argument("--data", help="constant:c | section:v,... | bump | random")
        q.add_argument("--t", type=float)
        q.add_argument("--t-frac", type=float)
        q.add_argument("--k-list", type=_int_list)
        q.add_argument("--zeros", type=_int_list)
        q.add_argument("--n-random", type=int)
        q.add_argument("--max-iter", type=int)
        q.add_argument("--drift-tol", type=float)
        q.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(ns) -> RunConfig:
    cfg = RunConfig.load(ns.config) if ns.config else RunConfig()
    cfg.verb = ns.verb
    for f in fields(RunConfig):
        if f.name == "verb":
            continue
        val = getattr(ns, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
        out = run(cfg, ns.out or Path("curvlab_out") / cfg.verb)
    except CurvlabError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
