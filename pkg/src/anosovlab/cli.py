"""Command-line runner: anosovlab VERB [--config PATH] [--seed N] [--out DIR] ...

Each verb builds the map from the config, runs one pipeline, and writes its
tables (CSV or JSON), a summary JSON, the canonical config, a manifest with
SHA-256 hashes of every output and a separate timings file.  All outputs
except timings.json are byte-identical on rerun with the same config.
The scenario file schema is documented in anosovlab.config.
"""

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .errors import LabError

VERBS = ("spectrum", "growth", "entropy", "exponents", "measure", "conjugacy", "rigidity")


def _clean(obj):
    """JSON-ready copy with numpy scalars and arrays converted and nan/inf as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class Run:
    """Owns the output directory, the stage clock and the file list."""

    def __init__(self, cfg, out, fmt):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt
        self.files = []
        self.timings = {}
        self._t0 = time.perf_counter()

    def stage(self, name, fn, *a, **kw):
        t = time.perf_counter()
        result = fn(*a, **kw)
        self.timings[name] = round(time.perf_counter() - t, 6)
        return result

    def write_text(self, name, text):
        path = self.out / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.files.append(name)

    def write_json(self, name, obj):
        self.write_text(name, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def write_table(self, stem, rows):
        """rows: iterator of CSV lines with a header first."""
        rows = list(rows)
        if self.fmt == "csv":
            self.write_text(stem + ".csv", "\n".join(rows) + "\n")
        else:
            header = rows[0].split(",")
            recs = [dict(zip(header, r.split(","))) for r in rows[1:]]
            self.write_json(stem + ".json", recs)

    def finish(self, summary):
        self.write_json("summary.json", summary)
        self.write_text("config.ini", self.cfg.canonical())
        outputs = {n: hashlib.sha256((self.out / n).read_bytes()).hexdigest()
                   for n in sorted(self.files)}
        manifest = {"config_sha256": self.cfg.digest, "tool_version": __version__,
                    "stages": sorted(self.timings), "outputs": outputs,
                    "timings_file": "timings.json"}
        with open(self.out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        timings = {"wall_clock": round(time.perf_counter() - self._t0, 6), "stages": self.timings}
        with open(self.out / "timings.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(timings, indent=2, sort_keys=True) + "\n")
        return manifest


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_spectrum(run, f):
    from .torus_core import verify_cone_condition

    sp = f.spectrum
    cert = run.stage("certificate", verify_cone_condition, f)
    run.write_table("spectrum", ["tag,alpha,log_modulus,v1,v2,v3"] + [
        f"{t},{sp.alphas[i]!r},{sp.lambdas[i]!r},{sp.vectors[0, i]!r},{sp.vectors[1, i]!r},"
        f"{sp.vectors[2, i]!r}" for i, t in enumerate(("uu", "wu", "s"))])
    return {"map": f.name, "alphas": sp.alphas, "log_moduli": sp.lambdas,
            "condition": sp.condition,
            "certificate": {"gamma": cert.gamma, "expansion": cert.expansion,
                            "contraction": cert.contraction, "grid_n": cert.grid_n,
                            "factors": {k: list(v) for k, v in cert.factors.items()}}}


def _dynamic(f, tag):
    return f if f.is_expanding(tag) else f.inverse()


def cmd_growth(run, f):
    from .foliation import geometric_growth

    c = run.cfg.run
    g = _dynamic(f, c["tag"])
    est = run.stage("growth", geometric_growth, g, c["tag"], c["x"], c["r"], c["n_max"],
                    max_step=c["max_step"])
    run.write_table("growth", est.csv_rows(f.name))
    return {"map": f.name, "tag": c["tag"], "chi": est.chi, "std_error": est.std_error,
            "window": est.window, "residual": est.residual, "log_alpha": abs(
                f.spectrum.log_modulus(c["tag"]))}


def cmd_entropy(run, f):
    from .leaf_entropy import leaf_entropy
    from .foliation import grow_leaf

    c = run.cfg.run
    g = _dynamic(f, c["tag"])
    K = grow_leaf(g, c["x"], c["tag"], c["r"], c["max_step"])
    n_max = c["n_max"] or max(3, math.ceil(math.log(200.0) / abs(f.spectrum.log_modulus(c["tag"]))))
    est = run.stage("entropy", leaf_entropy, g, c["tag"], K, c["eps_schedule"], n_max)
    run.write_table("separation", est.table.csv_rows())
    return {"map": f.name, "tag": c["tag"], "h": est.h, "eps_schedule": est.schedule,
            "slopes": est.slopes, "slope_std_errors": est.std_errors, "window": est.window,
            "diagnostics": est.diagnostics}


def cmd_exponents(run, f):
    from .splitting import lyapunov_exponent

    c = run.cfg.run
    rows, summary = [
        "map_id,tag,value,std_error,n,ensemble,seed"], {"map": f.name, "exponents": {}}
    for tag in c["tags"]:
        est = run.stage(f"lyapunov_{tag}", lyapunov_exponent, f, tag, None, c["orbit_length"],
                        c["ensemble"], run.cfg.seed, run.threads)
        rows.append(est.csv_row(f.name))
        summary["exponents"][tag] = {"value": est.value, "std_error": est.std_error,
                                     "log_modulus": f.spectrum.log_modulus(tag)}
    run.write_table("exponents", rows)
    return summary


def cmd_measure(run, f):
    from .foliation import grow_leaf
    from .measures import ac_invariant_measure, invariance_defect, lebesgue_exponent_estimate

    c = run.cfg.run
    tag = c["tag"]
    g = _dynamic(f, tag)
    seg = grow_leaf(g, c["x"], tag, c["r"], c["max_step"])
    mu = run.stage("measure", ac_invariant_measure, g, tag, seg, c["N"], c["samples"],
                   run.cfg.seed)
    est = run.stage("exponent", lebesgue_exponent_estimate, g, tag, mu,
                    orbit_length=c["orbit_length"], ensemble=min(c["ensemble"], len(mu)),
                    seed=run.cfg.seed)
    defect = run.stage("invariance", invariance_defect, g, mu)
    run.write_table("measure", mu.csv_rows())
    return {"map": f.name, "tag": tag, "lambda": est.value, "std_error": est.std_error,
            "invariance_defect": defect.max, "invariance_defect_direct": float(defect.direct.max()),
            "construction": mu.construction}


def cmd_conjugacy(run, f):
    from .conjugacy import foliation_image_check, solve_conjugacy, verify_semiconjugacy

    c = run.cfg.run
    H = run.stage("solve", solve_conjugacy, f, c["grid_n"], c["tol"],
                  residual_grid=c["residual_grid"])
    check = run.stage("verify", verify_semiconjugacy, H, f, c["grid_n"])
    images = {}
    for tag in c["tags"]:
        d = run.stage(f"image_{tag}", foliation_image_check, H, f, tag, c["x"], c["r"])
        images[tag] = {"line": d.line, "plane": d.plane, "monotone": d.monotone}
    n = H.u.n
    g = np.arange(n) / n
    vals = H.u.values.reshape(-1, 3)
    idx = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    run.write_table("u_grid", ["x1,x2,x3,u1,u2,u3"] + [
        f"{a[0]!r},{a[1]!r},{a[2]!r},{b[0]!r},{b[1]!r},{b[2]!r}" for a, b in zip(idx, vals)])
    return {"map": f.name, **H.summary(), "verification_residual": check, "images": images}


def _rigidity_tag(args):
    from .conjugacy import solve_conjugacy, tag_diagnostics
    from .config import build_map

    map_section, tag, c, seed = args
    f = build_map(map_section)
    H = solve_conjugacy(f, c["grid_n"], c["tol"])
    return tag_diagnostics(f, tag, H, x0=c["x"], r=c["r"], N=c["N"], samples=c["samples"],
                           orbit_length=c["orbit_length"], ensemble=c["ensemble"],
                           leaves=c["leaves"], entropy=c["entropy"],
                           entropy_n_max=c["entropy_n_max"], base_points=c["base_points"],
                           seed=seed)


def cmd_rigidity(run, f):
    from .conjugacy import VERDICT_RULES, RigidityReport, solve_conjugacy

    c = run.cfg.run
    H = run.stage("solve", solve_conjugacy, f, c["grid_n"], c["tol"])
    jobs = [(run.cfg.map_section, tag, c, run.cfg.seed) for tag in c["tags"]]
    t = time.perf_counter()
    if run.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(run.threads, len(jobs))) as pool:
            diags = list(pool.map(_rigidity_tag, jobs))
    else:
        diags = [_rigidity_tag(j) for j in jobs]
    run.timings["diagnostics"] = round(time.perf_counter() - t, 6)
    settings = {k: c[k] for k in ("x", "r", "N", "samples", "orbit_length", "ensemble", "leaves",
                                  "entropy", "entropy_n_max", "base_points", "grid_n", "tol")}
    settings.update(seed=run.cfg.seed, verdict_rules=VERDICT_RULES)
    rep = RigidityReport(f.name, {d.tag: d for d in diags}, _clean(settings), H.summary())
    run.write_table("rigidity", rep.csv_rows())
    for d in diags:
        reg = d.regularity
        rows = ["base_point," + ",".join(f"{s!r}" for s in reg.scales)]
        rows += [f"{i}," + ",".join(f"{q!r}" for q in qs) for i, qs in enumerate(reg.quotients)]
        run.write_table(f"quotients_{d.tag}", rows)
    return rep.to_dict()


COMMANDS = {v: globals()[f"cmd_{v}"] for v in VERBS}


def build_parser():
    p = argparse.ArgumentParser(prog="anosovlab", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="INI scenario file")
    p.add_argument("--seed", type=int, help="overrides [run] seed")
    p.add_argument("--out", default="anosovlab-out", help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker processes (results do not depend on it)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        f = cfg.build_map()
        run = Run(cfg, args.out, args.format)
        run.threads = max(1, args.threads)
        summary = COMMANDS[args.verb](run, f)
        summary = {"verb": args.verb, "seed": cfg.seed, **summary}
        run.finish(summary)
    except (LabError, ConfigError) as exc:
        print(f"anosovlab {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"anosovlab {args.verb}: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(_clean(summary), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
