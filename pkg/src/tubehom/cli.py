"""Command line entry point: tubehom spectrum|sweep|verify|potential|slcheck|report."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .harness import (Study, certify_potential, geometry_from_config, potential_candidates, sweep, verify)
from .io import read_csv, write_csv, write_manifest
from .operators import dump_operator
from .spectral import SolverError, band_projectors, common_eigen_check
from .theory import build_system, check_independence

log = logging.getLogger("tubehom")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

REPORT_COLUMNS = ["epsilon", "t", "l2_error", "sobolev2_error", "sobolev4_error", "rate_flag", "cell_status"]
SPECTRUM_COLUMNS = ["epsilon", "index", "eigenvalue", "residual", "band", "horizontal_part"]


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg["output"] if cfg is not None else "out")


def cmd_spectrum(cfg: RunConfig, out: Path, args) -> int:
    t0 = time.perf_counter()
    cert = certify_potential(cfg)
    study = Study(cfg, (cert.metric, cert.convention))
    projectors = band_projectors(study.grid, 4)
    rows = []
    for eps in cfg.epsilons:
        log.info("spectrum: eps = %s", eps)
        eig = study.eigensystem(eps)
        rep = common_eigen_check(eig, study.vertical, projectors)
        lam_band = np.array([projectors[b][0] for b in rep.band])
        horiz = eig.values - (lam_band - study.lam0) / eps**2
        for i in range(eig.count):
            rows.append({"epsilon": eps, "index": i, "eigenvalue": eig.values[i], "residual": eig.residuals[i],
                         "band": "mixed" if rep.mixed[i] else int(rep.band[i]), "horizontal_part": horiz[i]})
    write_csv(out / "spectrum.csv", SPECTRUM_COLUMNS, rows)
    if args.dump_operator:
        dump_operator(study.operator(cfg.epsilons[0]), args.dump_operator)
    write_manifest(out, cfg, "spectrum", _conventions(cfg, cert, study),
                   {"spectrum": time.perf_counter() - t0})
    return EXIT_OK


def _conventions(cfg, cert, study=None) -> dict:
    d = {"renorm": cfg["renorm"], "W_sign": cert.convention, "W_metric": cert.metric,
         "W_certified": cert.certified}
    if study is not None:
        d["lam0"] = study.lam0
    return d


def cmd_sweep(cfg: RunConfig, out: Path, args) -> int:
    t0 = time.perf_counter()
    rep = sweep(cfg, log=log.info)
    write_csv(out / "report.csv", REPORT_COLUMNS, rep.rows)
    if args.dump_operator:
        dump_operator(rep.study.operator(cfg.epsilons[0]), args.dump_operator)
    results = {"rates": {str(t): r for t, r in rep.rates.items()}, "suites": rep.suites,
               "refinement_change": {f"{r['epsilon']}/{r['t']}": r.get("refinement_change") for r in rep.rows}}
    conv = {k: v for k, v in rep.conventions.items() if k != "time_convention"}
    write_manifest(out, cfg, "sweep", conv, dict(rep.wall_times, command=time.perf_counter() - t0),
                   results=results)
    for t, r in rep.rates.items():
        log.info("t = %s: rates %s", t, r)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_verify(cfg: RunConfig, out: Path, args) -> int:
    t0 = time.perf_counter()
    res = verify(cfg, log=log.info)
    rows = [{"suite": k, "verdict": "PASS" if v["passed"] else "FAIL"} for k, v in res.items()]
    for r in rows:
        print(f"{r['suite']:<20s} {r['verdict']}")
    write_csv(out / "verify.csv", ["suite", "verdict"], rows)
    cert = res["potential"]
    write_manifest(out, cfg, "verify", {"renorm": cfg["renorm"], "W_sign": cert["convention"],
                                        "W_metric": cert["metric"], "W_certified": cert["certified"]},
                   {"verify": time.perf_counter() - t0}, results=res)
    return EXIT_OK if all(v["passed"] for v in res.values()) else EXIT_FAIL


def cmd_potential(cfg: RunConfig, out: Path, args) -> int:
    t0 = time.perf_counter()
    cert = certify_potential(cfg)
    geo = geometry_from_config(cfg)
    eps = cfg["potential"]["eps"]
    cands = potential_candidates(geo, eps)
    chosen = f"{cert.metric}/{cert.convention}"
    rows = []
    for name, pot in cands.items():
        metric, conv = name.split("/")
        rows.append({"metric": metric, "convention": conv, "W_L_min": float(pot.W_L.min()),
                     "W_L_max": float(pot.W_L.max()), "W_L_mean": float(pot.W_L.mean()),
                     "oracle_candidate": cert.candidates[name], "selected": name == chosen})
        print(f"{name:<18s} W_L in [{pot.W_L.min():+.8f}, {pot.W_L.max():+.8f}]"
              f"{'   <- selected' if name == chosen else ''}")
    print(f"oracle limits (n: value): {cert.oracle}")
    print(f"certified: {cert.certified} (relative shift errors {cert.shift_errors})")
    write_csv(out / "potential.csv", ["metric", "convention", "W_L_min", "W_L_max", "W_L_mean",
                                      "oracle_candidate", "selected"], rows)
    base = np.column_stack([geo.grid.s, cands[chosen].W_L])
    write_csv(out / "potential_profile.csv", ["s", "W_L"], [{"s": a, "W_L": b} for a, b in base])
    write_manifest(out, cfg, "potential", _conventions(cfg, cert), {"potential": time.perf_counter() - t0},
                   results=cert.to_dict())
    return EXIT_OK if cert.certified else EXIT_FAIL


def cmd_slcheck(cfg: RunConfig | None, out: Path, args) -> int:
    ks = [args.k] if args.k else list(range(1, 9))
    ok = True
    for k in ks:
        v = check_independence(build_system(k))
        ok &= v.passed
        print(f"k = {k}: {v.verdict}  rank {v.rank}  sigma_min {v.sigma_min:.6g}")
        with np.printoptions(precision=6, suppress=True, linewidth=160):
            print(v.matrix)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_report(cfg: RunConfig | None, out: Path, args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .harness import fit_loglog

    path = out / "report.csv"
    if not path.is_file():
        log.error("%s not found; run sweep first", path)
        return EXIT_CONFIG
    rows = [r for r in read_csv(path) if r["cell_status"] == "ok"]
    plots = out / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    for key in ("l2_error", "sobolev2_error", "sobolev4_error"):
        fig, ax = plt.subplots(figsize=(5, 4))
        for t in sorted({float(r["t"]) for r in rows}):
            sel = [r for r in rows if float(r["t"]) == t]
            e = np.array([float(r["epsilon"]) for r in sel])
            y = np.array([float(r[key]) for r in sel])
            cert = np.array([r["rate_flag"] == "certified" for r in sel])
            label = f"t = {t:g}"
            if cert.sum() >= 2:
                label += f" (slope {fit_loglog(e[cert], y[cert]):.2f})"
            ax.loglog(e, y, "o-", label=label)
        ax.set_xlabel("epsilon")
        ax.set_ylabel(key.replace("_", " "))
        ax.legend()
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        fig.savefig(plots / f"{key}.svg")
        plt.close(fig)
    print(f"plots written to {plots}")
    return EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "sweep": cmd_sweep, "verify": cmd_verify, "potential": cmd_potential,
            "slcheck": cmd_slcheck, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tubehom", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML/JSON config or a run manifest")
    p.add_argument("--out", help="output directory (default: config 'output')")
    p.add_argument("--dump-operator", metavar="PATH", help="write the first rescaled operator as Matrix Market")
    p.add_argument("--k", type=int, help="slcheck: single order k (default 1..8)")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    needs_config = args.command not in ("slcheck", "report")
    try:
        if args.config:
            cfg = parse_config(args.config)
        elif needs_config:
            raise ConfigError(["--config is required for this command"])
        else:
            cfg = None
        if args.k is not None and not 1 <= args.k <= 8:
            raise ConfigError([f"--k: {args.k}: must be between 1 and 8"])
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, cfg)
    try:
        return COMMANDS[args.command](cfg, out, args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
