"""End-to-end analysis for one or two groups.

Stages run in order and each persists its artifact under the output
directory, together with a fingerprint of everything it depends on. A rerun
skips every stage whose fingerprint still matches and reloads its artifact, so
an interrupted run resumes from the last completed stage.

Layout of the output directory::

    stages.json                 stage -> fingerprint
    data/<group>.csv            dichotomized responses
    chains/<group>/chain<k>/    raw posterior chains
    aligned/<group>/chain<k>/   aligned chains (second group in the first's frame)
    positions/<group>_{items,respondents}.csv
    domain.json
    ensembles/<group>.csv       one row per NS run
    density/<group>.csv         pooled-center density grid
    clusters/<group>.json
    report.json, tables/*.csv, plots/*.svg
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .alignment import align_across_groups, align_chain
from .chain import load_chain, posterior_mean_positions, save_chain
from .clustering import ClusterSolution, DensityGrid, center_density, cluster_positions
from .config import RunConfig, load_config
from .data import (
    dichotomize,
    load_binary_responses,
    load_latent,
    load_responses,
    write_latent,
    write_responses,
)
from .diagnostics import posterior_predictive_check, rhat
from .errors import LsirmNsError
from .ns import Domain2D, UnitFrame, load_ensemble, make_domain, run_ensemble, save_ensemble
from .report import AnalysisReport, cross_group_section, group_section, positive_proportions, validate_report
from .sampler import sample_chains
from .seeding import STREAM_CHAIN, STREAM_NS, STREAM_PPC, derive_seed

log = logging.getLogger(__name__)

STAGES = ("load", "fit", "align", "domain", "ensemble", "cluster", "report", "plots")
EXIT_CODES = {name: 10 + k for k, name in enumerate(STAGES)}


class PipelineError(LsirmNsError):
    """A stage failed; ``exit_code`` is distinct per stage."""

    def __init__(self, stage, cause, out_dir):
        self.stage = stage
        self.cause = cause
        self.out_dir = Path(out_dir)
        self.exit_code = EXIT_CODES[stage]
        done = _read_manifest(self.out_dir)
        super().__init__(
            f"stage '{stage}' failed: {type(cause).__name__}: {cause}. "
            f"Completed stages {sorted(done, key=STAGES.index)} are persisted in {self.out_dir}"
        )


def _read_manifest(out_dir):
    path = Path(out_dir) / "stages.json"
    if not path.is_file():
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()[:20]


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:20]


@dataclass
class _Run:
    cfg: RunConfig
    out: Path
    resume: bool
    n_workers: int
    plots: bool

    def __post_init__(self):
        self.manifest = _read_manifest(self.out) if self.resume else {}
        self.fp = {}

    def stage(self, name, deps, compute, load):
        """Run ``compute`` unless a persisted artifact with the same fingerprint exists."""
        fp = _digest(name, deps)
        self.fp[name] = fp
        try:
            if self.manifest.get(name) == fp:
                log.info("stage %s: reusing persisted artifact", name)
                try:
                    return load()
                except (OSError, ValueError, KeyError) as exc:
                    log.warning("stage %s: persisted artifact unreadable (%s); recomputing", name, exc)
            result = compute()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, exc, self.out) from exc
        # fingerprints chain through their dependencies, so later stages rerun as well
        self.manifest[name] = fp
        self._write_manifest()
        return result

    def _write_manifest(self):
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / "stages.json", "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _group_names(cfg):
    return [g.name for g in cfg.data.groups]


def run_pipeline(config, out_dir, *, seed=None, resume=True, n_workers=1, plots=None, stop_after="plots"):
    """Run the stages for the groups listed in the config.

    ``config`` is a :class:`RunConfig` or a path to a TOML file. ``seed``
    overrides the config's master seed. Stages up to and including
    ``stop_after`` are run. Returns the :class:`AnalysisReport`, or ``None``
    when stopping before the report stage.
    """
    if stop_after not in STAGES:
        raise ValueError(f"stop_after must be one of {STAGES}")
    last = STAGES.index(stop_after)
    try:
        cfg = load_config(config) if not isinstance(config, RunConfig) else config
        if seed is not None:
            cfg = cfg.replace(seed=int(seed))
        if not 1 <= len(cfg.data.groups) <= 2:
            raise LsirmNsError("the config must list one or two data groups")
    except Exception as exc:
        raise PipelineError("load", exc, out_dir) from exc
    run = _Run(cfg, Path(out_dir), resume, n_workers, cfg.report.plots if plots is None else plots)
    out = run.out
    names = _group_names(cfg)
    master = cfg.seed
    full = cfg.to_dict()

    # load and dichotomize
    def load_compute():
        mats = {}
        for g in cfg.data.groups:
            if g.binary:
                x = load_binary_responses(g.path, g.layout, group_label=g.name)
            else:
                x = dichotomize(load_responses(g.path, g.layout), cfg.dichotomize_threshold, group_label=g.name)
            write_responses(x, out / "data" / f"{g.name}.csv")
            mats[g.name] = x
        return mats

    def load_load():
        return {n: load_binary_responses(out / "data" / f"{n}.csv", group_label=n) for n in names}

    try:
        data_fp = [(g.name, g.layout, g.binary, _file_digest(g.path)) for g in cfg.data.groups]
    except OSError as exc:
        raise PipelineError("load", exc, out) from exc
    x = run.stage("load", [data_fp, cfg.dichotomize_threshold], load_compute, load_load)
    if last == STAGES.index("load"):
        return None

    # posterior sampling
    n_chains = cfg.mcmc.n_chains

    def fit_compute():
        chains = {}
        for gi, n in enumerate(names):
            cs = sample_chains(x[n], cfg, derive_seed(master, STREAM_CHAIN, gi), n_chains, n_workers)
            for k, c in enumerate(cs):
                save_chain(c, out / "chains" / n / f"chain{k}")
            chains[n] = cs
        return chains

    def fit_load():
        return {n: [load_chain(out / "chains" / n / f"chain{k}") for k in range(n_chains)] for n in names}

    chains = run.stage("fit", [run.fp["load"], full["mcmc"], full["priors"], master], fit_compute, fit_load)
    if last == STAGES.index("fit"):
        return None

    # alignment: within chains, then the second group onto the first
    def align_compute():
        aligned = {n: [align_chain(c, cfg.mcmc.align_on) for c in chains[n]] for n in names}
        if len(names) == 2:
            ref = aligned[names[0]][0]
            aligned[names[1]] = [align_across_groups(ref, c) for c in aligned[names[1]]]
        positions = {}
        for n in names:
            for k, c in enumerate(aligned[n]):
                save_chain(c, out / "aligned" / n / f"chain{k}")
            zbar, wbar = posterior_mean_positions(aligned[n][0])
            write_latent(wbar, out / "positions" / f"{n}_items.csv")
            write_latent(zbar, out / "positions" / f"{n}_respondents.csv")
            positions[n] = (zbar, wbar)
        return aligned, positions

    def align_load():
        aligned = {n: [load_chain(out / "aligned" / n / f"chain{k}") for k in range(n_chains)] for n in names}
        positions = {
            n: (load_latent(out / "positions" / f"{n}_respondents.csv"), load_latent(out / "positions" / f"{n}_items.csv"))
            for n in names
        }
        return aligned, positions

    aligned, positions = run.stage("align", [run.fp["fit"], cfg.mcmc.align_on], align_compute, align_load)
    if last == STAGES.index("align"):
        return None

    # shared domain: union of each group's item box
    def domain_compute():
        dom = None
        for n in names:
            d = make_domain(positions[n][1], cfg.ns.margin)
            dom = d if dom is None else dom.union(d)
        with open(out / "domain.json", "w", encoding="utf-8") as fh:
            json.dump({"domain": dom.to_list()}, fh)
        return dom

    def domain_load():
        with open(out / "domain.json", encoding="utf-8") as fh:
            return Domain2D(*json.load(fh)["domain"])

    dom = run.stage("domain", [run.fp["align"], cfg.ns.margin], domain_compute, domain_load)
    if last == STAGES.index("domain"):
        return None

    ns_keys = ("n_runs", "n_iter", "burn_in", "m_min", "m_max", "alpha_bounds", "omega_bounds", "omega_bounds_frac")
    ns_keys += ("move_step_frac", "alpha_step_frac", "omega_step_frac", "p_birth", "p_death", "p_move", "run_summary")
    ns_fit_cfg = {k: full["ns"][k] for k in ns_keys + ("standardize",)}

    # the NS fit runs in unit-area coordinates; reported positions stay in map coordinates
    frame = UnitFrame.for_domain(dom, cfg.ns.standardize)
    unit_dom = frame.unit_domain(dom)

    def ensemble_compute():
        ens = {}
        for gi, n in enumerate(names):
            w_unit = frame.latent_to_unit(positions[n][1])
            e = run_ensemble(w_unit, unit_dom, cfg.ns, derive_seed(master, STREAM_NS, gi), n_workers)
            save_ensemble(e, out / "ensembles" / f"{n}.csv")
            ens[n] = e
        return ens

    def ensemble_load():
        return {n: load_ensemble(out / "ensembles" / f"{n}.csv") for n in names}

    ensembles = run.stage("ensemble", [run.fp["domain"], ns_fit_cfg, master], ensemble_compute, ensemble_load)
    if last == STAGES.index("ensemble"):
        return None

    def cluster_compute():
        sols, dens = {}, {}
        for n in names:
            d = center_density(ensembles[n], unit_dom, cfg.ns.grid_size, cfg.ns.kde_bandwidth)
            zbar, wbar = positions[n]
            sol = cluster_positions(frame.latent_to_unit(wbar), frame.latent_to_unit(zbar), ensembles[n], cfg.ns, density=d)
            sol, d = sol.transformed(frame), d.transformed(frame)
            d.to_csv(out / "density" / f"{n}.csv")
            sol.write_json(out / "clusters" / f"{n}.json")
            sols[n], dens[n] = sol, d
        return sols, dens

    def cluster_load():
        sols = {n: ClusterSolution.read_json(out / "clusters" / f"{n}.json") for n in names}
        dens = {n: DensityGrid.from_csv(out / "density" / f"{n}.csv") for n in names}
        return sols, dens

    cluster_keys = {k: full["ns"][k] for k in ("tau", "kde_bandwidth", "grid_size", "bic_penalty")}
    solutions, densities = run.stage("cluster", [run.fp["ensemble"], cluster_keys], cluster_compute, cluster_load)
    if last == STAGES.index("cluster"):
        return None

    def report_compute():
        groups = {}
        props = {}
        for gi, n in enumerate(names):
            props[n] = positive_proportions(x[n])
            rh = rhat(aligned[n])
            ppc = posterior_predictive_check(aligned[n][0], x[n], cfg.report.ppc_n_rep, derive_seed(master, STREAM_PPC, gi))
            zbar, wbar = positions[n]
            groups[n] = group_section(n, props[n], solutions[n], rh, aligned[n][0].acceptance_rates, ppc, wbar, zbar)
        cross = None
        if len(names) == 2:
            a, b = names
            cross = cross_group_section(
                a,
                b,
                props[a],
                props[b],
                solutions[a],
                solutions[b],
                cfg.report.highlight_threshold,
                cfg.report.match_flag_distance,
            )
        meta = {"seed": master, "package_version": __version__, "config": full, "domain": dom.to_list()}
        report = AnalysisReport(groups, cross, meta)
        validate_report(report)
        report.write(out / "report.json")
        _write_tables(report, out / "tables")
        return report

    def report_load():
        return AnalysisReport.read(out / "report.json")

    report = run.stage("report", [run.fp["cluster"], full["report"], master], report_compute, report_load)

    if run.plots and last == STAGES.index("plots"):
        from .plots import emit_plots

        run.stage(
            "plots",
            [run.fp["report"]],
            lambda: emit_plots(report, out / "plots", densities),
            lambda: sorted((out / "plots").glob("*.svg")),
        )
    return report


def _write_tables(report: AnalysisReport, table_dir: Path):
    """CSV copies of the main report tables."""
    table_dir.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    groups = d["groups"]
    names = list(groups)
    items = list(groups[names[0]]["positive_proportions"])
    with open(table_dir / "positive_proportions.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["item", *names])
        for i in items:
            wr.writerow([i, *[groups[n]["positive_proportions"].get(i) for n in names]])
    for n in names:
        with open(table_dir / f"membership_counts_{n}.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["cluster", "respondents"])
            for k, v in groups[n]["membership_counts"].items():
                wr.writerow([k, v])
    cross = d.get("cross_group")
    if cross:
        t = cross["center_distances"]
        for key in ("distance_a", "distance_b", "difference", "highlight"):
            with open(table_dir / f"center_{key}.csv", "w", newline="", encoding="utf-8") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["", *t["labels"]])
                for lab, row in zip(t["labels"], t[key]):
                    wr.writerow([lab, *row])

