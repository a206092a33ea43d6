import csv
import hashlib
import json
import math
import os
import shutil
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate, special

import dyadic_sim.logger as logger
from dyadic_sim.common import (
    LOG2E,
    Estimate,
    InconclusiveError,
    McParams,
    NondeterminismError,
)
from dyadic_sim.config import EXPERIMENTS_DICT, ExperimentConfig, get_config_foldername
from dyadic_sim.dyadic import coding_frame, decompose, table_entropy
from dyadic_sim.entropy import (
    AxisSegment,
    Box,
    FullCube,
    Parallelotope,
    as_density,
    differential_entropy,
    dual_total_correlation,
    erosion_entropy,
    lemma3_gap,
    lemma4_gap,
    logconcave_trunc_gap_bound,
)
from dyadic_sim.logger import to_builtin
from dyadic_sim.regions import Ellipsoid, Region, load_region, transform
from dyadic_sim.scaling import (
    bound_thm2,
    bounds_report,
    find_scaling,
    lemma1_check,
    prop2_check,
    truncated_marginals,
)
from dyadic_sim.simulate import ExactSimulator, agent_count, run_truncated
from dyadic_sim.stats import (
    GridHistogram,
    chi_square_density,
    chi_square_uniform,
    compute_session_metrics,
    conditional_independence_check,
    empirical_tv,
    tail_exponent,
)

# files that legitimately differ between two runs of the same manifest
UNHASHED = {"log.jsonl", "wandb"}


@dataclass
class ExperimentSpec:
    # writes artifacts into the save path and returns summary metrics
    run: Callable[[ExperimentConfig, str], dict]
    description: str = ""


_REGISTRY: dict[str, ExperimentSpec] = {}


def register_experiment(name: str, spec: ExperimentSpec):
    _REGISTRY[name] = spec


def _mc(config: ExperimentConfig) -> McParams:
    return McParams(sample_count=config.mc_samples, seed=config.seeds[0])


def _write_csv(path: str, header: list, rows: list):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _write_json(path: str, data):
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=to_builtin)


def _is_hypograph(region: Region) -> bool:
    return agent_count(region) < region.n


def _output_target(region: Region):
    """Law the agents' outputs should follow: the density for hypographs, else the region."""
    return as_density(region) if _is_hypograph(region) else region


# ##############################################################################
# # fig4-sweep
# ##############################################################################


def sweep_ellipse(t: float) -> Ellipsoid:
    """Ellipse with K = (1 - t^2)^-1 [[1, -t], [-t, 1]]."""
    assert 0 <= t < 1
    K = np.array([[1.0, -t], [-t, 1.0]]) / (1 - t * t)
    return Ellipsoid(K, name=f"ellipse-t{t:g}")


def run_fig4_sweep(config: ExperimentConfig, save_path: str) -> dict:
    mc = _mc(config)
    rows = []
    for t in config.t_values:
        region = sweep_ellipse(t)
        i_d = dual_total_correlation(region, mc)
        marginals = truncated_marginals(region, mc)
        scaling = find_scaling(region, mc, marginals)
        coded, _ = coding_frame(scaling.apply(region))
        table = decompose(coded, config.depth, min_mass=config.min_mass, workers=config.workers)
        h_lower, h_upper = table_entropy(table)
        projection, truncated, _ = bound_thm2(region, mc, marginals)
        bound = projection if projection is not None else truncated.value
        print(f"t={t:g}: I={i_d.value:.4f} H=[{h_lower:.4f}, {h_upper:.4f}] bound={bound:.4f}")
        logger.logkvs({"t": t, "I": i_d.value, "H_lower": h_lower, "H_upper": h_upper, "thm2_bound": bound})
        logger.dumpkvs()
        rows.append([t, i_d.value, h_lower, h_upper, bound])
    _write_csv(os.path.join(save_path, "fig4.csv"), ["t", "I", "H_lower", "H_upper", "thm2_bound"], rows)
    arr = np.array(rows)
    return {
        "between": bool(np.all((arr[:, 1] <= arr[:, 3]) & (arr[:, 3] <= arr[:, 4]))),
        "nondecreasing": {
            name: bool(np.all(np.diff(arr[:, col]) >= 0)) for name, col in [("I", 1), ("H_upper", 3), ("thm2_bound", 4)]
        },
    }


# ##############################################################################
# # ellipse-example1 / gauss-example2
# ##############################################################################


def length_in_range(path: str, mean_bits: float, h_bracket: tuple) -> bool:
    """Prefix codes land in [H, H + 1), the arithmetic descent at most H + 2."""
    h_lower, h_upper = h_bracket
    if path == "prefix":
        return bool(h_lower <= mean_bits < h_upper + 1)
    return bool(mean_bits <= h_upper + 2)


def _session_checks(region: Region, table, config: ExperimentConfig, save_path: str) -> dict:
    h_lower, h_upper = table_entropy(table)
    seed = config.seeds[0]
    target = _output_target(region)
    results = {}
    for path in ("prefix", "arithmetic"):
        if path == "prefix" and len(table) == 0:
            continue
        simulator = ExactSimulator(region, path, table=table if path == "prefix" else None)
        batch = simulator.run(config.sessions, seed)
        metrics = compute_session_metrics(batch.cubes(), batch.codeword_lengths)
        if isinstance(target, Region):
            fit = chi_square_uniform(batch.outputs, target, bins=32 if region.n == 2 else 8)
            lo, hi = target.bounding_box
        else:
            fit = chi_square_density(batch.outputs, target, bins=32 if target.n <= 2 else 8)
            lo, hi = target.support_box()
        metrics["chi2_p_value"] = fit.p_value
        metrics["resample_rate"] = float(batch.resamples.sum()) / max(len(batch), 1)
        metrics["length_in_range"] = length_in_range(path, metrics["mean_bits"], (h_lower, h_upper))
        try:
            independence = conditional_independence_check(batch.cubes(), batch.outputs).to_dict()
        except InconclusiveError as e:
            independence = {"passed": None, "reason": str(e)}
        metrics["independence"] = independence
        GridHistogram.from_samples(batch.outputs, lo, hi, 32 if len(lo) <= 2 else 8).to_csv(
            os.path.join(save_path, f"outputs-{path}.csv")
        )
        logger.logkvs({f"{path}/{k}": v for k, v in metrics.items() if not isinstance(v, dict)})
        results[path] = metrics
    return results


def run_decomposition_report(config: ExperimentConfig, save_path: str) -> dict:
    """Decomposition table, pmf tail, bounds and end-to-end sessions per region."""
    mc = _mc(config)
    summary = {}
    for name in config.regions:
        region = load_region(name)
        out = os.path.join(save_path, region.name)
        os.makedirs(out, exist_ok=True)
        print(f"Decomposing {region.name} to level {config.depth}")
        coded, _ = coding_frame(region)
        table = decompose(coded, config.depth, min_mass=config.min_mass, workers=config.workers)
        table.to_csv(os.path.join(out, "table.csv"))
        probabilities = table.sorted_probabilities()
        _write_csv(
            os.path.join(out, "pmf.csv"),
            ["rank", "probability"],
            [[i + 1, float(p)] for i, p in enumerate(probabilities)],
        )
        try:
            alpha = tail_exponent(probabilities)
        except ValueError as e:
            print(f"Tail fit skipped for {region.name}: {e}")
            alpha = None
        report = bounds_report(region, config.depth, mc, config.min_mass, config.workers, table=table)
        sessions = _session_checks(region, table, config, out) if config.sessions else {}
        result = {
            "entries": len(table),
            "residual_mass": table.residual_mass,
            "flagged": table.flagged,
            "tail_exponent": alpha,
            "bounds": report.to_dict(),
            "sessions": sessions,
        }
        _write_json(os.path.join(out, "report.json"), result)
        logger.logkv("region", region.name)
        logger.logkvs({"H_lower": report.h_measured[0], "H_upper": report.h_measured[1], "tail_exponent": alpha})
        logger.logestimates({"I_D": report.i_d, "thm2_truncated": report.thm2_truncated})
        logger.dumpkvs()
        summary[region.name] = {
            "tail_exponent": alpha,
            "violations": report.check_ordering(),
        }
    return summary


# ##############################################################################
# # thm4-truncation
# ##############################################################################


def run_truncation(config: ExperimentConfig, save_path: str) -> dict:
    rows = []
    seed = config.seeds[0]
    for name in config.regions:
        region = load_region(name)
        coded, _ = coding_frame(region)
        table = decompose(coded, config.depth, min_mass=config.min_mass, workers=config.workers)
        for eps in config.eps:
            plan, batch = run_truncated(region, eps, seed, config.sessions, config.depth, table=table)
            tv = empirical_tv(batch.outputs, _output_target(region), bins=16, seed=seed)
            print(f"{region.name} eps={eps:g}: l={plan.l} N={plan.N} |W|={plan.cardinality} TV={tv.value:.4f}")
            logger.logkvs({"region": region.name, **plan.to_dict(), "tv": tv.value, "tv_radius": tv.radius})
            logger.dumpkvs()
            rows.append(
                [
                    region.name,
                    eps,
                    plan.l,
                    plan.l_effective,
                    plan.N,
                    plan.cardinality,
                    plan.fits,
                    plan.moved_mass,
                    tv.value,
                    tv.radius,
                ]
            )
    _write_csv(
        os.path.join(save_path, "truncation.csv"),
        ["region", "eps", "l", "l_effective", "N", "cardinality", "fits", "moved_mass", "tv", "tv_radius"],
        rows,
    )
    return {
        "all_fit": all(r[6] for r in rows),
        "tv_within_eps": all(r[8] <= r[1] + r[9] for r in rows),
    }


# ##############################################################################
# # props-suite
# ##############################################################################

DEFAULT_PROPERTY_FIXTURES = ["unit-square", "l-shape", "ellipse-example1", "unit-disk", "separated-squares"]


class _PropertyTable:
    def __init__(self):
        self.rows = []

    def check(self, prop: str, fixture: str, lhs: float, rhs: float, radius: float, passed: bool):
        print(f"{'PASS' if passed else 'FAIL'} {prop} on {fixture}: {lhs:.4f} vs {rhs:.4f} (+-{radius:.4f})")
        self.rows.append([prop, fixture, float(lhs), float(rhs), float(radius), bool(passed)])

    def close(self, prop: str, fixture: str, a: Estimate, b: Union[Estimate, float]):
        b = b if isinstance(b, Estimate) else Estimate(float(b))
        radius = a.radius + b.radius
        self.check(prop, fixture, a.value, b.value, radius, abs(a.value - b.value) <= radius + 1e-9)

    def at_most(self, prop: str, fixture: str, a: Estimate, b: Union[Estimate, float]):
        b = b if isinstance(b, Estimate) else Estimate(float(b))
        radius = a.radius + b.radius
        self.check(prop, fixture, a.value, b.value, radius, a.value <= b.value + radius)


def _t_for(region: Region) -> int:
    return int(math.floor(math.log2(region.volume) / region.n + 1)) + 1


def run_properties(config: ExperimentConfig, save_path: str) -> dict:
    mc = _mc(config)
    seed = config.seeds[0]
    table = _PropertyTable()
    fixtures = config.regions or DEFAULT_PROPERTY_FIXTURES
    cube_h = {}

    # monotonicity in the structuring element
    for name in fixtures:
        region = load_region(name)
        cube_h[name] = erosion_entropy(region, FullCube(), mc)
        table.at_most("monotonicity", name, erosion_entropy(region, AxisSegment(0), mc), cube_h[name])

    # scaling of region and element
    alpha, beta = 2.0, 0.5
    for name in fixtures[:2]:
        region = load_region(name)
        scaled = erosion_entropy(transform(region, scale=alpha), Box((beta,) * region.n), mc)
        diff = Estimate(scaled.value - cube_h[name].value, scaled.radius + cube_h[name].radius)
        table.close("scaling", name, diff, math.log2(beta / alpha))
    table.close("interval anchor", "uniform-interval", erosion_entropy(load_region("uniform-interval"), None, mc), LOG2E)

    # linear transformation
    ellipse = load_region("ellipse-example1")
    M = np.eye(2) + 0.5 * np.random.default_rng(seed).standard_normal((2, 2))
    assert abs(np.linalg.det(M)) > 0.1
    image = ellipse.linear_image(M)
    table.close(
        "linear transformation",
        "ellipse-example1",
        erosion_entropy(image, Parallelotope(tuple(map(tuple, M))), mc),
        cube_h.get("ellipse-example1") or erosion_entropy(ellipse, FullCube(), mc),
    )

    # unions
    for name, equality in [("l-shape", False), ("separated-squares", True)]:
        union = load_region(name)
        parts = [(c.volume, erosion_entropy(c, FullCube(), mc)) for c in union.children]
        weighted = Estimate(
            sum(v * h.value for v, h in parts) / union.volume,
            sum(v * h.radius for v, h in parts) / union.volume,
        )
        whole = cube_h.get(name) or erosion_entropy(union, FullCube(), mc)
        (table.close if equality else table.at_most)("union", name, whole, weighted)

    # reduction to differential entropy
    square = load_region("unit-square")
    table.close("reduction", "unit-square", erosion_entropy(square, AxisSegment(1), mc), LOG2E)
    hyp = load_region("gauss-example2")
    h = differential_entropy(hyp, mc)
    table.close(
        "reduction",
        "gauss-example2",
        erosion_entropy(hyp, AxisSegment(hyp.n - 1), mc),
        Estimate(h.value + LOG2E, h.radius),
    )

    # averaging over random shifts and scales
    for name in ["unit-square", "l-shape"]:
        region = load_region(name)
        res = prop2_check(region, _t_for(region), config.draws, config.depth, seed, mc, config.min_mass)
        lower, upper, expected = res["mean_H_lower"], res["mean_H_upper"], res["expected"]
        radius = upper.radius + expected.radius
        table.check(
            "shift-scale average",
            name,
            upper.value,
            expected.value,
            radius,
            lower.value - lower.radius - expected.radius <= expected.value <= upper.value + radius,
        )

    # erosion volume against sections
    for gamma in [0.05, 0.1, 0.2]:
        lhs, rhs = lemma1_check(ellipse, gamma, mc)
        table.at_most(f"erosion volume gamma={gamma:g}", "ellipse-example1", rhs, lhs)

    # log-concave sandwiches
    density = as_density(hyp)
    n = density.n
    gap3 = lemma3_gap(density, mc)
    table.check("max-density sandwich", "gauss-example2", gap3.value, n * LOG2E, gap3.radius, 0 <= gap3.value <= n * LOG2E)
    table.close("max-density gap", "gauss-example2", gap3, n / 2 * LOG2E)
    gap4 = lemma4_gap(density, mc=mc)
    limit = n * LOG2E + math.log2(n)
    table.check(
        "conditional sandwich",
        "gauss-example2",
        gap4.value,
        limit,
        gap4.radius,
        -gap4.radius <= gap4.value <= limit + gap4.radius,
    )
    for dim, zeta in [(1, 0.9), (2, 1 / 3), (3, 0.5)]:
        bound, simplified, nu = logconcave_trunc_gap_bound(dim, zeta)
        tail = integrate.quad(lambda t: t**dim * math.exp(-t), nu, math.inf, epsabs=0, epsrel=1e-12)[0]
        rel = abs(tail / special.gamma(dim + 1) - zeta) / zeta
        table.check(f"incomplete gamma n={dim}", f"zeta={zeta:g}", rel, 1e-8, 0.0, rel <= 1e-8)
        if simplified is not None:
            table.check(f"simplified gap n={dim}", f"zeta={zeta:g}", bound, simplified, 0.0, bound <= simplified + 1e-12)

    _write_csv(
        os.path.join(save_path, "properties.csv"),
        ["property", "fixture", "lhs", "rhs", "radius", "passed"],
        table.rows,
    )
    failed = [f"{r[0]} on {r[1]}" for r in table.rows if not r[5]]
    logger.logkvs({"properties": len(table.rows), "failed": len(failed)})
    logger.dumpkvs()
    return {"passed": not failed, "failed": failed}


register_experiment("fig4-sweep", ExperimentSpec(run_fig4_sweep, "I, H and the scaled bound along a family of ellipses"))
register_experiment("ellipse-example1", ExperimentSpec(run_decomposition_report, "uniform ellipses"))
register_experiment("gauss-example2", ExperimentSpec(run_decomposition_report, "hypograph of a Gaussian"))
register_experiment("thm4-truncation", ExperimentSpec(run_truncation, "fixed-length truncated scheme"))
register_experiment("props-suite", ExperimentSpec(run_properties, "erosion entropy and log-concave properties"))

VALID_EXPERIMENTS: list[str] = list(_REGISTRY.keys())


# ##############################################################################
# # Running
# ##############################################################################


def hash_outputs(path: str) -> str:
    """sha256 over every artifact under `path`, by relative path."""
    digest = hashlib.sha256()
    for root, dirs, files in os.walk(path):
        dirs[:] = sorted(d for d in dirs if d not in UNHASHED)
        for fname in sorted(files):
            if fname in UNHASHED:
                continue
            full = os.path.join(root, fname)
            digest.update(os.path.relpath(full, path).encode())
            with open(full, "rb") as f:
                digest.update(f.read())
    return digest.hexdigest()


def resolve_config(manifest: Union[str, dict, ExperimentConfig], **overrides) -> ExperimentConfig:
    if isinstance(manifest, ExperimentConfig):
        return manifest
    if isinstance(manifest, str):
        if manifest not in EXPERIMENTS_DICT:
            raise ValueError(f"Unknown experiment {manifest}, expected one of {sorted(EXPERIMENTS_DICT)}")
        manifest = EXPERIMENTS_DICT[manifest]
    cfg = dict(manifest)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**cfg)


def _run_once(config: ExperimentConfig, save_path: str) -> dict:
    if os.path.exists(save_path):
        shutil.rmtree(save_path)
    os.makedirs(save_path)
    logger.configure(
        save_path=save_path,
        wandb_args=dict(config=config.to_dict(), name=config.name, job_type="experiment"),
    )
    try:
        summary = _REGISTRY[config.name].run(config, save_path)
        _write_json(os.path.join(save_path, "config.json"), config.to_dict())
        _write_json(os.path.join(save_path, "results_summary.json"), summary)
    finally:
        logger.shutdown()
    return summary


def run_experiment(
    manifest: Union[str, dict, ExperimentConfig],
    verify: bool = False,
    save_path: Optional[str] = None,
    **overrides,
) -> dict:
    """Run a named experiment and write its artifacts under out_dir/name.

    Manifest overrides other than out_dir get their own sub-directory named
    after them, so they never replace the artifacts of the shipped manifest.
    With verify=True the experiment runs a second time into a sibling
    directory and the two artifact hashes must agree."""
    config = resolve_config(manifest, **overrides)
    if config.name not in _REGISTRY:
        raise ValueError(f"Unknown experiment {config.name}, please register")
    if save_path is None:
        changed = {k: v for k, v in overrides.items() if v is not None and k != "out_dir"}
        save_path = os.path.join(config.out_dir, config.name)
        if changed:
            save_path = os.path.join(save_path, get_config_foldername(changed))
    summary = _run_once(config, save_path)
    digest = hash_outputs(save_path)
    result = {"path": save_path, "hash": digest, "summary": summary}
    if verify:
        rerun_path = save_path + "-rerun"
        _run_once(config, rerun_path)
        rerun_digest = hash_outputs(rerun_path)
        if rerun_digest != digest:
            raise NondeterminismError(f"{config.name}: outputs hash {digest[:12]} then {rerun_digest[:12]}")
        shutil.rmtree(rerun_path)
        result["verified"] = True
    return result
