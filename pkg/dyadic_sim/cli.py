import json
import os
from typing import Optional

import fire

from dyadic_sim.coder import arithmetic_generate
from dyadic_sim.common import McParams, default_out_dir, make_rng
from dyadic_sim.dyadic import coding_frame, table_entropy
from dyadic_sim.dyadic import decompose as decompose_region
from dyadic_sim.experiments import VALID_EXPERIMENTS, run_experiment
from dyadic_sim.logger import append_to_jsonl, to_builtin
from dyadic_sim.regions import load_region
from dyadic_sim.scaling import bounds_report
from dyadic_sim.simulate import ExactSimulator, ProtocolConfig, protocol_demo, run_truncated


def _out_path(out: Optional[str], region_name: str, fname: str) -> str:
    path = out or os.path.join(default_out_dir(), region_name, fname)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return path


def decompose(
    region: str,
    depth: int = 11,
    out: Optional[str] = None,
    min_mass: float = 0.0,
    workers: int = 1,
):
    """Write the decomposition table of a region as CSV and print its entropy bracket.

    Regions spanning several root cells are decomposed after the shift into
    the positive orthant; the returned offset maps cubes back."""
    reg = load_region(region)
    coded, offset = coding_frame(reg)
    table = decompose_region(coded, depth, min_mass=min_mass, workers=workers)
    path = _out_path(out, reg.name, "table.csv")
    table.to_csv(path)
    h_lower, h_upper = table_entropy(table)
    print(f"{reg.name}: {len(table)} cubes to level {depth}, residual {table.residual_mass:.3g}")
    return {
        "table": path,
        "entries": len(table),
        "H_lower": h_lower,
        "H_upper": h_upper,
        "offset": offset.tolist(),
    }


def encode(region: str, depth: int = 11, seed: int = 0, path: str = "prefix"):
    """Draw one W and print its codeword."""
    reg = load_region(region)
    coded, offset = coding_frame(reg)
    if path == "prefix":
        simulator = ExactSimulator(reg, "prefix", depth)
        bits, cube, _ = simulator.encode(make_rng(seed, 0, 0))
        expected = simulator.code.expected_length()
    else:
        bits, cube = arithmetic_generate(coded, seed)
        expected = None
    return {
        "codeword": bits.bits,
        "k": cube.k,
        "v": list(cube.v),
        "offset": offset.tolist(),
        "expected_length": expected,
    }


def simulate(
    region: str,
    sessions: int = 1,
    seed: int = 0,
    path: str = "arithmetic",
    depth: Optional[int] = None,
    eps: Optional[float] = None,
    out: Optional[str] = None,
):
    """Run exact sessions (or truncated ones with --eps) and write transcripts as JSON lines."""
    reg = load_region(region)
    transcripts_path = _out_path(out, reg.name, "transcripts.jsonl")
    if os.path.exists(transcripts_path):
        os.remove(transcripts_path)
    result = {"transcripts": transcripts_path}
    if eps is not None:
        plan, batch = run_truncated(reg, float(eps), seed, sessions, depth if depth is not None else 11)
        result["plan"] = plan.to_dict()
    else:
        batch = ExactSimulator(reg, path, depth).run(sessions, seed)
    batch.to_jsonl(transcripts_path)
    result["sessions"] = len(batch)
    result["mean_bits"] = float(batch.codeword_lengths.mean()) if len(batch) else 0.0
    return result


def bounds(
    region: str,
    depth: int = 11,
    seed: int = 0,
    mc_samples: int = 100_000,
    min_mass: float = 0.0,
    workers: int = 1,
    out: Optional[str] = None,
):
    """Measured entropy of the decomposition next to every bound that applies."""
    reg = load_region(region)
    report = bounds_report(reg, depth, McParams(sample_count=mc_samples, seed=seed), min_mass, workers)
    path = _out_path(out, reg.name, "bounds.json")
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True, default=to_builtin)
    for failure in report.check_ordering():
        print(f"Warning: {failure}")
    return report.to_dict()


def protocol(
    region: Optional[str] = None,
    config: Optional[str] = None,
    transport: str = "inprocess",
    mode: str = "codeword",
    path: str = "arithmetic",
    sessions: int = 100,
    seed: int = 0,
    agents: Optional[int] = None,
    depth: Optional[int] = None,
    out: Optional[str] = None,
):
    """Source and agents over in-process channels or local sockets; --config reads a YAML file."""
    if config is not None:
        result = protocol_demo(config)
    else:
        assert region is not None, "pass --region or --config"
        result = protocol_demo(
            ProtocolConfig(
                region=region,
                agents=agents,
                transport=transport,
                mode=mode,
                path=path,
                sessions=sessions,
                seed=seed,
                k_max=depth,
                out=out,
            )
        )
    summary = result.to_dict()
    if out is not None:
        append_to_jsonl(out + ".summary", summary)
    return summary


def experiment(name: str, verify: bool = False, out: Optional[str] = None, **overrides):
    """Run a named experiment; extra flags override manifest fields (e.g. --depth 9)."""
    assert name in VALID_EXPERIMENTS, f"Unknown experiment {name} not in {VALID_EXPERIMENTS}"
    if out is not None:
        overrides["out_dir"] = out
    return run_experiment(name, verify=verify, **overrides)


COMMANDS = {
    "decompose": decompose,
    "encode": encode,
    "simulate": simulate,
    "bounds": bounds,
    "protocol-demo": protocol,
    "experiment": experiment,
}


def main():
    fire.Fire(COMMANDS)


if __name__ == "__main__":
    main()
