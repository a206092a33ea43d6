import traceback
from typing import List, Optional, Union

import fire

from dyadic_sim.experiments import VALID_EXPERIMENTS, run_experiment


def split_names(names: Union[List[str], str]) -> List[str]:
    if isinstance(names, str):
        return names.split(",")
    return names


def main(
    experiments: Optional[Union[List[str], str]] = None,
    verify: bool = False,
    **kwargs,
):
    """Run named experiments one after another.

    Args:
        experiments: names to run, all registered experiments by default
        verify: re-run each experiment and compare output hashes
        kwargs: manifest overrides passed to every experiment (e.g. out_dir)
    """
    names = split_names(experiments) if experiments is not None else VALID_EXPERIMENTS
    results = {}
    for name in names:
        print(f"Running experiment {name}")
        try:
            results[name] = run_experiment(name, verify=verify, **kwargs)
        except Exception as e:
            print(f"Failed to run experiment {name}: {e}")
            traceback.print_exc()
    print(f"Finished {len(results)}/{len(names)} experiments")
    return results


if __name__ == "__main__":
    fire.Fire(main)
