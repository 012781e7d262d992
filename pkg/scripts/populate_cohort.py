import json
import time
from pathlib import Path
from typing import Dict, Sequence

import click
import numpy as np
import pandas as pd

from app.core.errors import InvalidSpec
from app.models import Network
from app.services.cohort_service import FLOAT_FORMAT, write_cohort
from app.services.synth_service import (
    SIGNAL_KINDS,
    GeneratorKind,
    gen_cohort_from_precision,
    gen_signal,
    gen_two_class_cohort,
    make_spec,
)


def parse_params(pairs: Sequence[str]) -> Dict[str, float]:
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise click.BadParameter(f"expected key=value, got {pair!r}", param_hint="--param")
        try:
            params[key.strip()] = float(value)
        except ValueError as e:
            raise click.BadParameter(f"{key} is not a number", param_hint="--param") from e
    return params


def read_matrix(path: Path) -> np.ndarray:
    return pd.read_csv(path, header=None, float_precision="round_trip").to_numpy(dtype=float)


def write_signal(kind: GeneratorKind, params: Dict[str, float], timepoints: int, seed: int, out: Path) -> Path:
    series = gen_signal(make_spec(kind.value, params=params, seed=seed, n_timepoints=timepoints))
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{kind.value}.csv"
    pd.DataFrame({"value": series.values}).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


@click.command()
@click.option("--kind", type=click.Choice([k.value for k in GeneratorKind]), default="two_class_cohort", show_default=True)
@click.option("--sep", "separation", type=float, default=0.8, show_default=True, help="Class separation (two_class_cohort)")
@click.option("--subjects", type=int, default=50, show_default=True, help="Subjects per class")
@click.option("--n", "n_rois", type=int, default=None, help="ROI count; selects the network (34 = default_mode)")
@click.option("--N", "timepoints", type=int, default=190, show_default=True, help="Timepoints per series")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hub-roi", type=int, default=None, help="Hub ROI index (default n // 2)")
@click.option("--spokes", type=int, default=16, show_default=True)
@click.option("--hub-weight", type=float, default=0.225, show_default=True)
@click.option("--precision0", type=click.Path(exists=True, path_type=Path), help="Class0 precision matrix CSV (var_precision)")
@click.option("--precision1", type=click.Path(exists=True, path_type=Path), help="Class1 precision matrix CSV (var_precision)")
@click.option("--param", "params", multiple=True, help="Signal parameter as key=value, repeatable")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output directory")
def populate_cohort(
    kind, separation, subjects, n_rois, timepoints, seed, hub_roi, spokes, hub_weight,
    precision0, precision1, params, jobs, out,
):
    """Write a synthetic cohort (or a single signal) in the on-disk dataset layout."""
    start_time = time.time()
    kind = GeneratorKind(kind)

    if kind in SIGNAL_KINDS:
        path = write_signal(kind, parse_params(params), timepoints, seed, out)
        click.echo(f"✅ Wrote {kind.value} signal ({timepoints} samples) to {path}")
        return

    if kind is GeneratorKind.VAR_PRECISION:
        if precision0 is None or precision1 is None:
            raise click.UsageError("var_precision needs --precision0 and --precision1")
        network = None
        if n_rois:
            try:
                network = Network.for_roi_count(n_rois)
            except ValueError as e:
                raise InvalidSpec(str(e)) from e
        ds = gen_cohort_from_precision(
            read_matrix(precision0), read_matrix(precision1), subjects, timepoints, seed, network, jobs
        )
    else:
        ds = gen_two_class_cohort(
            separation,
            subjects,
            timepoints,
            n=n_rois,
            seed=seed,
            hub_roi=hub_roi,
            spokes=spokes,
            hub_weight=hub_weight,
            n_jobs=jobs,
        )

    manifest = write_cohort(ds, out)
    (out / "cohort.json").write_text(json.dumps(ds.metadata, indent=2, sort_keys=True) + "\n")
    click.echo(
        f"✅ Wrote {len(ds.subjects)} subjects ({', '.join(n.value for n in ds.networks)}) to {manifest}"
    )
    click.echo(f"🎉 Cohort generation completed in {time.time() - start_time:.2f} seconds")


if __name__ == "__main__":
    populate_cohort()
