import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import click
import pandas as pd

from app.core.config import PipelineConfig, load_config
from app.core.errors import PipelineError
from app.core.logging_config import configure_logging
from app.models import FeatureKind, Network
from app.schemas import ErrorResponse
from app.services import (
    cohort_service,
    embedding_service,
    pipeline_service,
    reho_service,
    run_service,
)
from scripts.populate_cohort import populate_cohort

logger = logging.getLogger(__name__)

ONLY_KEYS = {
    "network": "networks",
    "networks": "networks",
    "feature": "feature_kinds",
    "features": "feature_kinds",
    "feature_kind": "feature_kinds",
}


class PipelineGroup(click.Group):
    """Reports every failure as a JSON ErrorResponse on stderr.

    Pipeline and unexpected errors exit with status 1, usage errors with click's own code.
    """

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.Abort):
            raise
        except PipelineError as e:
            fail(ctx, e.to_response(), 1)
        except click.ClickException as e:
            context = {"command": e.ctx.command_path} if getattr(e, "ctx", None) else {}
            fail(ctx, ErrorResponse(error=type(e).__name__, message=e.format_message(), context=context), e.exit_code)
        except Exception as e:
            logger.exception("unexpected failure")
            fail(ctx, ErrorResponse(error=type(e).__name__, message=str(e)), 1)


def fail(ctx: click.Context, response: ErrorResponse, code: int) -> None:
    click.echo(response.model_dump_json(), err=True)
    ctx.exit(code)


def parse_tau(value: Optional[str]):
    if value is None or value == "auto":
        return value
    try:
        return int(value)
    except ValueError as e:
        raise click.BadParameter("expected 'auto' or an integer", param_hint="--tau") from e


def parse_only(values: Sequence[str]) -> Dict[str, str]:
    """`--only network=default_mode` style filters, mapped onto config fields."""
    overrides = {}
    for item in values:
        key, sep, value = item.partition("=")
        field = ONLY_KEYS.get(key.strip())
        if not sep or field is None:
            raise click.BadParameter(
                f"expected network=<name> or features=<kind>, got {item!r}", param_hint="--only"
            )
        overrides[field] = value.strip()
    return overrides


def build_config(ctx: click.Context, config_file: Optional[Path], **overrides: Any) -> PipelineConfig:
    overrides = {k: (None if v == () else v) for k, v in overrides.items()}
    overrides["jobs"] = ctx.obj["jobs"]
    return load_config(config_file, overrides)


DATASET_OPTIONS = (
    click.option("--config", "config_file", type=click.Path(exists=True, path_type=Path), help="key=value config file"),
    click.option("--data-root", type=click.Path(exists=True, file_okay=False, path_type=Path)),
    click.option("--manifest", type=click.Path(path_type=Path), help="Manifest CSV (default <data-root>/manifest.csv)"),
    click.option("--network", "networks", multiple=True, type=click.Choice([n.value for n in Network])),
)


def dataset_options(command):
    for option in reversed(DATASET_OPTIONS):
        command = option(command)
    return command


@click.group(cls=PipelineGroup)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Worker processes")
@click.option("--log-config", type=click.Path(exists=True, path_type=Path), help="logging fileConfig file")
@click.pass_context
def cli(ctx, verbose, jobs, log_config):
    """Multiscale fMRI dynamics toolkit: recurrence, connectivity and ensemble classification."""
    configure_logging(verbose, log_config)
    ctx.ensure_object(dict)
    ctx.obj["jobs"] = jobs


@cli.command()
@click.option("--kind", default="two_class_cohort", show_default=True)
@click.option("--sep", "separation", type=float, default=0.8, show_default=True)
@click.option("--subjects", type=int, default=50, show_default=True, help="Subjects per class")
@click.option("--n", "n_rois", type=int, default=None, help="ROI count; selects the network")
@click.option("--N", "timepoints", type=int, default=190, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hub-roi", type=int, default=None)
@click.option("--spokes", type=int, default=16, show_default=True)
@click.option("--hub-weight", type=float, default=0.225, show_default=True)
@click.option("--precision0", type=click.Path(exists=True, path_type=Path))
@click.option("--precision1", type=click.Path(exists=True, path_type=Path))
@click.option("--param", "params", multiple=True, help="Signal parameter key=value")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def synth(ctx, kind, separation, subjects, n_rois, timepoints, seed, hub_roi, spokes, hub_weight,
          precision0, precision1, params, out):
    """Generate a synthetic cohort or signal with known ground truth."""
    ctx.invoke(
        populate_cohort,
        kind=kind,
        separation=separation,
        subjects=subjects,
        n_rois=n_rois,
        timepoints=timepoints,
        seed=seed,
        hub_roi=hub_roi,
        spokes=spokes,
        hub_weight=hub_weight,
        precision0=precision0,
        precision1=precision1,
        params=params,
        jobs=ctx.obj["jobs"],
        out=out,
    )


@cli.command()
@dataset_options
@click.pass_context
def validate(ctx, config_file, data_root, manifest, networks):
    """Load a cohort and print its validation report as JSON."""
    config = build_config(ctx, config_file, data_root=data_root, manifest=manifest, networks=networks)
    report = cohort_service.validate_dataset(pipeline_service.source_dataset(config))
    click.echo(report.model_dump_json(indent=2))


@cli.command()
@click.option("--voxels", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help="Voxel CSV: x,y,z then one column per sample")
@click.option("--neighbors-only", is_flag=True, help="Exclude the center voxel from its cluster")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="ReHo map CSV")
@click.option("--series-out", type=click.Path(path_type=Path), help="Representative series CSV")
@click.pass_context
def reho(ctx, voxels, neighbors_only, out, series_out):
    """Regional homogeneity map of one voxel block and its representative series."""
    block = reho_service.load_voxel_block(voxels)
    reho_map = reho_service.reho_map(block, neighbors_only, ctx.obj["jobs"])
    reho_service.write_reho_map(reho_map, out)
    representative = reho_service.select_representative(block, reho_map)
    if series_out:
        pd.DataFrame({"value": representative.values}).to_csv(
            series_out, index=False, float_format=cohort_service.FLOAT_FORMAT
        )
    click.echo(
        f"{int(reho_map.defined.sum())}/{reho_map.defined.size} voxels defined, "
        f"mean W {reho_map.defined_values().mean():.4f}"
    )


@cli.command()
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--column", default=None, help="Series column (default: first column)")
@click.option("--tau", default="auto", show_default=True, help="'auto' or a fixed delay")
@click.option("--max-lag", type=int, default=None)
@click.option("--dmax", "d_max", type=int, default=20, show_default=True)
@click.option("--epsilon", type=float, default=0.05, show_default=True)
@click.option("--theiler", type=click.IntRange(min=0), default=0, show_default=True, help="Temporal neighbour exclusion window")
@click.option("--delay-method", type=click.Choice(["autocorr", "mutual_info"]), default="autocorr", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), help="CaoCurve CSV (d,e1,e2)")
def embed(input_path, column, tau, max_lag, d_max, epsilon, theiler, delay_method, out):
    """Choose the delay and Cao embedding dimension of one series."""
    frame = pd.read_csv(input_path, float_precision="round_trip")
    values = frame[column] if column else frame.iloc[:, 0]
    series = values.to_numpy(dtype=float)
    tau = parse_tau(tau)
    if tau == "auto":
        tau = embedding_service.select_delay(series, max_lag, method=delay_method)
    curve = embedding_service.cao_curves(series, tau, d_max, epsilon, theiler)
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(
            {"d": range(1, curve.d_max), "e1": curve.e1, "e2": curve.e2}
        ).to_csv(out, index=False, float_format=cohort_service.FLOAT_FORMAT)
    saturation = "" if curve.saturation_found else " (no saturation, using d_max)"
    click.echo(f"tau={curve.tau} m={curve.chosen_m}{saturation}")


@cli.command()
@dataset_options
@click.option("--tau", default=None, help="'auto' or a fixed delay")
@click.option("--dmax", "d_max", type=int, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--theiler", type=int, default=None, help="Temporal neighbour exclusion window")
@click.option("--force-k", type=int, default=None, help="Pin every ROI to K states")
@click.option("--rr", type=float, default=None, help="Target recurrence rate")
@click.option("--lmin", "l_min", type=int, default=None)
@click.option("--vmin", "v_min", type=int, default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="RQA CSV, one row per ROI")
@click.pass_context
def rqa(ctx, config_file, data_root, manifest, networks, tau, d_max, epsilon, theiler, force_k, rr, l_min, v_min, out):
    """Embed every ROI series and write its RQA measures."""
    config = build_config(
        ctx, config_file, data_root=data_root, manifest=manifest, networks=networks, tau=parse_tau(tau),
        d_max=d_max, epsilon=epsilon, theiler=theiler, force_k=force_k, rr=rr, l_min=l_min, v_min=v_min,
    )
    features, params = pipeline_service.cohort_dynamics(pipeline_service.source_dataset(config), config)
    out.parent.mkdir(parents=True, exist_ok=True)
    features.to_csv(out, index=False, float_format=cohort_service.FLOAT_FORMAT)
    params.to_csv(out.with_name(f"{out.stem}_params.csv"), index=False)
    click.echo(f"✅ RQA for {len(features)} ROI series written to {out}")


@cli.command("rp-render")
@dataset_options
@click.option("--subject", "subjects", multiple=True, help="Restrict to these subject ids")
@click.option("--size", "render_size", type=int, default=None, help="Output side length (default 224)")
@click.option("--png", "render_png", is_flag=True, help="Also write PNG files")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def rp_render(ctx, config_file, data_root, manifest, networks, subjects, render_size, render_png, out):
    """Render resized grayscale recurrence plots as PGM images."""
    config = build_config(
        ctx, config_file, data_root=data_root, manifest=manifest, networks=networks,
        render_size=render_size, render_png=render_png or None,
    )
    ds = pipeline_service.source_dataset(config)
    if subjects:
        try:
            ds = ds.select(subjects)
        except KeyError as e:
            raise click.BadParameter(str(e), param_hint="--subject") from e
    pipeline_service.cohort_dynamics(ds, config, plot_dir=out)
    click.echo(f"✅ Recurrence plots for {len(ds.subjects)} subjects written under {out}")


@cli.command()
@dataset_options
@click.option("--shrinkage", type=float, default=None)
@click.option("--edge-threshold", type=float, default=None)
@click.option("--topk", "top_k", type=int, default=None)
@click.option("--signed/--absolute", default=None, help="Threshold rho rather than |rho|")
@click.option("--method", "graph_method", type=click.Choice(["partial", "pearson"]), default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def graph(ctx, config_file, data_root, manifest, networks, shrinkage, edge_threshold, top_k, signed,
          graph_method, out):
    """Per-network graphs: adjacency CSVs, eigen features and the top-ROI frequency table."""
    config = build_config(
        ctx, config_file, data_root=data_root, manifest=manifest, networks=networks, shrinkage=shrinkage,
        edge_threshold=edge_threshold, top_k=top_k, signed=signed, graph_method=graph_method,
    )
    ds = pipeline_service.source_dataset(config)
    out.mkdir(parents=True, exist_ok=True)
    for network in ds.networks:
        features, ranking = pipeline_service.network_graph_features(ds, network, config, out / "adjacency")
        for kind, matrix in features.items():
            pipeline_service.write_features(
                pipeline_service.feature_frame(kind, network, ds, matrix),
                out / f"features_{network.value}_{kind.value}.csv",
            )
        table = pipeline_service.frequency_frame(ranking, network)
        table.to_csv(out / f"top_rois_{network.value}.csv", index=False)
        click.echo(run_service.top_entries(table, ranking.k).to_string(index=False))


@cli.command()
@click.option("--features", "feature_kind", default="eigvec", show_default=True, help="eigvec | eigval | rqa")
@click.option("--network", type=click.Choice([n.value for n in Network]), default="default_mode", show_default=True)
@click.option("--run-dir", type=click.Path(exists=True, file_okay=False, path_type=Path), help="Read features from a run")
@click.option("--table", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Features CSV")
@click.option("--folds", type=int, default=None)
@click.option("--trees", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-depth", type=int, default=None)
@click.option("--min-leaf", type=int, default=None)
@click.option("--per-fold-mean", is_flag=True)
@click.option("--csv", "as_csv", is_flag=True, help="Print a CSV row instead of JSON")
@click.pass_context
def classify(ctx, feature_kind, network, run_dir, table, folds, trees, seed, max_depth, min_leaf,
             per_fold_mean, as_csv):
    """Cross-validate the bagged tree ensemble on one feature table."""
    config = build_config(
        ctx, None, folds=folds, trees=trees, seed=seed, max_depth=max_depth, min_leaf=min_leaf,
        per_fold_mean=per_fold_mean or None,
    )
    try:
        kind = FeatureKind.parse(feature_kind)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--features") from e
    if table is None:
        if run_dir is None:
            raise click.UsageError("pass --table or --run-dir")
        table = pipeline_service.feature_path(run_service.RunDirectory(run_dir), kind, Network(network))
    report = pipeline_service.classify_table(pipeline_service.read_feature_table(table), config)
    if as_csv:
        row = pd.DataFrame([pipeline_service.metrics_row(report)], columns=pipeline_service.METRICS_COLUMNS)
        click.echo(row.to_csv(index=False), nl=False)
    else:
        click.echo(report.model_dump_json(indent=2))


@cli.command()
@click.option("--config", "config_file", type=click.Path(exists=True, path_type=Path))
@click.option("--data-root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--manifest", type=click.Path(path_type=Path))
@click.option("--run-dir", type=click.Path(path_type=Path))
@click.option("--only", multiple=True, help="Filter, e.g. network=default_mode or features=eigvec")
@click.option("--seed", type=int, default=None)
@click.option("--reho/--no-reho", "use_reho", default=None)
@click.option("--voxel-root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.pass_context
def run(ctx, config_file, data_root, manifest, run_dir, only, seed, use_reho, voxel_root):
    """Run every stage; an existing run directory with the same config resumes."""
    config = build_config(
        ctx, config_file, data_root=data_root, manifest=manifest, run_dir=run_dir, seed=seed,
        use_reho=use_reho, voxel_root=voxel_root, **parse_only(only),
    )
    path = pipeline_service.run_pipeline(config)
    click.echo(f"🎉 Run complete: {path}")


@cli.command()
@click.option("--run-dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--format", "fmt", type=click.Choice(run_service.REPORT_FORMATS), default="table", show_default=True)
@click.option("--limit", type=int, default=10, show_default=True, help="Top ROIs listed per class")
def report(run_dir, fmt, limit):
    """Summarize a completed run: metrics per network and top-ROI frequencies."""
    click.echo(run_service.report(run_dir, fmt, limit), nl=False)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--reload", is_flag=True)
def serve(host, port, reload):
    """Serve the read-only results API."""
    import uvicorn

    uvicorn.run("app.main:app", host=host, port=port, reload=reload)


if __name__ == "__main__":
    cli()
