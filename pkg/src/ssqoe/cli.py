"""Command-line harness: train, predict, loocv, analyze, synth, serve.

The CLI is a thin client of the HTTP service: it reads and writes local
files and sends the actual computation through the service layer,
in-process by default or against a remote server via --server.

Exit codes: 0 ok, 2 validation, 3 training/numeric failure, 4 I/O.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click
import httpx

from .client import ServiceClient
from .dataio import _fmt, load_dataset, read_trace_csv, write_dataset
from .errors import NumericOverflowError, QoeError, TrainingError, ValidationError
from .schemas import DatasetDoc, dataset_from_doc, dataset_to_doc
from .version import __version__

EXIT_VALIDATION = 2
EXIT_TRAINING = 3
EXIT_IO = 4


def _die(code: int, exc: Exception):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _die(EXIT_VALIDATION, exc)
        except (TrainingError, NumericOverflowError) as exc:
            _die(EXIT_TRAINING, exc)
        except QoeError as exc:
            _die(EXIT_VALIDATION, exc)
        except (OSError, httpx.HTTPError) as exc:
            _die(EXIT_IO, exc)
    return wrapper


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def _load_config(path):
    return _read_json(path) if path else {}


def _dataset_payload(path) -> dict:
    return dataset_to_doc(load_dataset(path)).model_dump()


def _echo(ctx, message):
    if not ctx.obj.get("quiet"):
        click.echo(message)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
@click.option("--server", default=None, metavar="URL",
              help="Base URL of a running ssqoe service (default: in-process).")
@click.option("--quiet", is_flag=True, help="Suppress informational output.")
@click.pass_context
def main(ctx, server, quiet):
    """Continuous video QoE prediction with a nonlinear state-space model."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["quiet"] = quiet


def _client(ctx) -> ServiceClient:
    return ServiceClient(base_url=ctx.obj.get("server"))


@main.command()
@click.argument("dataset", type=click.Path(exists=False))
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TrainConfig JSON file.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Where to write the trained model JSON.")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="TrainReport JSON (default: <out>.report.json).")
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="Optimizer iteration log CSV (default: <out>.log.csv).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("-m", type=int, default=3, help="Input channel count.")
@click.option("-r", type=int, default=3, help="Model order.")
@click.pass_context
@_guard
def train(ctx, dataset, config_path, out_path, report_path, log_path, seed, m, r):
    """Train a QoE model on a dataset directory."""
    config = _load_config(config_path)
    if seed is not None:
        config["seed"] = seed
    with _client(ctx) as client:
        resp = client.train(_dataset_payload(dataset), config or None,
                            {"m": m, "r": r})
    base = Path(out_path).with_suffix("")
    report_path = report_path or f"{base}.report.json"
    log_path = log_path or f"{base}.log.csv"
    _write_json(resp["model"], out_path)
    _write_json(resp["report"], report_path)
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["restart", "iter", "objective"])
        writer.writerows(resp["log"])
    _echo(ctx, f"model -> {out_path}")
    _echo(ctx, f"report -> {report_path} (objective {resp['report']['finalObjective']:.6g})")


@main.command()
@click.argument("model", type=click.Path())
@click.argument("trace", type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output CSV (t,yhat[,mos]).")
@click.pass_context
@_guard
def predict(ctx, model, trace, out_path):
    """Predict per-second QoE for one playout trace CSV."""
    model_doc = _read_json(model)
    stsq, stall, mos = read_trace_csv(trace)
    trace_doc = {"sessionId": Path(trace).stem,
                 "stsq": [float(v) for v in stsq],
                 "stall": [int(v) for v in stall]}
    if mos is not None:
        trace_doc["mos"] = [float(v) for v in mos]
    with _client(ctx) as client:
        resp = client.predict(model_doc, trace_doc)
    yhat = resp["yhat"]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if mos is None:
            writer.writerow(["t", "yhat"])
            writer.writerows((t, _fmt(v)) for t, v in enumerate(yhat))
        else:
            writer.writerow(["t", "yhat", "mos"])
            writer.writerows((t, _fmt(v), _fmt(g))
                             for t, (v, g) in enumerate(zip(yhat, mos)))
    _echo(ctx, f"predictions -> {out_path} ({len(yhat)} rows)")


@main.command()
@click.argument("dataset", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TrainConfig JSON file.")
@click.option("--mode", type=click.Choice(["netflix", "lfovia"]), default="netflix",
              help="Exclusion protocol variant.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="EvalReport JSON (summary CSV lands next to it).")
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Summary CSV path (default: <out>.csv).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--workers", type=int, default=1,
              help="Parallel training processes across splits.")
@click.option("-m", type=int, default=3)
@click.option("-r", type=int, default=3)
@click.pass_context
@_guard
def loocv(ctx, dataset, config_path, mode, out_path, csv_path, seed, workers, m, r):
    """Leave-one-out evaluation over a dataset directory."""
    config = _load_config(config_path)
    if seed is not None:
        config["seed"] = seed
    with _client(ctx) as client:
        resp = client.loocv(_dataset_payload(dataset), config or None,
                            {"m": m, "r": r}, mode=mode, workers=workers)
    report = resp["report"]
    _write_json(report, out_path)
    csv_path = csv_path or f"{Path(out_path).with_suffix('')}.csv"
    mean = report["meanScores"]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vqa", "lcc", "srocc", "rmse_n"])
        writer.writerow([report["vqaName"], "%.4f" % mean["lcc"],
                         "%.4f" % mean["srocc"], "%.4f" % mean["rmseN"]])
    _echo(ctx, f"report -> {out_path}")
    _echo(ctx, "mean  LCC %.4f  SROCC %.4f  RMSEn %.2f%%"
          % (mean["lcc"], mean["srocc"], mean["rmseN"]))


@main.command()
@click.argument("model", type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the rank analysis JSON here.")
@click.option("--rank-tol", type=float, default=0.0,
              help="Relative SVD rank tolerance (0 = default).")
@click.pass_context
@_guard
def analyze(ctx, model, out_path, rank_tol):
    """Controllability/observability analysis of a trained model."""
    with _client(ctx) as client:
        resp = client.analyze(_read_json(model), rank_tol)
    click.echo(json.dumps(resp, indent=2))
    if out_path:
        _write_json(resp, out_path)


@main.command()
@click.argument("spec", type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output dataset directory.")
@click.pass_context
@_guard
def synth(ctx, spec, seed, out_dir):
    """Generate a synthetic dataset plus its ground-truth model."""
    with _client(ctx) as client:
        resp = client.synth(_read_json(spec), seed)
    ds = dataset_from_doc(DatasetDoc.model_validate(resp["dataset"]))
    write_dataset(ds, out_dir)
    _write_json(resp["model"], Path(out_dir) / "truth_model.json")
    summary = resp["summary"]
    _echo(ctx, f"dataset -> {out_dir}: {summary['sessions']} sessions, "
          f"{summary['totalSeconds']} s total, {summary['stallSeconds']} stall seconds")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("ssqoe.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
