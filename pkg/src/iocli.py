"""
Run-record ingestion, law and report persistence, and the command line that
ties the modules into workflows.

Every command accepts --output {table,csv,json}. Exit codes: 0 on success, 2 on
invalid input, 3 on numerical failure.
"""

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from archmodel import (
    ArchGridSpec,
    ArchitectureConfig,
    CONFIG_KEYS,
    InvalidGridException,
    Snapping,
    count_params,
    default_d_head,
    derived_metrics,
    enumerate_variants,
    shape_name,
)
from corpus import RunRecord, corpus, entries_by_size, lookup, reference_models
from costmodel import (
    HardwareProfile,
    Workload,
    builtin_hardware,
    decode_flops_per_token,
    kv_cache_bytes,
    throughput_sweep,
)
from fitter import FitOptions, evaluate_law, fit_conditional_law, select_by_size
from laws import (
    LAW_FIT_80M_TO_297M,
    ChinchillaParams,
    ConditionalLaw,
    InvalidLawException,
    NoInteriorOptimumException,
    RefLossSource,
    coefficient_names,
    conditional_loss,
    empirical_lopt,
    optimal_xr,
    ref_loss,
)
from search import OPTIMAL, SearchResult, closed_form_architecture, gqa_local_search, run_algorithm1
from synthetic import generate_runs, synthetic_reference

logger = logging.getLogger(__name__)

LAW_FORMAT_VERSION = 1
LOG_BASE = "natural"
LAW_HEADER_KEYS = ("version", "form", "log_base", "fit_meta")
ARCH_COLUMNS = CONFIG_KEYS[1:]
RUN_COLUMNS = ("size_label", "variant") + ARCH_COLUMNS + ("d_tokens", "loss")
REPORT_COLUMNS = ("name", "d_model", "n_head", "gqa", "f_size", "x", "r",
                  "predicted_loss", "tokens_per_second", "feasible", "pareto")
GRID_KEYS = ("n_target", "n_layers", "d_head", "gqa_values", "d_model_values", "r_values",
             "f_values", "n_tolerance", "d_multiple", "f_multiple")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


class RunFormatException(ValueError):
    def __init__(self, message: str, row: int, field: str):
        super().__init__(f"row {row}, field {field!r}: {message}")
        self.row = row
        self.field = field


class LawFormatException(ValueError):
    pass


def _blank(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value)) or str(value).strip() == ""


def _number(row: dict, key: str, row_number: int) -> float:
    try:
        value = float(row[key])
    except (KeyError, TypeError, ValueError):
        raise RunFormatException(f"expected a number, got {row.get(key)!r}", row_number, key)
    if not math.isfinite(value):
        raise RunFormatException("value must be finite", row_number, key)
    return value


def _integer(row: dict, key: str, row_number: int) -> int:
    value = _number(row, key, row_number)
    if value != int(value):
        raise RunFormatException(f"expected an integer, got {row[key]!r}", row_number, key)
    return int(value)


def record_from_row(row: dict, row_number: int) -> RunRecord:
    """
    Builds a RunRecord from one flat row. Architecture columns given inline
    override the bundled corpus entry named by size_label/variant.
    """
    size_label = None if _blank(row.get("size_label")) else str(row["size_label"]).strip()
    variant = None if _blank(row.get("variant")) else str(row["variant"]).strip()
    inline = {k: _integer(row, k, row_number) for k in ARCH_COLUMNS if not _blank(row.get(k))}

    if len(inline) == len(ARCH_COLUMNS):
        fields = dict(inline)
        name = f"{size_label}/{variant}" if size_label and variant else None
    else:
        if not (size_label and variant):
            missing = next(k for k in ARCH_COLUMNS if k not in inline)
            raise RunFormatException(
                "architecture columns are empty and no size_label/variant is given", row_number, missing
            )
        try:
            entry = lookup(size_label, variant)
        except LookupError as exc:
            raise RunFormatException(str(exc), row_number, "variant")
        fields = {**entry.to_config().to_dict(), **inline}
        fields.pop("name")
        name = entry.name
    if name is None:
        name = shape_name(fields["n_layers"], fields["d_model"], fields["n_head"], fields["gqa"], fields["f_size"])
    arch = ArchitectureConfig(name=name, **fields)

    d_tokens = _number(row, "d_tokens", row_number)
    if d_tokens <= 0:
        raise RunFormatException("d_tokens must be positive", row_number, "d_tokens")
    loss = _number(row, "loss", row_number)
    if loss <= 0:
        raise RunFormatException("loss must be positive", row_number, "loss")
    tags = () if _blank(row.get("tags")) else tuple(t for t in str(row["tags"]).split(";") if t)

    record = RunRecord(arch=arch, d_tokens=d_tokens, loss=loss, size_label=size_label, variant=variant, tags=tags)
    try:
        record.check()
    except ValueError as exc:
        raise RunFormatException(str(exc), row_number, "arch")
    return record


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported run file format {fmt!r}; use csv or json")
    return fmt


def find_duplicates(records: Sequence[RunRecord]) -> List[List[int]]:
    """
    :return: index groups of runs sharing an architecture and D (repeated runs)
    """
    groups: Dict[tuple, List[int]] = {}
    for index, record in enumerate(records):
        groups.setdefault((record.arch.shape_key(), record.d_tokens), []).append(index)
    return [indices for indices in groups.values() if len(indices) > 1]


def load_runs(path, fmt: Optional[str] = None) -> List[RunRecord]:
    """
    Loads run records from CSV (header: size_label,variant,n_layers,d_model,
    n_head,d_head,gqa,f_size,d_tokens,loss, optional tags) or a JSON list of
    the same objects. Row numbers in errors count data rows from 1.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        for column in ("d_tokens", "loss"):
            if column not in frame.columns:
                raise RunFormatException("missing column", 0, column)
        rows = frame.to_dict("records")
    else:
        with open(path) as handle:
            rows = json.load(handle)
        if not isinstance(rows, list) or not all(isinstance(r, dict) for r in rows):
            raise RunFormatException("expected a list of objects", 0, "document")
        rows = [{**r.pop("arch", {}), **r} if isinstance(r.get("arch"), dict) else r for r in rows]

    records = [record_from_row(row, number) for number, row in enumerate(rows, start=1)]
    for group in find_duplicates(records):
        logger.warning("repeated runs at rows %s (same architecture and D)", [i + 1 for i in group])
    logger.info("loaded %d runs from %s", len(records), path)
    return records


def _record_row(record: RunRecord) -> dict:
    row = {"size_label": record.size_label or "", "variant": record.variant or ""}
    row.update({k: getattr(record.arch, k) for k in ARCH_COLUMNS})
    row.update(d_tokens=record.d_tokens, loss=record.loss, tags=";".join(record.tags))
    return row


def save_runs(records: Sequence[RunRecord], path, fmt: Optional[str] = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    rows = [_record_row(r) for r in records]
    if fmt == "csv":
        pd.DataFrame(rows, columns=list(RUN_COLUMNS) + ["tags"]).to_csv(path, index=False)
    else:
        path.write_text(json.dumps(rows, indent=2))


def law_to_dict(law: ConditionalLaw) -> dict:
    data = {"version": LAW_FORMAT_VERSION, "form": law.form}
    data.update({n: getattr(law, n) for n in coefficient_names(law.form)})
    data["log_base"] = LOG_BASE
    data["fit_meta"] = law.fit_meta
    return data


def law_from_dict(data: dict) -> ConditionalLaw:
    """
    Reads a law object with flat coefficient keys. A missing version or
    log_base means the current version and natural logarithms.
    """
    if not isinstance(data, dict):
        raise LawFormatException("law file must hold a JSON object")
    version = data.get("version", LAW_FORMAT_VERSION)
    if not isinstance(version, int) or isinstance(version, bool):
        raise LawFormatException("law file needs an integer version")
    if version > LAW_FORMAT_VERSION:
        raise LawFormatException(f"law file version {version} is newer than supported {LAW_FORMAT_VERSION}")
    log_base = data.get("log_base", LOG_BASE)
    if log_base != LOG_BASE:
        raise LawFormatException(f"law file log_base must be {LOG_BASE!r}, got {log_base!r}")
    fit_meta = data.get("fit_meta")
    if fit_meta is not None and not isinstance(fit_meta, dict):
        raise LawFormatException("law fit_meta must be an object")
    form = data.get("form")
    try:
        names = coefficient_names(form)
    except InvalidLawException as exc:
        raise LawFormatException(str(exc))
    unknown = sorted(set(data) - set(names) - set(LAW_HEADER_KEYS))
    if unknown:
        raise LawFormatException(f"{form} law has no coefficients {unknown}")
    missing = [n for n in names if n not in data]
    if missing:
        raise LawFormatException(f"{form} law is missing {missing}")
    try:
        coefs = [float(data[n]) for n in names]
    except (TypeError, ValueError) as exc:
        raise LawFormatException(f"law coefficients must be numbers: {exc}")
    try:
        return ConditionalLaw.from_vector(form, coefs, fit_meta)
    except InvalidLawException as exc:
        raise LawFormatException(str(exc))


def save_law(law: ConditionalLaw, path) -> None:
    law.check()
    Path(path).write_text(json.dumps(law_to_dict(law), indent=2, default=float))


def load_law(path) -> ConditionalLaw:
    return law_from_dict(_read_json(path))


def _read_json(path) -> dict:
    with open(path) as handle:
        return json.load(handle)


def load_config(path) -> ArchitectureConfig:
    return ArchitectureConfig.from_dict(_read_json(path))


def load_hardware(spec: str) -> HardwareProfile:
    """
    :param spec: a built-in profile name or a JSON file path
    """
    if not spec.endswith(".json"):
        return builtin_hardware(spec)
    return HardwareProfile.from_dict(_read_json(spec))


def load_chinchilla(path) -> ChinchillaParams:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise LawFormatException("Chinchilla file must hold a JSON object")
    try:
        params = ChinchillaParams(**{k: float(data[k]) for k in ("E", "A", "alpha", "B", "beta")})
    except KeyError as exc:
        raise LawFormatException(f"Chinchilla file is missing {exc}")
    except (TypeError, ValueError) as exc:
        raise LawFormatException(f"Chinchilla parameters must be numbers: {exc}")
    params.check()
    return params


def _number_list(data: dict, key: str) -> Optional[list]:
    values = data.get(key)
    if values is None:
        return None
    if not isinstance(values, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise InvalidGridException(f"grid {key} must be a list of numbers")
    return values


def grid_from_dict(data: dict) -> ArchGridSpec:
    if not isinstance(data, dict):
        raise InvalidGridException("grid must be a JSON object")
    unknown = sorted(set(data) - set(GRID_KEYS))
    if unknown:
        raise InvalidGridException(f"unknown grid keys: {unknown}")
    missing = [k for k in GRID_KEYS[:5] if k not in data]
    if missing:
        raise InvalidGridException(f"grid is missing {missing}")
    lists = {k: _number_list(data, k) for k in ("gqa_values", "d_model_values", "r_values", "f_values")}
    try:
        snapping = Snapping(
            d_multiple=None if data.get("d_multiple") is None else int(data["d_multiple"]),
            f_multiple=int(data.get("f_multiple", Snapping().f_multiple)),
        )
        spec = ArchGridSpec(
            n_target=int(data["n_target"]), n_layers=int(data["n_layers"]), d_head=int(data["d_head"]),
            n_tolerance=float(data.get("n_tolerance", 0.10)), snapping=snapping, **lists,
        )
    except (TypeError, ValueError) as exc:
        raise InvalidGridException(f"grid values must be numbers: {exc}")
    spec.check()
    return spec


def parse_ref(text: str, records: Optional[Sequence[RunRecord]] = None) -> RefLossSource:
    """
    Reference grammar: "empirical" (bucket minima of the command's own runs),
    "empirical:<runs file>", "chinchilla:<json>" or "synthetic".
    """
    kind, _, argument = text.partition(":")
    if kind == "empirical":
        if argument:
            return empirical_lopt(load_runs(argument))
        if not records:
            raise ValueError("--ref empirical needs run data")
        return empirical_lopt(records)
    if kind == "chinchilla" and argument:
        return RefLossSource.from_chinchilla(load_chinchilla(argument))
    if kind == "synthetic":
        return synthetic_reference()
    raise ValueError(f"unrecognized reference {text!r}")


def _candidate_row(c) -> dict:
    return {
        "name": c.arch.name, "d_model": c.arch.d_model, "n_head": c.arch.n_head, "gqa": c.arch.gqa,
        "f_size": c.arch.f_size, "x": c.x, "r": c.r, "predicted_loss": c.predicted_loss,
        "tokens_per_second": c.modeled_throughput, "feasible": c.feasible, "pareto": not c.dominated,
    }


def search_report_frame(result: SearchResult) -> pd.DataFrame:
    rows = [_candidate_row(c) for c in result.candidates]
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS))


def write_search_report(result: SearchResult, path) -> None:
    search_report_frame(result).to_csv(path, index=False)


def _arch_row(config: ArchitectureConfig) -> dict:
    metrics = derived_metrics(config)
    return {**config.to_dict(), "n_nonembed": count_params(config).n_nonembed, "x": metrics.x, "r": metrics.r}


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _workload(args) -> Workload:
    return Workload(batch=args.batch, t_in=args.input_tokens, t_out=args.output_tokens)


def _law_optimum(law: ConditionalLaw) -> dict:
    try:
        x_star, r_star = optimal_xr(law)
    except NoInteriorOptimumException:
        return {"x_star": None, "r_star": None}
    return {"x_star": x_star, "r_star": r_star}


def cmd_arch_info(args):
    config = load_config(args.config)
    row = _arch_row(config)
    row.update(
        d_q=config.d_q, d_kv=config.d_kv, t_context=args.t_context,
        kv_bytes=kv_cache_bytes(config, args.t_context),
        decode_flops=decode_flops_per_token(config, args.t_context),
    )
    return row


def _d_head(args) -> int:
    return args.d_head if args.d_head is not None else default_d_head(args.n_target)


def cmd_arch_enumerate(args):
    spec = ArchGridSpec(
        n_target=args.n_target, n_layers=args.layers, d_head=_d_head(args),
        gqa_values=_int_list(args.gqa), d_model_values=_int_list(args.d_values),
        r_values=_float_list(args.r_values) if args.r_values else None,
        f_values=_int_list(args.f_values) if args.f_values else None,
        n_tolerance=args.tolerance, snapping=Snapping(d_multiple=args.d_multiple),
    )
    return [_arch_row(c) for c in enumerate_variants(spec)]


def cmd_fit(args):
    records = load_runs(args.data)
    ref = parse_ref(args.ref, records)
    if args.sizes:
        records = select_by_size(records, args.sizes.split(","))
    opts = FitOptions(r_filter=(args.r_min, args.r_max))
    result = fit_conditional_law(records, args.form, ref, opts)
    if args.out:
        save_law(result.law, args.out)
    report = {
        "form": args.form,
        **{n: getattr(result.law, n) for n in coefficient_names(result.law.form)},
        **_law_optimum(result.law),
        "sse": result.sse, "train_mse": result.train_mse, "converged": result.converged,
        "n_used": result.meta["n_used"], "n_filtered": result.meta["n_filtered"],
        "start_index": result.start_index,
    }
    if args.holdout:
        holdout = load_runs(args.holdout)
        holdout_ref = parse_ref(args.ref, holdout) if args.ref == "empirical" else ref
        scores = evaluate_law(result.law, holdout, holdout_ref)
        report.update(holdout_mse=scores["mse"], holdout_spearman=scores["spearman"])
    return report


def cmd_predict(args):
    law = load_law(args.law)
    config = load_config(args.config)
    ref = parse_ref(args.ref)
    metrics = derived_metrics(config)
    l_opt = ref_loss(ref, count_params(config).n_nonembed, args.d_tokens)
    return {"name": config.name, "x": metrics.x, "r": metrics.r, "l_opt": l_opt,
            "predicted_loss": conditional_loss(law, metrics.x, metrics.r, l_opt)}


def cmd_optimum(args):
    law = load_law(args.law)
    config = closed_form_architecture(
        law, args.n_target, args.layers, _d_head(args), args.gqa, Snapping(d_multiple=args.d_multiple)
    )
    return {**_arch_row(config), **_law_optimum(law)}


def cmd_optimize(args):
    law = load_law(args.law)
    grid = grid_from_dict(_read_json(args.grid))
    budget = OPTIMAL if args.loss_budget == OPTIMAL else float(args.loss_budget)
    result = run_algorithm1(
        n_target=args.n_target, d_tokens=args.d_tokens, n_layers=grid.n_layers, d_head=grid.d_head,
        loss_budget=budget, law=law, ref=parse_ref(args.ref), grid=grid,
        hardware=load_hardware(args.hardware), workload=_workload(args),
        baseline_gqa=args.baseline_gqa, snapping=grid.snapping,
    )
    if result.search is None:
        return [_arch_row(result.architecture)]
    if args.report:
        write_search_report(result.search, args.report)
    return [{**_candidate_row(c), "best": c.arch == result.architecture} for c in result.search.candidates]


def cmd_gqa_search(args):
    config = load_config(args.config)
    evals = pd.read_csv(args.evals)
    if list(evals.columns) != ["gqa", "loss"]:
        raise ValueError("evaluations file needs the header gqa,loss")
    measured = {int(g): float(l) for g, l in zip(evals["gqa"], evals["loss"])}

    def evaluator(gqa: int) -> float:
        if gqa not in measured:
            raise LookupError(f"no measured loss for gqa={gqa}")
        return measured[gqa]

    trace, chosen = gqa_local_search(
        config, evaluator, args.baseline_gqa, args.epsilon,
        load_hardware(args.hardware), _workload(args),
    )
    return [{"gqa": e.gqa, "name": e.arch.name, "loss": e.evaluator_loss,
             "tokens_per_second": e.modeled_throughput, "accepted": e.accepted,
             "chosen": e is chosen} for e in trace]


def cmd_throughput(args):
    config = load_config(args.config)
    hardware = load_hardware(args.hardware)
    batches = _int_list(args.batch)
    rows = []
    for batch, report in throughput_sweep(config, hardware, batches, args.input_tokens, args.output_tokens):
        rows.append({"batch": batch, **asdict(report)})
    if not rows:
        raise ValueError("no batch size fits in memory")
    return rows


def cmd_eval(args):
    law = load_law(args.law)
    records = load_runs(args.data)
    ref = parse_ref(args.ref, records)
    if args.sizes:
        records = select_by_size(records, args.sizes.split(","))
    scores = evaluate_law(law, records, ref)
    return {"n": scores["n"], "mse": scores["mse"], "spearman": scores["spearman"]}


def cmd_corpus(args):
    entries = list(reference_models()) if args.reference else (
        entries_by_size(args.sizes.split(",")) if args.sizes else list(corpus())
    )
    rows = []
    for entry in entries:
        metrics = derived_metrics(entry.to_config())
        rows.append({"size_label": entry.size_label, "variant": entry.variant, "n_layers": entry.n_layers,
                     "d_model": entry.d_model, "n_head": entry.n_head, "gqa": entry.gqa, "f_size": entry.f_size,
                     "x": metrics.x, "printed_x": entry.printed_x, "r": metrics.r, "printed_r": entry.printed_r})
    return rows


def cmd_synth(args):
    law = load_law(args.law) if args.law else LAW_FIT_80M_TO_297M
    ref = parse_ref(args.ref) if args.ref else synthetic_reference()
    records = generate_runs(entries_by_size(args.sizes.split(",")), law, ref,
                            args.sigma, args.seed, args.tokens_per_param)
    save_runs(records, args.out)
    return {"runs": len(records), "out": args.out}


def emit(result, fmt: str, stream=None) -> None:
    stream = stream or sys.stdout
    rows = result if isinstance(result, list) else [result]
    if fmt == "json":
        stream.write(json.dumps(result, indent=2, default=str) + "\n")
    elif fmt == "csv":
        pd.DataFrame(rows).to_csv(stream, index=False)
    else:
        stream.write(pd.DataFrame(rows).to_string(index=False) + "\n")


def _add_workload_flags(parser, batch_type=int) -> None:
    parser.add_argument("--batch", type=batch_type, default=16)
    parser.add_argument("--input-tokens", type=int, default=1024)
    parser.add_argument("--output-tokens", type=int, default=256)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="archlaw", description="Architecture-conditional scaling laws and inference-aware search."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--output", choices=("table", "csv", "json"), default="table")
    commands = parser.add_subparsers(dest="command", required=True)

    arch = commands.add_parser("arch", help="inspect or enumerate architectures")
    arch_commands = arch.add_subparsers(dest="arch_command", required=True)
    info = arch_commands.add_parser("info")
    info.add_argument("--config", required=True)
    info.add_argument("--t-context", type=int, default=4096)
    info.set_defaults(handler=cmd_arch_info)
    enum = arch_commands.add_parser("enumerate")
    enum.add_argument("--n-target", type=int, required=True)
    enum.add_argument("--layers", type=int, required=True)
    enum.add_argument("--d-head", type=int, help="defaults to 64 up to 1.5B parameters, else 128")
    enum.add_argument("--gqa", default="4", help="comma-separated GQA values")
    enum.add_argument("--d-values", required=True, help="comma-separated hidden sizes")
    ratio = enum.add_mutually_exclusive_group(required=True)
    ratio.add_argument("--r-values")
    ratio.add_argument("--f-values")
    enum.add_argument("--tolerance", type=float, default=0.10)
    enum.add_argument("--d-multiple", type=int, default=None)
    enum.set_defaults(handler=cmd_arch_enumerate)

    fit = commands.add_parser("fit", help="fit a conditional law to run records")
    fit.add_argument("--data", required=True)
    fit.add_argument("--form", choices=("multiplicative", "additive", "joint"), default="multiplicative")
    fit.add_argument("--ref", default="empirical")
    fit.add_argument("--r-min", type=float, default=0.5)
    fit.add_argument("--r-max", type=float, default=5.0)
    fit.add_argument("--sizes", help="fit only these size labels, e.g. 80M,145M")
    fit.add_argument("--holdout")
    fit.add_argument("--out")
    fit.set_defaults(handler=cmd_fit)

    predict = commands.add_parser("predict", help="predicted loss of one architecture")
    predict.add_argument("--law", required=True)
    predict.add_argument("--config", required=True)
    predict.add_argument("--ref", required=True)
    predict.add_argument("--d-tokens", type=float, required=True)
    predict.set_defaults(handler=cmd_predict)

    optimum = commands.add_parser("optimum", help="closed-form optimal architecture")
    optimum.add_argument("--law", required=True)
    optimum.add_argument("--n-target", type=int, required=True)
    optimum.add_argument("--layers", type=int, required=True)
    optimum.add_argument("--d-head", type=int, help="defaults to 64 up to 1.5B parameters, else 128")
    optimum.add_argument("--gqa", type=int, default=4)
    optimum.add_argument("--d-multiple", type=int, default=None)
    optimum.set_defaults(handler=cmd_optimum)

    optimize = commands.add_parser("optimize", help="throughput search under a loss budget")
    optimize.add_argument("--law", required=True)
    optimize.add_argument("--ref", required=True)
    optimize.add_argument("--n-target", type=int, required=True)
    optimize.add_argument("--d-tokens", type=float, required=True)
    optimize.add_argument("--loss-budget", required=True, help="a loss value or 'optimal'")
    optimize.add_argument("--hardware", default="a100-40g")
    optimize.add_argument("--grid", required=True, help="JSON grid file")
    optimize.add_argument("--baseline-gqa", type=int, default=4)
    optimize.add_argument("--report", help="write the per-candidate CSV here")
    _add_workload_flags(optimize)
    optimize.set_defaults(handler=cmd_optimize)

    gqa = commands.add_parser("gqa-search", help="GQA local search with early stopping")
    gqa.add_argument("--config", required=True)
    gqa.add_argument("--evals", required=True, help="CSV with header gqa,loss")
    gqa.add_argument("--epsilon", type=float, default=0.002)
    gqa.add_argument("--baseline-gqa", type=int, default=4)
    gqa.add_argument("--hardware", default="a100-40g")
    _add_workload_flags(gqa)
    gqa.set_defaults(handler=cmd_gqa_search)

    throughput = commands.add_parser("throughput", help="roofline throughput estimate")
    throughput.add_argument("--config", required=True)
    throughput.add_argument("--hardware", default="a100-40g")
    _add_workload_flags(throughput, batch_type=str)
    throughput.set_defaults(handler=cmd_throughput)

    evaluate = commands.add_parser("eval", help="MSE and Spearman of a law on run records")
    evaluate.add_argument("--law", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--ref", default="empirical")
    evaluate.add_argument("--sizes")
    evaluate.set_defaults(handler=cmd_eval)

    table = commands.add_parser("corpus", help="list the bundled architectures")
    table.add_argument("--sizes")
    table.add_argument("--reference", action="store_true", help="list the named comparison models")
    table.set_defaults(handler=cmd_corpus)

    synth = commands.add_parser("synth", help="write synthetic runs for bundled architectures")
    synth.add_argument("--out", required=True)
    synth.add_argument("--law")
    synth.add_argument("--ref")
    synth.add_argument("--sizes", default="80M,145M,297M")
    synth.add_argument("--sigma", type=float, default=0.002)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--tokens-per-param", type=float, default=100)
    synth.set_defaults(handler=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handler: Callable = args.handler
    try:
        result = handler(args)
    except (ValueError, LookupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    emit(result, args.output)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
