"""Command-line entry point: filter | augment | eval | dpo-prep | losses.

Every output file starts with one metadata header object
{"tool_version", "seed", "config_digest"} so provenance survives copies.
Exit code is 0 only when no per-item error occurred; otherwise the errors are
written as JSON to stderr and the exit code is 1.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import __version__
from . import dataset as ds
from . import evalharness as ev
from . import trainmath as tm
from .config import PipelineConfig
from .corpus import SourceUnit, filter_units, load_corpus_dir
from .errors import (
    AssertForgeError,
    AttemptsExhausted,
    DomainError,
    EndpointUnreachable,
    InsufficientValidResponses,
    SchemaError,
)
from .pipeline import AugmentConfig, render_counts_table, run_augment
from .toolchain import Toolchain


def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig.from_mapping({})
    try:
        return PipelineConfig.from_file(path)
    except (FileNotFoundError, DomainError) as exc:
        raise click.ClickException(str(exc))


def _header(cfg: PipelineConfig) -> dict:
    return {
        "tool_version": __version__,
        "seed": cfg.seed,
        "config_digest": cfg.config_digest,
    }


def _finish(errors: list[dict]) -> None:
    if errors:
        click.echo(json.dumps({"errors": errors}), err=True)
        sys.exit(1)


@click.group()
@click.version_option(version=__version__)
def main():
    """Verilog bug-injection datasets and assertion-failure benchmarking."""


@main.command("filter")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--corpus-dir", type=click.Path(), default=None, help="Overrides corpus.dir.")
@click.option("--out-dir", type=click.Path(), default=None, help="Overrides out.dir.")
def filter_cmd(config_path, corpus_dir, out_dir):
    """Apply the stage-1 filter rules and write the report plus manifest."""
    cfg = _load_config(config_path)
    corpus_dir = corpus_dir or cfg.corpus_dir
    out = Path(out_dir or cfg.out_dir)
    try:
        units = load_corpus_dir(corpus_dir)
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc))
    accepted, rows = filter_units(units)
    header = _header(cfg)
    ds.write_jsonl(rows, out / "filter_report.jsonl", header=header)
    ds.write_jsonl(
        [{"id": u.id, "path": u.path} for u in accepted],
        out / "manifest.jsonl",
        header=header,
    )
    click.echo(f"{len(accepted)} of {len(units)} files accepted -> {out / 'manifest.jsonl'}")


def _load_manifest_units(manifest: Path) -> tuple[list[SourceUnit], list[dict]]:
    units, errors = [], []
    _, rows = ds.strip_meta_header(ds.read_jsonl(manifest))
    for row in rows:
        p = Path(row["path"])
        if not p.is_file():
            errors.append({"unit_id": row["id"], "stage": "load", "error": f"missing file: {p}"})
            continue
        units.append(
            SourceUnit.from_text(row["id"], p.read_text(encoding="utf-8", errors="replace"), str(p))
        )
    return units, errors


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", type=click.Path(), default=None, help="Defaults to out.dir/manifest.jsonl.")
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--parallel", type=int, default=None)
@click.option("--keep-temp", is_flag=True, default=False)
def augment(config_path, manifest, out_dir, parallel, keep_temp):
    """Generate the pt/bug/svabug datasets, split plan, and benchmark cases."""
    cfg = _load_config(config_path)
    out = Path(out_dir or cfg.out_dir)
    manifest = Path(manifest or (out / "manifest.jsonl"))
    if not manifest.is_file():
        raise click.ClickException(f"manifest not found: {manifest}")
    if keep_temp:
        cfg.tools.keep_temp = True
    units, load_errors = _load_manifest_units(manifest)
    tc = Toolchain(cfg.tools)
    aug_cfg = AugmentConfig(
        seed=cfg.seed,
        mutations_per_unit=cfg.mutations_per_unit,
        split_fraction=cfg.split_fraction,
        verify_depth=cfg.tools.verifier_depth,
        parallel=parallel or cfg.parallel,
        bug_source=cfg.bug_source,
    )
    result = run_augment(units, tc, aug_cfg)
    result.errors = load_errors + result.errors

    header = _header(cfg)
    ds.write_jsonl([r.to_json() for r in result.pt], out / "pt.jsonl", header=header)
    ds.write_jsonl([r.to_json() for r in result.bug], out / "bug.jsonl", header=header)
    ds.write_jsonl(
        [r.to_json() for r in result.svabug], out / "svabug.jsonl", header=header
    )
    ds.write_jsonl(
        [c.to_json() for c in result.eval_cases],
        out / "sva_eval_machine.jsonl",
        header=header,
    )
    split_doc = {"meta": header, **result.split_plan.to_json()}
    (out / "split_plan.json").write_text(json.dumps(split_doc, indent=2) + "\n", encoding="utf-8")
    report = {
        "meta": header,
        "counts": result.counts,
        "cot": result.cot_stats,
        "drops": result.drops,
        "errors": result.errors,
    }
    (out / "augment_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8"
    )
    click.echo(render_counts_table(result.counts))
    _finish(result.errors)


@main.command("eval")
@click.argument("benchmark", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default="report.json")
@click.option("--results", "results_path", type=click.Path(), default=None,
              help="Per-case results JSONL (input for dpo-prep).")
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--n", "n_target", type=int, default=None)
@click.option("--k", "ks_text", type=str, default=None, help="Comma-separated ks, e.g. 1,5.")
@click.option("--mode", type=click.Choice(["textual", "reverify"]), default=None)
@click.option("--line-only", is_flag=True, default=False,
              help="Judge on the buggy line alone (paper-literal).")
@click.option("--parallel", type=int, default=None)
def eval_cmd(benchmark, config_path, out_path, results_path, csv_path, n_target,
             ks_text, mode, line_only, parallel):
    """Benchmark the configured solver over an EvalCase JSONL file."""
    cfg = _load_config(config_path)
    n_target = n_target or cfg.eval_n
    ks = cfg.eval_ks
    if ks_text:
        ks = tuple(sorted({int(k) for k in ks_text.split(",") if k.strip()}))
    if not ks or n_target < max(ks):
        raise click.ClickException(f"--n {n_target} must be >= every k in {ks}")
    mode = mode or cfg.eval_mode
    workers = parallel or cfg.parallel
    tc = Toolchain(cfg.tools)

    try:
        _, rows = ds.strip_meta_header(ds.read_jsonl(benchmark))
        cases = [ev.EvalCase.from_json(r) for r in rows]
    except (SchemaError, ValueError) as exc:
        raise click.ClickException(f"invalid benchmark file: {exc}")
    if not cases:
        raise click.ClickException("benchmark file holds no cases")

    errors: list[dict] = []

    def run_case(case: ev.EvalCase):
        def judge_fn(resp):
            return ev.judge(
                resp,
                case.golden,
                mode,
                line_only=line_only,
                toolchain=tc if mode == "reverify" else None,
                buggy_code=case.buggy_sv_code if mode == "reverify" else None,
            )

        return ev.collect_responses(
            case, tc.llm_call, n_target=n_target, judge_fn=judge_fn
        )

    results = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(c, pool.submit(run_case, c)) for c in cases]
            outcomes = [(c, f) for c, f in futures]
    else:
        outcomes = [(c, None) for c in cases]

    for case, fut in outcomes:
        try:
            results.append(fut.result() if fut is not None else run_case(case))
        except (InsufficientValidResponses, EndpointUnreachable, AttemptsExhausted,
                AssertForgeError) as exc:
            errors.append({"case_id": case.id, "stage": "collect", "error": str(exc)})

    header = _header(cfg)
    if results:
        report = ev.aggregate(results, cases, ks=ks, n_target=n_target)
        doc = {"meta": header, **report.to_json()}
        Path(out_path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        if csv_path:
            Path(csv_path).write_text(report.to_csv(), encoding="utf-8")
        if results_path:
            ds.write_jsonl(
                [
                    {
                        "case_id": r.case_id,
                        "n": r.n,
                        "c": r.c,
                        "responses": [
                            {"raw_text": m.raw_text, "valid_json": m.valid_json, "verdict": v}
                            for m, v in r.responses
                        ],
                    }
                    for r in results
                ],
                results_path,
                header=header,
            )
        for k in ks:
            click.echo(f"pass@{k} = {report.overall[k]:.4f}")
    elif not errors:
        raise click.ClickException("no results produced")
    _finish(errors)


@main.command("dpo-prep")
@click.argument("results_file", type=click.Path(exists=True))
@click.option("--benchmark", type=click.Path(exists=True), required=True,
              help="The EvalCase JSONL the results were produced from.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default="triples.jsonl")
@click.option("--n", "n_expected", type=int, default=20)
def dpo_prep(results_file, benchmark, config_path, out_path, n_expected):
    """Select challenging cases from eval results and emit preference triples."""
    cfg = _load_config(config_path)
    _, case_rows = ds.strip_meta_header(ds.read_jsonl(benchmark))
    cases = {r["id"]: ev.EvalCase.from_json(r) for r in case_rows}
    _, result_rows = ds.strip_meta_header(ds.read_jsonl(results_file))

    errors: list[dict] = []
    judged_entries = []
    for row in result_rows:
        case = cases.get(row["case_id"])
        if case is None:
            errors.append({"case_id": row["case_id"], "error": "unknown case id"})
            continue
        valid = [r for r in row["responses"] if r.get("valid_json")]
        if len(valid) != n_expected:
            errors.append(
                {
                    "case_id": row["case_id"],
                    "error": f"expected {n_expected} valid responses, got {len(valid)}",
                }
            )
            continue
        question = ev.solve_prompt(case)
        answer = json.dumps(
            {
                "buggy_line": case.golden.buggy_line,
                "fix": case.golden.corrected_line,
                "cot": None,
            }
        )
        judged_entries.append(
            (question, answer, [(r["raw_text"], r["verdict"]) for r in valid])
        )

    challenging = tm.select_challenging(judged_entries, n_expected=n_expected)
    triples = tm.build_triples(challenging)
    ds.write_jsonl([t.to_json() for t in triples], out_path, header=_header(cfg))
    click.echo(
        f"{len(challenging)} challenging cases -> {len(triples)} triples -> {out_path}"
    )
    _finish(errors)


@main.command()
@click.argument("probs_file", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--beta", type=float, default=0.1)
@click.option("--reduction", type=click.Choice(["sum", "mean"]), default="sum")
def losses(probs_file, config_path, beta, reduction):
    """Compute the three training losses from explicit probability records.

    Input rows: {"kind":"pt","token_probs":[...]} for one pretraining sample,
    {"kind":"sft","token_probs":[...]} for one answer's teacher-forced probs,
    {"kind":"dpo","policy_p":..,"ref_p":..,"policy_n":..,"ref_n":..} for one
    preference triple's sequence probabilities.
    """
    cfg = _load_config(config_path)
    _, rows = ds.strip_meta_header(ds.read_jsonl(probs_file))
    pt_samples, sft_pairs, dpo_rows = [], [], []
    for i, row in enumerate(rows):
        kind = row.get("kind")
        if kind == "pt":
            pt_samples.append(row["token_probs"])
        elif kind == "sft":
            sft_pairs.append(row["token_probs"])
        elif kind == "dpo":
            dpo_rows.append(row)
        else:
            raise click.ClickException(f"row {i + 1}: unknown kind {kind!r}")

    out: dict = {"meta": _header(cfg), "counts": {"pt": len(pt_samples), "sft": len(sft_pairs), "dpo": len(dpo_rows)}}
    if pt_samples:
        table = {((), ("s", i)): probs for i, probs in enumerate(pt_samples)}
        provider = tm.ExplicitProvider(seq_table=table)
        out["pt_loss"] = tm.pt_loss(
            provider, [("s", i) for i in range(len(pt_samples))], reduction=reduction
        )
    if sft_pairs:
        table = {((("x", i),), ("y", i)): probs for i, probs in enumerate(sft_pairs)}
        provider = tm.ExplicitProvider(seq_table=table)
        out["sft_loss"] = tm.sft_loss(
            provider,
            [((("x", i),), ("y", i)) for i in range(len(sft_pairs))],
            reduction=reduction,
        )
    if dpo_rows:
        pol_table, ref_table, triples = {}, {}, []
        for i, row in enumerate(dpo_rows):
            x, p, n = (("x", i),), ("p", i), ("n", i)
            pol_table[(x, p)] = [row["policy_p"]]
            pol_table[(x, n)] = [row["policy_n"]]
            ref_table[(x, p)] = [row["ref_p"]]
            ref_table[(x, n)] = [row["ref_n"]]
            triples.append((x, p, n))
        out["dpo_loss"] = tm.dpo_loss(
            tm.ExplicitProvider(seq_table=pol_table),
            tm.ExplicitProvider(seq_table=ref_table),
            triples,
            beta=beta,
        )
    click.echo(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
