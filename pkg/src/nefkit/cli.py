"""Command-line orchestration of the full corpus pipeline.

Each subcommand maps onto one module operation; ``pipeline`` chains
flatten, generate, refine, scale, split, export, and emit-config and
writes a provenance manifest next to the outputs. Outputs are written
atomically (temp file + rename) so every stage is safely re-runnable.

Exit codes: 0 success, 1 data errors, 2 configuration or environment
errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import nefkit
from nefkit import agent as agent_mod
from nefkit import evalharness, mockserver, rag, synth, tuning
from nefkit.config import PipelineConfig, load_pipeline_config
from nefkit.errors import AuthConfigError, ConfigError, NefkitError
from nefkit.specs import (
    ApiSpec,
    endpoint_catalog,
    flatten,
    make_directory_resolver,
    parse_spec_file,
    spec_to_json,
    spec_to_yaml,
)

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _write_json_atomic(path: Path, payload: Any) -> None:
    _write_atomic(path, (json.dumps(payload, indent=2, ensure_ascii=False) + "\n").encode("utf-8"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_flattened(config: PipelineConfig) -> ApiSpec:
    root = parse_spec_file(config.spec_path)
    return flatten(root, make_directory_resolver(config.spec_dir))


def _stage(name: str, path: Path, error: Exception) -> NefkitError:
    wrapped = type(error)(f"[{name}] {path}: {error}")
    return wrapped if isinstance(wrapped, NefkitError) else NefkitError(str(wrapped))


def cmd_flatten(config: PipelineConfig, out: Path) -> None:
    spec = _load_flattened(config)
    text = spec_to_json(spec) if out.suffix == ".json" else spec_to_yaml(spec)
    _write_atomic(out, text.encode("utf-8"))
    print(f"flattened {config.spec_path.name}: {len(endpoint_catalog(spec))} endpoints -> {out}")


def cmd_generate(config: PipelineConfig, out: Path, malformed_out: Path) -> None:
    spec = _load_flattened(config)
    provider = config.generation.build()
    prompt = synth.build_seed_prompt(spec, temperature=config.generation.temperature)
    reply = provider.chat(prompt)
    records, malformed = synth.parse_seed_response(reply.text)
    buffer = _records_jsonl_bytes(records)
    _write_atomic(out, buffer)
    _write_json_atomic(malformed_out, malformed)
    print(f"generated {len(records)} records ({len(malformed)} malformed) -> {out}")


def cmd_refine(config: PipelineConfig, records_path: Path, out: Path, report_path: Path) -> None:
    spec = _load_flattened(config)
    records = synth.read_records_jsonl(records_path)
    kept, reports = synth.refine(spec, records)
    _write_atomic(out, _records_jsonl_bytes(kept))
    _write_json_atomic(
        report_path,
        {"kept": len(kept), "total": len(records), "reports": [r.to_mapping() for r in reports]},
    )
    print(f"refined {len(records)} records -> kept {len(kept)} -> {out}")


def cmd_scale(config: PipelineConfig, seeds_path: Path, out: Path) -> None:
    spec = _load_flattened(config)
    seeds = synth.read_records_jsonl(seeds_path)
    provider = config.generation.build()
    context = ""
    if config.context_path is not None:
        context = config.context_path.read_text(encoding="utf-8")
    scaled = synth.scale_dataset(
        provider,
        spec,
        seeds,
        n=config.scaling_n,
        include_seeds=config.include_seeds,
        context=context,
    )
    _write_atomic(out, _records_jsonl_bytes(scaled))
    print(f"scaled {len(seeds)} seeds -> {len(scaled)} records -> {out}")


def cmd_split(config: PipelineConfig, records_path: Path, train_out: Path, eval_out: Path) -> None:
    records = synth.read_records_jsonl(records_path)
    result = synth.split_dataset(records, config.split_ratio, config.split_seed)
    _write_atomic(train_out, _records_jsonl_bytes(result.train))
    _write_atomic(eval_out, _records_jsonl_bytes(result.eval))
    print(
        f"split {len(records)} records at ratio {config.split_ratio} "
        f"(seed {config.split_seed}) -> {len(result.train)} train / {len(result.eval)} eval"
    )


def cmd_export(records_path: Path, out: Path) -> None:
    import io

    records = synth.read_records_jsonl(records_path)
    buffer = io.BytesIO()
    count = synth.export_instruct_csv(records, buffer)
    _write_atomic(out, buffer.getvalue())
    print(f"exported {count} instruct/output rows -> {out}")


def cmd_emit_config(out: Path) -> None:
    import io

    qlora, trainer = tuning.reference_defaults()
    buffer = io.BytesIO()
    tuning.emit_config(qlora, trainer, buffer)
    _write_atomic(out, buffer.getvalue())
    print(f"emitted tuning config -> {out}")


def cmd_index(config: PipelineConfig, out: Path) -> None:
    spec = _load_flattened(config)
    chunks = rag.recursive_split(spec_to_yaml(spec), config.chunk_size, config.overlap)
    provider = config.embedding.build()
    index = rag.build_index(chunks, provider)
    import io

    buffer = io.BytesIO()
    rag.save_index(index, buffer)
    _write_atomic(out, buffer.getvalue())
    print(f"indexed {len(index.entries)} chunks (dim {index.dimension}) -> {out}")


def cmd_rag_answer(config: PipelineConfig, index_path: Path, query: str) -> None:
    index = rag.load_index(index_path)
    provider = config.embedding.build()
    gen_provider = config.generation.build()

    class _Combined:
        provider_id = "rag-combined"

        def chat(self, request):  # generation model answers, embedder retrieves
            return gen_provider.chat(request)

        def embed(self, texts):
            return provider.embed(texts)

    result = rag.answer_query(index, query, config.top_k, _Combined())
    print(json.dumps({"malformed": result.malformed, "text": result.text}, indent=2))


def _eval_set_from_csv(path: Path) -> list[tuple[str, str]]:
    with open(path, "rb") as handle:
        pairs = synth.import_instruct_csv(handle)
    return [(p.instruct, p.output) for p in pairs]


def _build_responder(
    name: str,
    eval_set: Sequence[tuple[str, str]],
    config: PipelineConfig,
    index_path: Optional[Path],
    url: Optional[str],
) -> evalharness.Responder:
    if name == "echo":
        return evalharness.EchoResponder(eval_set)
    if name == "constant":
        return evalharness.ConstantResponder()
    if name == "rag":
        if index_path is None:
            raise ConfigError("--index is required for the rag responder")
        index = rag.load_index(index_path)
        embedder = config.embedding.build()
        generator = config.generation.build()

        class _RagResponder:
            id = "rag-baseline"

            def answer(self, query: str) -> str:
                class _Combined:
                    provider_id = "rag-combined"

                    def chat(self, request):
                        return generator.chat(request)

                    def embed(self, texts):
                        return embedder.embed(texts)

                return rag.answer_query(index, query, config.top_k, _Combined()).text

        return _RagResponder()
    if name == "http":
        if not url:
            raise ConfigError("--url is required for the http responder")
        return evalharness.HttpResponder(url)
    raise ConfigError(f"unknown responder {name!r} (expected echo, constant, rag, or http)")


def cmd_evaluate(
    config: PipelineConfig,
    eval_csv: Path,
    responder_name: str,
    iterations: int,
    artifact_dir: Path,
    index_path: Optional[Path],
    url: Optional[str],
) -> None:
    eval_set = _eval_set_from_csv(eval_csv)
    responder = _build_responder(responder_name, eval_set, config, index_path, url)
    judge: evalharness.Judge
    if config.judge.kind == "local":
        judge = evalharness.LocalJudge()
    else:
        judge = evalharness.LlmJudge(config.judge.build())
    provider = config.embedding.build()
    summary = evalharness.run_protocol(
        responder, eval_set, judge, provider, iterations=iterations, artifact_dir=artifact_dir
    )
    print(
        f"evaluated {responder.id} over {len(eval_set)} queries x {iterations} iterations: "
        f"accuracy [{summary.accuracy_min:.4f}, {summary.accuracy_max:.4f}], "
        f"similarity [{summary.similarity_min:.4f}, {summary.similarity_max:.4f}] "
        f"-> {artifact_dir}"
    )


def cmd_serve_mock(config: PipelineConfig) -> None:
    spec = _load_flattened(config)
    server = mockserver.serve(spec, (config.server_host, config.server_port))
    print(f"mock NEF server listening on {server.base_url} (Ctrl-C to stop)")
    try:
        import time

        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        server.stop()
        print("stopped")


def cmd_agent_run(
    config: PipelineConfig,
    records_path: Path,
    base_url: str,
    out: Path,
    username: str,
    password: str,
) -> int:
    spec = _load_flattened(config)
    records = synth.read_records_jsonl(records_path)
    credentials = agent_mod.Credentials(username=username, password=password)
    results = agent_mod.run_records(records, spec, base_url, credentials)
    lines = []
    for rec, report in results:
        payload = {"request": rec.request, "api_call": rec.api_call, **report.to_mapping()}
        lines.append(json.dumps(payload, ensure_ascii=False))
    _write_atomic(out, ("\n".join(lines) + "\n").encode("utf-8"))
    rate = agent_mod.pass_rate(results)
    succeeded = sum(1 for _, r in results if r.success)
    print(f"executed {len(results)} records: {succeeded} succeeded, pass rate {rate:.3f} -> {out}")
    return EXIT_OK if succeeded == len(results) else EXIT_DATA_ERROR


def cmd_pipeline(config: PipelineConfig, config_path: Path, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    flattened_path = out_dir / "flattened.yaml"
    records_path = out_dir / "records.jsonl"
    malformed_path = out_dir / "malformed.json"
    kept_path = out_dir / "kept.jsonl"
    report_path = out_dir / "validation-report.json"
    scaled_path = out_dir / "scaled.jsonl"
    train_jsonl = out_dir / "train.jsonl"
    eval_jsonl = out_dir / "eval.jsonl"
    train_csv = out_dir / "train.csv"
    eval_csv = out_dir / "eval.csv"
    config_json = out_dir / "tuning-config.json"

    cmd_flatten(config, flattened_path)
    cmd_generate(config, records_path, malformed_path)
    cmd_refine(config, records_path, kept_path, report_path)
    cmd_scale(config, kept_path, scaled_path)
    cmd_split(config, scaled_path, train_jsonl, eval_jsonl)
    cmd_export(train_jsonl, train_csv)
    cmd_export(eval_jsonl, eval_csv)
    cmd_emit_config(config_json)

    inputs = {"config": _sha256(config_path), "spec": _sha256(config.spec_path)}
    if config.context_path is not None:
        inputs["context"] = _sha256(config.context_path)
    if config.generation.canned_path is not None:
        inputs["canned"] = _sha256(config.generation.canned_path)
    manifest = {
        "tool": {"name": "nefkit", "version": nefkit.__version__},
        "input_sha256": inputs,
        "artifacts": {
            p.name: _sha256(p)
            for p in (
                flattened_path,
                records_path,
                kept_path,
                scaled_path,
                train_jsonl,
                eval_jsonl,
                train_csv,
                eval_csv,
                config_json,
            )
        },
    }
    _write_json_atomic(out_dir / "run-manifest.json", manifest)
    print(json.dumps(manifest, indent=2))
    print(f"pipeline complete -> {out_dir}")


def _records_jsonl_bytes(records: Sequence[synth.SyntheticRecord]) -> bytes:
    import io

    buffer = io.BytesIO()
    synth.write_records_jsonl(records, buffer)
    return buffer.getvalue()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nefkit",
        description="Build, validate, scale, and evaluate query-to-API-call corpora for NEF services.",
    )
    parser.add_argument("--config", required=True, help="pipeline config file (YAML or JSON)")
    parser.add_argument("--out-dir", help="override the config's output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flatten", help="resolve every reference into one self-contained spec")
    p.add_argument("--out", help="output file (.yaml or .json)")

    p = sub.add_parser("generate", help="ask the generation model for seed records")
    p.add_argument("--out", help="records JSONL output")

    p = sub.add_parser("refine", help="validate records against the spec and drop fabrications")
    p.add_argument("--records", help="records JSONL input")
    p.add_argument("--out", help="kept records JSONL output")
    p.add_argument("--report", help="validation report JSON output")

    p = sub.add_parser("scale", help="expand each seed into request variations")
    p.add_argument("--seeds", help="seed records JSONL input")
    p.add_argument("--out", help="scaled records JSONL output")
    p.add_argument("--n", type=int, help="variations per seed")

    p = sub.add_parser("split", help="deterministic train/eval split")
    p.add_argument("--records", help="records JSONL input")
    p.add_argument("--out-train", help="train JSONL output")
    p.add_argument("--out-eval", help="eval JSONL output")

    p = sub.add_parser("export", help="export records to instruct/output CSV")
    p.add_argument("--records", required=True, help="records JSONL input")
    p.add_argument("--out", required=True, help="CSV output")

    p = sub.add_parser("emit-config", help="write the reference tuning configuration")
    p.add_argument("--out", help="tuning-config.json output")

    p = sub.add_parser("index", help="chunk and embed the flattened spec")
    p.add_argument("--out", help="vector index output file")

    p = sub.add_parser("rag-answer", help="answer one query with the retrieval baseline")
    p.add_argument("--index", required=True, help="vector index file")
    p.add_argument("--query", required=True)

    p = sub.add_parser("evaluate", help="run the iterated evaluation protocol")
    p.add_argument("--eval-csv", required=True, help="eval split CSV")
    p.add_argument(
        "--responder", required=True, help="echo | constant | rag | http"
    )
    p.add_argument("--iterations", type=int, help="defaults to the config value")
    p.add_argument("--artifact-dir", help="directory for per-iteration artifacts")
    p.add_argument("--index", help="vector index file (rag responder)")
    p.add_argument("--url", help="responder endpoint base URL (http responder)")

    sub.add_parser("serve-mock", help="serve the fixture endpoints of the spec")

    p = sub.add_parser("agent-run", help="plan and execute records against a server")
    p.add_argument("--records", required=True, help="records JSONL input")
    p.add_argument("--base-url", required=True)
    p.add_argument("--out", help="per-record report JSONL output")
    p.add_argument("--username", default="admin")
    p.add_argument("--password", default="admin")

    sub.add_parser("pipeline", help="flatten, generate, refine, scale, split, export, emit-config")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_pipeline_config(args.config)
        if args.out_dir:
            config = _with_output_dir(config, Path(args.out_dir).resolve())
        out_dir = config.output_dir
        if args.command == "flatten":
            cmd_flatten(config, Path(args.out) if args.out else out_dir / "flattened.yaml")
        elif args.command == "generate":
            cmd_generate(
                config,
                Path(args.out) if args.out else out_dir / "records.jsonl",
                out_dir / "malformed.json",
            )
        elif args.command == "refine":
            cmd_refine(
                config,
                Path(args.records) if args.records else out_dir / "records.jsonl",
                Path(args.out) if args.out else out_dir / "kept.jsonl",
                Path(args.report) if args.report else out_dir / "validation-report.json",
            )
        elif args.command == "scale":
            if args.n:
                config = _replace(config, scaling_n=args.n)
            cmd_scale(
                config,
                Path(args.seeds) if args.seeds else out_dir / "kept.jsonl",
                Path(args.out) if args.out else out_dir / "scaled.jsonl",
            )
        elif args.command == "split":
            cmd_split(
                config,
                Path(args.records) if args.records else out_dir / "scaled.jsonl",
                Path(args.out_train) if args.out_train else out_dir / "train.jsonl",
                Path(args.out_eval) if args.out_eval else out_dir / "eval.jsonl",
            )
        elif args.command == "export":
            cmd_export(Path(args.records), Path(args.out))
        elif args.command == "emit-config":
            cmd_emit_config(Path(args.out) if args.out else out_dir / "tuning-config.json")
        elif args.command == "index":
            cmd_index(config, Path(args.out) if args.out else out_dir / "spec-index.bin")
        elif args.command == "rag-answer":
            cmd_rag_answer(config, Path(args.index), args.query)
        elif args.command == "evaluate":
            cmd_evaluate(
                config,
                Path(args.eval_csv),
                args.responder,
                args.iterations or config.eval_iterations,
                Path(args.artifact_dir) if args.artifact_dir else out_dir / "eval",
                Path(args.index) if args.index else None,
                args.url,
            )
        elif args.command == "serve-mock":
            cmd_serve_mock(config)
        elif args.command == "agent-run":
            return cmd_agent_run(
                config,
                Path(args.records),
                args.base_url,
                Path(args.out) if args.out else out_dir / "agent-reports.jsonl",
                args.username,
                args.password,
            )
        elif args.command == "pipeline":
            cmd_pipeline(config, Path(args.config), out_dir)
        return EXIT_OK
    except (ConfigError, AuthConfigError) as exc:
        print(f"nefkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except NefkitError as exc:
        print(f"nefkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except OSError as exc:
        print(f"nefkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


def _replace(config: PipelineConfig, **changes: Any) -> PipelineConfig:
    import dataclasses

    return dataclasses.replace(config, **changes)


def _with_output_dir(config: PipelineConfig, out_dir: Path) -> PipelineConfig:
    return _replace(config, output_dir=out_dir)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
