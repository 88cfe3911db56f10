"""Command-line interface over the offline pipeline and the service.

Exit codes: 0 success, 1 validation failure, 2 I/O failure. Diagnostics go
to stderr; artifacts are JSON/JSONL on stdout or at --out.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import losses as losses_mod
from . import metrics as metrics_mod
from .config import Config, ConfigError, load_config
from .dataconstruct import (
    DatasetError,
    filter_candidates,
    format_trajectory,
    load_dataset,
    load_sft_dataset,
    sample_candidates,
)
from .driver import DriverError, canned_executor, new_session, run_turn, scripted_policy
from .registry import (
    RegistryError,
    ToolDoc,
    build_registry,
    load_registry,
    serialize_registry,
)
from .rewards import GroupTooSmall, NonFiniteInput, group_advantages, score
from .trajectory import ParseError, parse, serialize


class ValidationFailure(Exception):
    """Exit code 1."""


class IoFailure(Exception):
    """Exit code 2."""


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _write_bytes(path: str, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _load_registry_file(path: str):
    try:
        return load_registry(_read_bytes(path))
    except RegistryError as exc:
        raise ValidationFailure(f"bad registry file {path}: {exc}") from exc


def _load_dataset_file(path: str, registry):
    try:
        return load_dataset(path, registry)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except DatasetError as exc:
        raise ValidationFailure(str(exc)) from exc


def _load_jsonl(path: str, required: tuple[str, ...]) -> list[dict]:
    rows = []
    for line_no, line in enumerate(_read_text(path).splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationFailure(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        missing = [key for key in required if key not in obj]
        if missing:
            raise ValidationFailure(f"{path}:{line_no}: missing keys {missing}")
        rows.append(obj)
    return rows


def _jsonl(rows) -> str:
    return "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)


def _config_from_args(args) -> Config:
    if getattr(args, "config", None):
        try:
            return load_config(args.config)
        except ConfigError as exc:
            raise ValidationFailure(str(exc)) from exc
    return Config()


def _registry_path(args, config: Config) -> str:
    path = getattr(args, "registry", None) or config.registry_path
    if not path:
        raise ValidationFailure("no registry given: pass --registry or set it in the config")
    return path


def _dataset_path(args, config: Config, split: str = "train") -> str:
    path = getattr(args, "dataset", None) or config.dataset_paths.get(split)
    if not path:
        raise ValidationFailure(
            f"no dataset given: pass --dataset or configure datasets.{split}"
        )
    return path


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_registry_build(args) -> int:
    text = _read_text(args.tools)
    try:
        rows = json.loads(text) if text.lstrip().startswith("[") else [
            json.loads(line) for line in text.splitlines() if line.strip()
        ]
        tools = [ToolDoc.from_json(obj) for obj in rows]
    except (json.JSONDecodeError, ValueError) as exc:
        raise ValidationFailure(f"bad tools file: {exc}") from exc
    try:
        registry = build_registry(tools, args.strategy, branching=args.branching)
    except RegistryError as exc:
        raise ValidationFailure(str(exc)) from exc
    _write_bytes(args.out, serialize_registry(registry))
    print(f"built {args.strategy} registry of {len(registry)} tools -> {args.out}", file=sys.stderr)
    return 0


def _cmd_registry_inspect(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    if args.surface is not None:
        resolved = registry.resolve(args.surface)
        if resolved is None:
            raise ValidationFailure(f"unknown token surface {args.surface!r}")
        doc, token = resolved
        _write_text(args.out, json.dumps(
            {"surface": token.surface, "tool_index": token.tool_index, "tool": doc.to_json()},
            indent=2, ensure_ascii=False,
        ))
        return 0
    summary = {
        "strategy": registry.strategy,
        "tools": len(registry),
        "tokens": [
            {"surface": t.surface, "name": registry.tools[t.tool_index].name}
            for t in registry.tokens
        ],
    }
    _write_text(args.out, json.dumps(summary, indent=2, ensure_ascii=False))
    return 0


def _cmd_data_candidates(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    records = _load_dataset_file(_dataset_path(args, config, args.split or "train"), registry)
    if args.split:
        records = [r for r in records if r.split == args.split]
    k = args.k if args.k is not None else config.dataconstruct.k
    retrieved = (
        args.retrieved_count
        if args.retrieved_count is not None
        else config.dataconstruct.retrieved_count
    )
    seed = args.seed if args.seed is not None else config.dataconstruct.seed
    try:
        rows = [
            sample_candidates(r, registry, k=k, retrieved_count=retrieved, seed=seed).to_json()
            for r in records
        ]
    except DatasetError as exc:
        raise ValidationFailure(str(exc)) from exc
    _write_text(args.out, _jsonl(rows))
    return 0


def _cmd_data_filter(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    records = {r.id: r for r in _load_dataset_file(_dataset_path(args, config), registry)}
    rows = _load_jsonl(args.input, ("record_id", "text"))
    accepted_rows = []
    reject_rows = []
    for position, row in enumerate(rows):
        record = records.get(row["record_id"])
        if record is None:
            raise ValidationFailure(f"candidate {position}: unknown record id {row['record_id']!r}")
        verdict = filter_candidates([row["text"]], record, registry)[0]
        if verdict.accepted:
            accepted_rows.append(
                {"record_id": record.id, "text": serialize(verdict.trajectory)}
            )
        else:
            reject_rows.append(
                {"record_id": record.id, "candidate": position, "reason": verdict.reason}
            )
    _write_text(args.out, _jsonl(accepted_rows))
    if args.rejects:
        _write_text(args.rejects, _jsonl(reject_rows))
    print(f"accepted {len(accepted_rows)}/{len(rows)} candidates", file=sys.stderr)
    return 0


def _cmd_data_format(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    rows = _load_jsonl(args.input, ("record_id", "text"))
    out_rows = []
    for position, row in enumerate(rows):
        try:
            trajectory = parse(row["text"])
            formatted = format_trajectory(trajectory, registry)
        except (ParseError, DatasetError) as exc:
            raise ValidationFailure(f"candidate {position} ({row['record_id']}): {exc}") from exc
        out_rows.append({"record_id": row["record_id"], "text": serialize(formatted)})
    _write_text(args.out, _jsonl(out_rows))
    return 0


def _cmd_phase1_examples(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    dataset = getattr(args, "dataset", None) or config.dataset_paths.get("train")
    records = _load_dataset_file(dataset, registry) if dataset else []
    try:
        examples = losses_mod.build_phase1_examples(registry, records)
    except DatasetError as exc:
        raise ValidationFailure(str(exc)) from exc
    _write_text(args.out, _jsonl(e.to_json() for e in examples))
    return 0


def _cmd_sft_examples(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    try:
        records = load_sft_dataset(args.sft_dataset)
        examples = losses_mod.build_sft_examples(records, registry)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    except DatasetError as exc:
        raise ValidationFailure(str(exc)) from exc
    _write_text(args.out, _jsonl(e.to_json() for e in examples))
    return 0


def _cmd_score(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    records = {r.id: r for r in _load_dataset_file(_dataset_path(args, config), registry)}
    rows = _load_jsonl(args.trajectories, ("record_id", "text"))
    multi = args.multi_step or config.reward.multi_step_scoring == "per_step"
    out_rows = []
    for row in rows:
        record = records.get(row["record_id"])
        if record is None:
            raise ValidationFailure(f"unknown record id {row['record_id']!r}")
        breakdown = score(row["text"], record.gt_steps(), registry, multi_step=multi)
        out_rows.append({"record_id": record.id, **breakdown.to_json()})
    _write_text(args.out, _jsonl(out_rows))
    return 0


def _cmd_advantages(args) -> int:
    config = _config_from_args(args)
    if args.rewards is not None:
        try:
            rewards = [float(x) for x in args.rewards.split(",") if x.strip()]
        except ValueError as exc:
            raise ValidationFailure(f"bad --rewards list: {exc}") from exc
    elif args.input is not None:
        rows = _load_jsonl(args.input, ("rewards",))
        rewards = [value for row in rows for value in row["rewards"]]
    else:
        raise ValidationFailure("provide --rewards or --in")
    epsilon = args.epsilon if args.epsilon is not None else config.reward.epsilon
    try:
        group = group_advantages(rewards, epsilon_clip=epsilon)
    except (GroupTooSmall, NonFiniteInput) as exc:
        raise ValidationFailure(str(exc)) from exc
    _write_text(args.out, json.dumps(group.to_json(), ensure_ascii=False, indent=2))
    return 0


def _cmd_eval(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    records = _load_dataset_file(_dataset_path(args, config), registry)
    rows = _load_jsonl(args.predictions, ("record_id", "text"))
    predictions = {row["record_id"]: row["text"] for row in rows}
    try:
        report = metrics_mod.evaluate_dataset(predictions, records, registry, turn_scope=args.scope)
    except metrics_mod.UnknownRecordId as exc:
        raise ValidationFailure(str(exc)) from exc
    print(report.format_table())
    if args.out:
        _write_text(args.out, json.dumps(report.to_json(), ensure_ascii=False, indent=2))
    if args.per_record:
        _write_text(args.per_record, report.per_record_jsonl() + "\n")
    return 0


def _cmd_simulate(args) -> int:
    config = _config_from_args(args)
    registry = _load_registry_file(_registry_path(args, config))
    records = {r.id: r for r in _load_dataset_file(_dataset_path(args, config), registry)}
    rows = _load_jsonl(args.script, ("record_id", "responses"))
    out_rows = []
    for row in rows:
        record = records.get(row["record_id"])
        if record is None:
            raise ValidationFailure(f"unknown record id {row['record_id']!r}")
        session = new_session(registry, max_steps=args.max_steps, max_chars=args.max_chars)
        policy = scripted_policy(row["responses"])
        try:
            for turn in record.turns:
                run_turn(session, turn.user_text, policy, canned_executor(record))
        except DriverError as exc:
            raise ValidationFailure(f"record {record.id!r}: {exc}") from exc
        out_rows.append({"record_id": record.id, "text": serialize(session.trajectory)})
    _write_text(args.out, _jsonl(out_rows))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        raise ValidationFailure(str(exc)) from exc
    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokencall")
    config_parent = argparse.ArgumentParser(add_help=False)
    config_parent.add_argument("--config", help="config file (key=value sections or JSON)")
    sub = parser.add_subparsers(dest="command", required=True)

    registry_p = sub.add_parser("registry", help="build or inspect registries")
    registry_sub = registry_p.add_subparsers(dest="subcommand", required=True)
    build_p = registry_sub.add_parser("build", parents=[config_parent])
    build_p.add_argument("--tools", required=True, help="JSON array or JSONL of tool docs")
    build_p.add_argument("--strategy", default="atomic",
                         choices=["atomic", "semantic", "numeric", "hierarchical"])
    build_p.add_argument("--branching", type=int, default=10)
    build_p.add_argument("--out", required=True)
    build_p.set_defaults(func=_cmd_registry_build)
    inspect_p = registry_sub.add_parser("inspect", parents=[config_parent])
    inspect_p.add_argument("--registry")
    inspect_p.add_argument("--surface")
    inspect_p.add_argument("--out")
    inspect_p.set_defaults(func=_cmd_registry_inspect)

    data_p = sub.add_parser("data", help="candidate sampling, filtering, formatting")
    data_sub = data_p.add_subparsers(dest="subcommand", required=True)
    cand_p = data_sub.add_parser("candidates", parents=[config_parent])
    cand_p.add_argument("--registry")
    cand_p.add_argument("--dataset")
    cand_p.add_argument("--split")
    cand_p.add_argument("--k", type=int)
    cand_p.add_argument("--retrieved-count", dest="retrieved_count", type=int)
    cand_p.add_argument("--seed", type=int)
    cand_p.add_argument("--out")
    cand_p.set_defaults(func=_cmd_data_candidates)
    filter_p = data_sub.add_parser("filter", parents=[config_parent])
    filter_p.add_argument("--registry")
    filter_p.add_argument("--dataset")
    filter_p.add_argument("--in", dest="input", required=True,
                          help="JSONL of {record_id, text} candidate trajectories")
    filter_p.add_argument("--out")
    filter_p.add_argument("--rejects")
    filter_p.set_defaults(func=_cmd_data_filter)
    format_p = data_sub.add_parser("format", parents=[config_parent])
    format_p.add_argument("--registry")
    format_p.add_argument("--in", dest="input", required=True)
    format_p.add_argument("--out")
    format_p.set_defaults(func=_cmd_data_format)

    phase1_p = sub.add_parser("phase1", help="alignment training examples")
    phase1_sub = phase1_p.add_subparsers(dest="subcommand", required=True)
    p1e = phase1_sub.add_parser("examples", parents=[config_parent])
    p1e.add_argument("--registry")
    p1e.add_argument("--dataset")
    p1e.add_argument("--out")
    p1e.set_defaults(func=_cmd_phase1_examples)

    sft_p = sub.add_parser("sft", help="warm-up training examples")
    sft_sub = sft_p.add_subparsers(dest="subcommand", required=True)
    sfte = sft_sub.add_parser("examples", parents=[config_parent])
    sfte.add_argument("--registry")
    sfte.add_argument("--sft-dataset", dest="sft_dataset", required=True)
    sfte.add_argument("--out")
    sfte.set_defaults(func=_cmd_sft_examples)

    score_p = sub.add_parser("score", parents=[config_parent],
                             help="reward trajectories against ground truth")
    score_p.add_argument("--registry")
    score_p.add_argument("--dataset")
    score_p.add_argument("--trajectories", required=True)
    score_p.add_argument("--multi-step", action="store_true")
    score_p.add_argument("--out")
    score_p.set_defaults(func=_cmd_score)

    adv_p = sub.add_parser("advantages", parents=[config_parent], help="group-normalize rewards")
    adv_p.add_argument("--rewards", help="comma-separated reward list")
    adv_p.add_argument("--in", dest="input", help="JSONL of {rewards: [...]}")
    adv_p.add_argument("--epsilon", type=float)
    adv_p.add_argument("--out")
    adv_p.set_defaults(func=_cmd_advantages)

    eval_p = sub.add_parser("eval", parents=[config_parent],
                            help="identification and calling metrics")
    eval_p.add_argument("--registry")
    eval_p.add_argument("--dataset")
    eval_p.add_argument("--predictions", required=True)
    eval_p.add_argument("--scope", default="final", choices=["final", "per_step"])
    eval_p.add_argument("--out")
    eval_p.add_argument("--per-record", dest="per_record")
    eval_p.set_defaults(func=_cmd_eval)

    sim_p = sub.add_parser("simulate", parents=[config_parent],
                           help="drive the two-step loop with a scripted policy")
    sim_p.add_argument("--registry")
    sim_p.add_argument("--dataset")
    sim_p.add_argument("--script", required=True, help="JSONL of {record_id, responses}")
    sim_p.add_argument("--max-steps", dest="max_steps", type=int, default=8)
    sim_p.add_argument("--max-chars", dest="max_chars", type=int, default=32768)
    sim_p.add_argument("--out")
    sim_p.set_defaults(func=_cmd_simulate)

    serve_p = sub.add_parser("serve", parents=[config_parent], help="run the HTTP scoring service")
    serve_p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve" and not getattr(args, "config", None):
        print("error: serve requires --config", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except IoFailure as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
