"""Command-line surface: setup, keygen, ingest, verify, link, prove, check-proof, bench, synth.

Exit codes: 0 success / all accept, 1 verification failure, 2 usage or
configuration error, 3 storage, sink or backend failure.

Every path can be given as a flag, a CSEV_* environment variable (or .env
entry) or in settings.toml [paths]; see config.CliConfig.
"""
import argparse
import os
import random
import struct
import sys
from pathlib import Path
from typing import Sequence

from audit_link import (
    FileAnchorSink,
    anchor,
    link_chain,
    link_merkle,
    parse_proof,
    prove_inclusion,
    serialize_proof,
    verify_inclusion,
)
from bench import MODES, run_benchmark, synthetic_event
from config import CliConfig, evidence_settings, load_settings
from core import KeyPair, Params, deserialize_item, get_suite, keygen, keypair_from_secret, lp, parse_params, setup
from encoding import event_to_line
from evidence import default_workers
from errors import (
    ConfigError,
    CorruptRecord,
    EntropyUnavailable,
    EvidenceError,
    MissingEvent,
    ParamsMismatch,
    SequenceConflict,
    SigningError,
    SinkUnavailable,
    StorageFailure,
)
from logging_config import setup_logging
from store import EventStore, EvidenceLog, SidecarIndex, audit_scan, ingest_events, verify_record

logger = setup_logging(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

SECRET_KEY_MAGIC = b"CSSK"
PUBLIC_KEY_MAGIC = b"CSPK"
KEY_FILE_VERSION = 1

IO_ERRORS = (StorageFailure, SinkUnavailable, SequenceConflict, CorruptRecord, MissingEvent,
             EntropyUnavailable, SigningError, OSError)
USAGE_ERRORS = (ValueError, IndexError, OverflowError, EvidenceError)


# output --------------------------------------------------------------------

def _token(value) -> str:
    if isinstance(value, (bytes, bytearray)):
        value = value.hex()
    text = "-" if value is None or value == "" else str(value)
    return "_".join(text.split())


def emit(cfg: CliConfig, kind: str, human: str | None = None, **fields) -> None:
    """One output record: `kind key=value ...` in machine mode, free text otherwise."""
    if cfg.machine:
        print(" ".join([kind] + [f"{k}={_token(v)}" for k, v in fields.items()]))
    elif human is not None:
        print(human)


# params and key files ------------------------------------------------------

def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"refusing to overwrite {path}; pass --force to replace it")


def write_params(path: Path, params: Params, force: bool = False) -> None:
    _refuse_overwrite(path, force)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(params.to_bytes())


def load_params(path: Path) -> Params:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"params file {path} not found; run `setup` first") from None
    params, end = parse_params(data)
    if end != len(data):
        raise ConfigError(f"{path} has {len(data) - end} trailing bytes after the params")
    return params


def _key_blob(magic: bytes, suite_id: str, key: bytes) -> bytes:
    return magic + struct.pack(">H", KEY_FILE_VERSION) + lp(suite_id.encode("utf-8")) + key


def _parse_key_blob(path: Path, magic: bytes) -> tuple[str, bytes]:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"key file {path} not found; run `keygen` first") from None
    try:
        if data[:4] != magic:
            raise ValueError("bad magic")
        version, suite_len = struct.unpack_from(">HI", data, 4)
        if version != KEY_FILE_VERSION:
            raise ValueError(f"unsupported version {version}")
        suite_id = data[10:10 + suite_len].decode("utf-8")
        key = data[10 + suite_len:]
    except (struct.error, UnicodeDecodeError, ValueError) as e:
        raise ConfigError(f"unreadable key file {path}: {e}") from e
    if len(key) != get_suite(suite_id).public_key_len:
        raise ConfigError(f"key file {path} holds {len(key)} key bytes")
    return suite_id, key


def write_keypair(path: Path, keypair: KeyPair, force: bool = False) -> Path:
    """Secret key at `path` (mode 0600), public key at `path`.pub."""
    pub_path = path.with_name(path.name + ".pub")
    _refuse_overwrite(path, force)
    path.parent.mkdir(parents=True, exist_ok=True)
    flags = os.O_WRONLY | os.O_CREAT | (os.O_TRUNC if force else os.O_EXCL)
    fd = os.open(path, flags, 0o600)
    os.fchmod(fd, 0o600)
    with os.fdopen(fd, "wb") as f:
        f.write(_key_blob(SECRET_KEY_MAGIC, keypair.suite_id, keypair.secret_key))
    pub_path.write_bytes(_key_blob(PUBLIC_KEY_MAGIC, keypair.suite_id, keypair.public_key))
    return pub_path


def load_keypair(path: Path) -> KeyPair:
    suite_id, secret = _parse_key_blob(path, SECRET_KEY_MAGIC)
    return keypair_from_secret(secret, suite_id)


def load_public_key(path: Path) -> tuple[str, bytes]:
    return _parse_key_blob(path, PUBLIC_KEY_MAGIC)


def _check_suite(params: Params, suite_id: str, path: Path) -> None:
    if suite_id != params.suite_id:
        raise ParamsMismatch(f"key {path} is for suite {suite_id}, params use {params.suite_id}")


def _open_log(cfg: CliConfig, params: Params, create: bool = False) -> EvidenceLog | None:
    """Open the evidence log, checking its header against the params file. None if absent."""
    if not create and not cfg.log_path.exists():
        return None
    return EvidenceLog(cfg.log_path, params)


def _items(log: EvidenceLog | None):
    return [] if log is None else [record.item for record in log]


# commands ------------------------------------------------------------------

def cmd_setup(args, cfg: CliConfig) -> int:
    defaults = evidence_settings()
    field_count = defaults["field_count"] if args.fields is None else args.fields
    roles = defaults["field_roles"] if len(defaults["field_roles"]) == field_count else None
    params = setup(field_count, defaults["suite_id"], roles)
    out = Path(args.out) if args.out else cfg.params_path
    write_params(out, params, args.force)
    emit(cfg, "params",
         f"wrote {out}: k={params.field_count}, suite {params.suite_id}, digest {params.params_digest.hex()}\n"
         f"  item {params.item_size} bytes, record {params.record_size} bytes",
         digest=params.params_digest, field_count=params.field_count, suite=params.suite_id,
         item_bytes=params.item_size, record_bytes=params.record_size, path=out)
    return EXIT_OK


def cmd_keygen(args, cfg: CliConfig) -> int:
    seed = bytes.fromhex(args.seed) if args.seed else None
    keypair = keygen(seed, evidence_settings()["suite_id"])
    out = Path(args.out) if args.out else cfg.key_path
    pub_path = write_keypair(out, keypair, args.force)
    emit(cfg, "key",
         f"wrote {out} (secret, 0600) and {pub_path}\n  fingerprint {keypair.key_fingerprint.hex()}",
         fingerprint=keypair.key_fingerprint, public_key=keypair.public_key, path=out)
    return EXIT_OK


def cmd_ingest(args, cfg: CliConfig) -> int:
    params = load_params(cfg.params_path)
    keypair = load_keypair(cfg.key_path)
    _check_suite(params, keypair.suite_id, cfg.key_path)
    log = _open_log(cfg, params, create=True)
    report = ingest_events(args.events, params, keypair, log, EventStore(cfg.event_store_path))
    if report.recovered:
        emit(cfg, "recovered", f"re-indexed {report.recovered} record(s) left by an interrupted ingest",
             records=report.recovered)
    for rejection in report.rejected:
        emit(cfg, "rejected", f"  line {rejection.line_no}: {rejection.reason}",
             line=rejection.line_no, reason=rejection.reason)
    emit(cfg, "ingest",
         f"ingested {report.accepted} events ({report.duplicates} duplicates, "
         f"{len(report.rejected)} rejected); log holds {log.count} records",
         accepted=report.accepted, duplicates=report.duplicates, rejected=len(report.rejected),
         records=log.count)
    return EXIT_OK


def cmd_verify(args, cfg: CliConfig) -> int:
    if args.all == (args.index is not None):
        raise ConfigError("give either a record index or --all")
    params = load_params(cfg.params_path)
    suite_id, public_key = load_public_key(cfg.public_key_path)
    _check_suite(params, suite_id, cfg.public_key_path)
    log = _open_log(cfg, params)
    if log is None:
        raise StorageFailure(cfg.log_path, "evidence log not found")
    store = EventStore(cfg.event_store_path)

    if not args.all:
        outcome = verify_record(log, store, public_key, params, args.index, full_scan=args.full_scan)
        emit(cfg, "verdict", f"record {args.index}: {outcome.verdict}"
             + (f" ({outcome.reject_reason})" if outcome.reject_reason else ""),
             index=args.index, result=outcome.verdict, reason=outcome.reject_reason and str(outcome.reject_reason))
        return EXIT_OK if outcome.accepted else EXIT_VERIFY_FAILED

    report = audit_scan(log, store, public_key, params, workers=cfg.threads, executor=cfg.executor)
    if cfg.machine:
        for i, outcome in enumerate(report.verdicts):
            fields = {"index": i, "result": outcome.verdict}
            if outcome.reject_reason:
                fields["reason"] = str(outcome.reject_reason)
            emit(cfg, "verdict", **fields)
    else:
        frame = report.to_frame()
        rejected = frame[frame["verdict"] != "accept"]
        if not rejected.empty:
            print(rejected.to_string(index=False))
    emit(cfg, "verify",
         f"{len(report.verdicts)} records: {len(report.verdicts) - len(report.rejected_indices)} accepted, "
         f"{len(report.rejected_indices)} rejected\n  chain tip {report.tip.tip.hex()}",
         records=len(report.verdicts), accepted=len(report.verdicts) - len(report.rejected_indices),
         rejected=len(report.rejected_indices), tip=report.tip.tip, root=report.merkle_root)
    return EXIT_OK if report.all_accepted else EXIT_VERIFY_FAILED


def cmd_link(args, cfg: CliConfig) -> int:
    params = load_params(cfg.params_path)
    items = _items(_open_log(cfg, params))
    if args.chain:
        tip = link_chain(params, items)
        kind, value = "chain", tip.tip
        emit(cfg, "chain", f"chain tip {tip.tip.hex()} over {tip.length} records", tip=tip.tip, length=tip.length)
    else:
        root, size = link_merkle(params, items)
        kind, value = "merkle", root
        emit(cfg, "merkle", f"merkle root {root.hex()} over {size} records", root=root, size=size)

    if args.anchor:
        sink = FileAnchorSink(cfg.anchor_path)
        receipt = anchor(sink, value, args.label or f"{kind}:{len(items)}")
        if sink.read(receipt.sequence).digest != value:
            raise SequenceConflict(receipt.sequence, "anchored digest does not read back")
        emit(cfg, "anchor", f"anchored at {receipt.sink_id} sequence {receipt.sequence}",
             sink=receipt.sink_id, sequence=receipt.sequence, digest=receipt.digest)
    return EXIT_OK


def cmd_prove(args, cfg: CliConfig) -> int:
    params = load_params(cfg.params_path)
    proof = prove_inclusion(params, _items(_open_log(cfg, params)), args.index)
    out = Path(args.out) if args.out else Path(f"proof-{args.index}.csmp")
    out.write_bytes(serialize_proof(proof))
    emit(cfg, "proof", f"wrote {out}: leaf {proof.leaf_index} of {proof.tree_size}, root {proof.root.hex()}",
         index=proof.leaf_index, tree_size=proof.tree_size, root=proof.root, path_len=len(proof.path), out=out)
    return EXIT_OK


def cmd_check_proof(args, cfg: CliConfig) -> int:
    params = load_params(cfg.params_path)
    try:
        proof = parse_proof(Path(args.proof).read_bytes(), params.field_bytes)
    except FileNotFoundError:
        raise ConfigError(f"proof file {args.proof} not found") from None
    if args.item_hex:
        item = deserialize_item(bytes.fromhex(args.item_hex), params)
    else:
        log = _open_log(cfg, params)
        if log is None:
            raise StorageFailure(cfg.log_path, "evidence log not found")
        index = proof.leaf_index if args.index is None else args.index
        item = log.read(index).item
    ok = verify_inclusion(params, item, proof)
    verdict = "accept" if ok else "reject"
    emit(cfg, "proof_check", f"inclusion proof: {verdict}",
         result=verdict, leaf_index=proof.leaf_index, tree_size=proof.tree_size, root=proof.root)
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def cmd_bench(args, cfg: CliConfig) -> int:
    bench_settings = load_settings().get("bench", {})
    n = args.n or int(bench_settings.get("n", 10_000))
    payload_bytes = int(bench_settings.get("small_payload_bytes", 100)) if args.payload_bytes is None \
        else args.payload_bytes
    report = run_benchmark(args.mode, n=n, threads=cfg.threads or default_workers(), payload_bytes=payload_bytes)
    if cfg.machine:
        print(report.machine_line())
    else:
        print(report.human())
    return EXIT_OK


def cmd_synth(args, cfg: CliConfig) -> int:
    rng = random.Random(args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        for _ in range(args.count):
            f.write(event_to_line(synthetic_event(rng, args.payload_bytes)) + "\n")
    emit(cfg, "synth", f"wrote {args.count} synthetic events to {out}", count=args.count, path=out)
    return EXIT_OK


# parser --------------------------------------------------------------------

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--params", dest="params_path", help="params file (CSEV_PARAMS)")
    common.add_argument("--key", dest="key_path", help="secret key file; public key is <key>.pub (CSEV_KEY)")
    common.add_argument("--log", dest="log_path", help="evidence log (CSEV_LOG)")
    common.add_argument("--event-store", dest="event_store_path", help="event store directory (CSEV_EVENT_STORE)")
    common.add_argument("--anchor-file", dest="anchor_path", help="file anchor sink (CSEV_ANCHOR)")
    common.add_argument("--threads", type=int, help="parallelism hint (CSEV_THREADS)")
    common.add_argument("--output", dest="output_mode", choices=("human", "machine"), help="output mode (CSEV_OUTPUT)")
    common.add_argument("--machine", dest="output_mode", action="store_const", const="machine",
                        help="shorthand for --output machine")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="csev", description="Constant-size signed evidence for workflow events.",
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("setup", parents=[common], help="write a params file")
    p.add_argument("--fields", type=int, default=None, help="number of evidence fields k (1..64)")
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_setup)

    p = sub.add_parser("keygen", parents=[common], help="generate a signing key pair")
    p.add_argument("--seed", default=None, help="32-byte hex seed (deterministic, testing only)")
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_keygen)

    p = sub.add_parser("ingest", parents=[common], help="generate and log evidence for an ingestion file")
    p.add_argument("events", help="line-delimited JSON events")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("verify", parents=[common], help="verify one record or the whole log")
    p.add_argument("index", nargs="?", type=int, default=None)
    p.add_argument("--all", action="store_true")
    p.add_argument("--full-scan", action="store_true", help="report every mismatching field")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("link", parents=[common], help="print the chain tip or Merkle root of the log")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--chain", action="store_true")
    kind.add_argument("--merkle", action="store_true")
    p.add_argument("--anchor", action="store_true", help="also anchor the value to the file sink")
    p.add_argument("--label", default=None)
    p.set_defaults(handler=cmd_link)

    p = sub.add_parser("prove", parents=[common], help="write a Merkle inclusion proof for a record")
    p.add_argument("index", type=int)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_prove)

    p = sub.add_parser("check-proof", parents=[common], help="check an inclusion proof")
    p.add_argument("proof")
    which = p.add_mutually_exclusive_group()
    which.add_argument("--index", type=int, default=None, help="log record to check (default: the proof's leaf)")
    which.add_argument("--item-hex", default=None, help="serialized evidence item as hex")
    p.set_defaults(handler=cmd_check_proof)

    p = sub.add_parser("bench", parents=[common], help="throughput and latency benchmark")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--payload-bytes", type=int, default=None)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("synth", parents=[common], help="write synthetic events as an ingestion file")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--payload-bytes", type=int, default=100)
    p.set_defaults(handler=cmd_synth)
    return parser


_OVERRIDES = ("params_path", "key_path", "log_path", "event_store_path", "anchor_path", "threads", "output_mode")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        cfg = CliConfig.resolve({k: getattr(args, k, None) for k in _OVERRIDES})
        logger.info(f"csev {args.command}")
        return args.handler(args, cfg)
    except IO_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_IO
    except USAGE_ERRORS as e:
        logger.warning(f"{args.command} rejected: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
