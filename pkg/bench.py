"""Throughput and latency benchmarks over synthetic workloads.

Reports relative properties (scaling with workers, constancy across payload
sizes); absolute numbers depend on the host.
"""
import hashlib
import random
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass
from time import perf_counter, perf_counter_ns

import millify
import pandas as pd

from audit_link import ChainTip, extend_chain, link_merkle
from core import Params, count_hashes, keygen, setup
from encoding import Event
from evidence import generate_evidence, verify_evidence
from logging_config import setup_logging

logger = setup_logging(__name__)

MODES = ("generate", "verify", "link")


def synthetic_event(rng: random.Random, payload_bytes: int = 100) -> Event:
    """Random event whose input ref is the digest of a random payload of `payload_bytes`.

    Payload digests are workload preparation and are not metered.
    """
    payload = rng.randbytes(payload_bytes)
    input_digest = hashlib.sha256(payload).digest()
    return Event(
        event_id=rng.randbytes(16),
        workflow_id=f"wf-{rng.randrange(1 << 16):05d}".encode(),
        actor=f"agent-{rng.randrange(1000)}",
        timestamp=rng.randrange(1 << 48),
        config_digest=rng.randbytes(32),
        input_refs=(input_digest,),
        output_refs=(hashlib.sha256(input_digest + b"output").digest(),),
        env_digest=rng.randbytes(32),
        prev_link=rng.randbytes(32),
        extensions=(("tee_attestation", rng.randbytes(32)),),
    )


@dataclass
class BenchReport:
    mode: str
    n: int
    threads: int
    payload_bytes: int
    elapsed_s: float
    events_per_s: float
    mean_us: float
    p99_us: float
    hash_calls_per_event: float
    item_bytes: int
    record_bytes: int

    def machine_line(self) -> str:
        return (f"bench mode={self.mode} n={self.n} threads={self.threads} payload_bytes={self.payload_bytes} "
                f"events_per_s={self.events_per_s:.1f} mean_us={self.mean_us:.2f} p99_us={self.p99_us:.2f} "
                f"hash_calls_per_event={self.hash_calls_per_event:g} item_bytes={self.item_bytes} "
                f"record_bytes={self.record_bytes}")

    def human(self) -> str:
        return "\n".join([
            f"{self.mode}: {self.n} events, {self.threads} worker(s), {self.payload_bytes}-byte payloads",
            f"  throughput  {millify.millify(self.events_per_s, precision=1)} events/s",
            f"  latency     mean {self.mean_us:.1f} us, p99 {self.p99_us:.1f} us",
            f"  hashes      {self.hash_calls_per_event:g} per event",
            f"  sizes       item {self.item_bytes} B, record {self.record_bytes} B",
        ])


def _run_worker(args) -> tuple[list[int], float, int]:
    """One worker's share: prepare untimed, then time each operation.

    Returns per-event latencies (ns), the worker's loop time (s) and the number
    of metered hashes inside the timed loop.
    """
    mode, count, payload_bytes, seed, params, key_seed = args
    rng = random.Random(seed)
    keypair = keygen(key_seed, params.suite_id)
    events = [synthetic_event(rng, payload_bytes) for _ in range(count)]
    latencies = []

    if mode == "generate":
        with count_hashes() as meter:
            start = perf_counter()
            for event in events:
                t0 = perf_counter_ns()
                generate_evidence(params, keypair, event)
                latencies.append(perf_counter_ns() - t0)
            elapsed = perf_counter() - start

    elif mode == "verify":
        signed = [generate_evidence(params, keypair, e) for e in events]
        with count_hashes() as meter:
            start = perf_counter()
            for event, evidence in zip(events, signed):
                t0 = perf_counter_ns()
                outcome = verify_evidence(params, keypair.public_key, event, evidence)
                latencies.append(perf_counter_ns() - t0)
                if not outcome.accepted:
                    raise RuntimeError(f"benchmark evidence rejected: {outcome.reject_reason}")
            elapsed = perf_counter() - start

    elif mode == "link":
        items = [generate_evidence(params, keypair, e).item for e in events]
        tip = ChainTip.empty(params)
        with count_hashes() as meter:
            start = perf_counter()
            for item in items:
                t0 = perf_counter_ns()
                tip = extend_chain(params, tip, item)
                latencies.append(perf_counter_ns() - t0)
            elapsed = perf_counter() - start
        merkle_start = perf_counter()
        link_merkle(params, items)
        logger.debug(f"merkle root over {count} items in {round((perf_counter() - merkle_start)*1000, 2)} ms")

    else:
        raise ValueError(f"unknown benchmark mode {mode!r}; expected one of {MODES}")
    return latencies, elapsed, meter.count


def _shares(n: int, threads: int) -> list[int]:
    base, extra = divmod(n, threads)
    return [base + (1 if i < extra else 0) for i in range(threads) if base or i < extra]


def run_benchmark(mode: str, n: int = 10_000, threads: int = 1, payload_bytes: int = 100,
                  params: Params | None = None, seed: int = 0) -> BenchReport:
    """Run one benchmark mode over n synthetic events split across `threads` worker processes.

    Throughput is n divided by the slowest worker's loop time, so event
    preparation and pool start-up are excluded.
    """
    if mode not in MODES:
        raise ValueError(f"unknown benchmark mode {mode!r}; expected one of {MODES}")
    if n < 1 or threads < 1 or payload_bytes < 0:
        raise ValueError("n and threads must be positive, payload_bytes non-negative")
    params = setup() if params is None else params
    key_seed = hashlib.sha256(f"bench-key-{seed}".encode()).digest()
    jobs = [(mode, count, payload_bytes, seed * 1000 + i, params, key_seed)
            for i, count in enumerate(_shares(n, threads))]

    logger.info("-"*40)
    logger.info(f"bench {mode}: n={n} threads={threads} payload_bytes={payload_bytes}")
    if len(jobs) == 1:
        results = [_run_worker(jobs[0])]
    else:
        try:
            with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
                results = list(pool.map(_run_worker, jobs))
        except (BrokenProcessPool, OSError, NotImplementedError) as e:
            logger.warning(f"process pool unavailable ({e}); running {len(jobs)} shares inline")
            results = [_run_worker(job) for job in jobs]

    latencies_us = pd.Series([ns for r in results for ns in r[0]], dtype="float64") / 1000.0
    elapsed = max(r[1] for r in results)
    hashes = sum(r[2] for r in results)
    report = BenchReport(
        mode=mode,
        n=n,
        threads=threads,
        payload_bytes=payload_bytes,
        elapsed_s=elapsed,
        events_per_s=n / elapsed if elapsed > 0 else float("inf"),
        mean_us=float(latencies_us.mean()),
        p99_us=float(latencies_us.quantile(0.99)),
        hash_calls_per_event=hashes / n,
        item_bytes=params.item_size,
        record_bytes=params.record_size,
    )
    logger.info(f"TIME run_benchmark({mode}) = {round(elapsed*1000, 2)} ms")
    logger.info(report.machine_line())
    logger.info("-"*40)
    return report


if __name__ == "__main__":
    pass
