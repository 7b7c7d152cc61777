"""Line-delimited worker protocol for multi-machine run generation.

One message per line over a TCP byte stream:

    REQ <id> <model_hash> <query_b64> <seed_lo> <seed_hi>
    RES <id> <bitvector_hex> <aggregates_csv>
    ERR <id> <reason>

The request asks for outcomes of global run indices [seed_lo, seed_hi);
query_b64 is base64 of a JSON object {"query": str, "master": int,
"reuse": bool}.  The model itself travels out of band (both sides load the
same file); the request carries the sha256 of its canonical form and the
worker refuses on mismatch.  Responses keep outcomes in run-index order:
bit i of the vector (MSB-first per byte) is run seed_lo+i.  See
docs/protocol.md for the bit-exact layout.
"""
from __future__ import annotations

import base64
import hashlib
import json
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

from .model import Network
from .parser import format_model, format_query, parse_model, parse_query, Query
from .runner import OutcomeEngine, RunnerError, StatParams, StatResult, _decide


class WireError(Exception):
    pass


def model_hash(network: Network) -> str:
    """Hash of the canonical pretty-printed model, so formatting-level
    differences between equal models do not break the handshake."""
    return hashlib.sha256(format_model(network).encode("utf-8")).hexdigest()


def pack_outcomes(bits: Sequence[int]) -> str:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i // 8] |= 0x80 >> (i % 8)
    return out.hex() if out else "00"


def unpack_outcomes(hex_str: str, n: int) -> list[int]:
    raw = bytes.fromhex(hex_str)
    return [(raw[i // 8] >> (7 - i % 8)) & 1 for i in range(n)]


def pack_aggregates(values: Sequence[Optional[float]]) -> str:
    if all(v is None for v in values):
        return "-"
    return ",".join("_" if v is None else repr(v) for v in values)


def unpack_aggregates(text: str, n: int) -> list[Optional[float]]:
    if text == "-":
        return [None] * n
    parts = text.split(",")
    if len(parts) != n:
        raise WireError(f"expected {n} aggregates, got {len(parts)}")
    return [None if p == "_" else float(p) for p in parts]


def encode_query_blob(query_text: str, master: int, reuse: bool) -> str:
    doc = {"query": query_text, "master": master, "reuse": reuse}
    return base64.b64encode(json.dumps(doc, sort_keys=True).encode("utf-8")).decode("ascii")


def decode_query_blob(blob: str) -> tuple[str, int, bool]:
    doc = json.loads(base64.b64decode(blob.encode("ascii")))
    return doc["query"], int(doc["master"]), bool(doc["reuse"])


def encode_request(req_id: int, mhash: str, blob: str, lo: int, hi: int) -> str:
    return f"REQ {req_id} {mhash} {blob} {lo} {hi}"


def encode_response(req_id: int, bits: Sequence[int], values: Sequence[Optional[float]]) -> str:
    return f"RES {req_id} {pack_outcomes(bits)} {pack_aggregates(values)}"


def encode_error(req_id: int, reason: str) -> str:
    return f"ERR {req_id} {reason.replace(' ', '_')}"


# ---------------------------------------------------------------------------
# Worker side


class _WorkerHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server: WorkerServer = self.server  # type: ignore[assignment]
        while True:
            line = self.rfile.readline()
            if not line:
                return
            reply = server.process_line(line.decode("utf-8").strip())
            self.wfile.write((reply + "\n").encode("utf-8"))
            self.wfile.flush()


class WorkerServer(socketserver.ThreadingTCPServer):
    """Serves run-generation requests against one fixed model."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, network: Network, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _WorkerHandler)
        self.network = network
        self.hash = model_hash(network)
        self._engines: dict[str, OutcomeEngine] = {}
        self._lock = threading.Lock()

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def process_line(self, line: str) -> str:
        parts = line.split()
        if not parts:
            return encode_error(0, "empty request")
        if parts[0] != "REQ" or len(parts) != 6:
            return encode_error(0, "malformed request")
        try:
            req_id = int(parts[1])
        except ValueError:
            return encode_error(0, "bad request id")
        mhash, blob = parts[2], parts[3]
        try:
            lo, hi = int(parts[4]), int(parts[5])
        except ValueError:
            return encode_error(req_id, "bad seed range")
        if mhash != self.hash:
            return encode_error(req_id, f"model hash mismatch (worker has {self.hash[:12]})")
        if hi < lo:
            return encode_error(req_id, "empty seed range")
        try:
            engine = self._engine(blob)
            results = [engine.outcome(i) for i in range(lo, hi)]
        except Exception as exc:  # report, never crash the server
            return encode_error(req_id, f"worker failure: {exc}")
        bits = [b for b, _ in results]
        values = [v for _, v in results]
        return encode_response(req_id, bits, values)

    def _engine(self, blob: str) -> OutcomeEngine:
        with self._lock:
            engine = self._engines.get(blob)
            if engine is None:
                query_text, master, reuse = decode_query_blob(blob)
                engine = OutcomeEngine(self.network, parse_query(query_text), master, reuse=reuse)
                self._engines[blob] = engine
            return engine


def serve_worker(network: Network, host: str = "127.0.0.1", port: int = 0) -> WorkerServer:
    """Bind a worker server; call .serve_forever() (blocking) to run it and
    .shutdown() from another thread for a clean stop."""
    return WorkerServer(network, host, port)


# ---------------------------------------------------------------------------
# Coordinator side


class _Endpoint:
    def __init__(self, address: str, timeout: float):
        self.address = address
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._file = None
        self.alive = True

    def _connect(self):
        host, _, port = self.address.rpartition(":")
        sock = socket.create_connection((host, int(port)), timeout=self.timeout)
        self._sock = sock
        self._file = sock.makefile("rwb")

    def request(self, line: str) -> str:
        if self._sock is None:
            self._connect()
        assert self._file is not None
        self._file.write((line + "\n").encode("utf-8"))
        self._file.flush()
        reply = self._file.readline()
        if not reply:
            raise WireError(f"{self.address}: connection closed")
        return reply.decode("utf-8").strip()

    def close(self):
        try:
            if self._sock is not None:
                self._sock.close()
        except OSError:
            pass
        self._sock = None
        self._file = None


def dispatch_remote(
    endpoints: Sequence[str],
    network: Network,
    query: Query,
    params: StatParams,
    batch: int = 64,
    seed: int = 0,
    timeout: float = 30.0,
) -> StatResult:
    """Drive remote workers with the same round/batch protocol as
    run_parallel: endpoint k plays worker k, and a dead worker's seed range
    is resubmitted elsewhere, so failures cannot change the result."""
    if not endpoints:
        raise RunnerError("no worker endpoints")
    mhash = model_hash(network)
    query_text = format_query(query)
    blob = encode_query_blob(query_text, seed, params.reuse)
    conns = [_Endpoint(a, timeout) for a in endpoints]
    req_counter = [0]

    def fetch(conn: _Endpoint, lo: int, hi: int) -> list[tuple[int, Optional[float]]]:
        req_counter[0] += 1
        req_id = req_counter[0]
        reply = conn.request(encode_request(req_id, mhash, blob, lo, hi))
        parts = reply.split()
        if parts and parts[0] == "ERR":
            raise WireError(f"{conn.address}: {' '.join(parts[2:]) if len(parts) > 2 else 'error'}")
        if len(parts) != 4 or parts[0] != "RES" or int(parts[1]) != req_id:
            raise WireError(f"{conn.address}: malformed response {reply!r}")
        n = hi - lo
        bits = unpack_outcomes(parts[2], n)
        values = unpack_aggregates(parts[3], n)
        return list(zip(bits, values))

    def fetch_resilient(lo: int, hi: int, preferred: int) -> list[tuple[int, Optional[float]]]:
        order = [preferred] + [i for i in range(len(conns)) if i != preferred]
        last_error: Optional[Exception] = None
        for i in order:
            conn = conns[i]
            if not conn.alive:
                continue
            try:
                return fetch(conn, lo, hi)
            except WireError:
                raise
            except OSError as exc:
                conn.alive = False
                conn.close()
                last_error = exc
        raise RunnerError(f"all workers failed; last error: {last_error}")

    def rounds():
        k = len(conns)
        base = 0
        while True:
            for w in range(k):
                yield from fetch_resilient(base + w * batch, base + (w + 1) * batch, w)
            base += k * batch

    gen = rounds()
    try:
        return _decide(query, params, gen, query_text, seed)
    finally:
        gen.close()
        for c in conns:
            c.close()
