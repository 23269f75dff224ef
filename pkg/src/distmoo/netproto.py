"""Master-worker wire protocol over length-prefixed canonical JSON frames.

Frame layout: a 4-byte big-endian payload length followed by UTF-8 JSON with
lexicographically sorted object keys, compact separators and a top-level
"type" tag. Payloads are capped at 16 MiB. Work units are idempotent (the
stream seed fully determines the computation), so worker failures are
handled by re-dispatching the orphaned assignment.
"""

from __future__ import annotations

import io
import json
import logging
import os
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import BinaryIO, Callable, Union

from .core import Bounds, ConfigError, Individual, WeightVector
from .engine import EngineConfig, RunResult, _Evaluator, _run_loop
from .operators import OperatorParams, evolve_subpopulation
from .problems import make_problem

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
DEFAULT_GENERATION_TIMEOUT_S = 60.0
TIMEOUT_ENV_VAR = "DNESA_TIMEOUT_SECS"
DEFAULT_CONNECT_TIMEOUT_S = 10.0


class TransportError(RuntimeError):
    """Base class for framing and connection failures."""


class ConnectionClosed(TransportError):
    """Peer closed the connection at a frame boundary."""


class TruncatedFrameError(TransportError):
    """Stream ended in the middle of a frame."""


class ProtocolError(RuntimeError):
    """A frame or message violates the wire protocol."""


@dataclass(frozen=True)
class Hello:
    protocol_version: int
    worker_name: str


@dataclass(frozen=True)
class Assign:
    run_id: int
    generation: int
    subpop_id: int
    stream_seed: int
    problem_id: str
    operator_params: OperatorParams
    weights: tuple[float, ...]
    bounds: Bounds
    members: tuple[tuple[tuple[float, ...], float], ...]  # (genes, fitness)


@dataclass(frozen=True)
class Result:
    run_id: int
    generation: int
    subpop_id: int
    members: tuple[tuple[tuple[float, ...], tuple[float, ...], float], ...]
    evaluations: int


@dataclass(frozen=True)
class Shutdown:
    reason: str


Message = Union[Hello, Assign, Result, Shutdown]


# ---------------------------------------------------------------------------
# Encoding

def _message_payload(msg: Message) -> dict:
    if isinstance(msg, Hello):
        return {
            "type": "hello",
            "protocol_version": msg.protocol_version,
            "worker_name": msg.worker_name,
        }
    if isinstance(msg, Assign):
        p = msg.operator_params
        return {
            "type": "assign",
            "run_id": msg.run_id,
            "generation": msg.generation,
            "subpop_id": msg.subpop_id,
            "stream_seed": msg.stream_seed,
            "problem_id": msg.problem_id,
            "operator_params": {
                "crossover_rate": p.crossover_rate,
                "mutation_rate": p.mutation_rate,
                "tvm_degree": p.tvm_degree,
                "max_generations": p.max_generations,
            },
            "weights": list(msg.weights),
            "bounds": {"lower": list(msg.bounds.lower), "upper": list(msg.bounds.upper)},
            "members": [
                {"genes": list(genes), "fitness": fitness} for genes, fitness in msg.members
            ],
        }
    if isinstance(msg, Result):
        return {
            "type": "result",
            "run_id": msg.run_id,
            "generation": msg.generation,
            "subpop_id": msg.subpop_id,
            "members": [
                {"genes": list(g), "objectives": list(o), "fitness": f}
                for g, o, f in msg.members
            ],
            "evaluations": msg.evaluations,
        }
    if isinstance(msg, Shutdown):
        return {"type": "shutdown", "reason": msg.reason}
    raise ProtocolError(f"unknown message object {type(msg).__name__}")


def frame_payload(payload: bytes) -> bytes:
    """Wrap raw payload bytes with the 4-byte big-endian length prefix."""
    if len(payload) > MAX_FRAME_BYTES:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds the 16 MiB frame cap")
    return struct.pack(">I", len(payload)) + payload


def encode_frame(msg: Message) -> bytes:
    """Serialize one message as a length-prefixed canonical JSON frame."""
    payload = json.dumps(
        _message_payload(msg),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")
    return frame_payload(payload)


# ---------------------------------------------------------------------------
# Decoding

def _reject_constant(token: str):
    raise ProtocolError(f"non-finite number {token!r} in frame")


def _need_int(obj: dict, key: str, payload: bytes, minimum: int = 0) -> int:
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ProtocolError(f"field {key!r} must be an integer >= {minimum}{_hexinfo(payload)}")
    return v


def _need_str(obj: dict, key: str, payload: bytes) -> str:
    v = obj.get(key)
    if not isinstance(v, str):
        raise ProtocolError(f"field {key!r} must be a string{_hexinfo(payload)}")
    return v


def _need_float(v, what: str, payload: bytes) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProtocolError(f"{what} must be a number{_hexinfo(payload)}")
    return float(v)


def _need_float_list(v, what: str, payload: bytes) -> tuple[float, ...]:
    if not isinstance(v, list) or not v:
        raise ProtocolError(f"{what} must be a non-empty array{_hexinfo(payload)}")
    return tuple(_need_float(x, what, payload) for x in v)


def _need_keys(obj: dict, keys: set[str], what: str, payload: bytes) -> None:
    if set(obj) != keys:
        missing = keys - set(obj)
        extra = set(obj) - keys
        raise ProtocolError(
            f"{what} has wrong fields (missing {sorted(missing)}, unexpected {sorted(extra)})"
            f"{_hexinfo(payload)}"
        )


def _hexinfo(payload: bytes) -> str:
    shown = payload[:256].hex()
    suffix = "…" if len(payload) > 256 else ""
    return f"; frame hex: {shown}{suffix}"


def _decode_payload(payload: bytes) -> Message:
    try:
        obj = json.loads(payload.decode("utf-8"), parse_constant=_reject_constant)
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"payload is not valid UTF-8: {exc}{_hexinfo(payload)}") from exc
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"payload is not valid JSON: {exc}{_hexinfo(payload)}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"payload must be a JSON object{_hexinfo(payload)}")
    tag = obj.get("type")
    if tag == "hello":
        _need_keys(obj, {"type", "protocol_version", "worker_name"}, "hello", payload)
        return Hello(
            _need_int(obj, "protocol_version", payload),
            _need_str(obj, "worker_name", payload),
        )
    if tag == "shutdown":
        _need_keys(obj, {"type", "reason"}, "shutdown", payload)
        return Shutdown(_need_str(obj, "reason", payload))
    if tag == "assign":
        _need_keys(
            obj,
            {
                "type", "run_id", "generation", "subpop_id", "stream_seed",
                "problem_id", "operator_params", "weights", "bounds", "members",
            },
            "assign",
            payload,
        )
        params_obj = obj.get("operator_params")
        if not isinstance(params_obj, dict):
            raise ProtocolError(f"operator_params must be an object{_hexinfo(payload)}")
        _need_keys(
            params_obj,
            {"crossover_rate", "mutation_rate", "tvm_degree", "max_generations"},
            "operator_params",
            payload,
        )
        bounds_obj = obj.get("bounds")
        if not isinstance(bounds_obj, dict):
            raise ProtocolError(f"bounds must be an object{_hexinfo(payload)}")
        _need_keys(bounds_obj, {"lower", "upper"}, "bounds", payload)
        members_obj = obj.get("members")
        if not isinstance(members_obj, list) or not members_obj:
            raise ProtocolError(f"members must be a non-empty array{_hexinfo(payload)}")
        members = []
        for entry in members_obj:
            if not isinstance(entry, dict):
                raise ProtocolError(f"member must be an object{_hexinfo(payload)}")
            _need_keys(entry, {"genes", "fitness"}, "assign member", payload)
            members.append(
                (
                    _need_float_list(entry["genes"], "genes", payload),
                    _need_float(entry["fitness"], "fitness", payload),
                )
            )
        try:
            params = OperatorParams(
                crossover_rate=_need_float(params_obj["crossover_rate"], "crossover_rate", payload),
                mutation_rate=_need_float(params_obj["mutation_rate"], "mutation_rate", payload),
                tvm_degree=_need_float(params_obj["tvm_degree"], "tvm_degree", payload),
                max_generations=_need_int(params_obj, "max_generations", payload),
            )
            bounds = Bounds(
                _need_float_list(bounds_obj["lower"], "bounds.lower", payload),
                _need_float_list(bounds_obj["upper"], "bounds.upper", payload),
            )
        except ConfigError as exc:
            raise ProtocolError(f"invalid assign content: {exc}{_hexinfo(payload)}") from exc
        return Assign(
            run_id=_need_int(obj, "run_id", payload),
            generation=_need_int(obj, "generation", payload),
            subpop_id=_need_int(obj, "subpop_id", payload),
            stream_seed=_need_int(obj, "stream_seed", payload),
            problem_id=_need_str(obj, "problem_id", payload),
            operator_params=params,
            weights=_need_float_list(obj["weights"], "weights", payload),
            bounds=bounds,
            members=tuple(members),
        )
    if tag == "result":
        _need_keys(
            obj,
            {"type", "run_id", "generation", "subpop_id", "members", "evaluations"},
            "result",
            payload,
        )
        members_obj = obj.get("members")
        if not isinstance(members_obj, list) or not members_obj:
            raise ProtocolError(f"members must be a non-empty array{_hexinfo(payload)}")
        members = []
        for entry in members_obj:
            if not isinstance(entry, dict):
                raise ProtocolError(f"member must be an object{_hexinfo(payload)}")
            _need_keys(entry, {"genes", "objectives", "fitness"}, "result member", payload)
            members.append(
                (
                    _need_float_list(entry["genes"], "genes", payload),
                    _need_float_list(entry["objectives"], "objectives", payload),
                    _need_float(entry["fitness"], "fitness", payload),
                )
            )
        return Result(
            run_id=_need_int(obj, "run_id", payload),
            generation=_need_int(obj, "generation", payload),
            subpop_id=_need_int(obj, "subpop_id", payload),
            members=tuple(members),
            evaluations=_need_int(obj, "evaluations", payload),
        )
    raise ProtocolError(f"unknown or missing message type {tag!r}{_hexinfo(payload)}")


def _read_exact(stream: BinaryIO, n: int, *, at_boundary: bool) -> bytes:
    chunks = b""
    while len(chunks) < n:
        piece = stream.read(n - len(chunks))
        if not piece:
            if at_boundary and not chunks:
                raise ConnectionClosed("connection closed at frame boundary")
            raise TruncatedFrameError(
                f"stream ended after {len(chunks)} of {n} expected bytes"
            )
        chunks += piece
    return chunks


def decode_frame(source: "bytes | BinaryIO") -> Message:
    """Read exactly one frame from a byte string or binary stream."""
    stream = io.BytesIO(source) if isinstance(source, (bytes, bytearray)) else source
    header = _read_exact(stream, 4, at_boundary=True)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"declared frame length {length} exceeds the 16 MiB cap")
    payload = _read_exact(stream, length, at_boundary=False)
    return _decode_payload(payload)


def write_frame(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode_frame(msg))


# ---------------------------------------------------------------------------
# Worker

def worker_run(
    host: str,
    port: int,
    *,
    worker_name: str | None = None,
    connect_timeout_s: float = DEFAULT_CONNECT_TIMEOUT_S,
    eval_delay_s: float = 0.0,
) -> int:
    """Connect to a server, process assignments until Shutdown.

    Returns the number of assignments completed. Raises TransportError on
    connection loss and ProtocolError on malformed traffic or an unknown
    problem id (after notifying the server).
    """
    name = worker_name or f"worker-{os.getpid()}"
    sock = socket.create_connection((host, port), timeout=connect_timeout_s)
    sock.settimeout(None)
    completed = 0
    try:
        reader = sock.makefile("rb")
        write_frame(sock, Hello(PROTOCOL_VERSION, name))
        while True:
            msg = decode_frame(reader)
            if isinstance(msg, Shutdown):
                logger.info("worker %s shutting down: %s", name, msg.reason)
                return completed
            if not isinstance(msg, Assign):
                raise ProtocolError(f"worker expected assign/shutdown, got {type(msg).__name__}")
            try:
                problem = make_problem(
                    msg.problem_id,
                    n_vars=len(msg.bounds.lower),
                    n_objectives=len(msg.weights),
                )
            except ConfigError as exc:
                write_frame(sock, Shutdown(f"protocol error: {exc}"))
                raise ProtocolError(str(exc)) from exc
            if problem.bounds != msg.bounds:
                reason = f"protocol error: bounds mismatch for problem {msg.problem_id!r}"
                write_frame(sock, Shutdown(reason))
                raise ProtocolError(reason)
            evaluator = _Evaluator(problem, eval_delay_s)
            evaluator.generation = msg.generation
            members = [Individual(genes, None, fitness) for genes, fitness in msg.members]
            new_members, evals = evolve_subpopulation(
                members,
                generation=msg.generation,
                seed=msg.stream_seed,
                params=msg.operator_params,
                bounds=msg.bounds,
                weights=WeightVector(msg.weights),
                evaluate_fn=evaluator,
            )
            write_frame(
                sock,
                Result(
                    run_id=msg.run_id,
                    generation=msg.generation,
                    subpop_id=msg.subpop_id,
                    members=tuple(
                        (m.genes, m.objectives, m.fitness) for m in new_members
                    ),
                    evaluations=evals,
                ),
            )
            completed += 1
            logger.info(
                "worker %s: generation %d subpop %d done (%d evaluations)",
                name, msg.generation, msg.subpop_id, evals,
            )
    finally:
        sock.close()


# ---------------------------------------------------------------------------
# Server

def resolve_generation_timeout(explicit: float | None = None) -> float:
    if explicit is not None:
        return explicit
    env = os.environ.get(TIMEOUT_ENV_VAR)
    if env is not None:
        try:
            return float(env)
        except ValueError as exc:
            raise ConfigError(f"{TIMEOUT_ENV_VAR} must be a number, got {env!r}") from exc
    return DEFAULT_GENERATION_TIMEOUT_S


class _WorkerConn:
    def __init__(self, wid: int, sock: socket.socket, name: str):
        self.wid = wid
        self.sock = sock
        self.name = name
        self.alive = True


class _ServerState:
    """Connection registry plus the event queue feeding the coordinator."""

    def __init__(self):
        self.inbox: queue.Queue = queue.Queue()
        self.workers: dict[int, _WorkerConn] = {}
        self._lock = threading.Lock()
        self._next_wid = 0

    def register(self, sock: socket.socket, name: str) -> _WorkerConn:
        with self._lock:
            wid = self._next_wid
            self._next_wid += 1
            conn = _WorkerConn(wid, sock, name)
            self.workers[wid] = conn
        self.inbox.put(("hello", wid, None))
        return conn


def _handler(state: _ServerState, sock: socket.socket, peer) -> None:
    reader = sock.makefile("rb")
    try:
        first = decode_frame(reader)
    except (TransportError, ProtocolError) as exc:
        logger.warning("rejecting connection from %s: %s", peer, exc)
        sock.close()
        return
    if not isinstance(first, Hello):
        logger.warning("rejecting %s: first message was %s", peer, type(first).__name__)
        sock.close()
        return
    if first.protocol_version != PROTOCOL_VERSION:
        logger.warning(
            "rejecting %s (%s): protocol version %d, expected %d",
            peer, first.worker_name, first.protocol_version, PROTOCOL_VERSION,
        )
        try:
            write_frame(sock, Shutdown(f"protocol version mismatch: server speaks {PROTOCOL_VERSION}"))
        except OSError:
            pass
        sock.close()
        return
    conn = state.register(sock, first.worker_name)
    logger.info("worker %d (%s) connected from %s", conn.wid, conn.name, peer)
    try:
        while True:
            msg = decode_frame(reader)
            if isinstance(msg, Shutdown):
                state.inbox.put(("dead", conn.wid, f"worker announced shutdown: {msg.reason}"))
                return
            state.inbox.put(("msg", conn.wid, msg))
    except (TransportError, ProtocolError, OSError) as exc:
        state.inbox.put(("dead", conn.wid, str(exc)))
    finally:
        sock.close()


class _Dispatcher:
    """Coordinator-side dispatch: assigns tasks, collects results, and
    re-dispatches work orphaned by worker failures."""

    def __init__(self, state: _ServerState, config: EngineConfig, run_id: int, timeout_s: float):
        self.state = state
        self.config = config
        self.run_id = run_id
        self.timeout_s = timeout_s
        self.live: list[int] = []
        self._rr = 0

    def _send_assign(self, wid: int, task) -> bool:
        sid, members, seed, generation = task
        msg = Assign(
            run_id=self.run_id,
            generation=generation,
            subpop_id=sid,
            stream_seed=seed,
            problem_id=self.config.problem.id,
            operator_params=self.config.operator_params,
            weights=self.config.weights.weights,
            bounds=self.config.problem.bounds,
            members=tuple((m.genes, m.fitness) for m in members),
        )
        conn = self.state.workers[wid]
        try:
            write_frame(conn.sock, msg)
            return True
        except OSError as exc:
            self.state.inbox.put(("dead", wid, f"send failed: {exc}"))
            return False

    def _next_worker(self) -> int | None:
        if not self.live:
            return None
        self._rr += 1
        return self.live[self._rr % len(self.live)]

    def wait_for_workers(self, count: int) -> None:
        deadline = time.monotonic() + self.timeout_s
        while len(self.live) < count:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise RuntimeError(
                    f"only {len(self.live)} of {count} workers connected "
                    f"within {self.timeout_s}s"
                )
            try:
                kind, wid, data = self.state.inbox.get(timeout=remaining)
            except queue.Empty:
                continue
            if kind == "hello":
                self.live.append(wid)
            elif kind == "dead" and wid in self.live:
                self.live.remove(wid)

    def __call__(self, tasks):
        unfinished = {task[0]: task for task in tasks}
        owners: dict[int, list[int]] = {}  # wid -> sids in flight
        results = {}
        generation = tasks[0][3] if tasks else 0

        def give(task) -> None:
            while True:
                wid = self._next_worker()
                if wid is None:
                    return  # wait for a worker to (re)connect
                if self._send_assign(wid, task):
                    owners.setdefault(wid, []).append(task[0])
                    return
                self.live.remove(wid)

        for sid in sorted(unfinished):
            give(unfinished[sid])
        deadline = time.monotonic() + self.timeout_s
        while len(results) < len(tasks):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise RuntimeError(
                    f"generation {generation} timed out after {self.timeout_s}s: "
                    f"{len(results)}/{len(tasks)} subpopulations returned"
                )
            try:
                kind, wid, data = self.state.inbox.get(timeout=remaining)
            except queue.Empty:
                continue
            if kind == "hello":
                self.live.append(wid)
                # a late worker picks up any waiting re-dispatches
                waiting = [s for s in unfinished if s not in results and not any(
                    s in sids for sids in owners.values())]
                for s in waiting:
                    give(unfinished[s])
            elif kind == "dead":
                if wid in self.live:
                    self.live.remove(wid)
                logger.warning("worker %d lost: %s", wid, data)
                for sid in owners.pop(wid, []):
                    if sid not in results:
                        logger.info("re-dispatching subpopulation %d", sid)
                        give(unfinished[sid])
            elif kind == "msg":
                msg = data
                if not isinstance(msg, Result):
                    logger.warning("ignoring unexpected %s from worker %d", type(msg).__name__, wid)
                    continue
                if msg.run_id != self.run_id or msg.generation != generation:
                    logger.warning(
                        "ignoring stale result (run %d generation %d) from worker %d",
                        msg.run_id, msg.generation, wid,
                    )
                    continue
                if msg.subpop_id not in unfinished or msg.subpop_id in results:
                    continue
                task = unfinished[msg.subpop_id]
                if len(msg.members) != len(task[1]):
                    raise ProtocolError(
                        f"result for subpopulation {msg.subpop_id} has {len(msg.members)} "
                        f"members, expected {len(task[1])}"
                    )
                members = [Individual(g, o, f) for g, o, f in msg.members]
                results[msg.subpop_id] = (msg.subpop_id, members, msg.evaluations)
                if wid in owners and msg.subpop_id in owners[wid]:
                    owners[wid].remove(msg.subpop_id)
        return list(results.values())


def server_run(
    config: EngineConfig,
    host: str,
    port: int,
    expected_workers: int,
    *,
    generation_timeout_s: float | None = None,
    on_listening: Callable[[int], None] | None = None,
    on_generation=None,
) -> RunResult:
    """Execute the engine loop, delegating per-generation subpopulation work
    to connected workers. Bitwise identical to run_sequential for the same
    config, including across worker failures and re-dispatch."""
    if expected_workers < 1:
        raise ConfigError("expected_workers must be positive")
    timeout_s = resolve_generation_timeout(generation_timeout_s)
    state = _ServerState()
    listener = socket.create_server((host, port), reuse_port=False)
    actual_port = listener.getsockname()[1]
    stop = threading.Event()

    def accept_loop():
        while not stop.is_set():
            try:
                sock, peer = listener.accept()
            except OSError:
                return
            threading.Thread(target=_handler, args=(state, sock, peer), daemon=True).start()

    accept_thread = threading.Thread(target=accept_loop, daemon=True)
    accept_thread.start()
    if on_listening is not None:
        on_listening(actual_port)
    logger.info("serving on %s:%d, waiting for %d workers", host, actual_port, expected_workers)

    dispatcher = _Dispatcher(state, config, run_id=config.master_seed, timeout_s=timeout_s)
    evaluator = _Evaluator(config.problem)
    try:
        dispatcher.wait_for_workers(expected_workers)
        result = _run_loop(config, dispatcher, evaluator, on_generation=on_generation)
        return result
    finally:
        for wid in list(dispatcher.live):
            conn = state.workers.get(wid)
            if conn is not None:
                try:
                    write_frame(conn.sock, Shutdown("run complete"))
                    conn.sock.close()
                except OSError:
                    pass
        stop.set()
        listener.close()
