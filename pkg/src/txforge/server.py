"""Wire bindings for the node API: HTTP one-shots and the TCP event stream.

The protocol (documented in PROTOCOL.md) is deliberately small: JSON bodies
over HTTP for submit/status/state, and length-delimited JSON frames
(``<decimal length>\\n<json>``) over a persistent TCP connection for event
subscriptions.
"""
from __future__ import annotations

import json
import logging
import queue
import socketserver
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import BinaryIO, Callable
from urllib.parse import parse_qs, urlparse

from .chain import Transaction
from .events import EventKind
from .node import NodeError, NodeGateway, PROTOCOL_VERSION

logger = logging.getLogger(__name__)

MAX_FRAME_BYTES = 1 << 20


def write_frame(stream: BinaryIO, payload: dict) -> None:
    data = json.dumps(payload, sort_keys=True).encode("utf-8")
    stream.write(str(len(data)).encode("ascii") + b"\n" + data)
    stream.flush()


def read_frame(stream: BinaryIO) -> dict | None:
    """Read one frame; None on clean EOF. Raises ValueError on a bad frame."""
    header = bytearray()
    while True:
        byte = stream.read(1)
        if not byte:
            if header:
                raise ValueError("connection closed mid-frame")
            return None
        if byte == b"\n":
            break
        header += byte
        if len(header) > 20:
            raise ValueError("frame length header too long")
    try:
        length = int(header.decode("ascii"))
    except ValueError as exc:
        raise ValueError(f"invalid frame length {header!r}") from exc
    if not 0 <= length <= MAX_FRAME_BYTES:
        raise ValueError(f"frame length {length} out of bounds")
    body = stream.read(length)
    if len(body) != length:
        raise ValueError("connection closed mid-frame")
    return json.loads(body.decode("utf-8"))


class _HttpHandler(BaseHTTPRequestHandler):
    server: "NodeHttpServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        logger.debug("http: " + format, *args)

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        if length <= 0:
            raise NodeError("request body required")
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise NodeError(f"invalid JSON body: {exc}") from exc
        if not isinstance(body, dict):
            raise NodeError("request body must be a JSON object")
        return body

    def do_POST(self) -> None:  # noqa: N802 - stdlib naming
        parsed = urlparse(self.path)
        try:
            if parsed.path == "/tx":
                tx_hash = self.server.gateway.rpc_submit_transaction(self._read_body())
                self._send_json(200, {"tx_hash": tx_hash})
            else:
                self._send_json(404, {"error": f"no such endpoint: POST {parsed.path}"})
        except NodeError as exc:
            self._send_json(400, {"error": str(exc)})
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("unhandled error in POST %s", parsed.path)
            self._send_json(500, {"error": str(exc)})

    def do_GET(self) -> None:  # noqa: N802 - stdlib naming
        parsed = urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        try:
            if parsed.path == "/":
                self._send_json(200, self.server.gateway.info())
            elif len(parts) == 2 and parts[0] == "tx":
                try:
                    status = self.server.gateway.rpc_get_transaction_status(parts[1])
                except ValueError as exc:
                    raise NodeError(str(exc)) from None
                self._send_json(200, status)
            elif len(parts) == 2 and parts[0] == "state":
                params = parse_qs(parsed.query)
                key = params.get("key", [None])[0]
                try:
                    if key is not None:
                        value = self.server.gateway.rpc_get_state(parts[1], key)
                        self._send_json(200, {"contract": parts[1], "key": key, "value": value})
                    else:
                        state = self.server.gateway.rpc_get_state(parts[1])
                        self._send_json(200, {"contract": parts[1], "state": state})
                except ValueError as exc:
                    raise NodeError(str(exc)) from None
            elif len(parts) == 2 and parts[0] == "account":
                try:
                    nonce = self.server.gateway.next_nonce(parts[1])
                except ValueError as exc:
                    raise NodeError(str(exc)) from None
                self._send_json(200, {"address": parts[1], "next_nonce": nonce})
            elif parsed.path == "/report" and self.server.report_provider is not None:
                self._send_json(200, self.server.report_provider())
            else:
                self._send_json(404, {"error": f"no such endpoint: GET {parsed.path}"})
        except NodeError as exc:
            self._send_json(400, {"error": str(exc)})
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("unhandled error in GET %s", parsed.path)
            self._send_json(500, {"error": str(exc)})


class NodeHttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], gateway: NodeGateway,
                 report_provider: Callable[[], dict] | None = None):
        super().__init__(address, _HttpHandler)
        self.gateway = gateway
        self.report_provider = report_provider


class _EventHandler(socketserver.StreamRequestHandler):
    server: "EventStreamServer"

    def handle(self) -> None:
        try:
            request = read_frame(self.rfile)
        except (ValueError, json.JSONDecodeError) as exc:
            write_frame(self.wfile, {"error": f"bad subscribe frame: {exc}"})
            return
        if not request or request.get("op") != "subscribe":
            write_frame(self.wfile, {"error": "first frame must be {\"op\": \"subscribe\", ...}"})
            return
        kinds = None
        if request.get("kinds") is not None:
            try:
                kinds = [EventKind(k) for k in request["kinds"]]
            except ValueError as exc:
                write_frame(self.wfile, {"error": f"unknown event kind: {exc}"})
                return
        try:
            subscription = self.server.gateway.subscribe(
                tx_hash=request.get("tx_hash"),
                kinds=kinds,
                capacity=request.get("capacity"),
            )
        except ValueError as exc:
            write_frame(self.wfile, {"error": str(exc)})
            return
        write_frame(self.wfile, {"subscribed": subscription.id})
        try:
            while not self.server.stopping.is_set():
                event = subscription.next_event(timeout=0.2)
                if event is None:
                    continue
                write_frame(self.wfile, event.to_wire())
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.server.gateway.hub.unsubscribe(subscription)


class EventStreamServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], gateway: NodeGateway):
        super().__init__(address, _EventHandler)
        self.gateway = gateway
        self.stopping = threading.Event()


def parse_listen(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {value!r}")
    return host, int(port)


class ServeSession:
    """A long-running node driving traversals for externally submitted txs.

    Transactions arrive via POST /tx, are queued, and traverse the configured
    plan one at a time; snapshots are captured from the configured source
    (normally the external DApp's HTTP state endpoint). The report aggregates
    every finished traversal and is available live at GET /report.
    """

    def __init__(self, session) -> None:
        self._session = session
        self._queue: "queue.Queue[Transaction | None]" = queue.Queue()
        self._outcomes_lock = threading.Lock()
        self._outcomes = []
        self._worker: threading.Thread | None = None
        self.http_server: NodeHttpServer | None = None
        self.event_server: EventStreamServer | None = None
        self._threads: list[threading.Thread] = []
        session.gateway._submit_sink = self._queue.put

    @property
    def session(self):
        return self._session

    def start(self) -> tuple[tuple[str, int], tuple[str, int]]:
        config = self._session.config
        self.http_server = NodeHttpServer(
            parse_listen(config.listen_http), self._session.gateway, self._report_mapping
        )
        self.event_server = EventStreamServer(
            parse_listen(config.listen_events), self._session.gateway
        )
        for server in (self.http_server, self.event_server):
            thread = threading.Thread(target=server.serve_forever, daemon=True)
            thread.start()
            self._threads.append(thread)
        self._worker = threading.Thread(target=self._work, daemon=True)
        self._worker.start()
        return self.http_server.server_address, self.event_server.server_address

    def _work(self) -> None:
        from .oracle import TransactionSnapshotTrace
        from .orchestrator import _CaptureHooks

        while True:
            tx = self._queue.get()
            if tx is None:
                return
            trace = TransactionSnapshotTrace(tx_hash=tx.hash, tag=tx.tag)
            self._session.traces[tx.hash] = trace
            try:
                lifecycle_trace = self._session.controller.run_traversal(
                    tx.hash, self._session.config.plan, _CaptureHooks(self._session, trace)
                )
                trace.complete = lifecycle_trace.complete
                if not lifecycle_trace.complete:
                    self._session._force_terminate(tx.hash)
            except Exception as exc:
                logger.exception("traversal failed for %s: %s", tx.hash_hex, exc)
                self._session._force_terminate(tx.hash)
            with self._outcomes_lock:
                index = len(self._outcomes)
                self._outcomes.append(self._session._outcome(index, tx, trace))

    def _report(self):
        from .reporting import SessionReport

        with self._outcomes_lock:
            outcomes = list(self._outcomes)
        return SessionReport(session=self._session.session_meta(), outcomes=outcomes)

    def _report_mapping(self) -> dict:
        from .reporting import report_to_mapping

        return report_to_mapping(self._report())

    def stop(self):
        """Stop accepting work, finish the queue, and return the final report."""
        self._queue.put(None)
        if self._worker is not None:
            self._worker.join(timeout=60)
        if self.event_server is not None:
            self.event_server.stopping.set()
        for server in (self.http_server, self.event_server):
            if server is not None:
                server.shutdown()
                server.server_close()
        for thread in self._threads:
            thread.join(timeout=5)
        return self._report()
