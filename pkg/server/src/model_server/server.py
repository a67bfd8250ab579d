"""Wire-protocol server: line-delimited JSON on stdio or JSON over HTTP.

Request:  {"id": str, "class_index": int, "sequences": [[token, ...], ...]}
Response: {"id": str, "outputs": [number, ...]} on success, or
          {"id": str, "error": str} with the connection kept alive.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Sequence

log = logging.getLogger("model_server")


@dataclass
class ServerConfig:
    model_adapter: Callable[[Sequence[Sequence], int], list[float]]
    class_count: int = 2
    batch_limit: int = 256

    def __post_init__(self):
        if self.batch_limit < 1:
            raise ValueError("batch_limit must be >= 1")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")


def handle_request(obj, config: ServerConfig) -> dict:
    """One protocol exchange.  Malformed input is answered, never raised."""
    rid = obj.get("id") if isinstance(obj, dict) else None
    if not isinstance(obj, dict):
        return {"id": rid, "error": "request must be a JSON object"}
    if not isinstance(rid, str):
        return {"id": rid, "error": "missing or non-string 'id'"}
    class_index = obj.get("class_index", 1)
    if not isinstance(class_index, int) or isinstance(class_index, bool):
        return {"id": rid, "error": "'class_index' must be an integer"}
    if not 0 <= class_index < config.class_count:
        return {"id": rid, "error": f"class_index {class_index} outside 0..{config.class_count - 1}"}
    sequences = obj.get("sequences")
    if not isinstance(sequences, list) or not all(isinstance(s, list) for s in sequences):
        return {"id": rid, "error": "'sequences' must be a list of token lists"}
    if len(sequences) > config.batch_limit:
        return {
            "id": rid,
            "error": f"batch of {len(sequences)} exceeds batch_limit {config.batch_limit}",
        }
    try:
        outputs = config.model_adapter(sequences, class_index)
        outputs = [float(x) for x in outputs]
    except Exception as exc:
        return {"id": rid, "error": f"adapter failure: {exc}"}
    if len(outputs) != len(sequences):
        return {"id": rid, "error": "adapter returned a misaligned batch"}
    return {"id": rid, "outputs": outputs}


def serve_stdio(config: ServerConfig, stdin=None, stdout=None) -> int:
    """Answer one request per input line until EOF.  Returns the number of
    requests served."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    served = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            response = {"id": None, "error": f"invalid JSON: {exc}"}
        else:
            response = handle_request(obj, config)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
        served += 1
    log.info("served %d requests", served)
    return served


class _Handler(BaseHTTPRequestHandler):
    config: ServerConfig = None  # set by serve_http

    def do_POST(self):
        if self.path.rstrip("/") != "/evaluate":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            obj = json.loads(body)
        except json.JSONDecodeError as exc:
            response = {"id": None, "error": f"invalid JSON: {exc}"}
        else:
            response = handle_request(obj, self.config)
        payload = json.dumps(response).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)


def make_http_server(config: ServerConfig, port: int) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"config": config})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_http(config: ServerConfig, port: int) -> None:
    server = make_http_server(config, port)
    log.info("listening on port %d", server.server_address[1])
    try:
        server.serve_forever()
    finally:
        server.server_close()


def _build_adapter(args):
    if args.adapter == "echo":
        from .adapters import echo_adapter

        return echo_adapter
    from .adapters import SyntheticMirror

    if not args.model_config:
        raise SystemExit("--model-config is required for the synthetic adapter")
    return SyntheticMirror.from_config_file(args.model_config)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="model-server", description=__doc__)
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stdio", action="store_true", help="serve line-delimited JSON on stdio")
    mode.add_argument("--port", type=int, help="serve HTTP on this port (0 picks one)")
    parser.add_argument("--adapter", choices=("echo", "synthetic"), default="echo")
    parser.add_argument("--model-config", default=None)
    parser.add_argument("--batch-limit", type=int, default=256)
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(name)s: %(message)s",
    )
    config = ServerConfig(model_adapter=_build_adapter(args), batch_limit=args.batch_limit)
    if args.stdio:
        serve_stdio(config)
    else:
        serve_http(config, args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
