"""Model gateway: turns a black-box sequence model plus a sample into an
ordered game.

Handles masking semantics, grouped position indexing, batching,
deduplication, and the wire client for out-of-process models.
"""
from __future__ import annotations

import itertools
import json
import subprocess
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .games import MASK_TOKEN, OrderedGame
from .perms import Permutation


class GatewayError(Exception):
    """Base class for everything the gateway can raise."""


class TransportError(GatewayError):
    """Connection-level failure (retriable by the caller)."""


class EvaluationTimeout(GatewayError):
    """The model did not answer within the endpoint timeout."""


class MalformedResponseError(GatewayError):
    """The model answered, but not in the wire format."""


class ModelServerError(GatewayError):
    """The model reported an application-level error for the request."""


Token = str | tuple
TokenSeq = tuple[Token, ...]


def _freeze_token(t) -> Token:
    if isinstance(t, (list, tuple)):
        return tuple(float(x) for x in t)
    return t


def _freeze_sequence(seq: Sequence) -> TokenSeq:
    return tuple(_freeze_token(t) for t in seq)


@dataclass
class MaskingPolicy:
    """How ablated features are filled in.

    ``single_baseline`` substitutes one sentinel token; ``reference_set``
    averages the model output over a caller-supplied list of reference
    sequences.
    """

    mode: str = "single_baseline"
    baseline_token: Token = MASK_TOKEN
    references: tuple[TokenSeq, ...] = ()

    def __post_init__(self):
        if self.mode not in ("single_baseline", "reference_set"):
            raise ValueError(f"unknown masking mode {self.mode!r}")
        self.references = tuple(_freeze_sequence(r) for r in self.references)
        if self.mode == "reference_set" and not self.references:
            raise ValueError("reference_set mode needs at least one reference")

    def reference_sequences(self, n: int) -> tuple[TokenSeq, ...]:
        if self.mode == "single_baseline":
            return ((self.baseline_token,) * n,)
        bad = [len(r) for r in self.references if len(r) != n]
        if bad:
            raise ValueError(f"reference lengths {bad} do not match n={n}")
        return self.references


@dataclass
class SequenceSample:
    """A concrete input to attribute: tokens, optional position groups, and
    the masking policy used to ablate features."""

    tokens: TokenSeq
    groups: tuple[int, ...] | None = None
    baseline_policy: MaskingPolicy = field(default_factory=MaskingPolicy)

    def __post_init__(self):
        self.tokens = _freeze_sequence(self.tokens)
        if len(self.tokens) == 0:
            raise ValueError("sample must have at least one token")
        if self.groups is not None:
            self.groups = tuple(int(g) for g in self.groups)
            if len(self.groups) != len(self.tokens):
                raise ValueError("group map must cover every position")
            if any(a > b for a, b in itertools.pairwise(self.groups)):
                raise ValueError("group map must be monotone non-decreasing")

    @property
    def n(self) -> int:
        return len(self.tokens)


def materialize(
    sample: SequenceSample,
    s: frozenset,
    sigma: Permutation,
    reference: Sequence,
) -> TokenSeq:
    """Build the sequence the model actually sees: feature i's slot (its
    landing position under sigma) holds the sample token when i is in the
    coalition and the reference token otherwise."""
    n = sample.n
    if len(reference) != n:
        raise ValueError(f"reference length {len(reference)} != n={n}")
    out: list = [None] * n
    for i in range(1, n + 1):
        src = sample.tokens[i - 1] if i in s else _freeze_token(reference[i - 1])
        out[sigma.position_of(i) - 1] = src
    return tuple(out)


def grouped_positions(sample: SequenceSample):
    """Group index set and the landing-group lookup for a grouped sample.

    Returns ``(positions, lookup)`` where ``positions`` is the sorted tuple
    of distinct group indices and ``lookup(sigma, i)`` is the group feature
    ``i`` lands in under ``sigma``.
    """
    if sample.groups is None:
        raise ValueError("sample has no group map")
    positions = tuple(sorted(set(sample.groups)))
    groups = sample.groups

    def lookup(sigma: Permutation, i: int) -> int:
        return groups[sigma.position_of(i) - 1]

    return positions, lookup


class EvalCache:
    """Dedup cache keyed on the exact materialized sequence (plus class).

    LRU-evicting once ``capacity`` is exceeded; thread-safe.
    """

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._store: OrderedDict[tuple, float] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._store)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def get(self, key: tuple) -> float | None:
        with self._lock:
            if key in self._store:
                self.hits += 1
                self._store.move_to_end(key)
                return self._store[key]
            self.misses += 1
            return None

    def put(self, key: tuple, value: float) -> None:
        with self._lock:
            self._store[key] = value
            self._store.move_to_end(key)
            while len(self._store) > self.capacity:
                self._store.popitem(last=False)


class _InProcessClient:
    def __init__(self, adapter: Callable):
        self._adapter = adapter

    def request(self, sequences: list[TokenSeq], class_index: int) -> list[float]:
        try:
            outputs = self._adapter(sequences, class_index)
        except Exception as exc:
            raise ModelServerError(str(exc)) from exc
        return [float(x) for x in outputs]

    def close(self) -> None:
        pass


class _PipeJsonlClient:
    """Talks the line-delimited JSON protocol to a subprocess started from
    the endpoint address (a shell command)."""

    def __init__(self, command: str, timeout: float):
        self._timeout = timeout
        self._counter = itertools.count()
        try:
            self._proc = subprocess.Popen(
                command,
                shell=True,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"could not start {command!r}: {exc}") from exc

    def request(self, sequences: list[TokenSeq], class_index: int) -> list[float]:
        rid = f"req-{next(self._counter)}"
        payload = {
            "id": rid,
            "class_index": class_index,
            "sequences": [list(s) if isinstance(s, tuple) else s for s in sequences],
        }
        if self._proc.poll() is not None:
            raise TransportError("model process exited")
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(str(exc)) from exc
        if not line:
            raise TransportError("model process closed the pipe")
        return _parse_response(line, rid, len(sequences))

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class _HttpJsonClient:
    def __init__(self, address: str, timeout: float):
        import requests

        self._requests = requests
        self._session = requests.Session()
        self._url = address if address.endswith("/evaluate") else address.rstrip("/") + "/evaluate"
        self._timeout = timeout
        self._counter = itertools.count()

    def request(self, sequences: list[TokenSeq], class_index: int) -> list[float]:
        rid = f"req-{next(self._counter)}"
        payload = {
            "id": rid,
            "class_index": class_index,
            "sequences": [list(s) if isinstance(s, tuple) else s for s in sequences],
        }
        try:
            resp = self._session.post(self._url, json=payload, timeout=self._timeout)
        except self._requests.exceptions.Timeout as exc:
            raise EvaluationTimeout(str(exc)) from exc
        except self._requests.exceptions.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise ModelServerError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return _parse_response(resp.text, rid, len(sequences))

    def close(self) -> None:
        self._session.close()


def _parse_response(text: str, rid: str, expected: int) -> list[float]:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedResponseError(f"not JSON: {text[:200]!r}") from exc
    if not isinstance(obj, dict):
        raise MalformedResponseError(f"expected object, got {type(obj).__name__}")
    if "error" in obj:
        raise ModelServerError(str(obj["error"]))
    if obj.get("id") != rid:
        raise MalformedResponseError(f"response id {obj.get('id')!r} != request id {rid!r}")
    outputs = obj.get("outputs")
    if not isinstance(outputs, list) or len(outputs) != expected:
        raise MalformedResponseError(
            f"expected {expected} outputs, got {outputs!r:.200}"
        )
    try:
        return [float(x) for x in outputs]
    except (TypeError, ValueError) as exc:
        raise MalformedResponseError(f"non-numeric output: {exc}") from exc


@dataclass
class ModelEndpoint:
    """Where and how to reach the model.

    ``in_process`` wraps a Python callable ``adapter(sequences, class_index)
    -> list[float]``; ``pipe_jsonl`` runs ``address`` as a subprocess
    speaking line-delimited JSON; ``http_json`` POSTs to ``address``.
    """

    transport: str = "in_process"
    address: str = ""
    batch_limit: int = 64
    timeout: float = 30.0
    adapter: Callable | None = None

    def __post_init__(self):
        if self.transport not in ("in_process", "pipe_jsonl", "http_json"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.batch_limit < 1:
            raise ValueError("batch_limit must be >= 1")
        if self.transport == "in_process" and self.adapter is None:
            raise ValueError("in_process endpoint needs an adapter callable")
        if self.transport != "in_process" and not self.address:
            raise ValueError(f"{self.transport} endpoint needs an address")
        self._client = None

    def client(self):
        if self._client is None:
            if self.transport == "in_process":
                self._client = _InProcessClient(self.adapter)
            elif self.transport == "pipe_jsonl":
                self._client = _PipeJsonlClient(self.address, self.timeout)
            else:
                self._client = _HttpJsonClient(self.address, self.timeout)
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None


def evaluate_batch(
    endpoint: ModelEndpoint,
    sequences: Sequence[Sequence],
    class_index: int = 1,
) -> list[float]:
    """Evaluate sequences through the endpoint, chunked to batch_limit.
    Outputs are aligned to inputs; any chunk failure aborts the whole call."""
    seqs = [_freeze_sequence(s) for s in sequences]
    if not seqs:
        return []
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"mixed sequence lengths {sorted(lengths)}")
    client = endpoint.client()
    out: list[float] = []
    for start in range(0, len(seqs), endpoint.batch_limit):
        out.extend(client.request(seqs[start : start + endpoint.batch_limit], class_index))
    return out


class GatewayGame:
    """OrderedGame over a model endpoint with dedup caching.

    Exposed as a plain OrderedGame through :func:`ordered_game_from_model`;
    kept as a class so call statistics stay inspectable.
    """

    def __init__(
        self,
        endpoint: ModelEndpoint,
        sample: SequenceSample,
        class_index: int = 1,
        cache: EvalCache | None = None,
        use_cache: bool = True,
    ):
        self.endpoint = endpoint
        self.sample = sample
        self.class_index = class_index
        self.cache = cache if cache is not None else EvalCache()
        self.use_cache = use_cache
        self.model_calls = 0

    def _outputs_for(self, seqs: list[TokenSeq]) -> list[float]:
        if not self.use_cache:
            self.model_calls += len(seqs)
            return evaluate_batch(self.endpoint, seqs, self.class_index)
        results: dict[int, float] = {}
        misses: list[int] = []
        for k, seq in enumerate(seqs):
            cached = self.cache.get((self.class_index, seq))
            if cached is None:
                misses.append(k)
            else:
                results[k] = cached
        if misses:
            # one call may satisfy several identical missing keys
            unique = list(dict.fromkeys(seqs[k] for k in misses))
            outs = evaluate_batch(self.endpoint, unique, self.class_index)
            self.model_calls += len(unique)
            by_seq = dict(zip(unique, outs))
            for k in misses:
                val = by_seq[seqs[k]]
                self.cache.put((self.class_index, seqs[k]), val)
                results[k] = val
        return [results[k] for k in range(len(seqs))]

    def evaluate(self, s: frozenset, sigma: Permutation) -> float:
        refs = self.sample.baseline_policy.reference_sequences(self.sample.n)
        seqs = [materialize(self.sample, s, sigma, ref) for ref in refs]
        outs = self._outputs_for(seqs)
        return sum(outs) / len(outs)

    def as_game(self) -> OrderedGame:
        return OrderedGame(
            n=self.sample.n,
            evaluate=self.evaluate,
            descriptor=f"model[{self.endpoint.transport}]",
        )


def ordered_game_from_model(
    endpoint: ModelEndpoint,
    sample: SequenceSample,
    class_index: int = 1,
    cache: EvalCache | None = None,
    use_cache: bool = True,
) -> OrderedGame:
    return GatewayGame(endpoint, sample, class_index, cache, use_cache).as_game()
