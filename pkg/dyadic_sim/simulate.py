import math
import queue
import socket
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

import numpy as np

from dyadic_sim.coder import (
    ESCAPE,
    FRAME_HEADER,
    ArithmeticCoder,
    BitReader,
    BitString,
    SharedBitStream,
    build_prefix_code,
    frame_bits,
    frame_size,
    unframe_bits,
)
from dyadic_sim.common import (
    CubeDisagreementError,
    DecodeError,
    DepthExceeded,
    DimensionMismatchError,
    DyadicCube,
    cube_bounds,
    make_rng,
)
from dyadic_sim.config import load_config
from dyadic_sim.dyadic import (
    DecompositionTable,
    coding_frame,
    decompose,
    locate_many,
    table_entropy,
    truncate_table,
)
from dyadic_sim.logger import append_to_jsonl
from dyadic_sim.regions import Hypograph, Region, Transformed, load_region

PATHS = ("prefix", "arithmetic")
# escapes or deep descents tolerated in a row before giving up on a session
MAX_RESAMPLES = 1000


def agent_count(region: Region) -> int:
    """Number of agents: the dimension, less the height axis of a hypograph."""
    inner = region
    while isinstance(inner, Transformed):
        inner = inner.child
    return region.n - 1 if isinstance(inner, Hypograph) else region.n


@dataclass
class SessionTranscript:
    region: str
    path: str
    codeword: BitString
    cube: DyadicCube
    outputs: np.ndarray
    # (seed, session) the source and agent streams were derived from
    seeds: tuple
    resamples: int = 0
    # cube coordinates + offset = region coordinates
    offset: tuple = ()

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "path": self.path,
            "codeword": self.codeword.bits,
            "k": self.cube.k,
            "v": list(self.cube.v),
            "outputs": [float(x) for x in self.outputs],
            "seeds": list(self.seeds),
            "resamples": self.resamples,
            "offset": [float(x) for x in self.offset],
        }


@dataclass
class SessionBatch:
    """Many sessions of one simulator, stored column-wise."""

    region: str
    path: str
    k: np.ndarray
    v: np.ndarray
    outputs: np.ndarray
    codewords: list
    resamples: np.ndarray
    seed: int
    offset: tuple = ()

    def __len__(self):
        return len(self.k)

    @property
    def codeword_lengths(self) -> np.ndarray:
        return np.array([len(c) for c in self.codewords], dtype=np.int64)

    def cubes(self) -> list[DyadicCube]:
        return [DyadicCube(int(k), tuple(int(x) for x in v)) for k, v in zip(self.k, self.v)]

    def transcripts(self) -> Iterator[SessionTranscript]:
        for s, cube in enumerate(self.cubes()):
            yield SessionTranscript(
                self.region,
                self.path,
                BitString(self.codewords[s]),
                cube,
                self.outputs[s],
                (self.seed, s),
                int(self.resamples[s]),
                self.offset,
            )

    def to_jsonl(self, path: str):
        for transcript in self.transcripts():
            append_to_jsonl(path, transcript.to_dict())


class ExactSimulator:
    """Source and agents of the one-shot scheme for one region.

    The source draws X uniform on the region, finds its decomposition cube W
    and sends W's codeword; agent i decodes W and outputs a uniform point of
    the cube's i-th side. On the prefix path, points whose cube is not in the
    table (the escape symbol) are redrawn, which conditions on the enumerated
    cubes. The arithmetic path needs no table and redraws only when a descent
    passes k_max.

    Cubes are drawn in the coding frame of the region (see coding_frame), so
    a region spanning several root cells is first moved into the positive
    orthant and a table passed in must be the decomposition of that frame.
    Agent outputs are moved back and lie in the region itself.

    Each session s under seed t uses the source stream (t, s, 0) and the
    agent streams (t, s, i), so a session replays identically however
    sessions are scheduled."""

    def __init__(
        self,
        region: Region,
        path: str = "arithmetic",
        k_max: Optional[int] = None,
        table: Optional[DecompositionTable] = None,
        min_mass: float = 0.0,
        workers: int = 1,
    ):
        if path not in PATHS:
            raise ValueError(f"Unknown path {path}, expected one of {PATHS}")
        self.region = region
        self.path = path
        self.n_agents = agent_count(region)
        self.coded, offset = coding_frame(region)
        self.offset = tuple(float(x) for x in offset)
        if path == "prefix":
            self.k_max = k_max if k_max is not None else (table.k_max if table is not None else 11)
            self.table = table if table is not None else decompose(self.coded, self.k_max, min_mass, workers)
            self.code = build_prefix_code(self.table)
            self._index = {cube: i for i, (cube, _) in enumerate(self.table.entries)}
            self.coder = None
        else:
            self.k_max = k_max if k_max is not None else 40
            self.table = table
            self.code = None
            self.coder = ArithmeticCoder(self.coded, self.k_max)

    # ---- source side ----

    def encode(self, rng: np.random.Generator) -> tuple[BitString, DyadicCube, int]:
        """Draw one W; returns its codeword, the cube and the number of redraws."""
        for resamples in range(MAX_RESAMPLES):
            if self.path == "arithmetic":
                try:
                    bits, cube = self.coder.generate(rng)
                except DepthExceeded:
                    continue
                return bits, cube, resamples
            x = self.coded.sample_uniform(1, rng)
            k, v, resolved = locate_many(self.coded, x, self.k_max)
            if not resolved[0]:
                continue
            cube = DyadicCube(int(k[0]), tuple(int(c) for c in v[0]))
            if cube in self._index:
                return self.code.encode(cube), cube, resamples
        raise DepthExceeded(f"{MAX_RESAMPLES} draws in a row escaped the code of {self.region.name}")

    # ---- agent side ----

    def decode(self, bits: Union[BitString, BitReader]) -> tuple[DyadicCube, int]:
        if self.path == "arithmetic":
            return self.coder.decode(bits)
        symbol, consumed = self.code.decode(bits)
        if symbol is ESCAPE:
            raise DecodeError("the escape symbol is never sent")
        return symbol, consumed

    def agent_output(self, agent_index: int, cube: DyadicCube, rng: np.random.Generator) -> float:
        """Coordinate `agent_index` (1-based) uniform on the cube's side."""
        if not 1 <= agent_index <= self.n_agents:
            raise DimensionMismatchError(f"agent {agent_index} out of range for {self.n_agents} agents")
        lo, hi = cube.bounds()
        i = agent_index - 1
        return float(rng.uniform(lo[i], hi[i])) + self.offset[i]

    def agent(self, agent_index: int, bits: BitString, seed: int, session: int = 0) -> tuple[DyadicCube, float]:
        cube, consumed = self.decode(bits)
        if consumed != len(bits):
            raise DecodeError(f"{len(bits) - consumed} trailing bits after the codeword")
        return cube, self.agent_output(agent_index, cube, make_rng(seed, session, agent_index))

    # ---- sessions ----

    def draw(self, seed: int, session: int = 0) -> SessionTranscript:
        bits, cube, resamples = self.encode(make_rng(seed, session, 0))
        outputs = []
        for i in range(1, self.n_agents + 1):
            decoded, x = self.agent(i, bits, seed, session)
            if decoded != cube:
                raise CubeDisagreementError(f"agent {i} decoded {decoded}, source sent {cube}")
            outputs.append(x)
        return SessionTranscript(
            self.region.name,
            self.path,
            bits,
            cube,
            np.array(outputs),
            (seed, session),
            resamples,
            self.offset,
        )

    def run(self, sessions: int, seed: int = 0, verify: bool = True) -> SessionBatch:
        """`sessions` sessions under one seed.

        The prefix path is vectorized over sessions and draws from the batch
        streams (seed, 0) for the source and (seed, i) for agent i; the
        arithmetic path runs `draw` session by session."""
        if self.path == "arithmetic":
            transcripts = [self.draw(seed, s) for s in range(sessions)]
            return SessionBatch(
                self.region.name,
                self.path,
                np.array([t.cube.k for t in transcripts], dtype=np.int64),
                np.array([t.cube.v for t in transcripts], dtype=np.int64).reshape(-1, self.region.n),
                np.array([t.outputs for t in transcripts]).reshape(-1, self.n_agents),
                [t.codeword.bits for t in transcripts],
                np.array([t.resamples for t in transcripts], dtype=np.int64),
                seed,
                self.offset,
            )
        k, v, resamples = self._draw_cubes(sessions, make_rng(seed, 0))
        codewords = [self.code.codewords[DyadicCube(int(a), tuple(int(x) for x in b))] for a, b in zip(k, v)]
        if verify:
            for s, word in enumerate(codewords):
                cube, _ = self.decode(BitString(word))
                if cube.k != k[s] or cube.v != tuple(int(x) for x in v[s]):
                    raise CubeDisagreementError(f"session {s}: decoded {cube}, source sent {(k[s], v[s])}")
        outputs = self._agent_outputs(k, v, seed)
        return SessionBatch(self.region.name, self.path, k, v, outputs, codewords, resamples, seed, self.offset)

    def _draw_cubes(self, sessions: int, rng: np.random.Generator):
        n = self.region.n
        k_out = np.zeros(sessions, dtype=np.int64)
        v_out = np.zeros((sessions, n), dtype=np.int64)
        resamples = np.zeros(sessions, dtype=np.int64)
        filled, pending_escapes = 0, 0
        while filled < sessions:
            need = sessions - filled
            x = self.coded.sample_uniform(int(need * 1.05) + 16, rng)
            k, v, resolved = locate_many(self.coded, x, self.k_max)
            for row in range(len(x)):
                if filled == sessions:
                    break
                cube = DyadicCube(int(k[row]), tuple(int(c) for c in v[row]))
                if not resolved[row] or cube not in self._index:
                    pending_escapes += 1
                    if pending_escapes >= MAX_RESAMPLES:
                        raise DepthExceeded(f"{MAX_RESAMPLES} draws in a row escaped the code")
                    continue
                k_out[filled], v_out[filled] = k[row], v[row]
                resamples[filled] = pending_escapes
                pending_escapes = 0
                filled += 1
        return k_out, v_out, resamples

    def _agent_outputs(self, k: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
        lo, hi = cube_bounds(k, v) if len(k) else (np.zeros((0, self.region.n)), np.zeros((0, self.region.n)))
        outputs = np.empty((len(k), self.n_agents))
        for i in range(self.n_agents):
            outputs[:, i] = make_rng(seed, i + 1).uniform(lo[:, i], hi[:, i]) + self.offset[i]
        return outputs


def run_exact(
    region: Union[str, Region],
    n_agents: Optional[int] = None,
    path: str = "arithmetic",
    seeds: Union[int, list] = 0,
    k_max: Optional[int] = None,
    **kwargs,
) -> Union[SessionTranscript, list[SessionTranscript]]:
    """One exact session per seed (a single transcript for an integer seed)."""
    region = load_region(region)
    simulator = ExactSimulator(region, path, k_max, **kwargs)
    if n_agents is not None and n_agents != simulator.n_agents:
        raise DimensionMismatchError(f"{region.name} needs {simulator.n_agents} agents, got {n_agents}")
    if isinstance(seeds, (int, np.integer)):
        return simulator.draw(int(seeds))
    return [simulator.draw(int(s)) for s in seeds]


# ##############################################################################
# # Truncated fixed-length scheme
# ##############################################################################


@dataclass
class TruncationPlan:
    eps: float
    # cutoff level from the entropy, and the level actually applied to the table
    l: int
    l_effective: int
    N: int
    replacement: DyadicCube
    cardinality: int
    h_bits: float
    moved_mass: float

    @property
    def fits(self) -> bool:
        return self.cardinality <= 2**self.N

    @property
    def index_bits(self) -> int:
        """Width of the index code; N unless the table does not fit in N bits."""
        return max(self.N, (self.cardinality - 1).bit_length())

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "l": self.l,
            "l_effective": self.l_effective,
            "N": self.N,
            "replacement": [self.replacement.k, list(self.replacement.v)],
            "cardinality": self.cardinality,
            "H": self.h_bits,
            "moved_mass": self.moved_mass,
            "fits": self.fits,
        }


def truncation_length(h_bits: float, eps: float) -> int:
    """ceil(log2(eps 2^(H/eps) + 1)), computed in the log domain."""
    return int(math.ceil(np.logaddexp2(math.log2(eps) + h_bits / eps, 0.0) - 1e-12))


def truncation_level(h_bits: float, eps: float, volume: float, n: int) -> int:
    return int(math.ceil((h_bits / eps - math.log2(volume)) / n))


def plan_truncation(table: DecompositionTable, eps: float) -> tuple[TruncationPlan, DecompositionTable]:
    """Cutoff, code length and truncated table for a target total variation eps.

    The upper end of the entropy bracket is used for H, which can only raise
    the cutoff. When no entry lies below the cutoff the table collapses onto
    its most probable cube."""
    assert 0 < eps < 1, f"eps must lie in (0, 1), got {eps}"
    if len(table) == 0:
        raise ValueError("cannot truncate an empty table")
    _, h = table_entropy(table)
    l = truncation_level(h, eps, table.region_volume, table.n)
    l_eff = min(l, table.k_max + 1)
    N = truncation_length(h, eps)
    if not np.any(table.k < l_eff):
        top = int(np.argmax(table.probabilities))
        print(f"Warning: cutoff level {l_eff} is at or above every entry; collapsing onto one cube")
        truncated = replace(
            table,
            k=table.k[top : top + 1].copy(),
            v=table.v[top : top + 1].copy(),
            probabilities=np.ones(1),
            residual_mass=0.0,
            replacement_index=0,
            moved_mass=1.0 - float(table.probabilities[top]),
        )
        N = 0
    else:
        truncated = truncate_table(table, l_eff)
    plan = TruncationPlan(
        eps=eps,
        l=l,
        l_effective=l_eff,
        N=N,
        replacement=truncated.cube(truncated.replacement_index),
        cardinality=len(truncated),
        h_bits=h,
        moved_mass=truncated.moved_mass,
    )
    return plan, truncated


def run_truncated(
    region: Union[str, Region],
    eps: float,
    seed: int = 0,
    sessions: int = 10_000,
    k_max: int = 11,
    table: Optional[DecompositionTable] = None,
    min_mass: float = 0.0,
    workers: int = 1,
) -> tuple[TruncationPlan, SessionBatch]:
    """Sessions of the fixed-length scheme: W is sent as an index of plan.index_bits bits.

    The source maps every point whose cube is not an entry of the truncated
    table (deep, pruned or unresolved) onto the replacement cube, so no
    point is ever redrawn and the output law is that of the truncated W.
    Like ExactSimulator it works in the coding frame of the region; a table
    passed in must be the decomposition of that frame."""
    region = load_region(region)
    coded, offset = coding_frame(region)
    table = table if table is not None else decompose(coded, k_max, min_mass, workers)
    plan, truncated = plan_truncation(table, eps)
    index = {cube: i for i, (cube, _) in enumerate(truncated.entries)}
    width = plan.index_bits

    rng = make_rng(seed, 0)
    x = coded.sample_uniform(sessions, rng)
    k, v, resolved = locate_many(coded, x, table.k_max)
    rows = np.empty(sessions, dtype=np.int64)
    for s in range(sessions):
        cube = DyadicCube(int(k[s]), tuple(int(c) for c in v[s]))
        rows[s] = index.get(cube, truncated.replacement_index) if resolved[s] else truncated.replacement_index
    codewords = [format(int(r), "b").zfill(width) if width else "" for r in rows]
    k_sent, v_sent = truncated.k[rows], truncated.v[rows]
    n_agents = agent_count(region)
    lo, hi = cube_bounds(k_sent, v_sent)
    outputs = np.empty((sessions, n_agents))
    for i in range(n_agents):
        outputs[:, i] = make_rng(seed, i + 1).uniform(lo[:, i], hi[:, i]) + offset[i]
    batch = SessionBatch(
        region.name,
        f"truncated-{width}",
        k_sent,
        v_sent,
        outputs,
        codewords,
        np.zeros(sessions, np.int64),
        seed,
        tuple(float(x) for x in offset),
    )
    return plan, batch


# ##############################################################################
# # Protocol demo
# ##############################################################################

TRANSPORTS = ("inprocess", "socket")
MODES = ("codeword", "shared-stream")


@dataclass
class ProtocolConfig:
    region: str
    agents: Optional[int] = None
    transport: str = "inprocess"
    mode: str = "codeword"
    path: str = "arithmetic"
    sessions: int = 100
    seed: int = 0
    k_max: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        assert self.transport in TRANSPORTS, f"transport must be one of {TRANSPORTS}"
        assert self.mode in MODES, f"mode must be one of {MODES}"
        assert self.path in PATHS, f"path must be one of {PATHS}"
        assert self.mode == "codeword" or self.path == "arithmetic", "a shared stream drives the arithmetic path"
        assert self.sessions >= 0


@dataclass
class ProtocolResult:
    config: ProtocolConfig
    cubes: list = field(default_factory=list)
    outputs: np.ndarray = None
    codeword_bits: list = field(default_factory=list)
    bytes_sent: int = 0
    bytes_received: int = 0
    stream_bits: int = 0
    stream_ones: int = 0
    disagreements: int = 0

    @property
    def bytes_expected(self) -> int:
        n_agents = self.outputs.shape[1] if self.outputs is not None else 0
        return n_agents * sum(frame_size(b) for b in self.codeword_bits)

    @property
    def stream_bias_z(self) -> float:
        """z-score of the ones count of the shared stream against a fair coin."""
        if self.stream_bits == 0:
            return 0.0
        return (self.stream_ones - self.stream_bits / 2) / math.sqrt(self.stream_bits / 4)

    def to_dict(self) -> dict:
        return {
            "region": self.config.region,
            "transport": self.config.transport,
            "mode": self.config.mode,
            "path": self.config.path,
            "sessions": len(self.cubes),
            "disagreements": self.disagreements,
            "bytes_sent": self.bytes_sent,
            "bytes_received": self.bytes_received,
            "bytes_expected": self.bytes_expected,
            "mean_codeword_bits": float(np.mean(self.codeword_bits)) if self.codeword_bits else 0.0,
            "stream_bits": self.stream_bits,
            "stream_bias_z": self.stream_bias_z,
        }


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    """Read exactly `size` bytes; returns b"" on a clean end of stream."""
    chunks, got = [], 0
    while got < size:
        chunk = sock.recv(size - got)
        if not chunk:
            if got:
                raise DecodeError(f"stream ended inside a frame ({got}/{size} bytes)")
            return b""
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class _Channel:
    """One ordered, reliable byte stream from the source to one agent."""

    def __init__(self, transport: str):
        self.transport = transport
        if transport == "socket":
            self._send, self._recv = socket.socketpair()
        else:
            self._queue: queue.Queue = queue.Queue()

    def send(self, data: bytes):
        if self.transport == "socket":
            self._send.sendall(data)
        else:
            self._queue.put(data)

    def close_send(self):
        if self.transport == "socket":
            self._send.shutdown(socket.SHUT_WR)
        else:
            self._queue.put(None)

    def recv_frame(self) -> Optional[bytes]:
        if self.transport == "inprocess":
            return self._queue.get()
        header = _recv_exact(self._recv, FRAME_HEADER.size)
        if not header:
            return None
        (length,) = FRAME_HEADER.unpack(header)
        return header + _recv_exact(self._recv, (length + 7) // 8)

    def close_recv(self):
        if self.transport == "socket":
            self._recv.close()

    def close(self):
        if self.transport == "socket":
            self._send.close()
            self._recv.close()


def _stream_seed(seed: int, session: int, attempt: int) -> int:
    return int(make_rng(seed, session, attempt).integers(2**62))


def _shared_stream_cube(coder: ArithmeticCoder, seed: int, session: int) -> tuple[DyadicCube, SharedBitStream]:
    """Descend on the session's common bit stream, moving to a fresh stream when a descent passes k_max."""
    for attempt in range(MAX_RESAMPLES):
        stream = SharedBitStream(_stream_seed(seed, session, attempt))
        try:
            return coder.generate_from_stream(stream), stream
        except DepthExceeded:
            continue
    raise DepthExceeded(f"{MAX_RESAMPLES} shared streams in a row passed level {coder.k_max}")


def protocol_demo(config: Union[dict, str, ProtocolConfig]) -> ProtocolResult:
    """Run a source thread and one thread per agent over byte streams.

    In codeword mode the source frames each session's codeword and writes it
    to every agent's channel; agents decode, sample their coordinate and
    report to the collector. In shared-stream mode nothing is sent: source
    and agents read the same session bit stream and stop where the
    arithmetic descent ends. The collector checks that every agent found the
    source's cube and that the bytes received match the framing."""
    if isinstance(config, str):
        config = load_config(config)
    if isinstance(config, dict):
        config = ProtocolConfig(**config)
    region = load_region(config.region)
    simulator = ExactSimulator(region, config.path, config.k_max)
    n_agents = simulator.n_agents
    if config.agents is not None and config.agents != n_agents:
        raise DimensionMismatchError(f"{region.name} needs {n_agents} agents, got {config.agents}")
    channels = [_Channel(config.transport) for _ in range(n_agents)] if config.mode == "codeword" else []
    reports: queue.Queue = queue.Queue()
    sessions, seed = config.sessions, config.seed

    def source():
        sent = 0
        try:
            for s in range(sessions):
                if config.mode == "codeword":
                    bits, cube, _ = simulator.encode(make_rng(seed, s, 0))
                    frame = frame_bits(bits)
                    for channel in channels:
                        channel.send(frame)
                        sent += len(frame)
                    reports.put(("source", s, cube, len(bits)))
                else:
                    cube, stream = _shared_stream_cube(simulator.coder, seed, s)
                    taken = stream.taken.bits
                    reports.put(("source", s, cube, (len(taken), taken.count("1"))))
        finally:
            for channel in channels:
                channel.close_send()
        return sent

    def agent(i: int):
        received = 0
        if config.mode == "codeword":
            s = 0
            try:
                while True:
                    frame = channels[i - 1].recv_frame()
                    if frame is None:
                        break
                    received += len(frame)
                    bits, used = unframe_bits(frame)
                    if used != len(frame):
                        raise DecodeError(f"agent {i}: {len(frame) - used} stray bytes after a frame")
                    cube, x = simulator.agent(i, bits, seed, s)
                    reports.put(("agent", i, s, cube, x))
                    s += 1
            except BaseException:
                # unblock a source writing to this agent
                channels[i - 1].close_recv()
                raise
        else:
            for s in range(sessions):
                cube, _ = _shared_stream_cube(simulator.coder, seed, s)
                x = simulator.agent_output(i, cube, make_rng(seed, s, i))
                reports.put(("agent", i, s, cube, x))
        return received

    try:
        with ThreadPoolExecutor(max_workers=n_agents + 1) as pool:
            source_future = pool.submit(source)
            agent_futures = [pool.submit(agent, i) for i in range(1, n_agents + 1)]
            bytes_sent = source_future.result()
            bytes_received = sum(f.result() for f in agent_futures)
    finally:
        for channel in channels:
            channel.close()

    source_cubes, source_bits = {}, {}
    agent_cubes: dict = {}
    outputs = np.full((sessions, n_agents), np.nan)
    while not reports.empty():
        item = reports.get()
        if item[0] == "source":
            _, s, cube, bits = item
            source_cubes[s], source_bits[s] = cube, bits
        else:
            _, i, s, cube, x = item
            agent_cubes[(s, i)] = cube
            outputs[s, i - 1] = x

    result = ProtocolResult(config, outputs=outputs, bytes_sent=bytes_sent, bytes_received=bytes_received)
    for s in range(sessions):
        cube = source_cubes[s]
        result.cubes.append(cube)
        if config.mode == "codeword":
            result.codeword_bits.append(source_bits[s])
        else:
            result.stream_bits += source_bits[s][0]
            result.stream_ones += source_bits[s][1]
        mismatched = [i for i in range(1, n_agents + 1) if agent_cubes.get((s, i)) != cube]
        if mismatched:
            result.disagreements += 1
            raise CubeDisagreementError(f"session {s}: agents {mismatched} disagree with the source cube {cube}")
    if config.mode == "codeword" and result.bytes_received != result.bytes_expected:
        raise DecodeError(f"received {result.bytes_received} bytes, framing accounts for {result.bytes_expected}")
    if config.out:
        for s, cube in enumerate(result.cubes):
            append_to_jsonl(
                config.out,
                {"session": s, "k": cube.k, "v": list(cube.v), "outputs": outputs[s].tolist(), "seed": seed},
            )
    return result
