import heapq
import math
import struct
import threading
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from dyadic_sim.common import (
    FIXED_POINT_BITS,
    BitsExhaustedError,
    DecodeError,
    DepthExceeded,
    DimensionMismatchError,
    DyadicCube,
    box_volume,
    cube_bounds,
    make_rng,
)
from dyadic_sim.dyadic import DecompositionTable, child_offsets, root_cubes, start_level
from dyadic_sim.regions import CubeClass, Region

FRAME_HEADER = struct.Struct(">I")


@dataclass(frozen=True)
class BitString:
    bits: str = ""

    def __post_init__(self):
        assert set(self.bits) <= {"0", "1"}, "bits must be a string of 0 and 1"

    def __len__(self):
        return len(self.bits)

    def __add__(self, other: "BitString") -> "BitString":
        return BitString(self.bits + other.bits)

    def __str__(self):
        return self.bits

    def to_bytes(self) -> bytes:
        """MSB-first payload, final byte zero-padded."""
        if not self.bits:
            return b""
        return np.packbits(np.frombuffer(self.bits.encode(), dtype=np.uint8) - ord("0")).tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes, length: int) -> "BitString":
        if len(payload) * 8 < length:
            raise DecodeError(f"payload of {len(payload)} bytes cannot hold {length} bits")
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[:length]
        return cls("".join("1" if b else "0" for b in bits))


def frame_bits(bits: BitString) -> bytes:
    """4-byte big-endian bit length followed by the payload."""
    return FRAME_HEADER.pack(len(bits)) + bits.to_bytes()


def unframe_bits(data: bytes) -> tuple[BitString, int]:
    """Inverse of frame_bits; returns the bits and the number of bytes used."""
    if len(data) < FRAME_HEADER.size:
        raise DecodeError("truncated frame header")
    (length,) = FRAME_HEADER.unpack_from(data)
    end = FRAME_HEADER.size + (length + 7) // 8
    if len(data) < end:
        raise DecodeError(f"frame announces {length} bits but only {len(data)} bytes arrived")
    return BitString.from_bytes(data[FRAME_HEADER.size : end], length), end


def frame_size(length: int) -> int:
    return FRAME_HEADER.size + (length + 7) // 8


class BitReader:
    """Sequential reader over a finite bit string."""

    def __init__(self, bits: Union[BitString, str], start: int = 0):
        self.bits = str(bits)
        self.pos = start
        self.start = start

    def read(self) -> int:
        if self.pos >= len(self.bits):
            raise BitsExhaustedError(f"bit string of length {len(self.bits)} exhausted")
        bit = self.bits[self.pos]
        self.pos += 1
        return 1 if bit == "1" else 0

    @property
    def consumed(self) -> int:
        return self.pos - self.start

    @property
    def remaining(self) -> int:
        return len(self.bits) - self.pos


class RandomBitSource:
    """Fair coin flips drawn from a numpy generator in blocks of 64 and recorded."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._block = ""
        self._taken: list[str] = []

    def read(self) -> int:
        if not self._block:
            self._block = "".join(map(str, self.rng.integers(0, 2, size=64, dtype=np.uint8)))
        bit, self._block = self._block[0], self._block[1:]
        self._taken.append(bit)
        return int(bit)

    @property
    def consumed(self) -> int:
        return len(self._taken)

    @property
    def taken(self) -> BitString:
        return BitString("".join(self._taken))


class SharedBitStream(RandomBitSource):
    """Infinite stream of uniform bits shared by seed; every holder sees the same sequence."""

    def __init__(self, seed: int):
        super().__init__(make_rng(seed, 2))
        self.seed = seed


class _Escape:
    def __repr__(self):
        return "ESCAPE"


# symbol standing for the residual mass of a table
ESCAPE = _Escape()

Symbol = Union[DyadicCube, _Escape]


class PrefixCode:
    """Canonical Huffman code over the entries of a table plus an escape symbol.

    Symbols are ordered by the table's (k, v) order with the escape last;
    ties in the Huffman merge are broken by that order, so the code is a
    deterministic function of the table."""

    def __init__(self, symbols: list[Symbol], probabilities: np.ndarray, lengths: list[int]):
        self.symbols = symbols
        self.probabilities = np.asarray(probabilities, dtype=float)
        self.lengths = lengths
        order = sorted(range(len(symbols)), key=lambda i: (lengths[i], i))
        self.codewords: dict[Symbol, str] = {}
        code, prev_len = 0, lengths[order[0]] if order else 0
        for rank, i in enumerate(order):
            if rank:
                code = (code + 1) << (lengths[i] - prev_len)
            prev_len = lengths[i]
            self.codewords[symbols[i]] = format(code, "b").zfill(lengths[i]) if lengths[i] else ""
        self._decode = {word: sym for sym, word in self.codewords.items()}
        self.max_length = max(lengths) if lengths else 0

    def __len__(self):
        return len(self.symbols)

    def encode(self, symbol: Symbol) -> BitString:
        if symbol not in self.codewords:
            raise ValueError(f"{symbol} is not a symbol of this code")
        return BitString(self.codewords[symbol])

    def decode(self, bits: Union[BitString, BitReader], start: int = 0) -> tuple[Symbol, int]:
        """Read one codeword; returns the symbol and the number of bits consumed."""
        reader = bits if isinstance(bits, BitReader) else BitReader(bits, start)
        first = reader.pos
        word = ""
        while word not in self._decode:
            if len(word) >= self.max_length:
                raise DecodeError(f"no codeword matches {word}")
            word += str(reader.read())
        return self._decode[word], reader.pos - first

    def expected_length(self) -> float:
        return float(np.dot(self.probabilities, self.lengths))

    def kraft_sum(self) -> float:
        return math.fsum(2.0 ** -l for l in self.lengths)

    def is_prefix_free(self) -> bool:
        words = sorted(self.codewords.values())
        return all(not b.startswith(a) for a, b in zip(words[:-1], words[1:]))


def huffman_lengths(probabilities) -> list[int]:
    probabilities = list(probabilities)
    if len(probabilities) == 1:
        return [0]
    lengths = [0] * len(probabilities)
    heap = [(p, i, [i]) for i, p in enumerate(probabilities)]
    heapq.heapify(heap)
    counter = len(probabilities)
    while len(heap) > 1:
        p1, _, left = heapq.heappop(heap)
        p2, _, right = heapq.heappop(heap)
        for leaf in left + right:
            lengths[leaf] += 1
        heapq.heappush(heap, (p1 + p2, counter, left + right))
        counter += 1
    return lengths


def build_prefix_code(table: DecompositionTable) -> PrefixCode:
    if len(table) == 0:
        raise ValueError("cannot build a prefix code for an empty table")
    symbols: list[Symbol] = [cube for cube, _ in table.entries]
    probabilities = list(table.probabilities)
    if table.residual_mass > 0:
        symbols.append(ESCAPE)
        probabilities.append(table.residual_mass)
    return PrefixCode(symbols, np.array(probabilities), huffman_lengths(probabilities))


def encode_cube(code: PrefixCode, cube: Symbol) -> BitString:
    return code.encode(cube)


def decode_cube(code: PrefixCode, bits: Union[BitString, BitReader]) -> tuple[Symbol, int]:
    return code.decode(bits)


def elias_gamma(m: int) -> str:
    assert m >= 1
    binary = format(m, "b")
    return "0" * (len(binary) - 1) + binary


def read_elias_gamma(reader: BitReader) -> int:
    zeros = 0
    while reader.read() == 0:
        zeros += 1
    value = 1
    for _ in range(zeros):
        value = (value << 1) | reader.read()
    return value


def encode_integer_part(z) -> BitString:
    """Each coordinate as gamma(|z| + 1), followed by a sign bit (1 = negative) when z != 0."""
    out = []
    for value in z:
        value = int(value)
        out.append(elias_gamma(abs(value) + 1))
        if value != 0:
            out.append("1" if value < 0 else "0")
    return BitString("".join(out))


def decode_integer_part(bits: Union[BitString, BitReader], n: int) -> tuple[tuple[int, ...], int]:
    reader = bits if isinstance(bits, BitReader) else BitReader(bits)
    first = reader.pos
    values = []
    for _ in range(n):
        magnitude = read_elias_gamma(reader) - 1
        if magnitude and reader.read():
            magnitude = -magnitude
        values.append(magnitude)
    return tuple(values), reader.pos - first


@dataclass
class ChildSlots:
    classes: np.ndarray
    # cumulative slot boundaries in units of 2^-FIXED_POINT_BITS, length 2^n + 1
    boundaries: list


class ArithmeticCoder:
    """Interval descent through the dyadic tree of a region.

    The generator draws fair bits and narrows [M/2^L, (M+1)/2^L] until it sits
    in one child's slot of the current cube, then descends into that child;
    slots partition the parent's slot in proportion to the children's clipped
    volumes, in lexicographic child order. Agents replay the same decisions
    from the bits. All interval arithmetic is on Python integers, so the two
    sides agree exactly and the interval never underflows.

    A region whose bounding box spans several level-k0 cells gets a prefix
    naming the root cell, chosen by the generator in proportion to volume."""

    def __init__(self, region: Region, k_max: int = 40):
        self.region = region
        self.n = region.n
        self.k_max = k_max
        self.k0 = start_level(region)
        roots = root_cubes(region, self.k0)
        lo, hi = cube_bounds(self.k0, roots)
        weights = np.asarray(region.clipped_box_volume(lo, hi).value, dtype=float)
        keep = weights > 0
        self.roots = roots[keep]
        self.root_weights = weights[keep] / weights[keep].sum()
        self._offsets = child_offsets(self.n)
        self._slots: dict[DyadicCube, ChildSlots] = {}
        self._lock = threading.Lock()

    @property
    def single_root(self) -> bool:
        return len(self.roots) == 1

    def child_slots(self, cube: DyadicCube) -> ChildSlots:
        with self._lock:
            cached = self._slots.get(cube)
        if cached is not None:
            return cached
        v = 2 * np.asarray(cube.v, dtype=np.int64)[None, :] + self._offsets
        lo, hi = cube_bounds(cube.k + 1, v)
        classes = self.region.classify_boxes(lo, hi)
        vol = np.asarray(self.region.clipped_box_volume(lo, hi).value, dtype=float)
        vol = np.where(classes == CubeClass.INSIDE, box_volume(lo, hi), vol)
        vol = np.where(classes == CubeClass.OUTSIDE, 0.0, vol)
        cum = np.cumsum(vol)
        total = float(cum[-1])
        if not total > 0:
            raise DepthExceeded(f"no mass below {cube}")
        one = 1 << FIXED_POINT_BITS
        boundaries = [0] + [int(math.ldexp(c / total, FIXED_POINT_BITS)) for c in cum[:-1]] + [one]
        slots = ChildSlots(classes, boundaries)
        with self._lock:
            self._slots.setdefault(cube, slots)
        return slots

    def _root_cube(self, v) -> DyadicCube:
        return DyadicCube(self.k0, tuple(int(x) for x in v))

    def descend(self, root: DyadicCube, source) -> DyadicCube:
        """Follow the bits read from `source` from `root` down to an INSIDE cube."""
        lo, hi = root.bounds()
        if self.region.classify_boxes(lo, hi)[0] == CubeClass.INSIDE:
            return root
        cube = root
        alpha, width, E = 0, 1, 0
        M, L = 0, 0
        max_bits = (FIXED_POINT_BITS + self.n) * (self.k_max - self.k0 + 2)
        while True:
            if cube.k >= self.k_max:
                raise DepthExceeded(f"descent passed level {self.k_max}")
            slots = self.child_slots(cube)
            E2 = E + FIXED_POINT_BITS
            bounds = [(alpha << FIXED_POINT_BITS) + width * q for q in slots.boundaries]
            chosen = None
            while chosen is None:
                low, high = M << E2, (M + 1) << E2
                for j in range(len(bounds) - 1):
                    if bounds[j] == bounds[j + 1]:
                        continue
                    if (bounds[j] << L) <= low and high <= (bounds[j + 1] << L):
                        chosen = j
                        break
                if chosen is None:
                    if L >= max_bits:
                        raise DepthExceeded("interval did not separate from a slot boundary")
                    M = 2 * M + source.read()
                    L += 1
            alpha, width, E = bounds[chosen], bounds[chosen + 1] - bounds[chosen], E2
            cube = DyadicCube(cube.k + 1, tuple(int(2 * x + o) for x, o in zip(cube.v, self._offsets[chosen])))
            if slots.classes[chosen] == CubeClass.INSIDE:
                return cube

    def generate(self, rng: np.random.Generator) -> tuple[BitString, DyadicCube]:
        """One generation attempt; raises DepthExceeded when the caller must resample."""
        prefix = BitString()
        index = 0
        if not self.single_root:
            index = int(rng.choice(len(self.roots), p=self.root_weights))
            prefix = encode_integer_part(self.roots[index])
        source = RandomBitSource(rng)
        cube = self.descend(self._root_cube(self.roots[index]), source)
        return prefix + source.taken, cube

    def generate_from_stream(self, stream: RandomBitSource) -> DyadicCube:
        assert self.single_root, "shared-stream generation needs a single root cell; use coding_frame"
        return self.descend(self._root_cube(self.roots[0]), stream)

    def decode(self, bits: Union[BitString, BitReader]) -> tuple[DyadicCube, int]:
        """Replay a codeword; returns the cube and the bits consumed."""
        reader = bits if isinstance(bits, BitReader) else BitReader(bits)
        first = reader.pos
        if self.single_root:
            root = self.roots[0]
        else:
            root, _ = decode_integer_part(reader, self.n)
            if not np.any(np.all(self.roots == np.asarray(root), axis=1)):
                raise DecodeError(f"{root} is not a root cell of {self.region.name}")
        cube = self.descend(self._root_cube(root), reader)
        return cube, reader.pos - first

    def agent_sample(self, agent_index: int, cube: DyadicCube, rng: np.random.Generator) -> float:
        """Coordinate `agent_index` (1-based) uniform on the cube's side."""
        if not 1 <= agent_index <= self.n:
            raise DimensionMismatchError(f"agent {agent_index} out of range for n={self.n}")
        lo, hi = cube.bounds()
        return float(rng.uniform(lo[agent_index - 1], hi[agent_index - 1]))


def arithmetic_generate(
    region: Region, rng_seed: Optional[int], k_max: int = 40, max_attempts: int = 100
) -> tuple[BitString, DyadicCube]:
    coder = ArithmeticCoder(region, k_max)
    rng = make_rng(rng_seed)
    for _ in range(max_attempts):
        try:
            return coder.generate(rng)
        except DepthExceeded:
            continue
    raise DepthExceeded(f"{max_attempts} attempts all passed level {k_max}")


def arithmetic_agent(
    region: Region, agent_index: int, bits: BitString, rng_seed: Optional[int], k_max: int = 40
) -> float:
    coder = ArithmeticCoder(region, k_max)
    cube, consumed = coder.decode(bits)
    if consumed != len(bits):
        raise DecodeError(f"{len(bits) - consumed} trailing bits after the codeword")
    return coder.agent_sample(agent_index, cube, make_rng(rng_seed, agent_index))
