"""Shannon-Fano-Elias prefix-free codes for quantizer symbols.

Two constructions are provided:

* ``build_fano``: word(q) is the binary expansion of P[q' < q] + P[q]/2
  truncated to ceil(-log2 P[q]) + 1 bits, symbols in ascending order.
  Expected length lies in [H, H + 2].
* ``build_shannon_sorted``: symbols re-indexed by non-increasing probability,
  word(q) is the expansion of the cumulative mass before q truncated to
  ceil(-log2 P[q]) bits. Expected length lies in [H, H + 1].

Probabilities are floored to 64-bit fixed point before any cumulative sum, so
the codewords are computed in exact integer arithmetic and any two parties
holding the same ``FinitePmf`` build bit-identical tables. Whatever mass is
not covered by the listed cells (the model's tail plus rounding slack) is
given to an escape pseudo-symbol; unlisted integers are sent as the escape
word followed by the Elias-gamma code of ``zigzag(q) + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from operator import itemgetter

import numpy as np

from .errors import MalformedStream

__all__ = [
    "FinitePmf",
    "Codebook",
    "BitWriter",
    "BitReader",
    "build_fano",
    "build_shannon_sorted",
    "build_codebook",
    "build_codebook_arrays",
    "encode",
    "decode",
    "encode_stream",
    "decode_stream",
    "conditional_codebook",
    "zigzag",
    "unzigzag",
    "elias_gamma",
    "entropy_bits",
    "kl_bits",
    "is_prefix_free",
    "geometric_pmf",
    "bundled_pmfs",
    "check_codebook",
    "sample_symbols",
    "property_suite",
]

ONE = 1 << 64
_FIRST = itemgetter(0)
_SECOND = itemgetter(1)
ESCAPE = object()
SUM_TOL = 1e-12


@dataclass(frozen=True)
class FinitePmf:
    """Probabilities over listed integer cells plus an escape mass for the rest."""

    cells: tuple
    probs: tuple
    escapeMass: float = 0.0

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        probs = tuple(float(p) for p in self.probs)
        if len(cells) != len(probs):
            raise ValueError("cells and probs differ in length")
        if len(set(cells)) != len(cells):
            raise ValueError("duplicate cells")
        if any(not p > 0 for p in probs):
            raise ValueError("listed probabilities must be positive")
        if self.escapeMass < 0:
            raise ValueError("escape mass must be non-negative")
        total = math.fsum(probs) + self.escapeMass
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "escapeMass", float(self.escapeMass))

    @classmethod
    def from_mapping(cls, mapping, escape_mass=0.0):
        items = sorted(mapping.items())
        return cls(tuple(k for k, _ in items), tuple(p for _, p in items), escape_mass)

    @classmethod
    def from_masses(cls, cells, masses, escape_mass=0.0):
        """Drop non-positive entries and renormalize onto 1 - escape_mass."""
        cells = np.asarray(cells)
        masses = np.asarray(masses, dtype=float)
        keep = masses > 0
        cells, masses = cells[keep], masses[keep]
        masses = masses * ((1.0 - escape_mass) / math.fsum(masses))
        return cls(tuple(cells.tolist()), tuple(masses.tolist()), escape_mass)

    def prob(self, q):
        try:
            return self.probs[self.cells.index(q)]
        except ValueError:
            return 0.0

    def as_dict(self):
        return dict(zip(self.cells, self.probs))

    def entropy(self):
        """Entropy in bits of the listed cells together with the escape mass as one atom."""
        return entropy_bits(self.probs + ((self.escapeMass,) if self.escapeMass > 0 else ()))


def entropy_bits(probs):
    p = np.asarray(probs, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def kl_bits(p, q):
    """D(p || q) in bits over aligned arrays; cells where p = 0 contribute nothing."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


# ---------------------------------------------------------------------------
# bit I/O

class BitWriter:
    """Append-only bit buffer, big-endian within bytes."""

    def __init__(self):
        self._buf = bytearray()
        self._acc = 0
        self._nacc = 0
        self.nbits = 0

    def write(self, value, nbits):
        if nbits == 0:
            return
        self._acc = (self._acc << nbits) | value
        self._nacc += nbits
        self.nbits += nbits
        while self._nacc >= 8:
            self._nacc -= 8
            self._buf.append((self._acc >> self._nacc) & 0xFF)
        self._acc &= (1 << self._nacc) - 1

    def write_bits(self, bits):
        for ch in bits:
            self.write(1 if ch == "1" else 0, 1)

    def bit(self, i):
        full = len(self._buf) << 3
        if i < full:
            return (self._buf[i >> 3] >> (7 - (i & 7))) & 1
        j = i - full
        if j >= self._nacc:
            raise IndexError(i)
        return (self._acc >> (self._nacc - 1 - j)) & 1

    def getvalue(self):
        """Bytes with the final byte zero-padded."""
        out = bytearray(self._buf)
        if self._nacc:
            out.append((self._acc << (8 - self._nacc)) & 0xFF)
        return bytes(out)

    def to_bitstring(self, start=0, stop=None):
        stop = self.nbits if stop is None else stop
        return "".join("1" if self.bit(i) else "0" for i in range(start, stop))


class BitReader:
    """Sequential reader over bytes, a bit string, or a live ``BitWriter``."""

    def __init__(self, source, nbits=None):
        if isinstance(source, str):
            w = BitWriter()
            w.write_bits(source)
            source = w
        self._src = source
        if isinstance(source, BitWriter):
            self._bit = source.bit
            self._limit = None if nbits is None else nbits
        else:
            data = bytes(source)
            self._data = data
            self._bit = self._byte_bit
            self._limit = 8 * len(data) if nbits is None else nbits
        self.pos = 0

    def _byte_bit(self, i):
        return (self._data[i >> 3] >> (7 - (i & 7))) & 1

    def _available(self):
        if self._limit is not None:
            return self._limit
        return self._src.nbits

    def read_bit(self):
        if self.pos >= self._available():
            raise MalformedStream(f"stream exhausted at bit {self.pos}")
        b = self._bit(self.pos)
        self.pos += 1
        return b

    def read(self, nbits):
        v = 0
        for _ in range(nbits):
            v = (v << 1) | self.read_bit()
        return v


# ---------------------------------------------------------------------------
# integer escape code

def zigzag(q):
    """0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ..."""
    return 2 * q if q >= 0 else -2 * q - 1


def unzigzag(z):
    return z >> 1 if z % 2 == 0 else -((z + 1) >> 1)


def elias_gamma(n):
    """(value, nbits) of the Elias-gamma code of n >= 1."""
    if n < 1:
        raise ValueError("Elias gamma is defined for n >= 1")
    nb = n.bit_length()
    return n, 2 * nb - 1


def _read_gamma(reader):
    zeros = 0
    while reader.read_bit() == 0:
        zeros += 1
        if zeros > 128:
            raise MalformedStream("Elias-gamma prefix too long")
    return (1 << zeros) | reader.read(zeros)


# ---------------------------------------------------------------------------
# codebooks

class Codebook:
    """A prefix-free table symbol -> (value, length), plus an optional escape word."""

    __slots__ = ("kind", "order", "words", "escape", "_lookup", "max_length", "pmf",
                 "masses", "escape_mass")

    def __init__(self, kind, order, words, escape, pmf=None, masses=None, escape_mass=0,
                 _index=None):
        self.kind = kind
        self.order = order
        self.words = words
        self.escape = escape
        self.pmf = pmf
        # fixed-point masses in units of 2^-64, as used to build the words
        self.masses = masses or {}
        self.escape_mass = escape_mass
        if _index is not None:
            self._lookup, self.max_length = _index
            return
        lookup = {}
        max_len = 0
        for sym, (val, ln) in words.items():
            lookup[(1 << ln) | val] = sym
            max_len = max(max_len, ln)
        if escape is not None:
            lookup[(1 << escape[1]) | escape[0]] = ESCAPE
            max_len = max(max_len, escape[1])
        self._lookup = lookup
        self.max_length = max_len

    def __len__(self):
        return len(self.words)

    def __contains__(self, sym):
        return sym in self.words

    @staticmethod
    def _fmt(val, ln):
        return format(val, f"0{ln}b") if ln else ""

    def word(self, sym):
        return self._fmt(*self.words[sym])

    @property
    def escape_word(self):
        return None if self.escape is None else self._fmt(*self.escape)

    def table(self):
        """Symbol -> bit string, in code order."""
        return {s: self.word(s) for s in self.order}

    def all_words(self):
        out = [self.word(s) for s in self.order]
        if self.escape is not None:
            out.append(self.escape_word)
        return out

    def length(self, sym):
        w = self.words.get(sym)
        if w is not None:
            return w[1]
        return self.escape[1] + elias_gamma(zigzag(sym) + 1)[1]

    def kraft_sum(self):
        lengths = [ln for _, ln in self.words.values()]
        if self.escape is not None:
            lengths.append(self.escape[1])
        return math.fsum(2.0 ** -ln for ln in lengths)

    def expected_length(self, pmf=None):
        """Exact sum of p(q) len(q) over the listed cells plus escape mass x escape length."""
        pmf = pmf or self.pmf
        total = math.fsum(p * self.length(c) for c, p in zip(pmf.cells, pmf.probs))
        if pmf.escapeMass > 0 and self.escape is not None:
            total += pmf.escapeMass * self.escape[1]
        return total

    def is_prefix_free(self):
        return is_prefix_free(self.all_words())

    def model_info(self, sym):
        """-log2 of the fixed-point model probability of ``sym`` (escape mass if unlisted)."""
        n = self.masses.get(sym, self.escape_mass)
        return 64.0 - math.log2(n) if n else math.inf


def is_prefix_free(words):
    """Exhaustive pairwise check that no word is a prefix of another."""
    words = list(words)
    for i, a in enumerate(words):
        for j, b in enumerate(words):
            if i != j and b.startswith(a):
                return False
    return True


def _fixed_point(cells, probs):
    """Floor probabilities to multiples of 2^-64 as (mass, cell) pairs plus the slack."""
    ldexp = math.ldexp
    ent = []
    total = 0
    for c, p in zip(cells, probs):
        n = int(ldexp(p, 64))
        if n > 0:
            ent.append((n, c))
            total += n
    if total > ONE:
        i = max(range(len(ent)), key=lambda j: ent[j][0])
        ent[i] = (ent[i][0] - (total - ONE), ent[i][1])
        total = ONE
    return ent, ONE - total


def _shannon_len(n):
    """ceil(-log2(n / 2^64)) for 0 < n <= 2^64."""
    return 65 - n.bit_length()


def build_codebook_arrays(cells, probs, escape_mass=0.0, kind="shannon", pmf=None):
    """Build a codebook from parallel cell / probability sequences without validation.

    Used on hot paths where the model is known to be well formed. The escape
    atom always receives the fixed-point slack, which already includes
    ``escape_mass``.
    """
    ent, n_esc = _fixed_point(cells, probs)
    ent.sort(key=_SECOND)
    if kind == "shannon":
        # stable descending sort keeps ascending symbols among equal masses
        ent.sort(key=_FIRST, reverse=True)
        if n_esc > 0:
            pos = len(ent)
            while pos > 0 and ent[pos - 1][0] < n_esc:
                pos -= 1
            ent.insert(pos, (n_esc, ESCAPE))
        fano = False
    elif kind == "fano":
        if n_esc > 0:
            ent.append((n_esc, ESCAPE))
        fano = True
    else:
        raise ValueError(f"unknown code kind {kind!r}")
    words = {}
    masses = {}
    lookup = {}
    order = []
    escape = None
    max_len = 0
    F = 0
    for n, c in ent:
        if fano:
            ln = 66 - n.bit_length()
            val = (2 * F + n) >> (65 - ln)
        else:
            ln = 65 - n.bit_length()
            val = F >> (64 - ln)
        lookup[(1 << ln) | val] = c
        if ln > max_len:
            max_len = ln
        if c is ESCAPE:
            escape = (val, ln)
        else:
            words[c] = (val, ln)
            masses[c] = n
            order.append(c)
        F += n
    return Codebook(kind, order, words, escape, pmf, masses, n_esc, (lookup, max_len))


def build_shannon_sorted(pmf):
    """Shannon-type code over symbols sorted by non-increasing probability.

    Ties are broken by ascending symbol; the escape atom sorts after symbols
    of equal probability.
    """
    return build_codebook_arrays(pmf.cells, pmf.probs, pmf.escapeMass, "shannon", pmf)


def build_fano(pmf):
    """Shannon-Fano-Elias code on the midpoint of each symbol's CDF step."""
    return build_codebook_arrays(pmf.cells, pmf.probs, pmf.escapeMass, "fano", pmf)


def build_codebook(pmf, kind="shannon"):
    if kind == "shannon":
        return build_shannon_sorted(pmf)
    if kind == "fano":
        return build_fano(pmf)
    raise ValueError(f"unknown code kind {kind!r}")


def conditional_codebook(model, d, kind="fano"):
    """Codebook for P[. | d]; ``model`` maps a dither value to a ``FinitePmf``."""
    return build_codebook(model(d), kind)


# ---------------------------------------------------------------------------
# encode / decode

def encode_to(book, q, writer):
    """Append the codeword of ``q`` to ``writer`` and return its length."""
    w = book.words.get(q)
    if w is not None:
        writer.write(w[0], w[1])
        return w[1]
    if book.escape is None:
        raise ValueError(f"symbol {q} is outside a codebook that has no escape word")
    writer.write(*book.escape)
    g = elias_gamma(zigzag(q) + 1)
    writer.write(*g)
    return book.escape[1] + g[1]


def encode(book, q):
    """Codeword of ``q`` as a '0'/'1' string."""
    w = BitWriter()
    encode_to(book, q, w)
    return w.to_bitstring()


def decode(book, reader):
    """Read one codeword from ``reader`` and return its symbol."""
    lookup = book._lookup
    marker = 1
    sym = lookup.get(marker, None)
    for _ in range(book.max_length):
        if sym is not None:
            break
        marker = (marker << 1) | reader.read_bit()
        sym = lookup.get(marker, None)
    if sym is None:
        raise MalformedStream(f"no codeword matches near bit {reader.pos}")
    if sym is ESCAPE:
        return unzigzag(_read_gamma(reader) - 1)
    return sym


def encode_stream(book, symbols):
    w = BitWriter()
    for q in symbols:
        encode_to(book, int(q), w)
    return w.getvalue(), w.nbits


def decode_stream(book, data, count):
    reader = BitReader(data)
    return [decode(book, reader) for _ in range(count)], reader.pos


# ---------------------------------------------------------------------------
# property checks

def geometric_pmf(rho, tail=2.0 ** -40, offset=0):
    """P[offset + k] = (1 - rho) rho^k, truncated once the remaining tail is below ``tail``."""
    K = max(0, math.ceil(math.log(tail) / math.log(rho)) - 1)
    probs = [(1.0 - rho) * rho ** k for k in range(K + 1)]
    return FinitePmf(tuple(range(offset, offset + K + 1)), tuple(probs), rho ** (K + 1))


def _dyadic_pmf(rng, size):
    lengths = [0]
    while len(lengths) < size:
        i = int(rng.integers(len(lengths)))
        ln = lengths.pop(i)
        lengths += [ln + 1, ln + 1]
    syms = sorted(rng.choice(np.arange(-50, 50), size=size, replace=False).tolist())
    return FinitePmf(tuple(syms), tuple(2.0 ** -ln for ln in lengths))


def _random_pmf(rng, size):
    p = rng.dirichlet(np.full(size, 0.5))
    p = np.clip(p, 1e-12, None)
    syms = sorted(rng.choice(np.arange(-1000, 1000), size=size, replace=False).tolist())
    return FinitePmf.from_masses(syms, p)


def bundled_pmfs(seed=0, count=50):
    """Dyadic, truncated-geometric and random PMFs in rotation."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        kind = i % 3
        if kind == 0:
            out.append(_dyadic_pmf(rng, int(rng.integers(1, 40))))
        elif kind == 1:
            out.append(geometric_pmf(float(rng.uniform(0.05, 0.95)), offset=int(rng.integers(-5, 5))))
        else:
            out.append(_random_pmf(rng, int(rng.integers(1, 60))))
    return out


def check_codebook(book, pmf):
    """Prefix, Kraft and exact expected-length checks of one codebook against its PMF."""
    H = pmf.entropy()
    El = book.expected_length(pmf)
    slack = 1.0 if book.kind == "shannon" else 2.0
    sorted_ok = True
    if book.kind == "shannon":
        ns = [book.masses[s] for s in book.order]
        sorted_ok = all(a >= b for a, b in zip(ns, ns[1:]))
    return {
        "prefix_free": book.is_prefix_free(),
        "kraft": book.kraft_sum(),
        "kraft_ok": book.kraft_sum() <= 1.0,
        "entropy": H,
        "expected_length": El,
        "bounds_ok": H - 1e-12 <= El <= H + slack + 1e-12,
        "sorted_ok": sorted_ok,
    }


def sample_symbols(pmf, rng, size, escape_range=10 ** 6):
    """Draw symbols from ``pmf``; escape draws are unlisted integers."""
    cells = np.array(pmf.cells)
    probs = np.array(pmf.probs + (pmf.escapeMass,))
    probs = probs / probs.sum()
    idx = rng.choice(len(probs), size=size, p=probs)
    out = []
    listed = set(pmf.cells)
    for i in idx.tolist():
        if i < len(cells):
            out.append(int(cells[i]))
        else:
            q = int(rng.integers(-escape_range, escape_range))
            while q in listed:
                q += 1
            out.append(q)
    return out


def property_suite(seed=0, count=50, streams=10 ** 5, stream_len=8, escape_rate=0.02):
    """Check every bundled PMF under both codes and round-trip random streams.

    Each stream mixes symbols drawn from the PMF with unlisted integers (at
    ``escape_rate``) so the escape path is exercised on every codebook.
    """
    rng = np.random.default_rng([seed, 7])
    pmfs = bundled_pmfs(seed, count)
    per_book = max(1, streams // (2 * len(pmfs)))
    checks = []
    mismatches = 0
    total_streams = 0
    for pmf in pmfs:
        for kind in ("shannon", "fano"):
            book = build_codebook(pmf, kind)
            checks.append(check_codebook(book, pmf))
            listed = set(pmf.cells)
            for _ in range(per_book):
                syms = sample_symbols(pmf, rng, stream_len)
                if book.escape is not None:
                    for j in range(stream_len):
                        if rng.random() < escape_rate:
                            q = int(rng.integers(-10 ** 9, 10 ** 9))
                            if q not in listed:
                                syms[j] = q
                data, _ = encode_stream(book, syms)
                got, _ = decode_stream(book, data, len(syms))
                mismatches += got != syms
                total_streams += 1
    return {
        "pmfs": len(pmfs),
        "codebooks": len(checks),
        "prefix_free": all(c["prefix_free"] for c in checks),
        "kraft_ok": all(c["kraft_ok"] for c in checks),
        "bounds_ok": all(c["bounds_ok"] for c in checks),
        "sorted_ok": all(c["sorted_ok"] for c in checks),
        "streams": total_streams,
        "mismatches": int(mismatches),
    }
