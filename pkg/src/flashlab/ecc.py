"""Binary LDPC plumbing: alist files, a GF(2) systematic encoder, Gray-coded
symbol packing, and a normalized min-sum decoder.

Ships a seeded fallback code (4544 bits, 4096 of them information) built by
stub matching against the target degree profile with duplicate-edge and
short-cycle repair, for runs where no externally constructed matrix is given.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelParams, GrayMap, OperatingPoint, sample_voltages

__all__ = [
    "ParityCheckMatrix",
    "Encoder",
    "AlistError",
    "load_alist",
    "save_alist",
    "build_encoder",
    "symbols_to_bits",
    "bits_to_symbols",
    "hard_llr",
    "nms_decode",
    "make_parity_check",
    "CodedResult",
    "coded_ber_experiment",
]

LLR_CLIP = 31.75
DEFAULT_ALPHA = 0.75

# Edge-perspective degree profile of the shipped code: fraction of edges on
# variable nodes of each degree, and the check-side split.
VAR_EDGE_FRACTIONS = {2: 0.0682, 3: 0.1822, 4: 0.1329, 5: 0.6167}
CHECK_EDGE_FRACTIONS = {39: 0.22, 40: 0.78}


class AlistError(ValueError):
    pass


@dataclass(frozen=True)
class ParityCheckMatrix:
    """Dense 0/1 parity-check matrix with no empty rows or columns."""

    h: np.ndarray

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.uint8)
        object.__setattr__(self, "h", h)
        if h.ndim != 2 or h.size == 0:
            raise ValueError("parity-check matrix must be 2-D and non-empty")
        if np.any(h > 1):
            raise ValueError("parity-check entries must be 0 or 1")
        if np.any(h.sum(axis=1) == 0):
            raise ValueError("parity-check matrix has an empty row")
        if np.any(h.sum(axis=0) == 0):
            raise ValueError("parity-check matrix has an empty column")

    @property
    def n(self) -> int:
        return self.h.shape[1]

    @property
    def m(self) -> int:
        return self.h.shape[0]

    @property
    def k(self) -> int:
        return self.n - self.m


def load_alist(path: str | Path) -> ParityCheckMatrix:
    """Parse the standard alist sparse format (1-based indices, 0 padding)."""
    tokens_per_line = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if raw.strip():
            tokens_per_line.append((lineno, raw.split()))
    if len(tokens_per_line) < 4:
        raise AlistError(f"{path}: fewer than 4 header lines")

    def ints(entry, expect=None):
        lineno, toks = entry
        try:
            values = [int(t) for t in toks]
        except ValueError:
            raise AlistError(f"{path}:{lineno}: non-integer token") from None
        if expect is not None and len(values) != expect:
            raise AlistError(
                f"{path}:{lineno}: expected {expect} values, got {len(values)}"
            )
        return values

    n, m = ints(tokens_per_line[0], 2)
    if n <= 0 or m <= 0:
        raise AlistError(f"{path}: non-positive dimensions {n}x{m}")
    ints(tokens_per_line[1], 2)  # max degrees; informative only
    col_deg = ints(tokens_per_line[2], n)
    row_deg = ints(tokens_per_line[3], m)
    body = tokens_per_line[4:]
    if len(body) < n + m:
        raise AlistError(
            f"{path}: truncated after line {body[-1][0] if body else tokens_per_line[3][0]}: "
            f"need {n + m} adjacency lines, found {len(body)}"
        )
    h = np.zeros((m, n), dtype=np.uint8)
    for c in range(n):
        lineno, _ = body[c]
        rows = [r for r in ints(body[c]) if r != 0]
        if len(rows) != col_deg[c]:
            raise AlistError(
                f"{path}:{lineno}: column {c + 1} lists {len(rows)} rows, "
                f"degree says {col_deg[c]}"
            )
        for r in rows:
            if not 1 <= r <= m:
                raise AlistError(f"{path}:{lineno}: row index {r} outside 1..{m}")
            h[r - 1, c] = 1
    for r in range(m):
        lineno, _ = body[n + r]
        cols = [c for c in ints(body[n + r]) if c != 0]
        if len(cols) != row_deg[r]:
            raise AlistError(
                f"{path}:{lineno}: row {r + 1} lists {len(cols)} columns, "
                f"degree says {row_deg[r]}"
            )
        for c in cols:
            if not 1 <= c <= n:
                raise AlistError(f"{path}:{lineno}: column index {c} outside 1..{n}")
            if h[r, c - 1] != 1:
                raise AlistError(
                    f"{path}:{lineno}: row list disagrees with column list at "
                    f"({r + 1},{c})"
                )
    if int(h.sum()) != sum(col_deg):
        raise AlistError(f"{path}: adjacency lists disagree with declared degrees")
    return ParityCheckMatrix(h)


def save_alist(pcm: ParityCheckMatrix, path: str | Path) -> None:
    """Write the matrix in alist format (unpadded adjacency lines)."""
    h = pcm.h
    col_deg = h.sum(axis=0)
    row_deg = h.sum(axis=1)
    lines = [
        f"{pcm.n} {pcm.m}",
        f"{int(col_deg.max())} {int(row_deg.max())}",
        " ".join(str(int(d)) for d in col_deg),
        " ".join(str(int(d)) for d in row_deg),
    ]
    for c in range(pcm.n):
        lines.append(" ".join(str(r + 1) for r in np.flatnonzero(h[:, c])))
    for r in range(pcm.m):
        lines.append(" ".join(str(c + 1) for c in np.flatnonzero(h[r])))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class Encoder:
    """Systematic encoder derived from a parity-check matrix.

    ``q_block`` maps the k information bits to m parity bits in permuted
    coordinates; ``permutation`` restores the original column order.
    ``info_positions`` are the codeword indices carrying the message.
    """

    q_block: np.ndarray
    permutation: np.ndarray
    n: int
    m: int

    @property
    def k(self) -> int:
        return self.n - self.m

    @property
    def info_positions(self) -> np.ndarray:
        return self.permutation[self.m :]

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        info = np.asarray(info_bits, dtype=np.uint8)
        if info.shape != (self.k,):
            raise ValueError(f"expected {self.k} information bits, got {info.shape}")
        parity = (self.q_block.astype(np.float32) @ info.astype(np.float32)) % 2.0
        word = np.empty(self.n, dtype=np.uint8)
        word[self.permutation[: self.m]] = parity.astype(np.uint8)
        word[self.permutation[self.m :]] = info
        return word


def build_encoder(pcm: ParityCheckMatrix) -> Encoder:
    """Gaussian elimination over GF(2) with column pivoting.

    Raises when the matrix is rank-deficient, reporting the achieved rank.
    """
    h = pcm.h.copy()
    m, n = h.shape
    perm = np.arange(n)
    for r in range(m):
        pivots = np.argwhere(h[r:, r:] == 1)
        if pivots.size == 0:
            raise ValueError(
                f"parity-check matrix is rank-deficient: rank {r} of {m}"
            )
        pr, pc = pivots[0]
        pr, pc = int(pr) + r, int(pc) + r
        if pr != r:
            h[[r, pr]] = h[[pr, r]]
        if pc != r:
            h[:, [r, pc]] = h[:, [pc, r]]
            perm[[r, pc]] = perm[[pc, r]]
        mask = h[:, r] == 1
        mask[r] = False
        h[mask] ^= h[r]
    return Encoder(q_block=h[:, m:].copy(), permutation=perm, n=n, m=m)


def symbols_to_bits(symbols: np.ndarray, gray_map: GrayMap) -> np.ndarray:
    """Flatten level indices to bits via the map, most significant bit first."""
    symbols = np.asarray(symbols)
    if symbols.min() < 0 or symbols.max() >= 2**gray_map.q:
        raise ValueError("symbol outside the bit map alphabet")
    return gray_map.bits()[symbols].reshape(-1)


def bits_to_symbols(bits: np.ndarray, gray_map: GrayMap) -> np.ndarray:
    """Inverse of `symbols_to_bits`; bit count must divide into q-groups."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % gray_map.q != 0:
        raise ValueError(f"bit count {bits.size} not a multiple of q={gray_map.q}")
    groups = bits.reshape(-1, gray_map.q)
    weights = 1 << np.arange(gray_map.q - 1, -1, -1)
    packed = groups @ weights
    lookup = np.full(2**gray_map.q, -1, dtype=np.int64)
    for s, pattern in enumerate(gray_map.patterns):
        lookup[int(pattern, 2)] = s
    return lookup[packed]


def hard_llr(bits: np.ndarray, magnitude: float = 5.0) -> np.ndarray:
    """Fixed-confidence channel LLRs: +mag for a 0 read, -mag for a 1."""
    bits = np.asarray(bits)
    return np.where(bits == 0, magnitude, -magnitude).astype(float)


class _DecoderGraph:
    """Padded per-check edge layout for vectorized message passing."""

    def __init__(self, pcm: ParityCheckMatrix):
        rows, cols = np.nonzero(pcm.h)
        self.n = pcm.n
        self.m = pcm.m
        self.edge_col = cols
        self.edge_row = rows
        deg = np.bincount(rows, minlength=pcm.m)
        self.dc_max = int(deg.max())
        slot = np.zeros(len(rows), dtype=np.int64)
        counter = np.zeros(pcm.m, dtype=np.int64)
        for e, r in enumerate(rows):
            slot[e] = counter[r]
            counter[r] += 1
        self.edge_slot = slot
        self.pad_mask = np.zeros((pcm.m, self.dc_max), dtype=bool)
        self.pad_col = np.zeros((pcm.m, self.dc_max), dtype=np.int64)
        self.pad_edge = np.zeros((pcm.m, self.dc_max), dtype=np.int64)
        self.pad_mask[rows, slot] = True
        self.pad_col[rows, slot] = cols
        self.pad_edge[rows, slot] = np.arange(len(rows))


def _graph_for(pcm: ParityCheckMatrix) -> _DecoderGraph:
    # Cached on the matrix itself so the layout lives exactly as long as it does.
    graph = pcm.__dict__.get("_graph")
    if graph is None:
        graph = _DecoderGraph(pcm)
        object.__setattr__(pcm, "_graph", graph)
    return graph


def nms_decode(
    pcm: ParityCheckMatrix,
    llr: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    max_iter: int = 20,
) -> tuple[np.ndarray, bool, int]:
    """Normalized min-sum decoding with a flooding schedule.

    Check messages are the sign product times the smallest extrinsic
    magnitude, scaled by ``alpha`` (1.0 recovers plain min-sum).  Posterior
    magnitudes are clipped at 31.75.  Stops as soon as the hard decision
    satisfies every check.

    Returns
    -------
    (bits, converged, iterations)
        Hard decisions, whether the syndrome reached zero, and the number of
        message-passing iterations actually run.
    """
    llr = np.asarray(llr, dtype=float)
    if llr.shape != (pcm.n,):
        raise ValueError(f"expected {pcm.n} LLRs, got {llr.shape}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    g = _graph_for(pcm)
    bits = (llr < 0).astype(np.uint8)
    if _syndrome_ok(g, bits):
        return bits, True, 0
    c2v = np.zeros(g.edge_col.size)
    total = llr.copy()
    iterations = 0
    for iterations in range(1, max_iter + 1):
        v2c = np.clip(total[g.edge_col] - c2v, -LLR_CLIP, LLR_CLIP)
        padded = np.zeros((g.m, g.dc_max))
        padded[g.edge_row, g.edge_slot] = v2c
        signs = np.where(padded < 0, -1.0, 1.0)
        signs[~g.pad_mask] = 1.0
        sign_prod = signs.prod(axis=1, keepdims=True)
        mags = np.abs(padded)
        mags[~g.pad_mask] = np.inf
        first = np.argmin(mags, axis=1)
        min1 = mags[np.arange(g.m), first]
        mags[np.arange(g.m), first] = np.inf
        min2 = mags.min(axis=1)
        out_mag = np.broadcast_to(min1[:, None], padded.shape).copy()
        out_mag[np.arange(g.m), first] = min2
        out = alpha * sign_prod * signs * out_mag
        c2v = out[g.edge_row, g.edge_slot]
        total = llr + np.bincount(g.edge_col, weights=c2v, minlength=g.n)
        total = np.clip(total, -LLR_CLIP, LLR_CLIP)
        bits = (total < 0).astype(np.uint8)
        if _syndrome_ok(g, bits):
            return bits, True, iterations
    return bits, False, iterations


def _syndrome_ok(g: _DecoderGraph, bits: np.ndarray) -> bool:
    parity = np.bincount(g.edge_row, weights=bits[g.edge_col], minlength=g.m)
    return bool(np.all(parity.astype(np.int64) % 2 == 0))


def _degree_counts(n: int, fractions: dict[int, float]) -> dict[int, int]:
    """Node counts per degree from edge fractions, largest-remainder rounded."""
    node_weight = {d: f / d for d, f in fractions.items()}
    z = sum(node_weight.values())
    raw = {d: n * w / z for d, w in node_weight.items()}
    counts = {d: int(raw[d]) for d in raw}
    short = n - sum(counts.values())
    for d in sorted(raw, key=lambda d: raw[d] - counts[d], reverse=True)[:short]:
        counts[d] += 1
    return counts


def make_parity_check(n: int = 4544, k: int = 4096, seed: int = 1) -> ParityCheckMatrix:
    """Seeded stub-matching construction toward the target degree profile.

    Column degrees follow the edge-fraction profile within integer rounding.
    Check degrees are made as uniform as the resulting edge count allows
    (no single check degree divides the edge count at this exact n and k, so
    rows land on two adjacent degrees).  Duplicate edges are swapped apart, then
    repair passes break every length-4 cycle; the construction retries with a
    derived seed until the matrix has full rank.
    """
    m = n - k
    if m <= 0:
        raise ValueError("need n > k")
    col_counts = _degree_counts(n, VAR_EDGE_FRACTIONS)
    col_deg = np.repeat(
        sorted(col_counts), [col_counts[d] for d in sorted(col_counts)]
    )
    n_edges = int(col_deg.sum())
    base = n_edges // m
    extra = n_edges - base * m
    row_deg = np.array([base + 1] * extra + [base] * (m - extra))
    for attempt in range(10):
        rng = np.random.Generator(np.random.Philox([seed, attempt]))
        h = _random_biadjacency(col_deg, row_deg, rng)
        if h is None:
            continue
        try:
            pcm = ParityCheckMatrix(h)
            build_encoder(pcm)  # full-rank check
        except ValueError:
            continue
        return pcm
    raise RuntimeError("could not draw a usable parity-check matrix")


def _random_biadjacency(col_deg, row_deg, rng) -> np.ndarray | None:
    """Stub matching, duplicate-edge repair, then 4-cycle repair.

    ``occ`` counts edges per (check, column) cell; swaps keep every node
    degree fixed and only land where the cell is empty.
    """
    n, m = col_deg.size, row_deg.size
    var_stubs = np.repeat(np.arange(n), col_deg)
    chk_stubs = np.repeat(np.arange(m), row_deg)
    rng.shuffle(var_stubs)
    edge_row = chk_stubs.copy()
    edge_col = var_stubs.copy()
    occ = np.zeros((m, n), dtype=np.uint8)
    np.add.at(occ, (edge_row, edge_col), 1)

    for _ in range(200):
        dup = _find_duplicates(edge_row, edge_col)
        if not dup:
            break
        for e in dup:
            _swap_edge(e, edge_row, edge_col, occ, rng)
    if _find_duplicates(edge_row, edge_col):
        return None

    # occ is now 0/1: break 4-cycles (two checks sharing two columns).
    # Swaps are only accepted when they provably create no new shared pair,
    # so the offending count is monotone and the passes terminate.
    for _ in range(60):
        overlap = occ.astype(np.float32) @ occ.astype(np.float32).T
        np.fill_diagonal(overlap, 0.0)
        r1s, r2s = np.nonzero(np.triu(overlap, 1) >= 2.0)
        if r1s.size == 0:
            return occ.copy()
        for r1, r2 in zip(r1s, r2s):
            shared = np.flatnonzero((occ[r1] > 0) & (occ[r2] > 0))
            for c in shared[1:]:
                e = _edge_index(edge_row, edge_col, r2, c)
                if e is not None:
                    _swap_edge_safe(e, edge_row, edge_col, occ, rng)
    return None


def _creates_overlap(occ, row, gained_col, dropped_col) -> bool:
    """Would giving `gained_col` to `row` (while it drops `dropped_col`)
    push any row pair to two shared columns?"""
    others = np.flatnonzero(occ[:, gained_col])
    for r in others:
        if r == row:
            continue
        before = int(occ[row] @ occ[r])
        if before - int(occ[r, dropped_col]) + 1 >= 2:
            return True
    return False


def _swap_edge_safe(e, edge_row, edge_col, occ, rng, tries: int = 200) -> None:
    """Like `_swap_edge`, but rejects partners that would mint a 4-cycle."""
    for _ in range(tries):
        o = int(rng.integers(edge_row.size))
        r1, c1 = edge_row[e], edge_col[e]
        r2, c2 = edge_row[o], edge_col[o]
        if r1 == r2 or c1 == c2:
            continue
        if occ[r1, c2] or occ[r2, c1]:
            continue
        if _creates_overlap(occ, r1, c2, c1) or _creates_overlap(occ, r2, c1, c2):
            continue
        occ[r1, c1] -= 1
        occ[r2, c2] -= 1
        occ[r1, c2] += 1
        occ[r2, c1] += 1
        edge_col[e], edge_col[o] = c2, c1
        return


def _find_duplicates(edge_row, edge_col) -> list[int]:
    key = edge_row.astype(np.int64) * (edge_col.max() + 1) + edge_col
    order = np.argsort(key, kind="stable")
    dup_positions = np.flatnonzero(np.diff(key[order]) == 0)
    return [int(order[i + 1]) for i in dup_positions]


def _edge_index(edge_row, edge_col, r, c):
    hits = np.flatnonzero((edge_row == r) & (edge_col == c))
    return int(hits[0]) if hits.size else None


def _swap_edge(e, edge_row, edge_col, occ, rng, tries: int = 80) -> None:
    """Exchange column endpoints with a random partner edge, keeping degrees."""
    for _ in range(tries):
        o = int(rng.integers(edge_row.size))
        r1, c1 = edge_row[e], edge_col[e]
        r2, c2 = edge_row[o], edge_col[o]
        if r1 == r2 or c1 == c2:
            continue
        if occ[r1, c2] or occ[r2, c1]:
            continue
        occ[r1, c1] -= 1
        occ[r2, c2] -= 1
        occ[r1, c2] += 1
        occ[r2, c1] += 1
        edge_col[e], edge_col[o] = c2, c1
        return


@dataclass(frozen=True)
class CodedResult:
    """Raw (pre-decoder) and post-decoder error rates over a batch of frames."""

    raw_ber: float
    coded_ber: float
    frames: int
    frame_errors: int
    decode_failures: int


def coded_ber_experiment(
    params: ChannelParams,
    op_point: OperatingPoint,
    pcm: ParityCheckMatrix,
    detector,
    frames: int,
    seed: int,
    gray_map: GrayMap | None = None,
    alpha: float = DEFAULT_ALPHA,
    max_iter: int = 20,
    encoder: Encoder | None = None,
) -> CodedResult:
    """End-to-end coded run: encode, write, read, detect, decode, count.

    ``detector`` maps a voltage array to symbol decisions.  Codeword bits are
    packed into q-bit levels; when q does not divide the code length the tail
    is padded with zero bits that ride along but are excluded from error
    accounting.  Raw BER is measured on detected codeword bits before
    decoding, coded BER on the information positions after decoding.
    """
    if frames < 1:
        raise ValueError("need at least one frame")
    gray = gray_map if gray_map is not None else GrayMap.for_q(params.q)
    enc = encoder if encoder is not None else build_encoder(pcm)
    n, q = pcm.n, params.q
    pad = (-n) % q
    root = np.random.SeedSequence(seed)
    info_rng = np.random.Generator(np.random.Philox(root.spawn(1)[0]))
    frame_seeds = root.spawn(frames)
    raw_errors = 0
    coded_errors = 0
    frame_errors = 0
    failures = 0
    for f in range(frames):
        info = info_rng.integers(0, 2, size=enc.k).astype(np.uint8)
        word = enc.encode(info)
        tx_bits = np.concatenate([word, np.zeros(pad, dtype=np.uint8)])
        tx_symbols = bits_to_symbols(tx_bits, gray)
        voltages = sample_voltages(params, tx_symbols, op_point, frame_seeds[f])
        rx_symbols = detector(voltages)
        rx_bits = symbols_to_bits(rx_symbols, gray)[:n]
        raw_errors += int(np.count_nonzero(rx_bits != word))
        decoded, converged, _ = nms_decode(pcm, hard_llr(rx_bits), alpha, max_iter)
        if not converged:
            failures += 1
        errs = int(np.count_nonzero(decoded[enc.info_positions] != info))
        coded_errors += errs
        frame_errors += errs > 0
    return CodedResult(
        raw_ber=raw_errors / (frames * n),
        coded_ber=coded_errors / (frames * enc.k),
        frames=frames,
        frame_errors=frame_errors,
        decode_failures=failures,
    )
