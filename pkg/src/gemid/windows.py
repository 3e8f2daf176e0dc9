"""Damped incremental window statistics (streaming comparison features).

Each stream keeps exponentially damped weight / linear sum / squared sum
per decay rate lambda; past contributions halve every 1/lambda seconds:

    d = 2^(-lambda * dt);  w <- d*w + 1;  LS <- d*LS + v;  SS <- d*SS + v^2
    mean = LS / w;  var = max(SS/w - mean^2, 0)

Four stream families are tracked per packet, giving 20 statistics per
lambda over lambdas {5, 3, 1, 0.1, 0.01} (100 features):

    MI_dir  source MAC+IP           -> weight, mean, std of frame size
    HH      src IP -> dst IP        -> the above for the sending direction,
                                       plus magnitude, radius, covariance
                                       and pcc combining both directions
    HH_jit  src IP -> dst IP        -> weight, mean, std of inter-arrival
    HpHp    src socket -> dst socket-> as HH, keyed by ip:port pairs

Directional combination stats, with i the sending and j the reverse
direction:  magnitude = sqrt(mean_i^2 + mean_j^2),
radius = sqrt(var_i^2 + var_j^2), covariance via a jointly-decayed
residual-product sum divided by (w_i + w_j), and pcc = cov/(std_i*std_j)
clamped to [-1, 1].  These formulas are the normative contract.
"""

from __future__ import annotations

import math

from .errors import GemidError
from .ingest import source_key_for
from .schema import FeatureDescriptor, FeatureSchema

LAMBDAS = (5.0, 3.0, 1.0, 0.1, 0.01)
_LAMBDA_TAGS = ("5", "3", "1", "0.1", "0.01")
_EPS = 1e-12


class DampedStat:
    """One exponentially damped weight/sum/sum-of-squares accumulator."""

    __slots__ = ("lam", "w", "ls", "ss", "last_update")

    def __init__(self, lam: float):
        self.lam = lam
        self.w = 0.0
        self.ls = 0.0
        self.ss = 0.0
        self.last_update = None

    def decay_factor(self, t: float) -> float:
        if self.last_update is None:
            return 1.0
        return 2.0 ** (-self.lam * (t - self.last_update))

    def update(self, value: float, t: float) -> "DampedStat":
        if self.last_update is not None and t < self.last_update:
            raise GemidError(f"out-of-order update: {t} < {self.last_update}")
        d = self.decay_factor(t)
        self.w = d * self.w + 1.0
        self.ls = d * self.ls + value
        self.ss = d * self.ss + value * value
        self.last_update = t
        return self

    def peek_weight(self, t: float) -> float:
        return self.decay_factor(t) * self.w

    @property
    def mean(self) -> float:
        return self.ls / self.w if self.w > _EPS else 0.0

    @property
    def var(self) -> float:
        if self.w <= _EPS:
            return 0.0
        m = self.mean
        return max(self.ss / self.w - m * m, 0.0)

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


def damped_update(stat: DampedStat, value: float, t: float) -> DampedStat:
    """Functional form of DampedStat.update (same state object returned)."""
    return stat.update(value, t)


class _PairResidual:
    """Jointly decayed residual-product sum for a direction pair."""

    __slots__ = ("lam", "total", "last_update")

    def __init__(self, lam: float):
        self.lam = lam
        self.total = 0.0
        self.last_update = None

    def update(self, value: float, i: DampedStat, j: DampedStat, t: float) -> None:
        if self.last_update is not None:
            self.total *= 2.0 ** (-self.lam * (t - self.last_update))
        self.total += (value - i.mean) * (value - j.mean)
        self.last_update = t

    def covariance(self, i: DampedStat, j: DampedStat) -> float:
        wsum = i.w + j.w
        return self.total / wsum if wsum > _EPS else 0.0

    def pcc(self, i: DampedStat, j: DampedStat) -> float:
        denom = i.std * j.std
        if denom <= _EPS:
            return 0.0
        return max(-1.0, min(1.0, self.covariance(i, j) / denom))


class _Lanes:
    """One DampedStat per lambda for a single stream key."""

    __slots__ = ("stats",)

    def __init__(self):
        self.stats = [DampedStat(lam) for lam in LAMBDAS]

    def update(self, value: float, t: float) -> None:
        for s in self.stats:
            s.update(value, t)

    def last_update(self):
        return self.stats[0].last_update


_EMPTY = _Lanes()


def magnitude(x: float, y: float) -> float:
    return math.sqrt(x * x + y * y)


def combination_stats(i: DampedStat, j: DampedStat, pair: _PairResidual) -> tuple:
    return (
        magnitude(i.mean, j.mean),
        magnitude(i.var, j.var),
        pair.covariance(i, j),
        pair.pcc(i, j),
    )


def window_feature_names() -> tuple[str, ...]:
    names = []
    for tag in _LAMBDA_TAGS:
        names += [f"MI_dir_{tag}_weight", f"MI_dir_{tag}_mean", f"MI_dir_{tag}_std"]
    for tag in _LAMBDA_TAGS:
        names += [
            f"HH_{tag}_weight_0", f"HH_{tag}_mean_0", f"HH_{tag}_std_0",
            f"HH_{tag}_magnitude_0_1", f"HH_{tag}_radius_0_1",
            f"HH_{tag}_covariance_0_1", f"HH_{tag}_pcc_0_1",
        ]
    for tag in _LAMBDA_TAGS:
        names += [f"HH_jit_{tag}_weight", f"HH_jit_{tag}_mean", f"HH_jit_{tag}_std"]
    for tag in _LAMBDA_TAGS:
        names += [
            f"HpHp_{tag}_weight_0", f"HpHp_{tag}_mean_0", f"HpHp_{tag}_std_0",
            f"HpHp_{tag}_magnitude_0_1", f"HpHp_{tag}_radius_0_1",
            f"HpHp_{tag}_covariance_0_1", f"HpHp_{tag}_pcc_0_1",
        ]
    return tuple(names)


def default_window_schema() -> FeatureSchema:
    descs = tuple(FeatureDescriptor(n, "WINDOW", "numeric") for n in window_feature_names())
    return FeatureSchema(descs, family="window")


class WindowState:
    """All stream tables; reset (recreate) between partitions."""

    def __init__(self):
        self.mi: dict = {}
        self.dir1d: dict = {}   # directed (a -> b) size stats, HH and HpHp
        self.jit: dict = {}
        self.pairs: dict = {}   # unordered pair residuals, HH and HpHp

    def _two_direction(self, kind: str, a, b, v: float, t: float) -> list:
        fwd = self.dir1d.setdefault((kind, a, b), _Lanes())
        fwd.update(v, t)
        rev = self.dir1d.get((kind, b, a), _EMPTY)
        pair_key = (kind, a, b) if a <= b else (kind, b, a)
        residuals = self.pairs.setdefault(
            pair_key, [_PairResidual(lam) for lam in LAMBDAS]
        )
        out = []
        for idx in range(len(LAMBDAS)):
            i, j = fwd.stats[idx], rev.stats[idx]
            residuals[idx].update(v, i, j, t)
            out += [i.w, i.mean, i.std, *combination_stats(i, j, residuals[idx])]
        return out

    def update(self, info) -> list:
        """Feed one packet; returns the 100-value feature row."""
        v = float(info.frame_len)
        t = info.ts

        mi = self.mi.setdefault((info.src_mac, info.src_ip), _Lanes())
        mi.update(v, t)
        row = []
        for s in mi.stats:
            row += [s.w, s.mean, s.std]

        row += self._two_direction("HH", info.src_ip, info.dst_ip, v, t)

        jit = self.jit.setdefault((info.src_ip, info.dst_ip), _Lanes())
        last = jit.last_update()
        delta = 0.0 if last is None else t - last
        jit.update(delta, t)
        for s in jit.stats:
            row += [s.w, s.mean, s.std]

        src_sock = (info.src_ip, info.src_port or 0)
        dst_sock = (info.dst_ip, info.dst_port or 0)
        row += self._two_direction("HpHp", src_sock, dst_sock, v, t)
        return row


def window_extract(infos):
    """Per-packet damped-statistics rows for a time-ordered packet stream.

    Every IP packet updates the stream tables; rows are emitted (post
    update) only for packets with a labeled source.
    """
    state = WindowState()
    rows = []
    for info in infos:
        if info.src_ip is None:
            continue
        row = state.update(info)
        if info.label is not None:
            rows.append((source_key_for(info.src_mac), info.ts, row, info.label))
    return rows
