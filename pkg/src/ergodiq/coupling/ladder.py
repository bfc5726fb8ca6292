"""Window bookkeeping: l0 process, return/failure ladder, coupling time.

Window ``k`` covers (kT, (k+1)T].  Two flags describe it:

* ``ball[k]``: H(u1(kT)) + H(u2(kT)) <= 2 C1 at the window start;
* ``glued[k]``: u~ = u2 on the whole window.

With those, ``l0(k) = min{l <= k : ball[l] and glued[l..k-1]}`` (``inf`` when
empty), computed online by the recursion

    l0(k) = l0(k-1)            if glued[k-1] and l0(k-1) < inf
          = k if ball[k] else inf   otherwise.

The ladder alternates ``delta_j`` (first n >= sigma_j with l0(n) = n) and
``sigma_{j+1}`` (first n > delta_j with l0(n) > delta_j).  ``k0`` is the first
j with ``sigma_{j+1} = inf`` and then ``l0(inf) = delta_{k0}``.  On a finite
horizon ``inf`` means "not observed".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

INF = math.inf


@dataclass
class CouplingLedger:
    T: float
    ball_radius: float
    glued: list = field(default_factory=list)
    ball: list = field(default_factory=list)
    l0: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    sigma: list = field(default_factory=list)     # sigma[j] is sigma_{j+1}
    seeking: bool = True
    closed: bool = False

    @property
    def windows(self) -> int:
        return len(self.glued)

    # ------------------------------------------------------------ online
    def _visit(self, n: int, ball_n: bool):
        if n == 0:
            l0 = 0 if ball_n else INF
        elif self.glued[n - 1] and self.l0[n - 1] < INF:
            l0 = self.l0[n - 1]
        else:
            l0 = n if ball_n else INF
        self.ball.append(bool(ball_n))
        self.l0.append(l0)
        if not self.seeking and l0 != self.delta[-1]:
            self.sigma.append(n)
            self.seeking = True
        if self.seeking and l0 == n:
            self.delta.append(n)
            self.seeking = False
        return l0

    def close(self, energy_end: float) -> "CouplingLedger":
        """Evaluate l0 at the horizon, from the energies at the final time."""
        if not self.closed:
            self._visit(self.windows, energy_end <= self.ball_radius)
            self.closed = True
        return self

    # ----------------------------------------------------------- derived
    @property
    def k0(self):
        """Index of the last ladder rung if it never failed, else inf."""
        if self.seeking or not self.delta:
            return INF
        return len(self.delta) - 1

    @property
    def l0_inf(self):
        k = self.k0
        return INF if k == INF else self.delta[k]

    @property
    def sigma_full(self) -> list:
        """sigma_1, sigma_2, ... with a trailing inf when the last rung held."""
        return self.sigma + ([INF] if not self.seeking else [])

    @property
    def rho(self) -> list:
        """Gaps delta_{j+1} - delta_j between successive ball entries."""
        return [b - a for a, b in zip(self.delta, self.delta[1:])]

    @property
    def coupling_time(self) -> int:
        """First window from which u~ = u2 on every later window of the horizon."""
        n = self.windows
        while n > 0 and self.glued[n - 1]:
            n -= 1
        return n

    def entries(self, min_followup: int = 1) -> list[dict]:
        """One record per ball entry with at least ``min_followup`` observed windows."""
        out = []
        sig = self.sigma_full
        for j, d in enumerate(self.delta):
            if d > self.windows - min_followup:
                continue
            s = sig[j] if j < len(sig) else INF
            out.append({"delta": d, "first_window_glued": bool(self.glued[d]),
                        "held": s == INF, "sigma": s})
        return out

    def record(self, k: int) -> dict:
        return {"window": k, "ball": self.ball[k], "glued": self.glued[k], "l0": self.l0[k]}


def advance_ladder(ledger: CouplingLedger, glued: bool, energy_start: float) -> CouplingLedger:
    """Book window ``k = ledger.windows``: start energy H(u1)+H(u2), then its outcome."""
    if ledger.closed:
        raise ValueError("ledger already closed")
    k = ledger.windows
    ledger._visit(k, energy_start <= ledger.ball_radius)
    ledger.glued.append(bool(glued))
    return ledger


def replay(glued, ball) -> CouplingLedger:
    """Run the ledger over scripted flags; ``ball`` has one more entry than ``glued``."""
    if len(ball) != len(glued) + 1:
        raise ValueError("ball flags must cover every window start plus the horizon")
    led = CouplingLedger(T=1.0, ball_radius=0.5)
    for g, b in zip(glued, ball):
        advance_ladder(led, g, 0.0 if b else 1.0)
    return led.close(0.0 if ball[-1] else 1.0)


def ladder_oracle(glued, ball) -> dict:
    """Direct evaluation of the definitions on the whole flag sequence."""
    n = len(glued)
    l0 = []
    for k in range(n + 1):
        cands = [l for l in range(k + 1) if ball[l] and all(glued[l:k])]
        l0.append(min(cands) if cands else INF)
    delta, sigma = [], []
    start = 0
    while True:
        d = next((m for m in range(start, n + 1) if l0[m] == m), None)
        if d is None:
            break
        delta.append(d)
        s = next((m for m in range(d + 1, n + 1) if l0[m] > d), None)
        if s is None:
            sigma.append(INF)
            break
        sigma.append(s)
        start = s
    k0 = len(delta) - 1 if sigma and sigma[-1] == INF else INF
    return {"l0": l0, "delta": delta, "sigma": sigma, "k0": k0,
            "l0_inf": INF if k0 == INF else delta[k0]}
