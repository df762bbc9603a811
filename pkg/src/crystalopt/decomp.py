"""Energy ledger: structural, elastic and defect parts, site three-body energies, fine bound."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import energy as en
from .configuration import Configuration
from .errors import UnsupportedDomainError
from .paths import MEDIUM, PairSets
from .potential import Piece, PotentialPair

LEDGER_RTOL = 1e-8


def three_body_energies(config: Configuration, triple) -> np.ndarray:
    """e3(x) = 2 * sum over unordered neighbor pairs {x1, x2} of Psi(x, x1, x2)."""
    # Psi vanishes once any side exceeds the triple cutoff, so a short neighbor list suffices.
    zero = PotentialPair(triple.alpha, [Piece(0.0, math.inf, "poly", (0.0,))])
    return en.energy(config, zero, triple, r_cut=2.0).three_body


def site_three_body(config: Configuration, triple, x: int) -> float:
    hit = np.nonzero(config.ids == x)[0]
    if len(hit) == 0:
        raise KeyError(f"unknown particle id {x}")
    return float(three_body_energies(config, triple)[hit[0]])


def three_body_lower_bound(e3: np.ndarray, classification, psi_111: float) -> dict:
    """e3 >= 48 Psi(1,1,1) on regular sites and >= 46 Psi(1,1,1) elsewhere."""
    reg = np.zeros(len(e3), bool)
    reg[classification.xreg] = True
    slack_reg = e3[reg] - 48.0 * psi_111
    slack_other = e3[~reg] - 46.0 * psi_111
    worst = min(np.min(slack_reg, initial=np.inf), np.min(slack_other, initial=np.inf))
    return {"holds": bool(worst >= -1e-12), "min_slack": float(worst)}


@dataclass
class DecompositionReport:
    e_struct: float
    e_elast: float
    e_defect: float
    e_short: float
    e_med: float
    e_long: float
    total: float
    tail_bound: float
    e3: dict
    counts: dict
    closure_error: float

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def decompose(config: Configuration, pair, triple, classification, pairsets: PairSets) -> DecompositionReport:
    """Split the total energy over the disjoint pair classes.

    Class membership is combinatorial (embedded distances), so the elastic
    part measures how far observed distances moved from their class length.
    """
    if config.periodic:
        raise UnsupportedDomainError("the energy ledger is implemented for finite configurations")
    if classification.config is not config and len(classification.config) != len(config):
        raise ValueError("classification belongs to a different configuration")
    e = en.energy(config, pair, triple)
    y = config.positions
    e3 = e.three_body
    struct = float(np.sum(e3))
    elast = {"short": 0.0, "med": 0.0, "long": 0.0}
    regular_v = 0.0
    for lam, arr in sorted(pairsets.classes.items()):
        if len(arr) == 0:
            continue
        d = np.linalg.norm(y[arr[:, 1]] - y[arr[:, 0]], axis=1)
        v = pair(d)
        regular_v += float(np.sum(v))
        struct += len(arr) * float(pair(np.array([lam]))[0])
        part = float(np.sum(v - pair(np.array([lam]))[0]))
        if abs(lam - 1.0) < 1e-12:
            elast["short"] += part
        elif any(abs(lam - m) < 1e-12 for m in MEDIUM):
            elast["med"] += part
        else:
            elast["long"] += part
    all_v = 2.0 * e.pair_sum
    defect = all_v - regular_v
    e_elast = elast["short"] + elast["med"] + elast["long"]
    closure = abs(struct + e_elast + defect - e.total) / max(abs(e.total), 1.0)
    counts = {
        "n": len(config), "x12": int(len(classification.x12)), "xreg": int(len(classification.xreg)),
        "xco": int(len(classification.xco)), "xtco": int(len(classification.xtco)),
        "defect": int(len(classification.defect)), "bonds": int(len(pairsets.bonds)),
        "pairs": pairsets.counts(), "class_conflicts": int(pairsets.conflicts),
    }
    return DecompositionReport(struct, e_elast, defect, elast["short"], elast["med"], elast["long"],
                               e.total, e.tail_bound,
                               {str(int(i)): float(v) for i, v in zip(config.ids, e3)},
                               counts, float(closure))


@dataclass
class FineBoundReport:
    excess: float              # E(y) - e* #X
    distortion_sq: float       # sum over ordered bonds of (|dq| - 1)^2
    defect_term: float         # alpha^(1/2) #defects
    constant: float | None     # excess / (distortion + defect term), None when undefined
    flagged: bool

    def to_dict(self):
        return asdict(self)


def fine_bound_report(config: Configuration, pair, triple, classification, e_star: float) -> FineBoundReport:
    """Measured constant in E(y) - e* #X <= C (distortion + alpha^(1/2) #defects)."""
    excess = en.energy(config, pair, triple).total - e_star * len(config)
    g = classification.graph
    d = np.linalg.norm(g.disp, axis=1)
    distortion = float(np.sum((d - 1.0) ** 2))
    defect_term = math.sqrt(classification.alpha) * len(classification.defect)
    denom = distortion + defect_term
    if denom <= 0.0:
        return FineBoundReport(float(excess), distortion, defect_term, None, True)
    return FineBoundReport(float(excess), distortion, defect_term, float(excess / denom), False)


def rows_to_csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
