"""Sign-weighted chain complex over the integers: assembly from critical
points and connecting orbits, the boundary-squares-to-zero check, Smith
normal form, and homology with reference comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DanglingOrbitError, NotAComplexError


@dataclass
class MorseComplex:
    """Generators grouped by index with integer boundary matrices.

    boundary[k] maps C_k to C_{k-1}; entry (i, j) is the signed orbit
    count from generator j of index k to generator i of index k - 1.
    Matrices are kept as nested lists of Python ints so the integer
    linear algebra below is exact at any size.
    """

    generators: dict              # index -> list of CriticalPoint
    boundary: dict                # index -> list of rows (ints)
    orientations: dict = field(default_factory=dict)

    @property
    def max_index(self):
        return max(self.generators) if self.generators else -1

    def rank(self, k):
        return len(self.generators.get(k, []))

    def boundary_array(self, k):
        rows = self.boundary.get(k)
        if not rows:
            return np.zeros((self.rank(k - 1), self.rank(k)), dtype=int)
        return np.array(rows, dtype=int)

    def summary(self):
        return {f"C_{k}": self.rank(k)
                for k in range(self.max_index + 1)}


def assemble(critical_points, orbits, orientations=None):
    """Build the complex from critical points and signed orbits.

    Every orbit endpoint must be one of the given critical points; an
    unmatched endpoint means the enumeration missed a generator and the
    counts cannot be trusted.
    """
    orientations = orientations or {}
    by_index = {}
    for c in critical_points:
        by_index.setdefault(c.morse_index, []).append(c)
    position = {id(c): (c.morse_index, i)
                for k, cs in by_index.items() for i, c in enumerate(cs)}
    boundary = {}
    for k, cs in by_index.items():
        if k - 1 in by_index:
            boundary[k] = [[0] * len(cs) for _ in by_index[k - 1]]
    for orb in orbits:
        try:
            k_src, j = position[id(orb.source)]
            k_tgt, i = position[id(orb.target)]
        except KeyError:
            raise DanglingOrbitError(
                "orbit endpoint is not among the generators",
                source_action=orb.source.action,
                target_action=orb.target.action)
        if k_src - k_tgt != 1:
            raise DanglingOrbitError(
                f"orbit connects indices {k_src} -> {k_tgt}, expected a "
                "drop of one")
        if orb.sign not in (-1, 1):
            raise DanglingOrbitError("orbit carries no sign")
        nu = orientations.get(id(orb.source), 1) \
            * orientations.get(id(orb.target), 1)
        boundary.setdefault(
            k_src, [[0] * len(by_index[k_src])
                    for _ in by_index.get(k_src - 1, [])])
        boundary[k_src][i][j] += orb.sign * nu
    return MorseComplex(generators=by_index, boundary=boundary,
                        orientations=dict(orientations))


def check_d_squared(cx, raise_on_failure=True):
    """Verify that consecutive boundary maps compose to zero, exactly."""
    report = {"ok": True, "max_entry": 0, "failures": []}
    for k in range(1, cx.max_index + 1):
        if cx.rank(k + 1) == 0 or cx.rank(k - 1) == 0:
            continue
        comp = cx.boundary_array(k) @ cx.boundary_array(k + 1)
        m = int(np.max(np.abs(comp))) if comp.size else 0
        report["max_entry"] = max(report["max_entry"], m)
        if m != 0:
            report["ok"] = False
            report["failures"].append(
                {"degree": k + 1, "matrix": comp.tolist()})
    if not report["ok"] and raise_on_failure:
        raise NotAComplexError("boundary composed with boundary is nonzero",
                               report=report)
    return report


def smith_normal_form(matrix):
    """Diagonal invariant factors of an integer matrix, exact.

    Classic elimination with a minimum-absolute-value pivot (row-major
    tie break) and Python integers throughout, so there is no overflow
    for any input size.
    """
    A = [[int(v) for v in row] for row in matrix]
    m = len(A)
    n = len(A[0]) if m else 0
    diag = []
    t = 0
    while t < min(m, n):
        # locate the smallest nonzero entry in the trailing block
        best = None
        for i in range(t, m):
            for j in range(t, n):
                if A[i][j] != 0 and (best is None
                                     or abs(A[i][j]) < abs(A[best[0]][best[1]])):
                    best = (i, j)
        if best is None:
            break
        bi, bj = best
        A[t], A[bi] = A[bi], A[t]
        for row in A:
            row[t], row[bj] = row[bj], row[t]
        reduced = False
        for i in range(t + 1, m):
            q = A[i][t] // A[t][t]
            if q:
                for j in range(t, n):
                    A[i][j] -= q * A[t][j]
            if A[i][t]:
                reduced = True
        for j in range(t + 1, n):
            q = A[t][j] // A[t][t]
            if q:
                for i in range(t, m):
                    A[i][j] -= q * A[i][t]
            if A[t][j]:
                reduced = True
        if reduced:
            continue  # remainders appeared; re-pivot on the smaller entry
        # pivot must divide the rest of the block for true invariant factors
        witness = None
        for i in range(t + 1, m):
            for j in range(t + 1, n):
                if A[i][j] % A[t][t]:
                    witness = (i, j)
                    break
            if witness:
                break
        if witness:
            i, _ = witness
            for j in range(t, n):
                A[t][j] += A[i][j]
            continue
        diag.append(abs(A[t][t]))
        t += 1
    return diag


@dataclass
class HomologyResult:
    betti: list
    torsion: dict                 # degree -> list of invariant factors > 1
    ranks: dict                   # degree -> rank of boundary_k

    def euler_characteristic(self):
        return sum((-1) ** k * b for k, b in enumerate(self.betti))


def homology(cx):
    """Integer homology of the complex via Smith normal form."""
    check_d_squared(cx)
    top = cx.max_index
    ranks, factors = {}, {}
    for k in range(top + 2):
        B = cx.boundary_array(k)
        if B.size == 0:
            ranks[k], factors[k] = 0, []
            continue
        d = smith_normal_form(B.tolist())
        ranks[k] = len(d)
        factors[k] = d
    betti, torsion = [], {}
    for k in range(top + 1):
        betti.append(cx.rank(k) - ranks.get(k, 0) - ranks.get(k + 1, 0))
        tor = [f for f in factors.get(k + 1, []) if f > 1]
        if tor:
            torsion[k] = tor
    return HomologyResult(betti=betti, torsion=torsion, ranks=ranks)


def reference_betti(manifold):
    """Betti numbers of the component of constant loops for the catalogue
    manifolds (the manifold itself, by the evaluation retraction)."""
    spec = manifold.spec
    if spec.kind == "circle":
        return [1, 1]
    if spec.kind == "flat_torus":
        m = manifold.m
        from math import comb
        return [comb(m, k) for k in range(m + 1)]
    if spec.kind == "round_sphere":
        d = manifold.dim
        return [1] + [0] * (d - 1) + [1]
    raise ValueError(f"no reference homology for family {spec.kind}")


def compare_reference(result, manifold):
    """Match computed Betti numbers (padded with zeros) to the reference."""
    ref = reference_betti(manifold)
    got = list(result.betti) + [0] * (len(ref) - len(result.betti))
    report = {
        "reference": ref,
        "computed": got[:max(len(ref), len(result.betti))],
        "torsion": result.torsion,
        "match": got[:len(ref)] == ref
                 and all(b == 0 for b in got[len(ref):])
                 and not result.torsion,
    }
    return report


def orientation_invariance(critical_points, orbits, rng, trials=8):
    """Homology must not depend on the orientation of the negative
    eigenspaces: re-run assembly under random sign choices."""
    base = homology(assemble(critical_points, orbits))
    for _ in range(trials):
        nu = {id(c): int(rng.choice([-1, 1])) for c in critical_points}
        h = homology(assemble(critical_points, orbits, orientations=nu))
        if h.betti != base.betti or h.torsion != base.torsion:
            return {"invariant": False, "base": base.betti,
                    "other": h.betti}
    return {"invariant": True, "betti": base.betti,
            "torsion": base.torsion, "trials": trials}
