#!/usr/bin/env python3
"""Regenerates the bundled model files under data/models."""
import json
import math
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "models"


class Series:
    def __init__(self, n, m):
        self.n, self.m = n, m
        self.terms = {}

    def add(self, c, k=None, a=None, abar=None, ell=None, real=True):
        """Adds c * monomial and, when real, the conjugate partner so the sum is real valued."""
        k = tuple(k or [0] * self.n)
        a = tuple(a or [0] * self.m)
        abar = tuple(abar or [0] * self.m)
        ell = tuple(ell or [0] * self.n)
        c = complex(c)
        key = (k, a, abar, ell)
        partner = (k, abar, a, tuple(-x for x in ell))
        if real and partner != key:
            self._put(key, c)
            self._put(partner, c.conjugate())
        else:
            self._put(key, c)

    def _put(self, key, c):
        self.terms[key] = self.terms.get(key, 0) + c

    def to_json(self, **extra):
        terms = [
            {"k": list(k), "a": list(a), "abar": list(ab), "ell": list(l), "re": c.real, "im": c.imag}
            for (k, a, ab, l), c in sorted(self.terms.items())
            if c != 0
        ]
        d = {"n": self.n, "m": self.m, "degree_cap": 6, "fourier_cap": 8, "terms": terms}
        d.update(extra)
        return d


def model_n2m2():
    s = Series(2, 2)
    omega = [0.2, 0.2 + 1e-3 * math.sqrt(2)]
    Omega = [(math.sqrt(5) - 1) / 2, math.sqrt(3) / 2]
    e = lambda i, n=2: [1 if j == i else 0 for j in range(n)]
    for i, w in enumerate(omega):
        s.add(w, k=e(i))
    for j, w in enumerate(Omega):
        s.add(w, a=e(j), abar=e(j), real=False)
    # degree 3: torus-normal couplings (eliminated) and a resonant cubic elliptic term
    s.add(0.1, k=e(0), a=e(0), ell=[1, 0])
    s.add(0.1, k=e(1), abar=e(1))
    s.add(0.12, a=[2, 0], abar=[0, 1])
    s.add(0.05, a=[1, 1], abar=[1, 0], ell=[1, 0])
    # degree 4: twist, elliptic coupling, and eliminated Fourier modes
    s.add(0.5, k=[2, 0])
    s.add(0.3, k=[1, 1])
    s.add(0.4, k=[0, 2])
    for (i, j), q in {(0, 0): 0.1, (1, 0): 0.05, (0, 1): 0.04, (1, 1): 0.12}.items():
        s.add(q, k=e(i), a=e(j), abar=e(j), real=False)
    s.add(0.03, k=[2, 0], ell=[1, 0])
    s.add(0.05, k=e(0), a=[1, 0], abar=[0, 1])
    s.add(0.06, a=[2, 0], abar=[2, 0], real=False)
    # degree 5
    s.add(0.05, k=[1, 1], a=e(0))
    s.add(0.04, k=e(0), a=[1, 1], abar=[0, 1])
    s.add(0.03, k=[1, 1], a=e(1), ell=[1, 0])
    # degree 6: slow-angle action terms (phi1 - phi2) that select orbits on the resonant torus
    s.add(0.1, k=[2, 1], ell=[1, -1])
    s.add(0.04j, k=[1, 2], ell=[1, -1])
    s.add(0.03, k=[1, 2], ell=[2, -2])
    s.add(0.02, k=[3, 0], ell=[1, 0])
    s.add(0.02, k=[1, 1], a=e(0), abar=e(1))
    return s.to_json(name="model_n2m2", gamma=1e-4, tau=2.0)


def intera():
    # H = omega I + Omega z zbar + I (z + zbar) + I^2 / Omega: the averaged twist vanishes.
    s = Series(1, 1)
    omega, Omega = 1.0, math.sqrt(2)
    s.add(omega, k=[1])
    s.add(Omega, a=[1], abar=[1], real=False)
    s.add(1.0, k=[1], a=[1])
    s.add(1.0 / Omega, k=[2], real=False)
    return s.to_json(name="intera", gamma=1e-3, tau=2.0)


def linint():
    # n = 2, m = 4, elliptic frequencies on the lines Omega_j = a_j.omega / 3.
    s = Series(2, 4)
    omega = [1.0, math.sqrt(2)]
    avec = [(1, 1), (1, 2), (1, 3), (0, 1)]
    e2 = lambda i: [1 if j == i else 0 for j in range(2)]
    e4 = lambda i: [1 if j == i else 0 for j in range(4)]
    for i, w in enumerate(omega):
        s.add(w, k=e2(i))
    for j, a in enumerate(avec):
        s.add((a[0] * omega[0] + a[1] * omega[1]) / 3, a=e4(j), abar=e4(j), real=False)
    s.add(0.5, k=[2, 0], real=False)
    s.add(0.5, k=[0, 2], real=False)
    for j, a in enumerate(avec):
        for i in range(2):
            if a[i]:
                s.add(a[i] / 3, k=e2(i), a=e4(j), abar=e4(j), real=False)
    rel = [{"j": j + 1, "M": 3, "a": list(a)} for j, a in enumerate(avec)]
    return s.to_json(name="linint", gamma=1e-3, tau=2.0, relations=rel)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for f in (model_n2m2, intera, linint):
        d = f()
        terms = ",\n    ".join(json.dumps(t) for t in d.pop("terms"))
        head = json.dumps(d, indent=2)[:-2]
        (OUT / f"{d['name']}.json").write_text(head + ',\n  "terms": [\n    ' + terms + "\n  ]\n}\n")
