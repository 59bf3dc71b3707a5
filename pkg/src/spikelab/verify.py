"""Fast built-in property checks behind the `verify` CLI subcommand.

Each check returns (name, passed, detail). These mirror the cheap
entries of the acceptance suite; the heavyweight training-based criteria
live in the pytest suite.
"""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

from . import attacks as atk
from . import network, neurons
from .events import EventStream, read_events, write_events
from .metrics import balanced_accuracy
from .numerics import read_ft32, write_ft32
from .rng import Rng


def check_surrogate_identity():
    worst = 0.0
    for alpha in (0.5, 2.0, 4.0):
        kind = neurons.ATan(alpha=alpha)
        xs = np.linspace(-2.0, 2.0, 100)
        eps = 1e-4
        fd = (neurons.surrogate_value(xs + eps, kind)
              - neurons.surrogate_value(xs - eps, kind)) / (2 * eps)
        worst = max(worst, float(np.abs(fd - neurons.surrogate_grad(xs, kind)).max()))
    return "surrogate-gradient-identity", worst < 1e-5, f"max |fd - analytic| = {worst:.2e}"


def _scalar_lif(v, x, p):
    h = v + (1.0 / p.tau) * (-(v - p.v_rest) + x)
    s = 1.0 if h >= p.v_th else 0.0
    if p.reset_mode == "hard":
        vn = h * (1 - s) + p.v_reset * s
    else:
        vn = h - s * p.v_th
    return s, vn, h


def check_neuron_oracle(n=1000):
    rng = Rng(99)
    worst = 0.0
    for i in range(n):
        r = rng.split(i)
        p = neurons.LifParams(tau=float(r.uniform(1.1, 4.0)),
                              v_th=float(r.uniform(0.5, 1.5)),
                              reset_mode="hard" if r.uniform() < 0.5 else "subtract")
        v = np.float32(r.uniform(-1, 1))
        x = np.float32(r.uniform(-2, 2))
        s, vn, h = neurons.lif_step(np.array([v]), np.array([x]), p)
        so, vno, ho = _scalar_lif(float(v), float(x), p)
        worst = max(worst, abs(float(s[0]) - so), abs(float(vn[0]) - vno),
                    abs(float(h[0]) - ho))
    return "lif-scalar-oracle", worst < 1e-6, f"max deviation = {worst:.2e}"


def check_threshold_optimality(instances=100):
    rng = Rng(7)
    for i in range(instances):
        r = rng.split(i)
        n = int(r.integers(8, 64))
        values = r.normal(0, 1, n)
        member = r.uniform(size=n) < 0.5
        if member.all() or not member.any():
            member[0] = True
            member[-1] = False
        records = [atk.AttackFeatureRecord(np.zeros(3), float(values[j]), True, 0,
                                           bool(member[j]), "snn", amp=np.zeros(1))
                   for j in range(n)]
        rule = atk.select_threshold(records, "loss")
        best = max(balanced_accuracy(values < t, member)
                   for t in np.concatenate([[-np.inf], values, [np.inf],
                                            (np.sort(values)[:-1] + np.sort(values)[1:]) / 2]))
        if abs(rule.shadow_accuracy - best) > 1e-12:
            return ("threshold-optimality", False,
                    f"instance {i}: {rule.shadow_accuracy} vs brute force {best}")
    return "threshold-optimality", True, f"{instances} random instances exact"


def check_metric_formulas(n=1000):
    rng = Rng(13)
    eps = atk.CLAMP_EPS
    worst = 0.0
    for i in range(n):
        r = rng.split(i)
        k = int(r.integers(3, 8))
        s = r.uniform(0, 1, k)
        if i % 7 == 0:
            s = np.zeros(k)
            s[int(r.integers(0, k))] = 1.0      # clamped one-hot case
        y = int(r.integers(0, k))
        rec = atk.AttackFeatureRecord(s.astype(np.float32), 0.0, True, y, True, "snn",
                                      amp=np.zeros(1))
        sc = np.clip(np.asarray(s, dtype=np.float64), eps, 1.0)
        others = np.delete(sc, y)
        ref_logit = math.log(sc[y]) - math.log(others.sum())
        ref_mentr = (-(1 - sc[y]) * math.log(sc[y])
                     - sum(o * math.log(min(max(1 - o, eps), 1.0)) for o in others))
        for method, ref in (("logit_scaled_fire_rate", ref_logit),
                            ("mentr_fire_rates", ref_mentr)):
            got = atk.metric_value(method, rec)
            err = abs(got - ref) / max(abs(ref), 1e-9)
            worst = max(worst, err if abs(ref) > 1e-9 else abs(got - ref))
    return "metric-formulas", worst < 1e-5, f"max rel err = {worst:.2e}"


def check_balanced_accuracy_oracle(n=1000):
    rng = Rng(21)
    for i in range(n):
        r = rng.split(i)
        k = int(r.integers(4, 40))
        preds = r.uniform(size=k) < 0.5
        truths = r.uniform(size=k) < 0.5
        if truths.all() or not truths.any():
            truths[0] = ~truths[0]
        tp = int((preds & truths).sum())
        fn = int((~preds & truths).sum())
        tn = int((~preds & ~truths).sum())
        fp = int((preds & ~truths).sum())
        ref = (tp / (tp + fn) + tn / (tn + fp)) / 2.0
        if abs(balanced_accuracy(preds, truths) - ref) > 1e-15:
            return "balanced-accuracy-oracle", False, f"mismatch on instance {i}"
    return "balanced-accuracy-oracle", True, f"{n} random vectors exact"


def check_format_round_trips():
    rng = Rng(3)
    with tempfile.TemporaryDirectory() as tmp:
        arr = rng.normal(0, 1, (3, 4, 5)).astype(np.float32)
        p = os.path.join(tmp, "t.ft32")
        write_ft32(p, arr)
        if not np.array_equal(read_ft32(p), arr):
            return "format-round-trips", False, "FT32 mismatch"
        stream = EventStream(8, 8, [5, 1, 9], [0, 3, 7], [1, 2, 3], [1, 0, 1], 2)
        pe = os.path.join(tmp, "s.evt1")
        write_events(pe, stream)
        if read_events(pe) != stream:
            return "format-round-trips", False, "EVT1 mismatch"
        specs = network.make_preset("mlp-tiny", (1, 4, 4), 3, "snn")
        model = network.build_model(specs, "snn", 4, rng=Rng(5))
        pm = os.path.join(tmp, "m.mdl1")
        network.save_model(pm, model)
        loaded = network.load_model(pm)
        same = all(np.array_equal(a, b) for a, b in
                   zip(model.parameters(), loaded.parameters()))
        if not same:
            return "format-round-trips", False, "MDL1 mismatch"
    return "format-round-trips", True, "FT32/EVT1/MDL1 lossless"


ALL_CHECKS = (check_surrogate_identity, check_neuron_oracle,
              check_threshold_optimality, check_metric_formulas,
              check_balanced_accuracy_oracle, check_format_round_trips)


def run_all(out=print) -> bool:
    ok = True
    for check in ALL_CHECKS:
        name, passed, detail = check()
        out(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok = ok and passed
    return ok
