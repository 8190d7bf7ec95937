"""The detector under test: a fault-injecting synthetic detector and an offline adapter.

The synthetic detector starts from the ground-truth boxes and perturbs them
according to failure rules over semantic features.  It also emits a vector
of activation-like signals; downstream code only looks at their signs.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .rules import Rule, matches, predicate_from_json, predicate_to_json, normalize
from .sampler import FeatureVector, rng_stream
from .world import FRAME_H, FRAME_W, BoundingBox, Scene, ground_truth_boxes

EFFECTS = ("drop", "noise", "duplicate")


class DetectionsParseError(ValueError):
    def __init__(self, record: int, message: str):
        super().__init__(f"record {record}: {message}")
        self.record = record


class MissingSample(KeyError):
    pass


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float = 1.0


@dataclass(frozen=True)
class DetectorOutput:
    detections: tuple[Detection, ...]
    activations: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class FailureRule:
    """A region of feature space where the detector misbehaves.

    ``effect`` is ``drop`` (drop probability), ``noise`` (jitter multiplier)
    or ``duplicate`` (probability of a second box on the same object).
    ``objects`` limits the effect to those cars' boxes; empty means all.
    """
    rule: Rule
    effect: str
    magnitude: float
    objects: tuple[str, ...] = ()

    def __post_init__(self):
        if self.effect not in EFFECTS:
            raise ValueError(f"unknown effect {self.effect!r}")
        if self.effect != "noise" and not 0.0 <= self.magnitude <= 1.0:
            raise ValueError(f"{self.effect} probability must lie in [0, 1]")
        if self.effect == "noise" and self.magnitude < 0:
            raise ValueError("noise scale must be >= 0")


@dataclass(frozen=True)
class Coupling:
    """Channel ``channel`` follows the match status of failure rule ``rule``
    and/or a weighted sum of normalized features."""
    channel: int
    rule: Optional[int] = None
    strength: float = 1.0
    features: tuple[tuple[str, float], ...] = ()
    bias: float = 0.0


@dataclass(frozen=True)
class FaultModelConfig:
    failure_rules: tuple[FailureRule, ...] = ()
    jitter_sigma: float = 0.0
    base_drop_prob: float = 0.0
    activation_dim: int = 16
    activation_noise: float = 0.1
    coupling_strength: float = 1.0
    couplings: tuple[Coupling, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.base_drop_prob <= 1.0:
            raise ValueError("base_drop_prob must lie in [0, 1]")
        if self.activation_dim < 1:
            raise ValueError("activation_dim must be >= 1")
        if self.jitter_sigma < 0 or self.activation_noise < 0:
            raise ValueError("noise levels must be >= 0")
        for c in self.couplings:
            if not 0 <= c.channel < self.activation_dim:
                raise ValueError(f"coupling channel {c.channel} out of range")
            if c.rule is not None and not 0 <= c.rule < len(self.failure_rules):
                raise ValueError(f"coupling refers to missing failure rule {c.rule}")

    def effective_couplings(self) -> tuple[Coupling, ...]:
        if self.couplings:
            return self.couplings
        # by default failure rule i drives channel i
        return tuple(Coupling(i, i, self.coupling_strength)
                     for i in range(min(len(self.failure_rules), self.activation_dim)))


# ---------------------------------------------------------------- config io

def fault_config_from_dict(d: Mapping) -> FaultModelConfig:
    rules = []
    for fr in d.get("failure_rules", ()):
        preds = normalize(predicate_from_json(p) for p in fr.get("predicates", ()))
        rules.append(FailureRule(Rule(preds, _label("incorrect"), provenance="planted"),
                                 fr["effect"], float(fr["magnitude"]), tuple(fr.get("objects", ()))))
    couplings = tuple(
        Coupling(int(c["channel"]), c.get("rule"), float(c.get("strength", 1.0)),
                 tuple(sorted((str(k), float(v)) for k, v in c.get("features", {}).items())),
                 float(c.get("bias", 0.0)))
        for c in d.get("couplings", ())
    )
    return FaultModelConfig(
        failure_rules=tuple(rules),
        jitter_sigma=float(d.get("jitter_sigma", 0.0)),
        base_drop_prob=float(d.get("base_drop_prob", 0.0)),
        activation_dim=int(d.get("activation_dim", 16)),
        activation_noise=float(d.get("activation_noise", 0.1)),
        coupling_strength=float(d.get("coupling_strength", 1.0)),
        couplings=couplings,
        seed=int(d.get("seed", 0)),
    )


def fault_config_to_dict(cfg: FaultModelConfig) -> dict:
    return {
        "seed": cfg.seed,
        "jitter_sigma": cfg.jitter_sigma,
        "base_drop_prob": cfg.base_drop_prob,
        "activation_dim": cfg.activation_dim,
        "activation_noise": cfg.activation_noise,
        "coupling_strength": cfg.coupling_strength,
        "failure_rules": [
            {"effect": fr.effect, "magnitude": fr.magnitude, "objects": list(fr.objects),
             "predicates": [predicate_to_json(p) for p in fr.rule.predicates]}
            for fr in cfg.failure_rules
        ],
        "couplings": [
            {"channel": c.channel, "rule": c.rule, "strength": c.strength,
             "features": dict(c.features), "bias": c.bias}
            for c in cfg.couplings
        ],
    }


def load_fault_config(path) -> FaultModelConfig:
    path = str(path)
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            return fault_config_from_dict(json.load(fh))
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return fault_config_from_dict(tomllib.load(fh))


def _label(v):
    from .evaluator import Label
    return Label(v)


# ---------------------------------------------------------------- synthetic detector

def _fingerprint(f: FeatureVector) -> int:
    return zlib.crc32(repr(f.values).encode("utf-8"))


def _categorical_code(name: str, value: str) -> float:
    return (zlib.crc32(f"{name}={value}".encode("utf-8")) % 2001) / 1000.0 - 1.0


class SyntheticDetector:
    """Fault-injecting detector bound to a feature schema (for normalization)."""

    def __init__(self, cfg: FaultModelConfig, schema: Sequence | None = None):
        self.cfg = cfg
        self.schema = list(schema) if schema is not None else None
        self.couplings = cfg.effective_couplings()
        self._weights: Optional[np.ndarray] = None
        self._names: Optional[tuple[str, ...]] = None

    def normalized(self, f: FeatureVector) -> np.ndarray:
        domains = {d.name: d for d in self.schema} if self.schema else {}
        out = []
        for name, v in zip(f.names, f.values):
            d = domains.get(name)
            if isinstance(v, str):
                out.append(_categorical_code(name, v))
            elif d is not None and all(math.isfinite(b) for b in d.domain) and d.domain[1] > d.domain[0]:
                lo, hi = d.domain
                out.append(2.0 * (float(v) - lo) / (hi - lo) - 1.0)
            else:
                out.append(math.tanh(float(v) / 50.0))
        return np.array(out)

    def _channel_weights(self, names: tuple[str, ...]) -> np.ndarray:
        if self._weights is None or self._names != names:
            rng = rng_stream(self.cfg.seed, "activation-weights", len(names))
            k = self.cfg.activation_dim
            self._weights = rng.normal(0.0, 1.0 / math.sqrt(max(len(names), 1)), (k, len(names) + 1))
            self._names = names
        return self._weights

    def activations(self, f: FeatureVector, rule_hits: Sequence[bool], rng) -> tuple[float, ...]:
        z = self.normalized(f)
        W = self._channel_weights(f.names)
        pre = W[:, :-1] @ z + W[:, -1]
        index = {n: i for i, n in enumerate(f.names)}
        for c in self.couplings:
            v = c.bias
            if c.rule is not None:
                v += c.strength * (1.0 if rule_hits[c.rule] else -1.0)
            for name, w in c.features:
                v += w * z[index[name]]
            pre[c.channel] = v
        noise = rng.normal(0.0, 1.0, self.cfg.activation_dim) * self.cfg.activation_noise
        return tuple(float(a) for a in np.tanh(pre) + noise)

    def detect(self, scene: Scene, f: FeatureVector) -> DetectorOutput:
        cfg = self.cfg
        rng = rng_stream(cfg.seed, "detect", f.seed_index, _fingerprint(f))
        hits = [matches(fr.rule, f) for fr in cfg.failure_rules]
        dets: list[Detection] = []
        for box in ground_truth_boxes(scene):
            keep = 1.0 - cfg.base_drop_prob
            scale = 1.0
            no_dup = 1.0
            for fr, hit in zip(cfg.failure_rules, hits):
                if not hit or (fr.objects and box.object_name not in fr.objects):
                    continue
                if fr.effect == "drop":
                    keep *= 1.0 - fr.magnitude
                elif fr.effect == "noise":
                    scale *= fr.magnitude
                else:
                    no_dup *= 1.0 - fr.magnitude
            # fixed draw count per box keeps streams aligned across configs
            u_drop, u_dup = rng.random(2)
            eps = rng.normal(0.0, 1.0, 4)
            eps_dup = rng.normal(0.0, 1.0, 4)
            if u_drop >= keep:
                continue
            sigma = cfg.jitter_sigma * scale
            main = _perturb(box, eps * sigma)
            if main is None:
                continue
            conf = 1.0 if sigma == 0 else float(np.clip(1.0 - sigma / box.width, 0.05, 1.0))
            dets.append(Detection(main, conf))
            if u_dup < 1.0 - no_dup:
                dup = _perturb(box, eps * sigma + eps_dup * 0.02 * box.width)
                if dup is not None:
                    dets.append(Detection(dup, 0.5 * conf))
        acts = self.activations(f, hits, rng)
        return DetectorOutput(tuple(dets), acts)


def _perturb(box: BoundingBox, delta: np.ndarray) -> Optional[BoundingBox]:
    x0, y0, x1, y1 = (np.array(box.as_list()) + delta).tolist()
    x0, x1 = min(x0, x1), max(x0, x1)
    y0, y1 = min(y0, y1), max(y0, y1)
    x0, x1 = max(0.0, x0), min(float(FRAME_W), x1)
    y0, y1 = max(0.0, y0), min(float(FRAME_H), y1)
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return None
    return BoundingBox(x0, y0, x1, y1, box.object_name)


def detect(scene: Scene, f: FeatureVector, cfg: FaultModelConfig, schema=None) -> DetectorOutput:
    return SyntheticDetector(cfg, schema).detect(scene, f)


# ---------------------------------------------------------------- offline detections

@dataclass
class ExternalDetector:
    """Detections produced elsewhere, looked up by sample index."""
    outputs: dict[int, DetectorOutput] = field(default_factory=dict)

    def detect(self, scene: Scene, f: FeatureVector) -> DetectorOutput:
        try:
            return self.outputs[f.seed_index]
        except KeyError:
            raise MissingSample(f.seed_index) from None

    @property
    def has_activations(self) -> bool:
        return bool(self.outputs) and all(o.activations is not None for o in self.outputs.values())


def load_external_detections(path) -> dict[int, DetectorOutput]:
    out: dict[int, DetectorOutput] = {}
    k = None
    with open(path, encoding="utf-8") as fh:
        for rec_no, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                idx = int(rec["_seedIndex"])
                dets = []
                for d in rec.get("detections", []):
                    x0, y0, x1, y1 = (float(v) for v in d["box"])
                    if not (x0 < x1 and y0 < y1):
                        raise ValueError(f"malformed box {d['box']}")
                    conf = float(d.get("confidence", 1.0))
                    if not 0.0 <= conf <= 1.0:
                        raise ValueError(f"confidence {conf} outside [0, 1]")
                    dets.append(Detection(BoundingBox(x0, y0, x1, y1), conf))
                acts = rec.get("activations")
                if acts is not None:
                    acts = tuple(float(a) for a in acts)
                    if k is None:
                        k = len(acts)
                    elif len(acts) != k:
                        raise ValueError(f"activation length {len(acts)} differs from {k}")
            except DetectionsParseError:
                raise
            except (ValueError, KeyError, TypeError) as exc:
                raise DetectionsParseError(rec_no, str(exc)) from exc
            out[idx] = DetectorOutput(tuple(dets), acts)
    return out
