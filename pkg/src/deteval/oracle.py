"""Independent references and a seeded scenario generator.

Everything here exists to check the matching and metric code from a second
angle: an exhaustive maximum-matching bound, a straight-line re-transcription
of the IoU-prioritized matcher that shares no code with
:mod:`deteval.matching`, the greedy global-IoU variant some of the literature
calls "conventional" (provided for comparison, never substituted), and a
generator that fabricates ground truth plus noisy detections from a seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .annotations import (
    Annotation,
    Detection,
    DetectionSet,
    GroundTruthSet,
    ImageRecord,
    LabelMap,
)
from .errors import ConfigError, InstanceTooLargeError
from .geometry import BBox, InstanceMask, Polygon
from .matching import (
    ConfusionMatrix,
    MatchingResult,
    MatchPair,
    Thresholds,
    accumulate,
    match_conventional,
    match_modified,
    pair_iou,
)

MAX_ORACLE_ITEMS = 12


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs for one synthetic image set.

    Detections are derived from the ground truths: each is dropped with
    ``drop_rate``, its box and polygon are perturbed by up to ``jitter_px``,
    its class is swapped with ``class_swap_rate``, and clutter false positives
    appear per ground truth with ``clutter_rate``. Scores are uniform in
    [0.3, 1.0], so some detections fall below a 0.5 confidence threshold.
    """

    seed: int = 0
    image_count: int = 1
    gts_per_image: tuple[int, int] = (2, 6)
    drop_rate: float = 0.0
    jitter_px: float = 0.0
    class_swap_rate: float = 0.0
    clutter_rate: float = 0.0
    class_count: int = 3
    image_size: tuple[int, int] = (96, 96)

    def __post_init__(self):
        for name in ("drop_rate", "jitter_px", "class_swap_rate", "clutter_rate"):
            v = getattr(self, name)
            if v < 0 or (name != "jitter_px" and v > 1):
                raise ConfigError(f"{name} out of range: {v}")
        lo, hi = self.gts_per_image
        if lo < 0 or hi < lo:
            raise ConfigError(f"empty gts_per_image range: {self.gts_per_image}")
        if self.class_count < 1:
            raise ConfigError("class_count must be >= 1")
        if self.image_count < 1:
            raise ConfigError("image_count must be >= 1")


def generate(config: ScenarioConfig) -> tuple[GroundTruthSet, DetectionSet]:
    """Fabricate a ground-truth set and a noisy detection set from a seed."""
    rng = random.Random(config.seed)
    w, h = config.image_size
    labels = LabelMap((i, f"class{i}") for i in range(1, config.class_count + 1))
    other = {
        c: [o for o in labels.ids() if o != c] or [c] for c in labels.ids()
    }

    images, annotations, detections = [], [], []
    ann_id, det_id = 1, 0
    for img_idx in range(1, config.image_count + 1):
        images.append(ImageRecord(img_idx, f"synthetic_{img_idx:05d}.png", w, h))
        n_gts = rng.randint(*config.gts_per_image)
        for _ in range(n_gts):
            bw = rng.uniform(6, max(7, w / 3))
            bh = rng.uniform(6, max(7, h / 3))
            x = rng.uniform(0, w - bw)
            y = rng.uniform(0, h - bh)
            box = BBox(x, y, bw, bh)
            poly = _star_polygon(rng, box)
            mask = InstanceMask(polygons=[poly], canvas=(w, h))
            class_id = rng.randint(1, config.class_count)
            annotations.append(
                Annotation(ann_id, img_idx, class_id, box, mask=mask, area=box.area)
            )

            if rng.random() >= config.drop_rate:
                j = config.jitter_px
                dx, dy = rng.uniform(-j, j), rng.uniform(-j, j)
                dw = max(1.0, bw + rng.uniform(-j, j))
                dh = max(1.0, bh + rng.uniform(-j, j))
                dbox = BBox(
                    min(max(x + dx, 0.0), w - 1.0),
                    min(max(y + dy, 0.0), h - 1.0),
                    dw,
                    dh,
                )
                det_class = class_id
                if rng.random() < config.class_swap_rate:
                    det_class = rng.choice(other[class_id])
                dmask = InstanceMask(
                    polygons=[_fit_polygon(poly, box, dbox)], canvas=None
                )
                detections.append(
                    Detection(
                        det_id, img_idx, det_class, dbox,
                        score=rng.uniform(0.3, 1.0), mask=dmask,
                    )
                )
                det_id += 1

            if rng.random() < config.clutter_rate:
                # clutter clusters near objects, as detector noise does: a
                # shifted, resized copy of this ground truth's box
                off = config.jitter_px + bw / 3
                cw = max(2.0, bw * rng.uniform(0.6, 1.3))
                ch = max(2.0, bh * rng.uniform(0.6, 1.3))
                cbox = BBox(
                    min(max(x + rng.uniform(-off, off), 0.0), w - 1.0),
                    min(max(y + rng.uniform(-off, off), 0.0), h - 1.0),
                    cw,
                    ch,
                )
                cmask = InstanceMask(
                    polygons=[_star_polygon(rng, cbox)], canvas=None
                )
                detections.append(
                    Detection(
                        det_id, img_idx, rng.randint(1, config.class_count), cbox,
                        score=rng.uniform(0.3, 1.0), mask=cmask,
                    )
                )
                det_id += 1
            ann_id += 1

    return GroundTruthSet(images, labels, annotations), DetectionSet(labels, detections)


def _star_polygon(rng: random.Random, box: BBox) -> Polygon:
    """A simple (star-shaped) polygon inside the box."""
    cx, cy = box.x + box.w / 2, box.y + box.h / 2
    k = rng.randint(5, 9)
    angles = sorted(rng.uniform(0, 2 * np.pi) for _ in range(k))
    pts = []
    for a in angles:
        r = rng.uniform(0.55, 0.98)
        pts.append(
            (cx + np.cos(a) * r * box.w / 2, cy + np.sin(a) * r * box.h / 2)
        )
    return Polygon.from_points(pts)


def _fit_polygon(poly: Polygon, src: BBox, dst: BBox) -> Polygon:
    """Map a polygon from one box frame to another (shift plus stretch)."""
    sx = dst.w / src.w
    sy = dst.h / src.h
    return Polygon.from_points(
        (dst.x + (x - src.x) * sx, dst.y + (y - src.y) * sy)
        for x, y in poly.vertices
    )


# ---------------------------------------------------------------------------
# exhaustive maximum matching


def max_matching(
    gts, dets, iou_t: float, class_constrained: bool = False, mode: str = "boxes"
) -> int:
    """Size of a maximum injective pairing with IoU >= iou_t.

    Exact optimum via enumeration over assignments, memoized on the set of
    used detections; capped at 12 x 12 items for feasibility. With
    ``class_constrained`` only same-class pairs are admissible.
    """
    if len(gts) > MAX_ORACLE_ITEMS or len(dets) > MAX_ORACLE_ITEMS:
        raise InstanceTooLargeError(
            f"oracle capped at {MAX_ORACLE_ITEMS}x{MAX_ORACLE_ITEMS}, "
            f"got {len(gts)}x{len(dets)}"
        )
    edges = []
    for g in gts:
        mask = 0
        for j, d in enumerate(dets):
            if class_constrained and g.class_id != d.class_id:
                continue
            if pair_iou(g, d, mode) >= iou_t:
                mask |= 1 << j
        edges.append(mask)

    memo: dict[tuple[int, int], int] = {}

    def best(i: int, used: int) -> int:
        if i == len(edges):
            return 0
        key = (i, used)
        if key not in memo:
            score = best(i + 1, used)  # leave gt i unmatched
            free = edges[i] & ~used
            while free:
                bit = free & -free
                free ^= bit
                score = max(score, 1 + best(i + 1, used | bit))
            memo[key] = score
        return memo[key]

    return best(0, 0)


# ---------------------------------------------------------------------------
# independent transcription of the IoU-prioritized matcher


def reference_conventional(gts, dets, t: Thresholds) -> MatchingResult:
    """Straight-line re-implementation of the IoU-prioritized matcher.

    Shares no code with :func:`deteval.matching.match_conventional`; used for
    differential testing. Ties follow the same documented total order.
    """
    kept_dets = []
    for d in dets:
        if d.score >= t.confidence_threshold:
            kept_dets.append(d)

    rows = []  # (iou, score, det_id, gt_id, gt, det)
    for g in gts:
        for d in kept_dets:
            if t.geometry_mode == "masks" and g.mask is not None and d.mask is not None:
                iou = g.mask.iou(d.mask)
            else:
                gx1, gy1 = g.bbox.x, g.bbox.y
                gx2, gy2 = g.bbox.x + g.bbox.w, g.bbox.y + g.bbox.h
                dx1, dy1 = d.bbox.x, d.bbox.y
                dx2, dy2 = d.bbox.x + d.bbox.w, d.bbox.y + d.bbox.h
                iw = min(gx2, dx2) - max(gx1, dx1)
                ih = min(gy2, dy2) - max(gy1, dy1)
                inter = iw * ih if (iw > 0 and ih > 0) else 0.0
                area_g = (gx2 - gx1) * (gy2 - gy1)
                area_d = (dx2 - dx1) * (dy2 - dy1)
                inter = min(inter, area_g, area_d)
                union = area_g + area_d - inter
                iou = inter / union if union > 0 else 0.0
            if iou >= t.iou_threshold:
                rows.append((iou, d.score, d.det_id, g.ann_id, g, d))

    rows.sort(key=lambda r: (-r[0], -r[1], r[2], r[3]))

    taken_gt = set()
    per_gt_best = []
    for r in rows:
        if r[3] not in taken_gt:
            taken_gt.add(r[3])
            per_gt_best.append(r)

    per_gt_best.sort(key=lambda r: (-r[0], -r[1], r[2], r[3]))
    taken_det = set()
    final = []
    for r in per_gt_best:
        if r[2] not in taken_det:
            taken_det.add(r[2])
            final.append(r)

    matched_gt_ids = set()
    matched_det_ids = set()
    matched = []
    for iou, _score, det_id, gt_id, g, d in final:
        matched.append(MatchPair(g, d, iou, g.class_id == d.class_id))
        matched_gt_ids.add(gt_id)
        matched_det_ids.add(det_id)

    matched.sort(key=lambda p: (p.gt.ann_id, p.det.det_id))
    leftover_gts = tuple(g for g in gts if g.ann_id not in matched_gt_ids)
    leftover_dets = tuple(d for d in kept_dets if d.det_id not in matched_det_ids)
    return MatchingResult(tuple(matched), leftover_gts, leftover_dets)


def greedy_iou_matching(gts, dets, t: Thresholds) -> MatchingResult:
    """The global greedy variant: sort all over-threshold pairs by IoU and
    accept a pair when both endpoints are still free.

    Some write-ups call this "conventional"; it differs from the literal
    per-gt/per-det max filtering (which can discard pairs this one keeps), so
    it is provided under its own name and never substituted.
    """
    from .matching import iou_table  # shared table is fine; steps differ

    dets = [d for d in dets if d.score >= t.confidence_threshold]
    pairs = sorted(
        iou_table(gts, dets, t),
        key=lambda p: (-p.iou, -p.det.score, p.det.det_id, p.gt.ann_id),
    )
    used_g, used_d, matched = set(), set(), []
    for p in pairs:
        if p.gt.ann_id in used_g or p.det.det_id in used_d:
            continue
        used_g.add(p.gt.ann_id)
        used_d.add(p.det.det_id)
        matched.append(p)
    matched.sort(key=lambda p: (p.gt.ann_id, p.det.det_id))
    return MatchingResult(
        tuple(matched),
        tuple(g for g in gts if g.ann_id not in used_g),
        tuple(d for d in dets if d.det_id not in used_d),
    )


# ---------------------------------------------------------------------------
# conventional-vs-modified comparison


@dataclass
class DeltaStats:
    """Aggregate differences (modified minus conventional) over scenarios."""

    labels: LabelMap
    conventional: ConfusionMatrix
    modified: ConfusionMatrix
    scenario_count: int
    per_class: dict[int, tuple[int, int, int]] = field(default_factory=dict)
    diagonal_delta: int = 0

    @classmethod
    def from_matrices(cls, conv, mod, labels, scenario_count):
        stats = cls(labels, conv, mod, scenario_count)
        for cid in labels.ids():
            tp = mod.diagonal(cid) - conv.diagonal(cid)
            fp = (mod.col_sum(cid) - mod.diagonal(cid)) - (
                conv.col_sum(cid) - conv.diagonal(cid)
            )
            fn = mod.left_detections(cid) - conv.left_detections(cid)
            stats.per_class[cid] = (tp, fp, fn)
        stats.diagonal_delta = sum(v[0] for v in stats.per_class.values())
        return stats


def compare(configs, t: Thresholds) -> DeltaStats:
    """Run both matchers over every scenario and aggregate the deltas."""
    labels = None
    conv_total = mod_total = None
    count = 0
    for cfg in configs:
        gt_set, det_set = generate(cfg)
        if labels is None:
            labels = gt_set.label_map
            conv_total = ConfusionMatrix(labels)
            mod_total = ConfusionMatrix(labels)
        elif gt_set.label_map != labels:
            raise ConfigError("compare needs a uniform class_count across configs")
        dets_by_image = det_set.by_image()
        for img in gt_set.images:
            gts = gt_set.by_image().get(img.image_id, [])
            dets = dets_by_image.get(img.image_id, [])
            conv_total.counts += accumulate(
                [match_conventional(gts, dets, t)], labels
            ).counts
            mod_total.counts += accumulate(
                [match_modified(gts, dets, t)], labels
            ).counts
        count += 1
    if labels is None:
        raise ConfigError("compare needs at least one scenario config")
    return DeltaStats.from_matrices(conv_total, mod_total, labels, count)


def delta_table_csv(stats: DeltaStats) -> str:
    """Per-class comparison table: conventional and modified P/R side by
    side (column naming follows the usual per-class report headers) plus the
    raw count deltas."""
    from .metrics import precision_recall

    conv_pr = {m.class_id: m for m in precision_recall(stats.conventional)}
    mod_pr = {m.class_id: m for m in precision_recall(stats.modified)}
    lines = [
        "category,precision_@0.5IoU,recall_@0.5IoU,"
        "category,precision_@0.5IoU,recall_@0.5IoU,"
        "tp_delta,fp_delta,fn_delta"
    ]
    for cid, name in stats.labels.entries:
        c, m = conv_pr[cid], mod_pr[cid]
        tp, fp, fn = stats.per_class[cid]
        lines.append(
            f"{name},{c.precision_at_05:.4f},{c.recall_at_05:.4f},"
            f"{name},{m.precision_at_05:.4f},{m.recall_at_05:.4f},"
            f"{tp},{fp},{fn}"
        )
    return "\n".join(lines) + "\n"
