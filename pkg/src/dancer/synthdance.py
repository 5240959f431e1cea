"""Procedural single-dancer clips with pixel-aligned pose modalities.

A dancer is a 2D articulated figure: 13 joints connected by 12 bones, each
bone drawn as a capsule.  Motion is a band-limited sum of sinusoids per joint
angle, so trajectories are smooth and periodic.  Rendering produces the RGB
frame together with the four conditioning maps (skeleton, body-part
segmentation, depth, surface normal), all quantized to the 8-bit grid so that
PNG round trips are exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

JOINTS = (
    "root", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_knee", "l_ankle",
    "r_knee", "r_ankle",
)  # fmt: skip
NUM_JOINTS = len(JOINTS)

# (parent joint, child joint); bone index == body part index
BONES = (
    (0, 1),   # torso
    (1, 2),   # head
    (1, 3),   # left clavicle
    (3, 4),   # left upper arm
    (4, 5),   # left forearm
    (1, 6),   # right clavicle
    (6, 7),   # right upper arm
    (7, 8),   # right forearm
    (0, 9),   # left thigh
    (9, 10),  # left shin
    (0, 11),  # right thigh
    (11, 12), # right shin
)  # fmt: skip
PART_NAMES = (
    "torso", "head", "l_clavicle", "l_upper_arm", "l_forearm",
    "r_clavicle", "r_upper_arm", "r_forearm",
    "l_thigh", "l_shin", "r_thigh", "r_shin",
)  # fmt: skip
NUM_BONES = len(BONES)
# parent bone of each bone (-1: attached to the root frame)
PARENT_BONE = (-1, 0, 0, 2, 3, 0, 5, 6, 0, 8, 0, 10)
HEAD_BONE = 1

# rest angle of each bone relative to its parent bone, and motion amplitude
REST_ANGLE = np.array(
    [0.0, 0.0, math.pi / 2, math.pi / 2 - 0.85, -0.4, -math.pi / 2, -(math.pi / 2 - 0.85), 0.4,
     math.pi - 0.3, 0.0, math.pi + 0.3, 0.0]
)  # fmt: skip
AMPLITUDE = np.array([0.3, 0.35, 0.1, 0.9, 0.8, 0.1, 0.9, 0.8, 0.3, 0.45, 0.3, 0.45])
TRANSLATION_AMPLITUDE = 2.0  # pixels at the 64 px reference canvas
HARMONICS = 3
PERIOD = 1.0
FPS = 24.0
MARGIN = 2.0

# fixed per-part colors for the segmentation map and per-bone skeleton colors
SEG_COLORS = np.array(
    [[230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48], [145, 30, 180],
     [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212], [0, 128, 128], [170, 110, 40]],
    dtype=np.float64,
) / 255.0  # fmt: skip
SKE_COLORS = np.array(
    [[255, 0, 0], [255, 85, 0], [255, 170, 0], [255, 255, 0], [170, 255, 0], [85, 255, 0],
     [0, 255, 85], [0, 255, 170], [0, 170, 255], [0, 85, 255], [85, 0, 255], [170, 0, 255]],
    dtype=np.float64,
) / 255.0  # fmt: skip
SKE_LINE_RADIUS = 0.8


class CanvasError(ValueError):
    """The figure does not fit inside the requested canvas."""


@dataclass(frozen=True)
class DancerSpec:
    bone_lengths: np.ndarray  # (12,) pixels
    radii: np.ndarray  # (12,) capsule radii in pixels, head entry is the head disk
    limb_colors: np.ndarray  # (12, 3)
    background: np.ndarray  # (2, 3) wall and floor colors
    floor_row: int
    root_anchor: np.ndarray  # (2,) root position at zero translation, pixels (x, y)
    depth_order: tuple[int, ...]  # painter's order, far to near
    scale: float
    size: int
    seed: int

    def __eq__(self, other):
        if not isinstance(other, DancerSpec):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in self.__dataclass_fields__
        )

    __hash__ = None


@dataclass
class JointAngles:
    angles: np.ndarray  # (12,) radians relative to the parent bone
    translation: np.ndarray  # (2,) pixels


@dataclass
class PoseMaps:
    """Pixel-aligned pose modalities; arrays are (H, W, C) or (N, H, W, C)."""

    ske: np.ndarray
    seg: np.ndarray
    dep: np.ndarray
    norm: np.ndarray

    MODALITIES = ("ske", "seg", "dep", "norm")
    CHANNELS = {"ske": 3, "seg": 3, "dep": 1, "norm": 3}

    def __getitem__(self, i) -> "PoseMaps":
        return PoseMaps(*(getattr(self, m)[i] for m in self.MODALITIES))

    def __len__(self) -> int:
        return len(self.ske)

    @classmethod
    def stack(cls, maps: list["PoseMaps"]) -> "PoseMaps":
        return cls(*(np.stack([getattr(p, m) for p in maps]) for m in cls.MODALITIES))


@dataclass
class ClipSample:
    reference: np.ndarray  # (H, W, 3)
    frames: np.ndarray  # (N, H, W, 3)
    poses: PoseMaps  # stacked (N, H, W, C)
    keypoints: np.ndarray  # (N, 13, 2) recorded, possibly jittered
    clean_keypoints: np.ndarray  # (N, 13, 2)
    seed: int
    n_frames: int
    size: int
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)


def quantize(x: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit intensity grid used by the PNG files."""
    return (np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


# ---------------------------------------------------------------------------
# figure and motion
# ---------------------------------------------------------------------------


def _angle_interval_box(lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Bounding box of the unit direction (sin a, -cos a) for a in [lo, hi]."""
    cands = [lo, hi]
    k0 = math.ceil(lo / (math.pi / 2))
    k = k0
    while k * math.pi / 2 <= hi:
        cands.append(k * math.pi / 2)
        k += 1
    pts = np.array([[math.sin(a), -math.cos(a)] for a in cands])
    return pts.min(0), pts.max(0)


def _reach_box(lengths: np.ndarray, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Conservative box (relative to the root) covering every reachable pose."""
    lo_ang = np.zeros(NUM_BONES)
    hi_ang = np.zeros(NUM_BONES)
    lo_pos = np.zeros((NUM_JOINTS, 2))
    hi_pos = np.zeros((NUM_JOINTS, 2))
    lo_all = np.zeros(2)
    hi_all = np.zeros(2)
    for b, (pj, cj) in enumerate(BONES):
        parent = PARENT_BONE[b]
        base_lo = lo_ang[parent] if parent >= 0 else 0.0
        base_hi = hi_ang[parent] if parent >= 0 else 0.0
        lo_ang[b] = base_lo + REST_ANGLE[b] - AMPLITUDE[b]
        hi_ang[b] = base_hi + REST_ANGLE[b] + AMPLITUDE[b]
        dlo, dhi = _angle_interval_box(lo_ang[b], hi_ang[b])
        lo_pos[cj] = lo_pos[pj] + lengths[b] * dlo
        hi_pos[cj] = hi_pos[pj] + lengths[b] * dhi
        lo_all = np.minimum(lo_all, np.minimum(lo_pos[pj], lo_pos[cj]) - radii[b])
        hi_all = np.maximum(hi_all, np.maximum(hi_pos[pj], hi_pos[cj]) + radii[b])
    return lo_all, hi_all


def make_figure(seed: int, size: int = 64) -> DancerSpec:
    """Deterministic figure proportions, colors and placement for ``seed``."""
    rng = np.random.default_rng([seed, 0x5EED])
    torso = rng.uniform(11, 15)
    neck = rng.uniform(4.5, 6.0)
    clav = rng.uniform(3.5, 5.0)
    upper = rng.uniform(7.0, 9.5)
    fore = rng.uniform(6.5, 9.0)
    thigh = rng.uniform(9.0, 12.0)
    shin = rng.uniform(8.5, 11.5)
    lengths = np.array([torso, neck, clav, upper, fore, clav, upper, fore, thigh, shin, thigh, shin])
    limb_r = rng.uniform(2.0, 2.8)
    leg_r = rng.uniform(2.3, 3.2)
    radii = np.array(
        [rng.uniform(3.8, 5.0), rng.uniform(4.0, 5.2), limb_r + 0.6, limb_r, limb_r * 0.9,
         limb_r + 0.6, limb_r, limb_r * 0.9, leg_r, leg_r * 0.9, leg_r, leg_r * 0.9]
    )  # fmt: skip

    skin = rng.uniform([0.45, 0.3, 0.2], [0.95, 0.8, 0.7])
    shirt = rng.uniform(0.0, 1.0, 3)
    pants = rng.uniform(0.0, 1.0, 3)
    limb_colors = np.stack(
        [shirt, skin, shirt, shirt, skin, shirt, shirt, skin, pants, pants, pants, pants]
    )
    limb_colors = np.clip(limb_colors + rng.normal(0, 0.03, limb_colors.shape), 0, 1)
    while True:
        background = rng.uniform(0.0, 1.0, (2, 3))
        # keep the figure distinguishable from the backdrop
        if np.min(np.abs(limb_colors[:, None, :] - background[None]).sum(-1)) > 0.35:
            break

    size_scale = size / 64.0
    lo, hi = _reach_box(lengths, radii)
    pad = MARGIN + 1.0 + TRANSLATION_AMPLITUDE
    scale = (64.0 - 2 * pad) / float(np.max(hi - lo)) * size_scale
    lengths = lengths * scale
    radii = radii * scale
    lo, hi = lo * scale, hi * scale
    anchor = size / 2.0 - (lo + hi) / 2.0
    depth_order = tuple(int(i) for i in _depth_order(bool(rng.integers(2))))
    floor_row = int(rng.integers(int(size * 0.55), int(size * 0.85)))
    return DancerSpec(
        bone_lengths=lengths,
        radii=radii,
        limb_colors=limb_colors,
        background=background,
        floor_row=floor_row,
        root_anchor=anchor,
        depth_order=depth_order,
        scale=float(scale),
        size=size,
        seed=int(seed),
    )


def _depth_order(left_front: bool) -> np.ndarray:
    back_arm, front_arm = ([5, 6, 7], [2, 3, 4]) if left_front else ([2, 3, 4], [5, 6, 7])
    back_leg, front_leg = ([10, 11], [8, 9]) if left_front else ([8, 9], [10, 11])
    return np.array(back_arm + back_leg + [0] + front_leg + [1] + front_arm)


@dataclass(frozen=True)
class _Motion:
    amps: np.ndarray  # (12, H)
    phases: np.ndarray  # (12, H)
    trans_amps: np.ndarray  # (2, H)
    trans_phases: np.ndarray  # (2, H)


def _motion(motion_seed: int) -> _Motion:
    rng = np.random.default_rng([motion_seed, 0xDA7CE])
    w = rng.uniform(0.2, 1.0, (NUM_BONES, HARMONICS)) / np.arange(1, HARMONICS + 1)
    w = w / w.sum(1, keepdims=True) * rng.uniform(0.6, 1.0, (NUM_BONES, 1))
    tw = rng.uniform(0.2, 1.0, (2, HARMONICS)) / np.arange(1, HARMONICS + 1)
    tw = tw / tw.sum(1, keepdims=True)
    return _Motion(
        amps=w * AMPLITUDE[:, None],
        phases=rng.uniform(0, 2 * math.pi, (NUM_BONES, HARMONICS)),
        trans_amps=tw * TRANSLATION_AMPLITUDE,
        trans_phases=rng.uniform(0, 2 * math.pi, (2, HARMONICS)),
    )


def pose_at(spec: DancerSpec, time: float, motion_seed: int) -> JointAngles:
    """Joint angles at ``time``; periodic with period ``PERIOD``."""
    if time < 0:
        raise ValueError(f"time must be >= 0, got {time}")
    m = _motion(motion_seed)
    omega = 2 * math.pi * np.arange(1, HARMONICS + 1) / PERIOD
    angles = REST_ANGLE + (m.amps * np.sin(omega * time + m.phases)).sum(1)
    trans = (m.trans_amps * np.sin(omega * time + m.trans_phases)).sum(1) * spec.size / 64.0
    return JointAngles(angles=angles, translation=trans)


def max_angular_velocity() -> np.ndarray:
    """Per-bone upper bound on |d(angle)/dt| over all motion seeds."""
    return AMPLITUDE * 2 * math.pi * HARMONICS / PERIOD


def forward_kinematics(spec: DancerSpec, angles: JointAngles) -> np.ndarray:
    """Joint positions (13, 2) in pixel (x, y) coordinates."""
    pos = np.zeros((NUM_JOINTS, 2))
    pos[0] = spec.root_anchor + angles.translation
    absolute = np.zeros(NUM_BONES)
    for b, (pj, cj) in enumerate(BONES):
        parent = PARENT_BONE[b]
        absolute[b] = (absolute[parent] if parent >= 0 else 0.0) + angles.angles[b]
        a = absolute[b]
        pos[cj] = pos[pj] + spec.bone_lengths[b] * np.array([math.sin(a), -math.cos(a)])
    return pos


def smooth_motion_bound(spec: DancerSpec, dt: float = 1.0 / FPS) -> float:
    """Upper bound on the L2 norm of a keypoint's second difference at spacing ``dt``.

    Each bone vector L(sin a, -cos a) has second derivative of norm at most
    L(|a''| + a'^2); summed along the chain from the root, plus the root
    translation acceleration.
    """
    omega = 2 * math.pi * np.arange(1, HARMONICS + 1) / PERIOD
    vel = AMPLITUDE * omega.max()
    acc = AMPLITUDE * omega.max() ** 2
    abs_vel = np.zeros(NUM_BONES)
    abs_acc = np.zeros(NUM_BONES)
    joint_acc = np.zeros(NUM_JOINTS)
    joint_acc[0] = math.sqrt(2) * TRANSLATION_AMPLITUDE * spec.size / 64.0 * omega.max() ** 2
    for b, (pj, cj) in enumerate(BONES):
        parent = PARENT_BONE[b]
        abs_vel[b] = (abs_vel[parent] if parent >= 0 else 0.0) + vel[b]
        abs_acc[b] = (abs_acc[parent] if parent >= 0 else 0.0) + acc[b]
        joint_acc[cj] = joint_acc[pj] + spec.bone_lengths[b] * (abs_acc[b] + abs_vel[b] ** 2)
    return float(joint_acc.max() * dt**2)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def _segment_geometry(size: int, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance from each pixel center to segment ab and the offset vector."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    p = np.stack([xs, ys], -1)
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros((size, size)) if denom == 0 else np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    off = p - closest
    return np.sqrt((off**2).sum(-1)), off


def _part_segments(spec: DancerSpec, kp: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, float]]:
    segs = []
    for b, (pj, cj) in enumerate(BONES):
        if b == HEAD_BONE:
            segs.append((kp[cj], kp[cj], spec.radii[b]))
        else:
            segs.append((kp[pj], kp[cj], spec.radii[b]))
    return segs


def render_skeleton(keypoints: np.ndarray, size: int) -> np.ndarray:
    """Color-coded bone line drawing (H, W, 3) from joint positions."""
    out = np.zeros((size, size, 3))
    for b, (pj, cj) in enumerate(BONES):
        d, _ = _segment_geometry(size, np.asarray(keypoints[pj], float), np.asarray(keypoints[cj], float))
        alpha = np.clip(SKE_LINE_RADIUS + 0.5 - d, 0.0, 1.0)[..., None]
        out = alpha * SKE_COLORS[b] + (1 - alpha) * out
    return quantize(out)


def _check_fits(spec: DancerSpec, kp: np.ndarray, size: int) -> None:
    scale = size / spec.size
    for a, b, r in _part_segments(spec, kp):
        lo = np.minimum(a, b) - r * scale
        hi = np.maximum(a, b) + r * scale
        if lo.min() < 0 or hi.max() > size - 1:
            raise CanvasError(f"figure extent [{lo}, {hi}] leaves the {size}x{size} canvas")


def render_frame(
    spec: DancerSpec, angles: JointAngles, size: int | None = None
) -> tuple[np.ndarray, PoseMaps, np.ndarray]:
    """Rasterize one pose into (frame, pose maps, keypoints)."""
    size = size or spec.size
    kp = forward_kinematics(spec, angles) * (size / spec.size)
    _check_fits(spec, kp, size)
    scale = size / spec.size

    frame = np.empty((size, size, 3))
    frame[: int(spec.floor_row * scale)] = spec.background[0]
    frame[int(spec.floor_row * scale) :] = spec.background[1]
    seg = np.zeros((size, size, 3))
    dep = np.zeros((size, size, 1))
    norm = np.zeros((size, size, 3))

    segs = _part_segments(spec, kp)
    n_parts = len(spec.depth_order)
    for rank, part in enumerate(spec.depth_order):
        a, b, r = segs[part]
        r = r * scale
        d, off = _segment_geometry(size, a, b)
        alpha = np.clip(r + 0.5 - d, 0.0, 1.0)[..., None]
        frame = alpha * spec.limb_colors[part] + (1 - alpha) * frame
        inside = d <= r
        seg[inside] = SEG_COLORS[part]
        dep[inside] = (rank + 1) / n_parts
        u = off[inside] / r
        nz = np.sqrt(np.clip(1.0 - (u**2).sum(-1), 0.0, 1.0))
        norm[inside] = (np.concatenate([u, nz[:, None]], -1) + 1.0) / 2.0

    maps = PoseMaps(ske=render_skeleton(kp, size), seg=quantize(seg), dep=quantize(dep), norm=quantize(norm))
    return quantize(frame), maps, kp


def decode_normals(norm_map: np.ndarray) -> np.ndarray:
    return norm_map.astype(np.float64) * 2.0 - 1.0


# ---------------------------------------------------------------------------
# clips
# ---------------------------------------------------------------------------


def make_clip(seed: int, N: int = 8, size: int = 64, jitter_amplitude: float = 0.0) -> ClipSample:
    """An ``N``-frame clip of one dancer plus a reference image at an independent pose.

    Jitter is i.i.d. Gaussian noise (std ``jitter_amplitude`` pixels per
    coordinate) on the recorded keypoint trajectory only; frames and the
    stored pose maps show the clean motion.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if jitter_amplitude < 0:
        raise ValueError("jitter_amplitude must be >= 0")
    spec = make_figure(seed, size)
    rng = np.random.default_rng([seed, 0xC11])
    motion_seed = int(rng.integers(2**62))
    t0 = float(rng.uniform(0, PERIOD))
    ref_seed = int(rng.integers(2**62))
    t_ref = float(rng.uniform(0, PERIOD))

    frames, maps, kps = [], [], []
    for i in range(N):
        f, m, kp = render_frame(spec, pose_at(spec, t0 + i / FPS, motion_seed), size)
        frames.append(f)
        maps.append(m)
        kps.append(kp)
    reference, _, _ = render_frame(spec, pose_at(spec, t_ref, ref_seed), size)
    clean = np.stack(kps)

    noise_rng = np.random.default_rng([seed, 0x717])
    recorded = clean + jitter_amplitude * noise_rng.standard_normal(clean.shape)
    recorded = np.clip(recorded, 0.0, size - 1.0)
    return ClipSample(
        reference=reference,
        frames=np.stack(frames),
        poses=PoseMaps.stack(maps),
        keypoints=recorded,
        clean_keypoints=clean,
        seed=int(seed),
        n_frames=N,
        size=size,
        jitter=float(jitter_amplitude),
    )


def second_difference(traj: np.ndarray) -> float:
    """Mean L2 norm of the per-keypoint second difference of a (T, J, 2) trajectory."""
    if len(traj) < 3:
        return 0.0
    dd = traj[2:] - 2 * traj[1:-1] + traj[:-2]
    return float(np.sqrt((dd**2).sum(-1)).mean())


# ---------------------------------------------------------------------------
# dataset directory I/O
# ---------------------------------------------------------------------------


def _save_png(path: Path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    PILImage.fromarray(arr).save(path)


def load_png(path: str | Path, channels: int | None = None) -> np.ndarray:
    """Load an 8-bit PNG as float32 in [0, 1] with shape (H, W, C)."""
    with PILImage.open(path) as im:
        if channels == 1:
            im = im.convert("L")
        elif channels == 3:
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def save_clip(clip: ClipSample, root: str | Path) -> Path:
    root = Path(root)
    for sub in ("frames", "pose/ske", "pose/seg", "pose/dep", "pose/norm"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    _save_png(root / "ref.png", clip.reference)
    for i in range(clip.n_frames):
        name = f"{i:04d}.png"
        _save_png(root / "frames" / name, clip.frames[i])
        for m in PoseMaps.MODALITIES:
            _save_png(root / "pose" / m / name, getattr(clip.poses, m)[i])
    meta = {
        "seed": clip.seed,
        "N": clip.n_frames,
        "size": clip.size,
        "jitter": clip.jitter,
        "keypoints": clip.keypoints.tolist(),
        "clean_keypoints": clip.clean_keypoints.tolist(),
        **clip.meta,
    }
    (root / "meta.json").write_text(json.dumps(meta))
    return root


def load_clip(root: str | Path) -> ClipSample:
    root = Path(root)
    meta = json.loads((root / "meta.json").read_text())
    names = sorted(p.name for p in (root / "frames").glob("*.png"))
    if not names:
        raise FileNotFoundError(f"no frames under {root / 'frames'}")
    frames = np.stack([load_png(root / "frames" / n, 3) for n in names])
    maps = {}
    for m in PoseMaps.MODALITIES:
        files = [root / "pose" / m / n for n in names]
        missing = [f for f in files if not f.exists()]
        if missing:
            raise FileNotFoundError(f"modality '{m}' missing {missing[0]}")
        maps[m] = np.stack([load_png(f, PoseMaps.CHANNELS[m]) for f in files])
    kp = np.asarray(meta.get("keypoints", np.zeros((len(names), NUM_JOINTS, 2))), dtype=np.float64)
    clean = np.asarray(meta.get("clean_keypoints", kp), dtype=np.float64)
    extra = {k: v for k, v in meta.items() if k not in {"seed", "N", "size", "jitter", "keypoints", "clean_keypoints"}}
    return ClipSample(
        reference=load_png(root / "ref.png", 3),
        frames=frames,
        poses=PoseMaps(**maps),
        keypoints=kp,
        clean_keypoints=clean,
        seed=int(meta.get("seed", -1)),
        n_frames=len(names),
        size=frames.shape[1],
        jitter=float(meta.get("jitter", 0.0)),
        meta=extra,
    )


def write_dataset(root: str | Path, seeds: list[int], N: int | list[int] = 8, size: int = 64, jitter: float = 0.0) -> Path:
    """Write clips and a ``manifest.json`` listing everything needed to regenerate them."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lengths = [N] * len(seeds) if isinstance(N, int) else list(N)
    entries = []
    for k, (seed, n) in enumerate(zip(seeds, lengths)):
        clip_id = f"clip_{k:05d}"
        save_clip(make_clip(seed, n, size, jitter), root / clip_id)
        entries.append({"clip_id": clip_id, "seed": int(seed), "N": int(n), "size": size, "jitter": jitter})
    (root / "manifest.json").write_text(json.dumps({"clips": entries}, indent=1))
    return root


def regenerate_from_manifest(manifest: str | Path, out_root: str | Path) -> Path:
    entries = json.loads(Path(manifest).read_text())["clips"]
    out_root = Path(out_root)
    for e in entries:
        save_clip(make_clip(e["seed"], e["N"], e["size"], e["jitter"]), out_root / e["clip_id"])
    (out_root / "manifest.json").write_text(Path(manifest).read_text())
    return out_root


def list_clips(root: str | Path) -> list[Path]:
    return sorted(p for p in Path(root).iterdir() if (p / "meta.json").exists())
