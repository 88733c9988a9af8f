"""Geometrically controlled wide-baseline pair sampling.

The sampler voxelizes a scene point cloud, precomputes which voxels each
camera can see (ray-traced occlusion on the voxel lattice), and then draws
source/target camera pairs whose viewing directions toward a shared voxel
differ by a controlled angle. Per-dataset pairing rules (mutual-fraction
pairing, view-angle weighting, frame-difference biasing) live here too.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

DEFAULT_ANGLE_BINS = (
    (0.0, math.pi / 6),
    (math.pi / 6, math.pi / 3),
    (math.pi / 3, math.pi / 2),
    (math.pi / 2, 2 * math.pi / 3),
)
DEFAULT_BIN_PROPORTIONS = (2 / 7, 2 / 7, 2 / 7, 1 / 7)


@dataclass
class VoxelGrid:
    origin: np.ndarray  # (3,) lattice corner, meters
    voxel_size: float
    dims: tuple  # (nx, ny, nz)
    occupancy: np.ndarray  # (nx, ny, nz) bool

    @property
    def n_voxels(self):
        return int(np.prod(self.dims))

    def flat_occupied(self):
        return np.flatnonzero(self.occupancy.reshape(-1))

    def voxel_center(self, flat_index):
        idx = np.unravel_index(flat_index, self.dims)
        return self.origin + (np.asarray(idx, dtype=np.float64).T + 0.5) * self.voxel_size

    def voxel_index_of(self, point):
        rel = (np.asarray(point, dtype=np.float64) - self.origin) / self.voxel_size
        return np.floor(rel).astype(np.int64)


def voxelize(points, voxel_size):
    """Occupancy lattice: a voxel is occupied iff at least one point falls in it."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.size == 0:
        raise ValueError("cannot voxelize an empty point cloud")
    if voxel_size <= 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    origin = np.floor(points.min(axis=0) / voxel_size) * voxel_size
    idx = np.floor((points - origin) / voxel_size).astype(np.int64)
    dims = tuple(int(d) for d in idx.max(axis=0) + 1)
    occupancy = np.zeros(dims, dtype=bool)
    occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(origin, float(voxel_size), dims, occupancy)


def _ray_blocked(grid, start, end):
    """3-D DDA from start to end; True if an occupied voxel lies strictly before end's voxel."""
    vs = grid.voxel_size
    cur = np.floor((start - grid.origin) / vs).astype(np.int64)
    last = np.floor((end - grid.origin) / vs).astype(np.int64)
    if np.array_equal(cur, last):
        return False
    d = end - start
    step = np.sign(d).astype(np.int64)
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for a in range(3):
        if d[a] != 0:
            boundary = grid.origin[a] + (cur[a] + (step[a] > 0)) * vs
            t_max[a] = (boundary - start[a]) / d[a]
            t_delta[a] = vs / abs(d[a])
    nx, ny, nz = grid.dims
    occ = grid.occupancy
    for _ in range(int(np.sum(np.abs(last - cur))) + 3):
        if 0 <= cur[0] < nx and 0 <= cur[1] < ny and 0 <= cur[2] < nz and occ[cur[0], cur[1], cur[2]]:
            return True
        a = int(np.argmin(t_max))
        cur[a] += step[a]
        t_max[a] += t_delta[a]
        if np.array_equal(cur, last):
            return False
    return False


@dataclass
class VisibilityTable:
    visible: np.ndarray  # (n_cameras, n_voxels) bool over flat voxel indices
    grid: VoxelGrid

    def voxels_seen_by(self, camera_index):
        return np.flatnonzero(self.visible[camera_index])

    def cameras_seeing(self, flat_voxel):
        return np.flatnonzero(self.visible[:, flat_voxel])


def compute_visibility(cameras, grid, require_in_image=False):
    """Which occupied voxels each camera sees.

    A voxel is visible when its center lies in front of the camera (and,
    optionally, projects inside the image) and the camera-to-center ray
    crosses no occupied voxel before reaching it.
    """
    occupied = grid.flat_occupied()
    if occupied.size == 0:
        raise ValueError("voxel grid has no occupied voxels")
    centers = grid.voxel_center(occupied)
    visible = np.zeros((len(cameras), grid.n_voxels), dtype=bool)
    for ci, (pose, intr) in enumerate(cameras):
        cam_center = pose.translation
        rel = centers - cam_center
        camframe = rel @ pose.rotation  # world -> camera (columns of R are camera axes)
        in_front = camframe[:, 2] > 0
        if require_in_image:
            with np.errstate(divide="ignore", invalid="ignore"):
                u = intr.fx * camframe[:, 0] / camframe[:, 2] + intr.cx
                v = intr.fy * camframe[:, 1] / camframe[:, 2] + intr.cy
            in_front &= (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
        for k in np.flatnonzero(in_front):
            if not _ray_blocked(grid, cam_center, centers[k]):
                visible[ci, occupied[k]] = True
    return VisibilityTable(visible, grid)


@dataclass(frozen=True)
class SamplerConfig:
    angle_bins: tuple = DEFAULT_ANGLE_BINS
    bin_proportions: tuple = DEFAULT_BIN_PROPORTIONS
    roll_sigma: float = 0.1
    perturb_sigma: float = 0.1
    seed: int = 0
    max_attempts: int = 200

    def __post_init__(self):
        if len(self.angle_bins) != len(self.bin_proportions):
            raise ValueError("one proportion per angle bin required")
        if abs(sum(self.bin_proportions) - 1.0) > 1e-9:
            raise ValueError(f"bin proportions must sum to 1, got {sum(self.bin_proportions)}")
        bins = sorted(self.angle_bins)
        for (alo, ahi), (blo, bhi) in zip(bins, bins[1:]):
            if ahi > blo:
                raise ValueError(f"angle bins overlap: {(alo, ahi)} and {(blo, bhi)}")


@dataclass
class PairCandidate:
    src_camera: int
    tgt_camera: int
    src_center: np.ndarray
    tgt_center: np.ndarray
    src_dir: np.ndarray  # unit, toward the shared voxel, pre-perturbation
    tgt_dir: np.ndarray
    roll_src: float
    roll_tgt: float
    perturb_src: np.ndarray
    perturb_tgt: np.ndarray
    target_voxel: int
    axis_angle: float  # controlled angle, before center perturbation
    axis_angle_perturbed: float
    bin_index: int


def _unit(v):
    n = math.sqrt(float(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
    return v / n if n > 0 else None


def _angle_between(a, b):
    d = float(np.clip(np.dot(a, b), -1.0, 1.0))
    return math.acos(d)


def sample_pair(config, cameras, vis, rng, bin_index=None):
    """Draw one geometrically controlled pair, or None after max_attempts.

    The source camera is uniform over cameras, the target voxel uniform
    over voxels the source sees, and target cameras are filtered to the
    requested viewing-angle bin around that voxel. Rolls are N(0, sigma)
    and centers get an N(0, sigma I3) perturbation recorded separately.
    """
    if not vis.visible.any():
        raise ValueError("no camera sees any voxel; cannot sample pairs")
    centers = np.asarray([pose.translation for pose, _ in cameras])
    if bin_index is None:
        bin_index = int(rng.choice(len(config.angle_bins), p=config.bin_proportions))
    lo, hi = config.angle_bins[bin_index]

    for _ in range(config.max_attempts):
        src = int(rng.integers(len(cameras)))
        voxels = vis.voxels_seen_by(src)
        if voxels.size == 0:
            continue
        voxel = int(voxels[rng.integers(voxels.size)])
        # grid geometry comes through the visibility table's companion grid
        vox_center = vis.grid.voxel_center(voxel)
        src_dir = _unit(vox_center - centers[src])
        if src_dir is None:
            continue
        cands = []
        for tgt in vis.cameras_seeing(voxel):
            tgt_dir = _unit(vox_center - centers[tgt])
            if tgt_dir is None:
                continue
            angle = _angle_between(src_dir, tgt_dir)
            if lo <= angle < hi:
                cands.append((int(tgt), tgt_dir, angle))
        if not cands:
            continue
        tgt, tgt_dir, angle = cands[int(rng.integers(len(cands)))]
        roll_src = float(rng.normal(0.0, config.roll_sigma))
        roll_tgt = float(rng.normal(0.0, config.roll_sigma))
        perturb_src = rng.normal(0.0, config.perturb_sigma, size=3)
        perturb_tgt = rng.normal(0.0, config.perturb_sigma, size=3)
        pd_src = _unit(vox_center - (centers[src] + perturb_src))
        pd_tgt = _unit(vox_center - (centers[tgt] + perturb_tgt))
        perturbed_angle = _angle_between(pd_src, pd_tgt) if pd_src is not None and pd_tgt is not None else float("nan")
        return PairCandidate(
            src_camera=src,
            tgt_camera=tgt,
            src_center=centers[src].copy(),
            tgt_center=centers[tgt].copy(),
            src_dir=src_dir,
            tgt_dir=tgt_dir,
            roll_src=roll_src,
            roll_tgt=roll_tgt,
            perturb_src=perturb_src,
            perturb_tgt=perturb_tgt,
            target_voxel=voxel,
            axis_angle=angle,
            axis_angle_perturbed=perturbed_angle,
            bin_index=bin_index,
        )
    return None


def sample_manifest(config, cameras, vis, n_pairs, jobs=1):
    """Sample a deterministic manifest of pair candidates.

    Every slot gets its own RNG stream spawned from the seed and a bin from
    the proportional plan, so the result is byte-identical for any `jobs`.
    Rejected slots are dropped.
    """
    plan = ta_wb_bin_plan(n_pairs, config.bin_proportions)
    bins = [b for b, count in enumerate(plan) for _ in range(count)]
    streams = np.random.SeedSequence(config.seed).spawn(n_pairs)

    def draw(i):
        rng = np.random.Generator(np.random.PCG64(streams[i]))
        return sample_pair(config, cameras, vis, rng, bin_index=bins[i])

    if jobs <= 1:
        results = [draw(i) for i in range(n_pairs)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(draw, range(n_pairs)))
    return [c for c in results if c is not None]


def ta_wb_bin_plan(total, proportions=DEFAULT_BIN_PROPORTIONS):
    """Largest-remainder apportionment of pair counts over the angle bins."""
    quotas = [total * p for p in proportions]
    counts = [int(math.floor(q)) for q in quotas]
    remainder = total - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return tuple(counts)


def kubric_view_weight(alpha):
    """Viewpoint-difference weight: 1+a below pi/3, flat to pi/2, then zero."""
    if not 0 <= alpha <= math.pi:
        raise ValueError(f"angle must be in [0, pi], got {alpha}")
    if alpha < math.pi / 3:
        return 1.0 + alpha
    if alpha < math.pi / 2:
        return 1.0 + math.pi / 3
    return 0.0


def kubric_frame_diff_sampler(rng, size=None, max_diff=40):
    """Frame difference in [0, max_diff], linearly biased so P(max) = 2 P(0)."""
    diffs = np.arange(max_diff + 1)
    weights = 1.0 + diffs / max_diff
    p = weights / weights.sum()
    out = rng.choice(max_diff + 1, size=size, p=p)
    return int(out) if size is None else out


def kubric_frame_pair(rng, n_frames=60, max_diff=40):
    """(start, end) frame indices: biased difference, uniform valid start."""
    d = kubric_frame_diff_sampler(rng, max_diff=max_diff)
    d = min(d, n_frames - 1)
    start = int(rng.integers(n_frames - d))
    return start, start + d


def scannetpp_pairing(covis_matrix, min_mutual=0.25):
    """Unordered pairs whose mutual (min of both directions) fraction exceeds the bar."""
    m = np.asarray(covis_matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"covisibility matrix must be square, got {m.shape}")
    n = m.shape[0]
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if min(m[i, j], m[j, i]) > min_mutual:
                pairs.append((i, j))
    return pairs
