"""Dataset generation, windowing and train/test splitting.

The base dataset is 5 input signals x 8 damping values, 10 s each at
1 kHz (10,001 samples), windowed into 7,001 overlapping 3-second pairs
per trajectory (280,040 total). The extended dataset adds step inputs of
magnitude -1, +10 and -10 (64 trajectories, 448,064 windows).

Windows are stored as (trajectory, offset) references; trajectories are
persisted once in the binary tensor container and the manifest is JSON.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dampid import sim, tensorio
from dampid.features import StftConfig

ZETA_VALUES = tuple(round(0.1 * i, 1) for i in range(1, 9))

BASE_INPUTS = (
    sim.Step(1.0),
    sim.Ramp(1.0),
    sim.Sine(10.0, 0.5),
    sim.Sine(10.0, 1.0),
    sim.Sine(10.0, 2.0),
)
EXTENDED_EXTRA_INPUTS = (sim.Step(-1.0), sim.Step(10.0), sim.Step(-10.0))

DEFAULT_FS = 1000.0
DEFAULT_DURATION_S = 10.0
DEFAULT_WINDOW_LEN = 3001
DEFAULT_NOISE_SIGMA = 0.01


def derive_seed(master_seed: int, purpose: str) -> int:
    """Stable per-purpose seed derived from the master seed."""
    digest = hashlib.sha256(f"{master_seed}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def window_count(traj_len: int, window_len: int) -> int:
    """Number of maximally-overlapping windows in a trajectory."""
    if traj_len < window_len:
        raise ValueError(f"trajectory length {traj_len} < window length {window_len}")
    return traj_len - window_len + 1


@dataclass(frozen=True)
class TrajectoryEntry:
    input_label: str
    zeta: float
    path: str  # relative to the manifest directory
    length: int
    noise_seed: int


@dataclass
class DatasetManifest:
    fs: float
    duration_s: float
    zetas: list[float]
    inputs: list[str]
    window_len: int
    noise_sigma: float
    master_seed: int
    trajectories: list[TrajectoryEntry]
    stft: StftConfig = field(default_factory=StftConfig)
    root: Path | None = None  # directory the manifest was loaded from / saved to

    def entry(self, input_label: str, zeta: float) -> TrajectoryEntry:
        for e in self.trajectories:
            if e.input_label == input_label and abs(e.zeta - zeta) < 1e-12:
                return e
        raise KeyError(f"no trajectory for ({input_label}, zeta={zeta})")

    def windows_per_trajectory(self) -> int:
        return window_count(self.trajectories[0].length, self.window_len)

    def total_windows(self) -> int:
        return sum(window_count(e.length, self.window_len) for e in self.trajectories)

    def save(self, path) -> None:
        path = Path(path)
        doc = {
            "fs": self.fs,
            "duration_s": self.duration_s,
            "zetas": self.zetas,
            "inputs": self.inputs,
            "window_len": self.window_len,
            "noise_sigma": self.noise_sigma,
            "master_seed": self.master_seed,
            "stft": self.stft.to_dict(),
            "trajectories": [
                {
                    "input": e.input_label,
                    "zeta": e.zeta,
                    "path": e.path,
                    "length": e.length,
                    "noise_seed": e.noise_seed,
                }
                for e in self.trajectories
            ],
        }
        path.write_text(json.dumps(doc, indent=2))
        self.root = path.parent

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        stft_doc = doc.get("stft", {})
        manifest = cls(
            fs=doc["fs"],
            duration_s=doc["duration_s"],
            zetas=doc["zetas"],
            inputs=doc["inputs"],
            window_len=doc["window_len"],
            noise_sigma=doc["noise_sigma"],
            master_seed=doc["master_seed"],
            stft=StftConfig(**stft_doc) if stft_doc else StftConfig(),
            trajectories=[
                TrajectoryEntry(
                    input_label=t["input"],
                    zeta=t["zeta"],
                    path=t["path"],
                    length=t["length"],
                    noise_seed=t["noise_seed"],
                )
                for t in doc["trajectories"]
            ],
            root=path.parent,
        )
        return manifest


class TrajectoryStore:
    """Lazy, cached access to the (u, y) arrays behind a manifest."""

    def __init__(self, manifest: DatasetManifest):
        if manifest.root is None:
            raise ValueError("manifest has no root directory; save or load it first")
        self.manifest = manifest
        self._cache: dict[int, np.ndarray] = {}

    def arrays(self, traj_index: int) -> np.ndarray:
        """(2, n) array of (u; y) for one trajectory."""
        if traj_index not in self._cache:
            entry = self.manifest.trajectories[traj_index]
            data = tensorio.load_tensor(self.manifest.root / entry.path)
            if data.shape != (2, entry.length):
                raise tensorio.ContainerError(
                    f"{entry.path}: shape {data.shape} does not match manifest "
                    f"length {entry.length}"
                )
            self._cache[traj_index] = data
        return self._cache[traj_index]

    def window(self, ref: "WindowRef") -> tuple[np.ndarray, np.ndarray]:
        data = self.arrays(ref.traj_index)
        stop = ref.start + ref.length
        if stop > data.shape[1]:
            raise ValueError(f"window {ref} exceeds trajectory length {data.shape[1]}")
        return data[0, ref.start : stop], data[1, ref.start : stop]


def generate_dataset(
    out_dir,
    *,
    extended: bool = False,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    master_seed: int = 0,
    fs: float = DEFAULT_FS,
    duration_s: float = DEFAULT_DURATION_S,
    window_len: int = DEFAULT_WINDOW_LEN,
    omega_n: float = 1.0,
) -> DatasetManifest:
    """Simulate and persist all trajectories; return the saved manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = BASE_INPUTS + (EXTENDED_EXTRA_INPUTS if extended else ())
    entries = []
    for signal in inputs:
        for zeta in ZETA_VALUES:
            label = signal.label()
            seed = derive_seed(master_seed, f"noise:{label}:zeta={zeta}")
            traj = sim.simulate_trajectory(
                signal, zeta, fs=fs, duration_s=duration_s, omega_n=omega_n,
                noise_sigma=noise_sigma, seed=seed,
            )
            fname = f"traj_{label.replace(':', '_')}_zeta{zeta:g}.dsid"
            tensorio.save_tensor(out_dir / fname, np.stack([traj.u, traj.y]))
            entries.append(
                TrajectoryEntry(
                    input_label=label, zeta=zeta, path=fname,
                    length=traj.n, noise_seed=seed,
                )
            )
    manifest = DatasetManifest(
        fs=fs,
        duration_s=duration_s,
        zetas=list(ZETA_VALUES),
        inputs=[s.label() for s in inputs],
        window_len=window_len,
        noise_sigma=noise_sigma,
        master_seed=master_seed,
        trajectories=entries,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


@dataclass(frozen=True, order=True)
class WindowRef:
    traj_index: int
    start: int
    length: int


def all_window_refs(manifest: DatasetManifest, stride: int = 1) -> list[WindowRef]:
    """Every window reference, optionally subsampled by a start-index stride."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    refs = []
    for i, entry in enumerate(manifest.trajectories):
        n_windows = window_count(entry.length, manifest.window_len)
        for start in range(0, n_windows, stride):
            refs.append(WindowRef(i, start, manifest.window_len))
    return refs


@dataclass
class SplitSpec:
    kind: str  # "sep-zeta" or "mix-zeta"
    fold: int
    train: list[WindowRef]
    val: list[WindowRef]
    test: list[WindowRef]

    def all_refs(self) -> list[WindowRef]:
        return self.train + self.val + self.test


def _train_val_split(refs: list[WindowRef], val_fraction: float, rng) -> tuple[list, list]:
    refs = list(refs)
    perm = rng.permutation(len(refs))
    n_val = int(round(val_fraction * len(refs)))
    val = [refs[i] for i in perm[:n_val]]
    train = [refs[i] for i in perm[n_val:]]
    return train, val


def split_sep_zeta(
    manifest: DatasetManifest,
    fold: int,
    *,
    stride: int = 1,
    val_fraction: float = 0.1,
    seed: int | None = None,
) -> SplitSpec:
    """Two-fold split with disjoint damping values between train and test.

    Fold 1 trains on zeta {0.1, 0.3, 0.5, 0.7} and tests on
    {0.2, 0.4, 0.6, 0.8}; fold 2 interchanges the sets.
    """
    if fold not in (1, 2):
        raise ValueError(f"fold must be 1 or 2, got {fold}")
    odd = {0.1, 0.3, 0.5, 0.7}
    train_zetas = odd if fold == 1 else set(ZETA_VALUES) - odd
    refs = all_window_refs(manifest, stride)
    in_train = [
        round(manifest.trajectories[r.traj_index].zeta, 1) in train_zetas for r in refs
    ]
    trainval = [r for r, t in zip(refs, in_train) if t]
    test = [r for r, t in zip(refs, in_train) if not t]
    if seed is None:
        seed = derive_seed(manifest.master_seed, f"split:sep-zeta:fold={fold}")
    train, val = _train_val_split(trainval, val_fraction, np.random.default_rng(seed))
    return SplitSpec(kind="sep-zeta", fold=fold, train=train, val=val, test=test)


def split_mix_zeta(
    manifest: DatasetManifest,
    seed: int,
    *,
    fold: int = 1,
    stride: int = 1,
    val_fraction: float = 0.1,
) -> SplitSpec:
    """Two-fold split into random non-intersecting halves.

    The seeded shuffle fixes both halves; fold 1 trains on the first half,
    fold 2 on the second, so the two folds' test sets tile all windows.
    """
    if fold not in (1, 2):
        raise ValueError(f"fold must be 1 or 2, got {fold}")
    refs = all_window_refs(manifest, stride)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(refs))
    half = len(refs) // 2
    first = [refs[i] for i in perm[:half]]
    second = [refs[i] for i in perm[half:]]
    trainval, test = (first, second) if fold == 1 else (second, first)
    train, val = _train_val_split(
        trainval, val_fraction, np.random.default_rng((seed, fold))
    )
    return SplitSpec(kind="mix-zeta", fold=fold, train=train, val=val, test=test)
