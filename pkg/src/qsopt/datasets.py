"""On-disk dataset layout.

A dataset directory holds one protocol file, a manifest, and one phantom
container per (b-value, split, index).  Noisy and clean copies are stored
side by side; with sigma = 0 only the clean file exists.
"""

from __future__ import annotations

from pathlib import Path

from .phantom import PhantomSample, load_phantom, make_dataset, save_phantom
from .shbasis import BasisSpec
from .sphere import Protocol, protocol_read, protocol_write

MANIFEST = "manifest.txt"
PROTOCOL_FILE = "protocol.bvec"
SPLITS = ("train", "val", "test")


def save_dataset(out_dir, dataset: dict, protocol: Protocol, seed: int,
                 sigma: float, band_limited: bool) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    protocol_write(protocol, out / PROTOCOL_FILE)
    any_b = next(iter(dataset.values()))
    lines = ["[dataset]",
             f"seed = {seed}",
             f"sigma = {sigma:.17g}",
             f"band_limited = {int(band_limited)}",
             f"ndirections = {len(protocol)}",
             f"bvalues = {','.join(f'{b:g}' for b in sorted(dataset))}",
             "",
             "[splits]"]
    for name in SPLITS:
        lines.append(f"{name} = {len(any_b[name])}")
    lines.append("")
    lines.append("[seeds]")
    for b in sorted(dataset):
        for name in SPLITS:
            bdir = out / f"b{b:g}" / name
            bdir.mkdir(parents=True, exist_ok=True)
            for i, sample in enumerate(dataset[b][name]):
                save_phantom(sample.noisy, bdir / f"{i:04d}.phm",
                             protocol_ref=f"../../{PROTOCOL_FILE}")
                if sample.noisy is not sample.clean:
                    save_phantom(sample.clean, bdir / f"{i:04d}.clean.phm",
                                 protocol_ref=f"../../{PROTOCOL_FILE}")
    idx = 0
    for name in SPLITS:
        for sample in any_b[name]:
            lines.append(f"{name}_{idx} = {sample.seed}")
            idx += 1
    (out / MANIFEST).write_text("\n".join(lines) + "\n")


def generate_and_save(out_dir, count: int, ratios, protocol: Protocol, bvalues,
                      sigma: float, seed: int, width: int = 32, height: int = 32,
                      band_limit: BasisSpec | None = None) -> dict:
    dataset = make_dataset(count, ratios, protocol, bvalues, sigma, seed,
                           width=width, height=height, band_limit=band_limit)
    save_dataset(out_dir, dataset, protocol, seed, sigma, band_limit is not None)
    return dataset


def _parse_manifest(path: Path) -> dict:
    fields = {}
    section = ""
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        key, _, value = line.partition("=")
        fields[f"{section}.{key.strip()}"] = value.strip()
    return fields


def load_dataset(in_dir) -> tuple[dict, Protocol, dict]:
    """Returns (dataset, protocol, manifest fields)."""
    root = Path(in_dir)
    if not root.is_dir() or not (root / MANIFEST).exists():
        raise FileNotFoundError(f"dataset not found: {in_dir}")
    fields = _parse_manifest(root / MANIFEST)
    protocol = protocol_read(root / PROTOCOL_FILE)
    bvalues = [float(b) for b in fields["dataset.bvalues"].split(",")]
    dataset = {}
    for b in bvalues:
        splits = {}
        for name in SPLITS:
            count = int(fields[f"splits.{name}"])
            samples = []
            for i in range(count):
                bdir = root / f"b{b:g}" / name
                noisy = load_phantom(bdir / f"{i:04d}.phm", protocol)
                clean_path = bdir / f"{i:04d}.clean.phm"
                clean = load_phantom(clean_path, protocol) if clean_path.exists() else noisy
                samples.append(PhantomSample(clean, noisy, seed=-1))
            splits[name] = samples
        dataset[b] = splits
    return dataset, protocol, fields
