"""Face verification protocol: gallery/probe sets, Rank-1, and VR@FAR.

The gallery enrolls one visible reference per subject (first by stable sort
of file names); probes are identity embeddings of reconstructed images.
Scores are cosine similarities. The acceptance threshold for VR@FAR is the
smallest observed impostor score whose false-accept fraction does not exceed
the requested FAR; if even the largest impostor score fails, the threshold
saturates just above it (flagged). By construction the achieved FAR never
exceeds the request.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from turbvis.backbones import EmbeddingBackbone
from turbvis.data import PairedDataset
from turbvis.imageio import load_image


@dataclass
class EmbeddingSet:
    subject_ids: list[str]
    embeddings: np.ndarray  # (N, D)

    def __len__(self) -> int:
        return len(self.subject_ids)


class GallerySet(EmbeddingSet):
    def __init__(self, subject_ids, embeddings):
        if len(set(subject_ids)) != len(subject_ids):
            raise ValueError("gallery subject ids must be unique")
        super().__init__(subject_ids, embeddings)


class ProbeSet(EmbeddingSet):
    pass


@dataclass
class VrResult:
    rate: float  # percent
    threshold: float
    saturated: bool


@dataclass
class VerificationResult:
    rank1: float
    vr_far1: VrResult
    vr_far01: VrResult
    scores: np.ndarray  # (probes, gallery)
    probe_ids: list[str]
    gallery_ids: list[str]


def build_protocol(test_split: PairedDataset, eta: EmbeddingBackbone,
                   reconstruction_dir) -> tuple[GallerySet, ProbeSet]:
    """Gallery: one visible reference per subject. Probes: reconstructions,
    matched to records by the thermal file stem."""
    recon_dir = Path(reconstruction_dir)
    missing = [rec.key for rec in test_split.records
               if not (recon_dir / Path(rec.thermal_path).name).exists()]
    if missing:
        raise ValueError(f"missing reconstructions for records: {missing}")

    by_subject: dict[str, list] = {}
    for rec in test_split.records:
        by_subject.setdefault(rec.subject_id, []).append(rec)

    gallery_ids, gallery_embs = [], []
    for subject in sorted(by_subject):
        first = min(by_subject[subject], key=lambda r: str(r.visible_path))
        gallery_ids.append(subject)
        gallery_embs.append(eta.embed(load_image(first.visible_path)))

    probe_ids, probe_embs = [], []
    for rec in test_split.records:
        probe_ids.append(rec.subject_id)
        probe_embs.append(eta.embed(load_image(recon_dir / Path(rec.thermal_path).name)))

    return (GallerySet(gallery_ids, np.stack(gallery_embs)),
            ProbeSet(probe_ids, np.stack(probe_embs)))


def cosine_scores(probes: EmbeddingSet, gallery: EmbeddingSet) -> np.ndarray:
    def normalize(m: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ArithmeticError("zero-norm embedding in cosine scoring")
        return m / norms

    return normalize(np.asarray(probes.embeddings, dtype=np.float64)) @ \
        normalize(np.asarray(gallery.embeddings, dtype=np.float64)).T


def rank1(gallery: GallerySet, probes: ProbeSet) -> float:
    """Percent of probes whose best-cosine gallery subject matches; ties break
    to the lowest gallery index."""
    if len(gallery) == 0:
        raise ValueError("gallery is empty")
    if len(probes) == 0:
        raise ValueError("probe set is empty")
    scores = cosine_scores(probes, gallery)
    best = np.argmax(scores, axis=1)  # first occurrence wins ties
    hits = sum(1 for p, g in enumerate(best) if probes.subject_ids[p] == gallery.subject_ids[g])
    return 100.0 * hits / len(probes)


def vr_at_far(genuine, impostor, far: float) -> VrResult:
    """Verification rate at the largest threshold family keeping the impostor
    acceptance fraction at or below ``far``."""
    genuine = np.asarray(genuine, dtype=np.float64).ravel()
    impostor = np.asarray(impostor, dtype=np.float64).ravel()
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("genuine and impostor score sets must be non-empty")
    if not 0.0 < far < 1.0:
        raise ValueError(f"far must lie in (0, 1), got {far}")

    candidates = np.unique(impostor)  # ascending
    n = impostor.size
    threshold = None
    for t in candidates:
        if np.count_nonzero(impostor >= t) / n <= far:
            threshold = float(t)
            break
    saturated = far < 1.0 / n
    if threshold is None:
        # even the top impostor score fails; saturate just above it
        threshold = float(np.nextafter(candidates[-1], np.inf))
        saturated = True
    rate = 100.0 * np.count_nonzero(genuine >= threshold) / genuine.size
    return VrResult(rate=rate, threshold=threshold, saturated=saturated)


def genuine_impostor_scores(gallery: GallerySet, probes: ProbeSet,
                            scores: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    if scores is None:
        scores = cosine_scores(probes, gallery)
    gallery_index = {s: i for i, s in enumerate(gallery.subject_ids)}
    genuine, impostor = [], []
    for p, subject in enumerate(probes.subject_ids):
        for g in range(len(gallery)):
            (genuine if gallery_index.get(subject) == g else impostor).append(scores[p, g])
    return np.asarray(genuine), np.asarray(impostor)


def verification_report(gallery: GallerySet, probes: ProbeSet) -> VerificationResult:
    scores = cosine_scores(probes, gallery)
    genuine, impostor = genuine_impostor_scores(gallery, probes, scores)
    return VerificationResult(
        rank1=rank1(gallery, probes),
        vr_far1=vr_at_far(genuine, impostor, 0.01),
        vr_far01=vr_at_far(genuine, impostor, 0.001),
        scores=scores,
        probe_ids=list(probes.subject_ids),
        gallery_ids=list(gallery.subject_ids),
    )


def format_verification_table(rows: dict[str, VerificationResult]) -> str:
    header = f"{'Method':<12} {'Rank-1':>8} {'VR@FAR=1%':>10} {'VR@FAR=0.1%':>12}"
    lines = [header, "-" * len(header)]
    for method, res in rows.items():
        flag1 = "*" if res.vr_far1.saturated else ""
        flag01 = "*" if res.vr_far01.saturated else ""
        lines.append(
            f"{method:<12} {res.rank1:>8.2f} {res.vr_far1.rate:>9.2f}{flag1} "
            f"{res.vr_far01.rate:>11.2f}{flag01}"
        )
    if any(r.vr_far1.saturated or r.vr_far01.saturated for r in rows.values()):
        lines.append("* threshold saturated above all impostor scores")
    return "\n".join(lines)
