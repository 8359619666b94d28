"""Shadow-modeling harness.

Repeatedly trains target-in/target-out artifacts under controlled randomness
and hands labeled material to the attacks. Runs are independent and execute
concurrently up to a worker bound; the collection is ordered by run index and
bit-identical regardless of scheduling.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, encode_record
from .dpsgd import PredictiveTrainer
from .seeds import derive_seed
from .synthesizers import disc_loss, sample

__all__ = [
    "ThreatModel",
    "ShadowRun",
    "ShadowCollection",
    "FeatureBundle",
    "run_shadow_experiment",
    "query_features",
    "dataset_fingerprint",
    "save_collection",
]

BLACK_BOX = "black_box_query"
WHITE_BOX = "white_box"
FIXED_DATASET = "fixed_dataset"
RESAMPLED_DATASET = "resampled_dataset"


@dataclass(frozen=True)
class ThreatModel:
    model_access: str = BLACK_BOX
    data_knowledge: str = FIXED_DATASET
    architecture_known: bool = True

    def __post_init__(self):
        if self.model_access not in (BLACK_BOX, WHITE_BOX):
            raise ValueError(f"unknown model_access {self.model_access!r}")
        if self.data_knowledge not in (FIXED_DATASET, RESAMPLED_DATASET):
            raise ValueError(f"unknown data_knowledge {self.data_knowledge!r}")
        if self.model_access == WHITE_BOX and not self.architecture_known:
            raise ValueError("white_box access implies architecture_known")


@dataclass(frozen=True)
class ShadowRun:
    index: int
    bit: int
    artifact: object
    seed: int
    fingerprint: str


@dataclass(frozen=True)
class ShadowCollection:
    target: tuple
    threat_model: ThreatModel
    runs: tuple[ShadowRun, ...]
    master_seed: int
    trainer: object = None

    @property
    def bits(self) -> np.ndarray:
        return np.array([r.bit for r in self.runs], dtype=int)


@dataclass(frozen=True)
class FeatureBundle:
    """Per-run attack features, aligned with the collection's run order."""

    mode: str
    features: tuple
    bits: np.ndarray
    target: tuple
    schema: object
    threat_model: ThreatModel | None = None


def dataset_fingerprint(ds: Dataset) -> str:
    """Hash of the row multiset; invariant under row order."""
    keys = sorted(encode_record(ds.schema, r).tobytes() for r in ds.rows)
    h = hashlib.sha256()
    for k in keys:
        h.update(k)
    return h.hexdigest()


def _stratified_bits(n: int, seed: int) -> np.ndarray:
    """Exactly floor(n/2) ones, shuffled deterministically.

    Deliberately not i.i.d. coin flips: stratification wastes no trials and
    the hypothesis test is conditional on group sizes either way.
    """
    bits = np.zeros(n, dtype=int)
    bits[: n // 2] = 1
    rng = np.random.default_rng(seed)
    rng.shuffle(bits)
    return bits


def run_shadow_experiment(
    target: tuple,
    pool: Dataset,
    trainer,
    tm: ThreatModel,
    t_runs: int,
    master_seed: int,
    workers: int = 1,
) -> ShadowCollection:
    """Train t_runs shadow artifacts with the target in or out.

    Per run t: s_t = derive_seed(master_seed, t); the baseline training set is
    the pool itself (fixed_dataset) or a half-size subsample drawn from s_t
    (resampled_dataset); the target is appended iff b_t = 1; training uses s_t.
    """
    if t_runs < 2:
        raise ValueError("need at least 2 shadow runs")
    target = pool.schema.validate_record(target)
    tkey = encode_record(pool.schema, target).tobytes()
    if any(encode_record(pool.schema, r).tobytes() == tkey for r in pool.rows):
        raise ValueError("target record must not be present in the pool")

    bits = _stratified_bits(t_runs, derive_seed(master_seed, "bits"))

    def one_run(t: int) -> ShadowRun:
        s_t = derive_seed(master_seed, t)
        if tm.data_knowledge == RESAMPLED_DATASET:
            rng = np.random.default_rng(derive_seed(s_t, "subsample"))
            idx = rng.choice(len(pool), size=len(pool) // 2, replace=False)
            base_rows = tuple(pool.rows[i] for i in sorted(idx))
        else:
            base_rows = pool.rows
        rows = base_rows + ((target,) if bits[t] else ())
        ds = Dataset(schema=pool.schema, rows=rows, provenance=f"shadow:{t}")
        artifact = trainer.fit(ds, s_t)
        return ShadowRun(
            index=t,
            bit=int(bits[t]),
            artifact=artifact,
            seed=s_t,
            fingerprint=dataset_fingerprint(ds),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(one_run, range(t_runs)))
    else:
        runs = [one_run(t) for t in range(t_runs)]

    return ShadowCollection(
        target=target,
        threat_model=tm,
        runs=tuple(runs),
        master_seed=master_seed,
        trainer=trainer,
    )


def query_features(collection: ShadowCollection, mode: str, query_config: dict | None = None) -> FeatureBundle:
    """Extract per-run attack features.

    pred_loss: loss of the target under each trained model.
    synth_dataset: a synthetic dataset of query_config['n_samples'] rows per run.
    disc_loss: discriminator loss at the target (white-box GAN only).
    """
    qc = dict(query_config or {})
    trainer = collection.trainer

    if mode == "pred_loss":
        if not isinstance(trainer, PredictiveTrainer):
            raise ValueError("pred_loss requires a predictive trainer")
        feats = tuple(
            trainer.target_loss(r.artifact, collection.target) for r in collection.runs
        )
        schema = collection.runs[0].artifact.meta["schema"]
    elif mode == "synth_dataset":
        if getattr(trainer, "kind", None) != "generative":
            raise ValueError("synth_dataset requires a generative trainer")
        n = int(qc.get("n_samples", 100))
        feats = tuple(
            sample(r.artifact, n, derive_seed(collection.master_seed, "query", r.index))
            for r in collection.runs
        )
        schema = collection.runs[0].artifact.schema
    elif mode == "disc_loss":
        if collection.threat_model.model_access != WHITE_BOX:
            raise ValueError("disc_loss requires white_box model access")
        if any(getattr(r.artifact, "kind", None) != "gan" for r in collection.runs):
            raise ValueError("disc_loss requires GAN artifacts")
        feats = tuple(disc_loss(r.artifact, collection.target) for r in collection.runs)
        schema = collection.runs[0].artifact.schema
    else:
        raise ValueError(f"unknown feature mode {mode!r}")

    return FeatureBundle(
        mode=mode,
        features=feats,
        bits=collection.bits,
        target=collection.target,
        schema=schema,
        threat_model=collection.threat_model,
    )


# ---------------------------------------------------------------------------
# persistence: manifest + per-run artifact files

def save_collection(dirpath, collection: ShadowCollection) -> None:
    from pathlib import Path

    from .dpsgd import TrainedArtifact, save_trace
    from .models import save_params
    from .synthesizers import GenerativeArtifact, save_artifact

    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "master_seed": collection.master_seed,
        "threat_model": {
            "model_access": collection.threat_model.model_access,
            "data_knowledge": collection.threat_model.data_knowledge,
            "architecture_known": collection.threat_model.architecture_known,
        },
        "target": list(collection.target),
        "runs": [],
    }
    for r in collection.runs:
        entry = {"index": r.index, "bit": r.bit, "seed": r.seed,
                 "fingerprint": r.fingerprint}
        art = r.artifact
        if isinstance(art, TrainedArtifact):
            entry["artifact"] = f"run_{r.index:05d}.params"
            save_params(d / entry["artifact"], art.spec, art.params)
            if art.trace is not None:
                entry["trace"] = f"run_{r.index:05d}.trace"
                save_trace(d / entry["trace"], art.trace)
        elif isinstance(art, GenerativeArtifact):
            entry["artifact"] = f"run_{r.index:05d}.gen"
            save_artifact(d / entry["artifact"], art)
        manifest["runs"].append(entry)
    (d / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
