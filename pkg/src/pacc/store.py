"""File-based per-driver model store: the cloud side of the split.

Layout, one directory per driver under the store root:

    <driver>/models/model_v<N>.json   reward weights + metadata + checksums
    <driver>/dgpt/dgpt_v<N>.csv       extracted table for version N
    <driver>/trips/trip_<K>/          trajectory.csv, segments.json, meta.json

Model writes are atomic (temp file + rename, model record renamed last), and
loads fall back to the newest checksum-valid version, so a crash mid-write
never loses the previous model. Trips are append-only.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import re
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .adaptation import TakeoverSegment
from .dgpt import Dgpt, dump_dgpt, load_dgpt
from .features import FeatureBasis
from .irl import LevelStats, RewardModel, TrainConfig, extract_dgpt, finetune
from .mdp import ActionSet, CfState, StateGrid
from .trajectory import Trajectory, read_trajectory, write_trajectory

log = logging.getLogger(__name__)

_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class StoreError(RuntimeError):
    pass


@dataclass
class ModelRecord:
    driver_id: str
    model: RewardModel
    table: Dgpt
    version: int
    provenance: dict


def _checksum(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _encode_model(model: RewardModel) -> dict:
    return {
        "alpha": model.alpha.tolist(),
        "basis": {
            "centers_v": list(model.basis.centers_v),
            "centers_g": list(model.basis.centers_g),
            "sigma_v": model.basis.sigma_v,
            "sigma_g": model.basis.sigma_g,
        },
        "grid": asdict(model.grid),
        "gamma": model.gamma,
        "actions": {"values": list(model.actions.values),
                    "a_min": model.actions.a_min, "a_max": model.actions.a_max},
        "train_config": {**asdict(model.train_config),
                         "lead_levels": list(model.train_config.lead_levels)},
        "stats": [
            {
                "lead_bin": st.lead_bin,
                "n_runs": st.n_runs,
                "fe_sum": st.fe_sum.tolist(),
                "start_counts_nz": [[int(i), c] for i, c in
                                    zip(*_nonzero(st.start_counts))],
                "n_cells": len(st.start_counts),
                "length_counts": sorted(st.length_counts.items()),
            }
            for st in model.stats
        ],
        "version": model.version,
        "metadata": model.metadata,
    }


def _nonzero(arr: np.ndarray):
    idx = np.flatnonzero(arr)
    return idx, arr[idx].tolist()


def _decode_model(doc: dict) -> RewardModel:
    basis = FeatureBasis(tuple(doc["basis"]["centers_v"]),
                         tuple(doc["basis"]["centers_g"]),
                         doc["basis"]["sigma_v"], doc["basis"]["sigma_g"])
    grid = StateGrid(**doc["grid"])
    tc_doc = dict(doc["train_config"])
    tc_doc["lead_levels"] = tuple(tc_doc["lead_levels"])
    stats = []
    for st in doc["stats"]:
        counts = np.zeros(st["n_cells"])
        for i, c in st["start_counts_nz"]:
            counts[i] = c
        stats.append(LevelStats(st["lead_bin"], st["n_runs"],
                                np.asarray(st["fe_sum"]), counts,
                                {int(n): c for n, c in st["length_counts"]}))
    return RewardModel(
        alpha=np.asarray(doc["alpha"]),
        basis=basis,
        grid=grid,
        gamma=doc["gamma"],
        actions=ActionSet(tuple(doc["actions"]["values"]),
                          doc["actions"]["a_min"], doc["actions"]["a_max"]),
        train_config=TrainConfig(**tc_doc),
        stats=stats,
        version=doc["version"],
        metadata=doc["metadata"],
    )


class ModelStore:
    def __init__(self, root):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)

    # -- paths ------------------------------------------------------------

    def _driver_dir(self, driver_id: str, *parts) -> str:
        if not driver_id or not _ID_RE.match(driver_id):
            raise StoreError(f"bad driver id {driver_id!r}")
        return os.path.join(self.root, driver_id, *parts)

    def list_drivers(self) -> list:
        return sorted(
            d for d in os.listdir(self.root)
            if os.path.isdir(os.path.join(self.root, d))
        )

    def versions(self, driver_id: str) -> list:
        mdir = self._driver_dir(driver_id, "models")
        if not os.path.isdir(mdir):
            return []
        out = []
        for name in os.listdir(mdir):
            m = re.match(r"^model_v(\d+)\.json$", name)
            if m:
                out.append(int(m.group(1)))
        return sorted(out)

    # -- models -----------------------------------------------------------

    def save_model(self, driver_id: str, model: RewardModel,
                   table: Dgpt | None = None, provenance: dict | None = None) -> int:
        """Persist as the next version; returns it. Atomic: the DGPT file
        lands first, the checksummed model record second."""
        version = (self.versions(driver_id) or [0])[-1] + 1
        mdir = self._driver_dir(driver_id, "models")
        gdir = self._driver_dir(driver_id, "dgpt")
        os.makedirs(mdir, exist_ok=True)
        os.makedirs(gdir, exist_ok=True)
        table = table if table is not None else extract_dgpt(model)

        buf = io.StringIO()
        dump_dgpt(buf, table)
        dgpt_text = buf.getvalue()
        _atomic_write(os.path.join(gdir, f"dgpt_v{version}.csv"), dgpt_text)

        doc = _encode_model(model)
        doc["version"] = version
        doc["driver_id"] = driver_id
        doc["provenance"] = provenance or {}
        doc["dgpt_file"] = f"dgpt/dgpt_v{version}.csv"
        doc["dgpt_checksum"] = _checksum(dgpt_text)
        payload = json.dumps(doc, sort_keys=True)
        record = json.dumps({"checksum": _checksum(payload), "payload": doc},
                            sort_keys=True)
        _atomic_write(os.path.join(mdir, f"model_v{version}.json"), record)
        return version

    def load_model(self, driver_id: str) -> ModelRecord:
        """Newest checksum-valid record; corrupt versions are skipped with a
        warning so a truncated write never masks the previous model."""
        versions = self.versions(driver_id)
        if not versions:
            raise StoreError(f"no model stored for driver {driver_id!r}")
        for version in reversed(versions):
            try:
                return self._load_version(driver_id, version)
            except (StoreError, json.JSONDecodeError, KeyError, ValueError) as exc:
                log.warning("skipping corrupt model v%d for %s: %s",
                            version, driver_id, exc)
        raise StoreError(f"no valid model record for driver {driver_id!r}")

    def _load_version(self, driver_id: str, version: int) -> ModelRecord:
        path = self._driver_dir(driver_id, "models", f"model_v{version}.json")
        with open(path, "r", encoding="utf-8") as fh:
            record = json.load(fh)
        payload = record["payload"]
        if _checksum(json.dumps(payload, sort_keys=True)) != record["checksum"]:
            raise StoreError(f"checksum mismatch in {path}")
        dgpt_path = self._driver_dir(driver_id, *payload["dgpt_file"].split("/"))
        with open(dgpt_path, "r", encoding="utf-8") as fh:
            dgpt_text = fh.read()
        if _checksum(dgpt_text) != payload["dgpt_checksum"]:
            raise StoreError(f"DGPT checksum mismatch for {dgpt_path}")
        table = load_dgpt(io.StringIO(dgpt_text), version=version,
                          driver_id=driver_id)
        model = _decode_model(payload)
        return ModelRecord(driver_id=driver_id, model=model, table=table,
                           version=version, provenance=payload["provenance"])

    # -- trips ------------------------------------------------------------

    def archive_trip(self, driver_id: str, trajectory: Trajectory,
                     segments: list, scenario_id: str = "",
                     config: str = "") -> str:
        """Append-only trip archive with a takeover-segment index."""
        tdir = self._driver_dir(driver_id, "trips")
        os.makedirs(tdir, exist_ok=True)
        existing = [d for d in os.listdir(tdir) if d.startswith("trip_")]
        trip_id = f"trip_{len(existing) + 1:04d}"
        path = os.path.join(tdir, trip_id)
        os.makedirs(path)
        write_trajectory(os.path.join(path, "trajectory.csv"), trajectory)
        index = []
        for seg in segments:
            if not (0 <= seg.start_tick < seg.end_tick <= len(trajectory)):
                raise StoreError(f"segment ({seg.start_tick}, {seg.end_tick}) "
                                 f"outside trajectory of {len(trajectory)} ticks")
            index.append({
                "start_tick": seg.start_tick,
                "end_tick": seg.end_tick,
                "pedal": seg.pedal,
                "duration": seg.duration,
                "release_state": [seg.release_state.v, seg.release_state.g,
                                  seg.release_state.v_f],
            })
        _atomic_write(os.path.join(path, "segments.json"), json.dumps(index, indent=1))
        _atomic_write(os.path.join(path, "meta.json"), json.dumps(
            {"scenario_id": scenario_id, "config": config, "ticks": len(trajectory)}))
        return trip_id

    def list_trips(self, driver_id: str) -> list:
        tdir = self._driver_dir(driver_id, "trips")
        if not os.path.isdir(tdir):
            return []
        return sorted(d for d in os.listdir(tdir) if d.startswith("trip_"))

    def load_segments(self, driver_id: str, trip_id: str) -> list:
        path = self._driver_dir(driver_id, "trips", trip_id)
        traj = read_trajectory(os.path.join(path, "trajectory.csv"))
        with open(os.path.join(path, "segments.json"), encoding="utf-8") as fh:
            index = json.load(fh)
        out = []
        for entry in index:
            sl = traj.slice(entry["start_tick"], entry["end_tick"])
            v, g, v_f = entry["release_state"]
            out.append(TakeoverSegment(
                traj=sl, duration=entry["duration"],
                release_state=CfState(v, g, v_f), pedal=entry["pedal"],
                start_tick=entry["start_tick"], end_tick=entry["end_tick"]))
        return out

    # -- retraining ---------------------------------------------------------

    def retrain_after_trip(self, driver_id: str,
                           config: TrainConfig | None = None) -> int:
        """Fine-tune on every trip not yet consumed; returns the stored version
        (unchanged when there are no new takeover segments)."""
        record = self.load_model(driver_id)
        consumed = set(record.provenance.get("trip_ids", []))
        fresh = [t for t in self.list_trips(driver_id) if t not in consumed]
        segments = []
        for trip_id in fresh:
            segments.extend(self.load_segments(driver_id, trip_id))
        if not segments:
            return record.version
        model = finetune(record.model, segments, config=config)
        provenance = {
            "trip_ids": sorted(consumed | set(fresh)),
            "finetuned_from": record.version,
            "demo_ids": record.provenance.get("demo_ids", []),
            "online_dgpt": record.provenance.get("online_dgpt"),
        }
        return self.save_model(driver_id, model, extract_dgpt(model), provenance)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
