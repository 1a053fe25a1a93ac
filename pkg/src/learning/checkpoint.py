"""
Policy Checkpoint Files

A checkpoint is a single ``.npz`` archive:

- ``__metadata__``: JSON string with ``format``, ``version``, ``actor_input``,
  ``actor_width``, ``critic_width``, ``hidden_sizes``, ``global_step``,
  ``phase_index``, ``seed_lineage``, ``v_limit`` (null for unconstrained),
  ``config_hash`` and ``optimizer_steps``
- ``actor.weight0`` ... ``actor.bias2``, ``actor.log_std``: actor arrays in
  declared order, weights shaped (in, out)
- ``critic.weight0`` ... ``critic.bias2``: critic arrays
- ``adam.m.<i>`` / ``adam.v.<i>``: optimizer moments over the concatenated
  actor + critic array list (present when ``optimizer_steps > 0``)
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from faults import CheckpointError
from learning.policy_net import FULL_WIDTH, MlpParams

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ballbeam-policy"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    actor: MlpParams
    critic: MlpParams
    actor_input: str = "full"
    global_step: int = 0
    phase_index: int = 0
    seed_lineage: List[int] = field(default_factory=list)
    v_limit: float = math.inf
    config_hash: str = ""
    optimizer_state: Optional[Dict[str, object]] = None

    @property
    def metadata(self) -> Dict[str, object]:
        steps = 0 if not self.optimizer_state else int(self.optimizer_state["t"])
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "actor_input": self.actor_input,
            "actor_width": self.actor.input_width,
            "critic_width": self.critic.input_width,
            "hidden_sizes": list(self.actor.hidden_sizes),
            "global_step": int(self.global_step),
            "phase_index": int(self.phase_index),
            "seed_lineage": [int(s) for s in self.seed_lineage],
            "v_limit": None if math.isinf(self.v_limit) else float(self.v_limit),
            "config_hash": self.config_hash,
            "optimizer_steps": steps,
        }


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write a checkpoint atomically (temp file then rename)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays: Dict[str, np.ndarray] = {}
    for prefix, net in (("actor", checkpoint.actor), ("critic", checkpoint.critic)):
        for name, values in net.named_arrays():
            arrays[f"{prefix}.{name}"] = values
    if checkpoint.optimizer_state and checkpoint.optimizer_state["t"]:
        for i, (m, v) in enumerate(zip(checkpoint.optimizer_state["m"], checkpoint.optimizer_state["v"])):
            arrays[f"adam.m.{i}"] = m
            arrays[f"adam.v.{i}"] = v

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, __metadata__=np.array(json.dumps(checkpoint.metadata, sort_keys=True)), **arrays)
    tmp.replace(path)
    logger.info(f"Wrote checkpoint {path} (step {checkpoint.global_step})")
    return path


def _read_network(archive, prefix: str, width: int, hidden: List[int], actor: bool) -> MlpParams:
    sizes = [width, *hidden, 1]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        for kind, shape, out in (("weight", (fan_in, fan_out), weights), ("bias", (fan_out,), biases)):
            key = f"{prefix}.{kind}{i}"
            if key not in archive.files:
                raise CheckpointError(f"missing array {key}")
            values = np.asarray(archive[key], dtype=float)
            if values.shape != shape:
                raise CheckpointError(f"{key} has shape {values.shape}, expected {shape}")
            out.append(values)

    log_std = None
    if actor:
        if f"{prefix}.log_std" not in archive.files:
            raise CheckpointError(f"missing array {prefix}.log_std")
        log_std = np.asarray(archive[f"{prefix}.log_std"], dtype=float).reshape(1)
    params = MlpParams(weights=weights, biases=biases, log_std=log_std, output_tanh=actor)
    if not all(np.isfinite(a).all() for a in params.arrays()):
        raise CheckpointError(f"non-finite values in {prefix} parameters")
    return params


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read and validate a checkpoint written by save_checkpoint"""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    with archive:
        if "__metadata__" not in archive.files:
            raise CheckpointError(f"{path} has no metadata entry")
        try:
            meta = json.loads(str(archive["__metadata__"]))
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path} has malformed metadata: {e}") from e
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path} is not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file "
                f"(format={meta.get('format')}, version={meta.get('version')})"
            )
        if meta["critic_width"] != FULL_WIDTH:
            raise CheckpointError(f"critic width {meta['critic_width']}, expected {FULL_WIDTH}")

        hidden = list(meta["hidden_sizes"])
        actor = _read_network(archive, "actor", meta["actor_width"], hidden, actor=True)
        critic = _read_network(archive, "critic", meta["critic_width"], hidden, actor=False)

        optimizer_state = None
        steps = int(meta.get("optimizer_steps", 0))
        if steps:
            n_arrays = len(actor.arrays()) + len(critic.arrays())
            try:
                optimizer_state = {
                    "t": steps,
                    "m": [np.asarray(archive[f"adam.m.{i}"]) for i in range(n_arrays)],
                    "v": [np.asarray(archive[f"adam.v.{i}"]) for i in range(n_arrays)],
                }
            except KeyError as e:
                raise CheckpointError(f"{path} is missing optimizer state: {e}") from e

    v_limit = meta.get("v_limit")
    return Checkpoint(
        actor=actor,
        critic=critic,
        actor_input=meta["actor_input"],
        global_step=int(meta["global_step"]),
        phase_index=int(meta["phase_index"]),
        seed_lineage=list(meta["seed_lineage"]),
        v_limit=math.inf if v_limit is None else float(v_limit),
        config_hash=meta.get("config_hash", ""),
        optimizer_state=optimizer_state,
    )
