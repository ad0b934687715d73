"""Full dialogue model: backbone plus scenario and bridging parameter groups.

Checkpoint layout is a directory holding config.json, weights.bin with a JSON
manifest (tensor name -> shape/dtype/byte offset), vocab.json and
inventory.json.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import EncoderDecoder, ModelConfig
from .bridging import Fusion, KeywordEmbeddings, KeywordHeads
from .corpus import KeywordInventory, Vocabulary
from .scenario import ScenarioBiasHead, ScenarioEncoder


class DialogueModel(nn.Module):
    """Owns every trainable parameter of the system."""

    def __init__(self, config: ModelConfig, n_types: int, n_topics: int):
        super().__init__()
        if n_types < 1 or n_topics < 1:
            raise ValueError("keyword inventory must be non-empty")
        torch.manual_seed(config.seed)
        self.config = config
        self.n_types = n_types
        self.n_topics = n_topics
        self.backbone = EncoderDecoder(config)
        self.scenario = ScenarioEncoder(config.d)
        self.bias_head = ScenarioBiasHead(config.d, config.vocab_size)
        self.fusion = Fusion(config.d)
        self.heads = KeywordHeads(config.d, n_types, n_topics)
        self.keyword_emb = KeywordEmbeddings(n_types, n_topics, config.d)

    @property
    def dtype(self) -> torch.dtype:
        return self.backbone.tok_emb.weight.dtype

    def parameter_groups(self) -> dict[str, list[str]]:
        """Named parameter groups used by the gradient-check coverage rule."""
        groups: dict[str, list[str]] = {
            "bias_matrix": [], "keyword_type_emb": [], "keyword_topic_emb": [],
            "knowledge_mlp": [], "profile_mlp": [], "cls_type": [], "cls_topic": [],
            "fusion": [], "backbone": [],
        }
        prefix_map = [
            ("bias_head.", "bias_matrix"),
            ("keyword_emb.emb_type.", "keyword_type_emb"),
            ("keyword_emb.emb_topic.", "keyword_topic_emb"),
            ("scenario.knowledge_mlp.", "knowledge_mlp"),
            ("scenario.profile_mlp.", "profile_mlp"),
            ("heads.cls_type.", "cls_type"),
            ("heads.cls_topic.", "cls_topic"),
            ("fusion.", "fusion"),
            ("backbone.", "backbone"),
        ]
        for name, _ in self.named_parameters():
            for prefix, group in prefix_map:
                if name.startswith(prefix):
                    groups[group].append(name)
                    break
        return groups


def save_checkpoint(model: DialogueModel, out_dir: str | Path,
                    vocab: Vocabulary | None = None,
                    inventory: KeywordInventory | None = None) -> Path:
    """Atomic-enough checkpoint write: weights land before the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {}
    offset = 0
    tmp = out / "weights.bin.tmp"
    with open(tmp, "wb") as fh:
        for name, tensor in model.state_dict().items():
            arr = tensor.detach().cpu().contiguous().numpy()
            data = arr.tobytes()
            manifest[name] = {
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
                "offset": offset,
                "nbytes": len(data),
            }
            fh.write(data)
            offset += len(data)
    tmp.replace(out / "weights.bin")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (out / "config.json").write_text(json.dumps({
        "model": model.config.to_json(),
        "n_types": model.n_types,
        "n_topics": model.n_topics,
    }, indent=2))
    if vocab is not None:
        vocab.save(out / "vocab.json")
    if inventory is not None:
        inventory.save(out / "inventory.json")
    return out


def load_checkpoint(ckpt_dir: str | Path) -> tuple[DialogueModel, Vocabulary, KeywordInventory]:
    ckpt = Path(ckpt_dir)
    meta = json.loads((ckpt / "config.json").read_text())
    model = DialogueModel(ModelConfig.from_json(meta["model"]),
                          n_types=meta["n_types"], n_topics=meta["n_topics"])
    manifest = json.loads((ckpt / "manifest.json").read_text())
    blob = (ckpt / "weights.bin").read_bytes()
    state = {}
    for name, entry in manifest.items():
        arr = np.frombuffer(
            blob, dtype=np.dtype(entry["dtype"]),
            count=int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1,
            offset=entry["offset"],
        ).reshape(entry["shape"]).copy()
        state[name] = torch.from_numpy(arr)
    if any(v["dtype"] == "float64" for v in manifest.values()):
        model.double()
    model.load_state_dict(state)
    model.eval()
    vocab = Vocabulary.load(ckpt / "vocab.json")
    inventory = KeywordInventory.load(ckpt / "inventory.json")
    return model, vocab, inventory
