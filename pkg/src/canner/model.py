"""Model assembly, training with AdaDelta, prediction, and persistence.

Three architecture variants share one CRF head:

* ``baseline``      input repr -> BiGRU -> CRF
* ``baseline_cnn``  input repr -> windowed convolution -> BiGRU -> CRF
* ``can``           input repr -> local-attention convolution -> BiGRU
                    -> global self-attention -> CRF over [h_rnn; h_attn]

Sentences inside a batch are processed one at a time in corpus order and
gradients summed, so training is bit-deterministic given (seed, corpus,
config).
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import crf as crf_mod
from . import encoder as enc_mod
from . import sequence as seq_mod
from .config import ConfigError, ModelConfig
from .corpus import DataFormatError, Sentence, Vocab, build_vocab, score
from .numerics import Parameter, adadelta_step

log = logging.getLogger("canner")

CHECKPOINT_MAGIC = b"CANCHKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    """Tensor shapes inconsistent with the stored config/vocab/labels."""


@dataclass
class AttentionTrace:
    """Normalized attention weights of one sentence (rows are queries)."""

    sentence_id: int
    local: np.ndarray  # (tau, k)
    global_: np.ndarray  # (tau, tau)


class Model:
    """A configured variant with its parameters, ready to train or decode."""

    def __init__(self, config: ModelConfig, vocab: Vocab, labels: list[str]):
        config.validate()
        if not labels:
            raise ConfigError("empty label set")
        self.config = config
        self.vocab = vocab
        self.labels = list(labels)
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
        conv = config.arch in ("baseline_cnn", "can")
        attend = config.arch == "can"
        self.encoder = enc_mod.EncoderParams.build(
            len(vocab), config.d_ch, config.d_seg, config.k, config.d_h,
            rng, conv=conv, attend=attend,
        )
        gru_in = config.d_h if conv else config.d_ch + config.d_seg
        self.gru = seq_mod.BiGruParams.build(gru_in, config.d_h, rng)
        self.gattn = seq_mod.GlobalAttnParams.build(config.d_h, rng) if attend else None
        d_repr = 2 * config.d_h if attend else config.d_h
        self.crf = crf_mod.CrfParams.build(self.labels, d_repr, rng)
        self.encoder.char_table.frozen = config.freeze_embeddings
        self._decode_mask = (
            crf_mod.bioes_transition_mask(self.labels) if config.constrained_decode else None
        )

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        params = list(self.encoder.parameters()) + list(self.gru.parameters())
        if self.gattn is not None:
            params += self.gattn.parameters()
        params += self.crf.parameters()
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    # -- forward ------------------------------------------------------------

    def _repr_graph(self, sentence: Sentence):
        """Graph up to the CRF input; returns (repr node, local trace node)."""
        if len(sentence) == 0:
            raise DataFormatError("cannot run the model on an empty sentence")
        if sentence.seg is None:
            sentence = sentence.with_all_single_seg()
        x = enc_mod.input_repr_graph(sentence, self.vocab, self.encoder)
        local = None
        if self.config.arch != "baseline":
            x, local = enc_mod.conv_attention_graph(
                x, self.encoder,
                mask_pads=self.config.mask_window_pads,
                attend=self.config.arch == "can",
            )
        h = seq_mod.bigru_graph(x, self.gru)
        if self.config.arch == "can":
            h_attn, global_w = seq_mod.global_attention_graph(h, self.gattn)
            return ag.concat([h, h_attn], axis=1), local, global_w
        return h, local, None

    def _emissions_graph(self, sentence: Sentence):
        h, local, global_w = self._repr_graph(sentence)
        return crf_mod.emissions_graph(h, self.crf), local, global_w

    def forward(self, sentence: Sentence, sentence_id: int = 0):
        """Emission scores plus the attention trace (None unless arch=can)."""
        with ag.no_grad():
            e, local, global_w = self._emissions_graph(sentence)
        trace = None
        if self.config.arch == "can":
            trace = AttentionTrace(sentence_id, local.data, global_w.data)
        return e.data, trace

    def loss_graph(self, sentence: Sentence) -> ag.Tensor:
        """Scalar negative log-likelihood node for one labeled sentence."""
        if sentence.gold is None:
            raise DataFormatError("sentence has no gold tags")
        e, _, _ = self._emissions_graph(sentence)
        return crf_mod.nll_graph(e, self.crf, self.crf.tag_ids(sentence.gold))

    def batch_loss(self, batch) -> float:
        """Sum of per-sentence losses; gradients accumulate into parameters."""
        total = 0.0
        for sentence in batch:
            loss = self.loss_graph(sentence)
            ag.backward(loss)
            total += loss.item()
        return total

    def predict(self, sentence: Sentence) -> list[str]:
        e, _ = self.forward(sentence)
        path, _ = crf_mod.viterbi_decode(e, self.crf, mask=self._decode_mask)
        return [self.labels[i] for i in path]

    def attention_trace(self, sentence: Sentence, sentence_id: int = 0) -> AttentionTrace:
        if self.config.arch != "can":
            raise ConfigError(f"no attention weights in arch {self.config.arch!r}")
        _, trace = self.forward(sentence, sentence_id)
        return trace

    # -- persistence ----------------------------------------------------------

    def save(self, path, include_optimizer: bool = False) -> None:
        """Write a versioned checkpoint atomically (temp file + rename)."""
        params = self.named_parameters()
        names = sorted(params)
        header = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "vocab": self.vocab.id_to_char,
            "labels": self.labels,
            "tensors": [[n, list(params[n].value.shape)] for n in names],
            "optimizer_state": include_optimizer,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(CHECKPOINT_MAGIC)
                f.write(struct.pack("<I", CHECKPOINT_VERSION))
                f.write(struct.pack("<Q", len(blob)))
                f.write(blob)
                for n in names:
                    p = params[n]
                    f.write(np.ascontiguousarray(p.value).tobytes())
                    if include_optimizer:
                        f.write(np.ascontiguousarray(p.accum_sq_grad).tobytes())
                        f.write(np.ascontiguousarray(p.accum_sq_update).tobytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "rb") as f:
            data = f.read()
        if len(data) < len(CHECKPOINT_MAGIC) + 12 or not data.startswith(CHECKPOINT_MAGIC):
            raise CorruptCheckpointError(f"{path}: not a checkpoint file")
        off = len(CHECKPOINT_MAGIC)
        (version,) = struct.unpack_from("<I", data, off)
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        off += 4
        (hlen,) = struct.unpack_from("<Q", data, off)
        off += 8
        if off + hlen > len(data):
            raise CorruptCheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(data[off:off + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptCheckpointError(f"{path}: unreadable header ({e})") from e
        off += hlen
        try:
            config = ModelConfig.from_dict(header["config"])
            vocab_list = header["vocab"]
            labels = header["labels"]
            tensors = header["tensors"]
            with_opt = header["optimizer_state"]
        except (KeyError, TypeError, ConfigError) as e:
            raise CorruptCheckpointError(f"{path}: malformed header ({e})") from e
        from .corpus import UNK, PAD

        if vocab_list[:2] != [UNK, PAD]:
            raise CheckpointMismatchError(
                f"{path}: vocabulary does not start with the reserved {UNK}/{PAD} entries"
            )
        vocab = Vocab(vocab_list[2:])
        model = cls(config, vocab, labels)
        params = model.named_parameters()
        if sorted(params) != [n for n, _ in tensors]:
            raise CheckpointMismatchError(
                f"{path}: stored tensors {[n for n, _ in tensors]} do not match "
                f"model parameters {sorted(params)}"
            )
        for name, shape in tensors:
            p = params[name]
            if list(p.value.shape) != shape:
                raise CheckpointMismatchError(
                    f"{path}: tensor {name} has shape {shape}, expected "
                    f"{list(p.value.shape)} from config/vocab/labels"
                )
            n_copies = 3 if with_opt else 1
            for target in ([p.value, p.accum_sq_grad, p.accum_sq_update][:n_copies]):
                nbytes = target.size * 8
                if off + nbytes > len(data):
                    raise CorruptCheckpointError(f"{path}: truncated tensor data at {name}")
                target[...] = np.frombuffer(
                    data[off:off + nbytes], dtype="<f8"
                ).reshape(target.shape)
                off += nbytes
        if off != len(data):
            raise CorruptCheckpointError(f"{path}: {len(data) - off} trailing bytes")
        return model


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    best_epoch: int | None = None


def _snapshot(model: Model) -> dict[str, np.ndarray]:
    return {n: p.value.copy() for n, p in model.named_parameters().items()}


def _restore(model: Model, snap: dict[str, np.ndarray]) -> None:
    for n, p in model.named_parameters().items():
        p.value[...] = snap[n]


def _entity_f1(model: Model, sentences) -> float:
    preds = [model.predict(s) for s in sentences]
    return score(sentences, preds).overall.f1


def load_embeddings(path, vocab: Vocab, char_table: Parameter) -> int:
    """Load "token v1 .. v_dim" text embeddings into matching vocab rows.

    First line is "count dim". Returns the number of rows initialized;
    characters absent from the file keep their random initialization.
    """
    loaded = 0
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().split()
        if len(first) != 2:
            raise DataFormatError(f"{path}:1: expected 'count dim' header")
        _, dim = int(first[0]), int(first[1])
        if dim != char_table.value.shape[1]:
            raise DataFormatError(
                f"{path}: embedding dim {dim} != configured d_ch {char_table.value.shape[1]}"
            )
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected token plus {dim} floats, got {len(parts)} fields"
                )
            token = parts[0]
            if token in vocab:
                char_table.value[vocab.char_to_id[token]] = [float(x) for x in parts[1:]]
                loaded += 1
    return loaded


def train(train_sentences, config: ModelConfig, dev_sentences=None,
          vocab: Vocab | None = None, *, eval_train: bool = False,
          stop_train_f1: float | None = None, epoch_callback=None,
          embeddings_path=None) -> TrainResult:
    """Shuffled mini-batch AdaDelta training, deterministic under the seed.

    With a dev set, the returned model carries the parameters of the best
    dev-F1 epoch (ties to the earlier epoch); otherwise the final epoch.
    History rows hold per-epoch loss, mean gradient norm, and any F1s.
    """
    config.validate()
    train_sentences = list(train_sentences)
    if not train_sentences:
        raise ConfigError("empty training corpus")
    for i, s in enumerate(train_sentences):
        if s.gold is None:
            raise DataFormatError(f"training sentence {i} has no gold tags")
    if vocab is None:
        vocab = build_vocab(train_sentences)
    labels = config.label_set
    if labels is None:
        labels = sorted({t for s in train_sentences for t in s.gold})
        config.label_set = labels
    else:
        seen = {t for s in train_sentences for t in s.gold}
        extra = seen - set(labels)
        if extra:
            raise DataFormatError(f"gold tags outside the configured label set: {sorted(extra)}")

    model = Model(config, vocab, labels)
    if embeddings_path is not None:
        n = load_embeddings(embeddings_path, vocab, model.encoder.char_table)
        log.info("initialized %d embedding rows from %s", n, embeddings_path)
    params = model.parameters()
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])

    history: list[dict] = []
    best_f1 = -1.0
    best_epoch = None
    best_params = None
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_sentences))
        epoch_loss = 0.0
        grad_norms = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_sentences[i] for i in order[start:start + config.batch_size]]
            epoch_loss += model.batch_loss(batch)
            sq = 0.0
            for p in params:
                sq += float((p.grad * p.grad).sum())
            grad_norms.append(np.sqrt(sq))
            for p in params:
                if p.frozen:
                    p.zero_grad()
                else:
                    adadelta_step(p, lr=config.lr, rho=config.rho, eps=config.eps)
        row = {
            "epoch": epoch,
            "loss": epoch_loss,
            "grad_norm": float(np.mean(grad_norms)),
        }
        if eval_train or stop_train_f1 is not None:
            row["train_f1"] = _entity_f1(model, train_sentences)
        if dev_sentences:
            row["dev_f1"] = _entity_f1(model, dev_sentences)
            if row["dev_f1"] > best_f1:
                best_f1 = row["dev_f1"]
                best_epoch = epoch
                best_params = _snapshot(model)
        history.append(row)
        log.info(
            "epoch %d loss=%.6f%s%s", epoch, epoch_loss,
            f" train_f1={row['train_f1']:.2f}" if "train_f1" in row else "",
            f" dev_f1={row['dev_f1']:.2f}" if "dev_f1" in row else "",
        )
        if epoch_callback is not None:
            epoch_callback(model, epoch, row)
        if stop_train_f1 is not None and row["train_f1"] >= stop_train_f1:
            break
    if best_params is not None:
        _restore(model, best_params)
    return TrainResult(model=model, history=history, best_epoch=best_epoch)
