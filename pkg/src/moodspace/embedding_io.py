"""Binary interchange formats for token embeddings and trained models.

Two self-describing little-endian containers, written so that any language
can parse them without a serialization library:

* ``MOODEMB1`` holds an (n_images, tokens_per_image, dim) float32 array of
  token features plus grid metadata and a free-text provenance string.
* ``MOODMDL1`` holds a trained model: encoder/decoder weights, feature
  normalization statistics, the hyperparameter record and the loss history,
  all bit-exact on round-trip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .mlp import MlpParams

EMB_MAGIC = b"MOODEMB1"
MODEL_MAGIC = b"MOODMDL1"
MODEL_FORMAT_VERSION = 1

SPACE_TAGS = ("other", "V", "W")
_SPACE_CODES = {name: code for code, name in enumerate(SPACE_TAGS)}
_FLAG_CLASS_TOKEN = 0x1

LOSS_HISTORY_COLUMNS = ("step", "spec", "curv", "rep", "recon", "var", "total")


class FormatError(ValueError):
    """A file does not conform to the interchange format."""


@dataclass
class TokenEmbeddingSet:
    """Per-image token features in one embedding space.

    ``data`` has shape (n_images, tokens_per_image, dim), float32. Token
    order within an image is raster order over the patch grid; when
    ``has_class_token`` is set, the class token is the last token of each
    image and tokens_per_image equals grid_h*grid_w + 1.
    """

    data: np.ndarray
    space_tag: str = "other"
    grid_h: int = 16
    grid_w: int = 16
    has_class_token: bool = False
    source_tag: str = ""

    @property
    def n_images(self) -> int:
        return int(self.data.shape[0])

    @property
    def tokens_per_image(self) -> int:
        return int(self.data.shape[1])

    @property
    def dim(self) -> int:
        return int(self.data.shape[2])

    def flat_tokens(self) -> np.ndarray:
        """All tokens stacked into an (n_images*tokens_per_image, dim) array."""
        return self.data.reshape(-1, self.dim)

    def patch_data(self) -> np.ndarray:
        """Grid tokens only, class token (if any) dropped."""
        if self.has_class_token:
            return self.data[:, :-1, :]
        return self.data

    def image_tokens(self, index: int) -> np.ndarray:
        if not 0 <= index < self.n_images:
            raise ValueError(f"image index {index} out of range for {self.n_images} images")
        return self.data[index]

    def validate(self) -> None:
        if self.data.ndim != 3:
            raise ValueError(f"data must be 3-dimensional, got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            raise ValueError(f"data must be float32, got {self.data.dtype}")
        if self.n_images < 1 or self.dim < 1:
            raise ValueError("need at least one image and a positive feature dimension")
        expected = self.grid_h * self.grid_w + (1 if self.has_class_token else 0)
        if self.tokens_per_image != expected:
            raise ValueError(
                f"tokens_per_image={self.tokens_per_image} does not match "
                f"grid {self.grid_h}x{self.grid_w} (class token: {self.has_class_token})")
        if self.space_tag not in _SPACE_CODES:
            raise ValueError(f"unknown space_tag {self.space_tag!r}")
        if not np.isfinite(self.data).all():
            raise ValueError("non-finite data")


def _write_u32(f, *values: int) -> None:
    f.write(struct.pack("<" + "I" * len(values), *values))


def _read_exact(f, count: int) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise FormatError("truncated payload")
    return buf


def _read_u32(f, count: int = 1):
    buf = _read_exact(f, 4 * count)
    vals = struct.unpack("<" + "I" * count, buf)
    return vals[0] if count == 1 else vals


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append("\n" if nxt == "n" else nxt)
        else:
            out.append(ch)
    return "".join(out)


def write_embeddings(emb: TokenEmbeddingSet, path) -> None:
    """Serialize a validated embedding set to ``path``."""
    emb.validate()
    meta = f"source_tag={_escape(emb.source_tag)}".encode("utf-8")
    flags = _FLAG_CLASS_TOKEN if emb.has_class_token else 0
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        _write_u32(f, emb.n_images, emb.tokens_per_image, emb.dim,
                   emb.grid_h, emb.grid_w, _SPACE_CODES[emb.space_tag], flags)
        _write_u32(f, len(meta))
        f.write(meta)
        f.write(np.ascontiguousarray(emb.data, dtype="<f4").tobytes())


def read_embeddings(path) -> TokenEmbeddingSet:
    """Parse a ``MOODEMB1`` file, rejecting malformed or non-finite content."""
    with open(path, "rb") as f:
        magic = f.read(len(EMB_MAGIC))
        if magic != EMB_MAGIC:
            raise FormatError(f"unrecognized format (magic {magic!r})")
        n_images, tokens, dim, grid_h, grid_w, space_code, flags = _read_u32(f, 7)
        meta_len = _read_u32(f)
        meta = _read_exact(f, meta_len).decode("utf-8")
        expected = n_images * tokens * dim * 4
        payload = f.read(expected)
        if len(payload) < expected:
            raise FormatError("truncated payload")
        if f.read(1):
            raise FormatError("size mismatch: trailing bytes after payload")
    if space_code >= len(SPACE_TAGS):
        raise FormatError(f"unknown space tag code {space_code}")
    source_tag = ""
    for line in meta.split("\n"):
        if line.startswith("source_tag="):
            source_tag = _unescape(line[len("source_tag="):])
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    data = data.reshape(n_images, tokens, dim)
    emb = TokenEmbeddingSet(data=data, space_tag=SPACE_TAGS[space_code],
                            grid_h=grid_h, grid_w=grid_w,
                            has_class_token=bool(flags & _FLAG_CLASS_TOKEN),
                            source_tag=source_tag)
    emb.validate()
    return emb


@dataclass
class FeatureNormStats:
    """Per-dimension standardization applied to the source and target spaces."""

    v_mean: np.ndarray
    v_scale: np.ndarray
    w_mean: np.ndarray
    w_scale: np.ndarray


@dataclass
class MoodSpaceModel:
    """A trained compact-space model: two MLPs plus everything needed to rerun them."""

    g: int
    encoder: MlpParams
    decoder: MlpParams
    norm_stats: FeatureNormStats
    hyperparams: dict
    loss_history: np.ndarray  # (records, 7), columns LOSS_HISTORY_COLUMNS

    @property
    def input_dim_v(self) -> int:
        return self.encoder.in_dim

    @property
    def output_dim_w(self) -> int:
        return self.decoder.out_dim

    def validate(self) -> None:
        self.encoder.validate()
        self.decoder.validate()
        if self.encoder.out_dim != self.g or self.decoder.in_dim != self.g:
            raise ValueError("latent dimension does not match network shapes")
        if self.norm_stats.v_mean.shape != (self.input_dim_v,):
            raise ValueError("v normalization stats do not match encoder input")
        if self.norm_stats.w_mean.shape != (self.output_dim_w,):
            raise ValueError("w normalization stats do not match decoder output")
        if self.loss_history.ndim != 2 or self.loss_history.shape[1] != len(LOSS_HISTORY_COLUMNS):
            raise ValueError("loss history must have one column per recorded quantity")


def _write_named_array(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    _write_u32(f, len(encoded))
    f.write(encoded)
    _write_u32(f, arr.ndim, *arr.shape)
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_named_array(f):
    name = _read_exact(f, _read_u32(f)).decode("utf-8")
    ndim = _read_u32(f)
    shape = _read_u32(f, ndim) if ndim else ()
    if isinstance(shape, int):
        shape = (shape,)
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").astype(np.float64)
    return name, data.reshape(shape)


def _model_arrays(model: MoodSpaceModel) -> list[tuple[str, np.ndarray]]:
    pairs = []
    for prefix, net in (("enc", model.encoder), ("dec", model.decoder)):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            pairs.append((f"{prefix}_w{i}", w))
            pairs.append((f"{prefix}_b{i}", b))
    stats = model.norm_stats
    pairs += [("v_mean", stats.v_mean), ("v_scale", stats.v_scale),
              ("w_mean", stats.w_mean), ("w_scale", stats.w_scale)]
    pairs.append(("loss_history", model.loss_history))
    return pairs


def save_model(model: MoodSpaceModel, path) -> None:
    """Serialize a model bit-exactly; re-saving a loaded model reproduces the file."""
    model.validate()
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "g": int(model.g),
        "input_dim_v": int(model.input_dim_v),
        "output_dim_w": int(model.output_dim_w),
        "encoder_layers": model.encoder.n_layers,
        "decoder_layers": model.decoder.n_layers,
        "hyperparams": model.hyperparams,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        _write_u32(f, MODEL_FORMAT_VERSION)
        _write_u32(f, len(blob))
        f.write(blob)
        arrays = _model_arrays(model)
        _write_u32(f, len(arrays))
        for name, arr in arrays:
            _write_named_array(f, name, arr)


def load_model(path) -> MoodSpaceModel:
    with open(path, "rb") as f:
        magic = f.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise FormatError(f"unrecognized format (magic {magic!r})")
        version = _read_u32(f)
        if version != MODEL_FORMAT_VERSION:
            raise FormatError(f"unsupported model format version {version}")
        header = json.loads(_read_exact(f, _read_u32(f)).decode("utf-8"))
        arrays = {}
        for _ in range(_read_u32(f)):
            name, arr = _read_named_array(f)
            arrays[name] = arr
        if f.read(1):
            raise FormatError("size mismatch: trailing bytes after payload")

    def take(name, ndim):
        if name not in arrays:
            raise FormatError(f"missing array {name!r}")
        arr = arrays[name]
        if arr.ndim != ndim:
            raise FormatError(f"array {name!r} has wrong rank")
        return arr

    def network(prefix, n_layers):
        weights = [take(f"{prefix}_w{i}", 2) for i in range(n_layers)]
        biases = [take(f"{prefix}_b{i}", 1) for i in range(n_layers)]
        return MlpParams(weights, biases)

    model = MoodSpaceModel(
        g=int(header["g"]),
        encoder=network("enc", int(header["encoder_layers"])),
        decoder=network("dec", int(header["decoder_layers"])),
        norm_stats=FeatureNormStats(
            v_mean=take("v_mean", 1), v_scale=take("v_scale", 1),
            w_mean=take("w_mean", 1), w_scale=take("w_scale", 1)),
        hyperparams=header["hyperparams"],
        loss_history=take("loss_history", 2),
    )
    model.validate()
    if model.input_dim_v != int(header["input_dim_v"]) or model.output_dim_w != int(header["output_dim_w"]):
        raise FormatError("declared dimensions do not match stored arrays")
    return model
