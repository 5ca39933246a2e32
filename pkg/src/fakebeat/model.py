"""Dual spatial-temporal attention model.

Four attention sources adapt the pooled map before classification: a fixed
binary prior over six robust face blocks (s_p), a learned per-block weight
from a temporal conv stack (s_a), a learned per-frame weight from a
recurrence over frame slices (t_b), and a per-frame fakeness score from an
independently trained frame classifier (t_f). Spatial and temporal parts are
fused by plain elementwise sums, applied to the map as the rank-1 outer
product t * s^T shared across color channels, and classified by a small
residual network.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = 1


def _uniform_fan_in(rng, shape, fan_in, dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _param(rng, shape, fan_in, dtype=np.float32):
    return ad.Tensor(_uniform_fan_in(rng, shape, fan_in, dtype), requires_grad=True)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Prediction:
    """Video-level verdict; fake wins only strictly above the 0.5 threshold."""

    p_fake: float

    @property
    def label(self):
        return "fake" if self.p_fake > 0.5 else "real"


# ---------------------------------------------------------------------------
# attention algebra (the inference-path surfaces)


@dataclass
class AttentionBundle:
    """All attention vectors for one video, with the fused sums."""

    s_p: np.ndarray
    s_a: np.ndarray
    t_b: np.ndarray
    t_f: np.ndarray
    s: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        ones = np.flatnonzero(self.s_p == 1.0)
        if len(ones) != 6 or not np.isin(self.s_p, (0.0, 1.0)).all():
            raise ValueError("prior attention must be binary with exactly six ones")
        for name, v in (("s_a", self.s_a), ("t_b", self.t_b), ("t_f", self.t_f)):
            if np.any(v <= 0.0) or np.any(v >= 1.0):
                raise ValueError(f"{name} must lie strictly inside (0, 1)")
        if not np.array_equal(self.s, self.s_a + self.s_p):
            raise ValueError("fused spatial attention must equal s_a + s_p")
        if not np.array_equal(self.t, self.t_b + self.t_f):
            raise ValueError("fused temporal attention must equal t_b + t_f")


def fuse_attention(s_p, s_a, t_b, t_f):
    """Elementwise sums s = s_a + s_p and t = t_b + t_f; no renormalization."""
    s_p, s_a = np.asarray(s_p), np.asarray(s_a)
    t_b, t_f = np.asarray(t_b), np.asarray(t_f)
    if s_p.shape != s_a.shape:
        raise ValueError(f"spatial attention length mismatch: {s_p.shape} vs {s_a.shape}")
    if t_b.shape != t_f.shape:
        raise ValueError(f"temporal attention length mismatch: {t_b.shape} vs {t_f.shape}")
    return s_a + s_p, t_b + t_f


def make_attention_bundle(s_p, s_a, t_b, t_f):
    s, t = fuse_attention(s_p, s_a, t_b, t_f)
    return AttentionBundle(s_p=np.asarray(s_p), s_a=np.asarray(s_a),
                           t_b=np.asarray(t_b), t_f=np.asarray(t_f), s=s, t=t)


def apply_attention(x, s, t):
    """Weight x (T,N,C) by the rank-1 matrix t s^T, shared across channels.

    The weight matrix is materialized first, so this agrees bit for bit with
    forming A = outer(t, s) and taking A * x elementwise.
    """
    x = np.asarray(x)
    t = np.asarray(t)
    s = np.asarray(s)
    if x.ndim != 3 or t.shape != (x.shape[0],) or s.shape != (x.shape[1],):
        raise ValueError(f"apply_attention: shapes {x.shape}, {t.shape}, {s.shape} disagree")
    weight = np.outer(t, s).astype(x.dtype)
    return x * weight[:, :, None]


def classify(x_weighted, classifier):
    """Residual-net verdict on an attention-weighted (T,N,C) map."""
    inp = ad.Tensor(np.asarray(x_weighted, dtype=np.float32).transpose(2, 0, 1)[None])
    logits = classifier.forward(inp, train=False)
    p_fake = float(softmax(logits.data[0])[1])
    return Prediction(p_fake=p_fake)


# ---------------------------------------------------------------------------
# component nets


class SpatialAttentionNet:
    """Adaptive per-block attention from a temporal conv stack.

    Conv with `kernels` filters of temporal extent x 1 spatial extent
    (same-padded in time), batch norm, global max pool over time, then a
    1-wide projection and sigmoid to one weight per block.
    """

    def __init__(self, channels=3, kernels=64, extent=15, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.extent = int(extent)
        self.kernels = int(kernels)
        self.params = {
            # no conv bias: the batch norm right after would cancel it
            "conv_w": _param(rng, (kernels, channels, extent, 1), channels * extent, dtype),
            "bn_gamma": ad.Tensor(np.ones(kernels, dtype), requires_grad=True),
            "bn_beta": ad.Tensor(np.zeros(kernels, dtype), requires_grad=True),
            "proj_w": _param(rng, (kernels, 1), kernels, dtype),
            "proj_b": ad.Tensor(np.zeros(1, dtype), requires_grad=True),
        }
        self.running = {"bn": ad.RunningStats.create(kernels, dtype)}

    def forward(self, x, train):
        """x (B, C, T, N) -> (B, N), each entry in (0, 1)."""
        b, _, t, n = x.data.shape
        if t < self.extent:
            raise ValueError(f"temporal length {t} shorter than kernel extent {self.extent}")
        p = self.params
        h = ad.conv2d(x, p["conv_w"], stride=1, padding=(self.extent // 2, 0))
        h = ad.batch_norm(h, p["bn_gamma"], p["bn_beta"], self.running["bn"], train=train)
        h = ad.reduce_max(h, axis=2)                       # (B, K, N)
        h = ad.reshape(ad.transpose(h, (0, 2, 1)), (b * n, self.kernels))
        h = ad.add_bias(ad.matmul(h, p["proj_w"]), p["proj_b"])
        return ad.sigmoid(ad.reshape(h, (b, n)))


class BlockTemporalNet:
    """Per-frame attention from a recurrence over the map's frame slices.

    Default (frame-major) mode feeds the flattened (N*C) slice of each frame
    for T steps; a scalar head + sigmoid yields one weight per frame. The
    experimental block-major mode feeds the N block rows (each T*C long) and
    maps the final hidden state to T outputs; it requires a fixed T.
    """

    def __init__(self, input_dim, hidden=16, rng=None, block_major=False,
                 seq_len=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.hidden = int(hidden)
        self.block_major = bool(block_major)
        self.seq_len = seq_len
        self.running = {}
        b0 = np.zeros(4 * hidden, dtype)
        b0[hidden : 2 * hidden] = 1.0  # forget-gate bias starts open
        self.params = {
            "wx": _param(rng, (input_dim, 4 * hidden), input_dim, dtype),
            "wh": _param(rng, (hidden, 4 * hidden), hidden, dtype),
            "b": ad.Tensor(b0, requires_grad=True),
        }
        if block_major:
            if not seq_len:
                raise ValueError("block-major mode requires a fixed sequence length")
            self.params["head_w"] = _param(rng, (hidden, int(seq_len)), hidden, dtype)
            self.params["head_b"] = ad.Tensor(np.zeros(int(seq_len), dtype), requires_grad=True)
        else:
            self.params["head_w"] = _param(rng, (hidden, 1), hidden, dtype)
            self.params["head_b"] = ad.Tensor(np.zeros(1, dtype), requires_grad=True)

    def forward(self, x_np, train=True):
        """x_np (B, T, N, C) -> Tensor (B, T) of weights in (0, 1)."""
        del train  # stateless net; signature kept symmetric
        b, t, n, c = x_np.shape
        p = self.params
        dtype = p["wx"].dtype
        if self.block_major:
            if t != self.seq_len:
                raise ValueError("block-major temporal attention requires the configured T")
            steps = x_np.transpose(0, 2, 1, 3).reshape(b, n, t * c)
            n_steps = n
        else:
            steps = x_np.reshape(b, t, n * c)
            n_steps = t
        h = ad.Tensor(np.zeros((b, self.hidden), dtype))
        cell = ad.Tensor(np.zeros((b, self.hidden), dtype))
        outs = []
        for i in range(n_steps):
            x_t = ad.Tensor(np.ascontiguousarray(steps[:, i], dtype=dtype))
            h, cell = ad.lstm_step(x_t, h, cell, p["wx"], p["wh"], p["b"])
            if not self.block_major:
                outs.append(ad.add_bias(ad.matmul(h, p["head_w"]), p["head_b"]))
        if self.block_major:
            out = ad.add_bias(ad.matmul(h, p["head_w"]), p["head_b"])
        else:
            out = ad.concat(outs, axis=1)
        return ad.sigmoid(out)


class FrameScorer:
    """Compact per-frame fake scorer: four conv blocks, two dense layers.

    Input frames are (B, 3, S, S) with S divisible by 32. Emits one logit per
    frame; sigmoid of it is the frame-level attention weight.
    """

    def __init__(self, input_size=64, rng=None, dtype=np.float32):
        if input_size % 32:
            raise ValueError("frame scorer input size must be divisible by 32")
        rng = rng or np.random.default_rng(0)
        self.input_size = int(input_size)
        chans = [(8, 3, 3), (8, 8, 5), (16, 8, 5), (16, 16, 5)]
        self.pools = (2, 2, 2, 4)
        self.params = {}
        self.running = {}
        for i, (co, ci, k) in enumerate(chans, start=1):
            self.params[f"c{i}_w"] = _param(rng, (co, ci, k, k), ci * k * k, dtype)
            self.params[f"c{i}_b"] = ad.Tensor(np.zeros(co, dtype), requires_grad=True)
            self.params[f"c{i}_gamma"] = ad.Tensor(np.ones(co, dtype), requires_grad=True)
            self.params[f"c{i}_beta"] = ad.Tensor(np.zeros(co, dtype), requires_grad=True)
            self.running[f"c{i}_bn"] = ad.RunningStats.create(co, dtype)
        flat = 16 * (input_size // 32) ** 2
        self.params["fc1_w"] = _param(rng, (flat, 16), flat, dtype)
        self.params["fc1_b"] = ad.Tensor(np.zeros(16, dtype), requires_grad=True)
        self.params["fc2_w"] = _param(rng, (16, 1), 16, dtype)
        self.params["fc2_b"] = ad.Tensor(np.zeros(1, dtype), requires_grad=True)

    def forward(self, x, train):
        """x Tensor (B, 3, S, S) -> logits Tensor (B,)."""
        p = self.params
        h = x
        for i, pool in enumerate(self.pools, start=1):
            k = p[f"c{i}_w"].shape[2]
            h = ad.conv2d(h, p[f"c{i}_w"], stride=1, padding=(k // 2, k // 2))
            h = ad.add_bias(h, p[f"c{i}_b"])
            h = ad.relu(h)
            h = ad.batch_norm(h, p[f"c{i}_gamma"], p[f"c{i}_beta"], self.running[f"c{i}_bn"], train=train)
            h = ad.max_pool2d(h, pool)
        b = h.shape[0]
        h = ad.reshape(h, (b, int(np.prod(h.shape[1:]))))
        h = ad.relu(ad.add_bias(ad.matmul(h, p["fc1_w"]), p["fc1_b"]))
        h = ad.add_bias(ad.matmul(h, p["fc2_w"]), p["fc2_b"])
        return ad.reshape(h, (b,))

    def score_frames(self, frames_np, batch=256):
        """Per-frame probabilities in (0, 1); frames_np is (M, 3, S, S) float32."""
        out = np.empty(frames_np.shape[0], dtype=np.float32)
        for lo in range(0, frames_np.shape[0], batch):
            chunk = ad.Tensor(frames_np[lo : lo + batch])
            logits = self.forward(chunk, train=False)
            out[lo : lo + logits.shape[0]] = 1.0 / (1.0 + np.exp(-logits.data))
        return out


class MapClassifier:
    """Residual classifier over the weighted map seen as a C-channel image.

    A stride-2 stem, then four stages of two basic blocks each (3x3 convs,
    identity or projected shortcut), widths w, 2w, 4w, 8w with stride-2
    downsampling from stage 2, global average pool, and a 2-way dense head.
    """

    STEM_STRIDE = 2

    def __init__(self, channels=3, width=8, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.width = int(width)
        self.params = {}
        self.running = {}
        self._conv("stem", channels, width, 3, rng, dtype)
        self.blocks = []
        w_in = width
        for stage, (w_out, stride) in enumerate([(width, 1), (2 * width, 2), (4 * width, 2), (8 * width, 2)], start=1):
            for blk in range(2):
                name = f"s{stage}b{blk}"
                s = stride if blk == 0 else 1
                self._conv(f"{name}.c1", w_in, w_out, 3, rng, dtype)
                self._conv(f"{name}.c2", w_out, w_out, 3, rng, dtype)
                project = s != 1 or w_in != w_out
                if project:
                    self._conv(f"{name}.sc", w_in, w_out, 1, rng, dtype)
                self.blocks.append((name, s, project))
                w_in = w_out
        self.params["fc_w"] = _param(rng, (8 * width, 2), 8 * width, dtype)
        self.params["fc_b"] = ad.Tensor(np.zeros(2, dtype), requires_grad=True)

    def _conv(self, name, ci, co, k, rng, dtype):
        self.params[f"{name}.w"] = _param(rng, (co, ci, k, k), ci * k * k, dtype)
        self.params[f"{name}.gamma"] = ad.Tensor(np.ones(co, dtype), requires_grad=True)
        self.params[f"{name}.beta"] = ad.Tensor(np.zeros(co, dtype), requires_grad=True)
        self.running[f"{name}.bn"] = ad.RunningStats.create(co, dtype)

    def _conv_bn(self, x, name, stride, train):
        p = self.params
        k = p[f"{name}.w"].shape[2]
        h = ad.conv2d(x, p[f"{name}.w"], stride=stride, padding=(k // 2, k // 2))
        return ad.batch_norm(h, p[f"{name}.gamma"], p[f"{name}.beta"], self.running[f"{name}.bn"], train=train)

    def forward(self, x, train):
        """x Tensor (B, C, H, W) -> logits Tensor (B, 2)."""
        h = ad.relu(self._conv_bn(x, "stem", self.STEM_STRIDE, train))
        for name, stride, project in self.blocks:
            inner = ad.relu(self._conv_bn(h, f"{name}.c1", stride, train))
            inner = self._conv_bn(inner, f"{name}.c2", 1, train)
            short = self._conv_bn(h, f"{name}.sc", stride, train) if project else h
            h = ad.relu(ad.add(inner, short))
        pooled = ad.reduce_mean(h, axes=(2, 3))
        return ad.add_bias(ad.matmul(pooled, self.params["fc_w"]), self.params["fc_b"])


# ---------------------------------------------------------------------------
# assembled model


ABLATION_FLAGS = ("mm", "A", "P", "B", "F", "e2e")


class DualAttentionModel:
    """All components plus the fused forward pass used for training and eval."""

    def __init__(self, n_blocks, channels=3, atten_kernels=64, atten_extent=15,
                 lstm_hidden=16, classifier_width=8, meso_input=64,
                 lstm_block_major=False, seq_len=None, seed=0):
        self.spec = dict(n_blocks=n_blocks, channels=channels, atten_kernels=atten_kernels,
                         atten_extent=atten_extent, lstm_hidden=lstm_hidden,
                         classifier_width=classifier_width, meso_input=meso_input,
                         lstm_block_major=lstm_block_major, seq_len=seq_len)
        root = np.random.SeedSequence(seed)
        rngs = [np.random.default_rng(s) for s in root.spawn(4)]
        self.spatial = SpatialAttentionNet(channels, atten_kernels, atten_extent, rngs[0])
        self.temporal = BlockTemporalNet(n_blocks * channels, lstm_hidden, rngs[1],
                                         block_major=lstm_block_major, seq_len=seq_len)
        self.scorer = FrameScorer(meso_input, rngs[2])
        self.classifier = MapClassifier(channels, classifier_width, rngs[3])

    def components(self):
        return {"spatial": self.spatial, "temporal": self.temporal,
                "scorer": self.scorer, "classifier": self.classifier}

    def named_params(self, parts=None):
        """Flat dict 'component.param' -> Tensor."""
        out = {}
        for cname, comp in self.components().items():
            if parts is not None and cname not in parts:
                continue
            for pname, tensor in comp.params.items():
                out[f"{cname}.{pname}"] = tensor
        return out

    def trainable_parts(self, flags):
        """Components updated by joint training; the frame scorer stays frozen."""
        parts = ["classifier"]
        if "A" in flags:
            parts.append("spatial")
        if "B" in flags:
            parts.append("temporal")
        return parts

    def batch_logits(self, maps, s_p, t_f, flags, train):
        """Forward a batch: maps (B,T,N,C), s_p (B,N), t_f (B,T) or None."""
        b, t, n, c = maps.shape
        x = ad.Tensor(np.ascontiguousarray(maps, dtype=np.float32))
        s_parts = []
        if "A" in flags:
            s_parts.append(self.spatial.forward(ad.transpose(x, (0, 3, 1, 2)), train))
        if "P" in flags:
            s_parts.append(ad.Tensor(np.ascontiguousarray(s_p, dtype=np.float32)))
        t_parts = []
        if "B" in flags:
            t_parts.append(self.temporal.forward(maps, train))
        if "F" in flags:
            if t_f is None:
                raise ValueError("flag F requires precomputed frame scores")
            t_parts.append(ad.Tensor(np.ascontiguousarray(t_f, dtype=np.float32)))
        s = s_parts[0] if s_parts else ad.Tensor(np.ones((b, n), dtype=np.float32))
        for extra in s_parts[1:]:
            s = ad.add(s, extra)
        t_vec = t_parts[0] if t_parts else ad.Tensor(np.ones((b, t), dtype=np.float32))
        for extra in t_parts[1:]:
            t_vec = ad.add(t_vec, extra)
        weighted = ad.attention_scale(x, t_vec, s)
        return self.classifier.forward(ad.transpose(weighted, (0, 3, 1, 2)), train)

    def predict(self, mmap_values, s_p, t_f, flags):
        """Single-video Prediction in eval mode."""
        logits = self.batch_logits(mmap_values[None], s_p[None],
                                   None if t_f is None else t_f[None], flags, train=False)
        return Prediction(p_fake=float(softmax(logits.data[0])[1]))

    def attention_bundle(self, mmap_values, s_p):
        """Eval-mode attention vectors for one video (t_f from the scorer's side)."""
        x = ad.Tensor(mmap_values[None].astype(np.float32))
        s_a = self.spatial.forward(ad.transpose(x, (0, 3, 1, 2)), train=False).data[0]
        t_b = self.temporal.forward(mmap_values[None], train=False).data[0]
        return s_a, t_b


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, adam_state=None, extra_meta=None):
    """Named-parameter archive with running stats, optimizer state and a
    versioned meta header."""
    arrays = {}
    for cname, comp in model.components().items():
        for pname, tensor in comp.params.items():
            arrays[f"param/{cname}.{pname}"] = tensor.data
        for rname, rs in getattr(comp, "running", {}).items():
            arrays[f"running/{cname}.{rname}.mean"] = rs.mean
            arrays[f"running/{cname}.{rname}.var"] = rs.var
    meta = {"version": CHECKPOINT_VERSION, "spec": model.spec}
    if extra_meta:
        meta["extra"] = extra_meta
    if adam_state is not None:
        meta["adam"] = {"lr": adam_state.lr, "beta1": adam_state.beta1,
                        "beta2": adam_state.beta2, "eps": adam_state.eps,
                        "weight_decay": adam_state.weight_decay,
                        "step_count": adam_state.step_count}
        for name, arr in adam_state.m.items():
            arrays[f"adam/m/{name}"] = arr
        for name, arr in adam_state.v.items():
            arrays[f"adam/v/{name}"] = arr
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Rebuild the model (and Adam state if stored) from an archive."""
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        spec = meta["spec"]
        model = DualAttentionModel(**spec)
        for cname, comp in model.components().items():
            for pname, tensor in comp.params.items():
                tensor.data = z[f"param/{cname}.{pname}"].copy()
            for rname, rs in getattr(comp, "running", {}).items():
                rs.mean = z[f"running/{cname}.{rname}.mean"].copy()
                rs.var = z[f"running/{cname}.{rname}.var"].copy()
        adam_state = None
        if "adam" in meta:
            cfg = meta["adam"]
            adam_state = ad.AdamState(lr=cfg["lr"], beta1=cfg["beta1"], beta2=cfg["beta2"],
                                      eps=cfg["eps"], weight_decay=cfg["weight_decay"],
                                      step_count=cfg["step_count"])
            for key in z.files:
                if key.startswith("adam/m/"):
                    adam_state.m[key[len("adam/m/"):]] = z[key].copy()
                elif key.startswith("adam/v/"):
                    adam_state.v[key[len("adam/v/"):]] = z[key].copy()
    return model, adam_state, meta.get("extra")
