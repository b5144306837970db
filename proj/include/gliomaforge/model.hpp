#pragma once

// SegFormer3D+ network: frequency-aware stem, four-stage hierarchical
// transformer encoder, dual (spatial + channel) attention on the deepest
// stage, and a skip-fused transposed-convolution decoder.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gliomaforge/checkpoint.hpp"
#include "gliomaforge/conv.hpp"
#include "gliomaforge/random.hpp"
#include "gliomaforge/tensor.hpp"
#include "gliomaforge/util.hpp"

namespace gliomaforge {

struct ModelConfig {
    int in_channels = 4;
    int num_classes = 4;
    std::array<int, 4> stage_channels{48, 96, 192, 384};
    std::array<int, 4> stage_heads{4, 4, 6, 8};
    std::array<int, 4> stage_strides{4, 2, 2, 2};
    std::array<int, 4> stage_depths{2, 2, 2, 2};
    std::array<int, 4> sr_ratios{8, 4, 2, 1};
    int decoder_channels = 48;
    int spatial_attn_kernel = 7;
    int channel_attn_reduction = 8;
    int ffn_expansion = 4;

    /// Spatial dims of the network input must be multiples of this.
    int divisor() const { return stage_strides[0] * stage_strides[1] * stage_strides[2] * stage_strides[3]; }

    void validate() const {
        require(in_channels >= 1 && num_classes >= 2, ErrorKind::config, "model needs >= 1 input and >= 2 classes");
        for (std::size_t i = 0; i < 4; ++i) {
            require(stage_channels[i] >= 1 && stage_heads[i] >= 1 && stage_strides[i] >= 1 && stage_depths[i] >= 0 &&
                        sr_ratios[i] >= 1,
                    ErrorKind::config, "model stage " + std::to_string(i) + " has a nonpositive setting");
            require(stage_channels[i] % stage_heads[i] == 0, ErrorKind::config,
                    "stage " + std::to_string(i) + " channels not divisible by heads");
        }
        require(decoder_channels >= 1 && ffn_expansion >= 1, ErrorKind::config, "decoder/ffn widths must be positive");
        require(spatial_attn_kernel >= 1 && spatial_attn_kernel % 2 == 1, ErrorKind::config,
                "spatial attention kernel must be odd");
        require(channel_attn_reduction >= 1 && stage_channels[3] / channel_attn_reduction >= 1, ErrorKind::config,
                "channel attention reduction too large");
    }

    KeyValueConfig to_config() const {
        KeyValueConfig kv;
        auto list = [](const std::array<int, 4>& a) {
            return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," +
                   std::to_string(a[3]);
        };
        kv.set("model.in_channels", std::to_string(in_channels));
        kv.set("model.num_classes", std::to_string(num_classes));
        kv.set("model.stage_channels", list(stage_channels));
        kv.set("model.stage_heads", list(stage_heads));
        kv.set("model.stage_strides", list(stage_strides));
        kv.set("model.stage_depths", list(stage_depths));
        kv.set("model.sr_ratios", list(sr_ratios));
        kv.set("model.decoder_channels", std::to_string(decoder_channels));
        kv.set("model.spatial_attn_kernel", std::to_string(spatial_attn_kernel));
        kv.set("model.channel_attn_reduction", std::to_string(channel_attn_reduction));
        kv.set("model.ffn_expansion", std::to_string(ffn_expansion));
        return kv;
    }

    static ModelConfig from_config(const KeyValueConfig& kv) {
        ModelConfig c;
        auto list = [&](const std::string& key, std::array<int, 4> fallback) {
            const auto v = kv.get_ints(key, {fallback.begin(), fallback.end()});
            require(v.size() == 4, ErrorKind::config, key + " needs 4 entries");
            return std::array<int, 4>{v[0], v[1], v[2], v[3]};
        };
        c.in_channels = static_cast<int>(kv.get_int("model.in_channels", c.in_channels));
        c.num_classes = static_cast<int>(kv.get_int("model.num_classes", c.num_classes));
        c.stage_channels = list("model.stage_channels", c.stage_channels);
        c.stage_heads = list("model.stage_heads", c.stage_heads);
        c.stage_strides = list("model.stage_strides", c.stage_strides);
        c.stage_depths = list("model.stage_depths", c.stage_depths);
        c.sr_ratios = list("model.sr_ratios", c.sr_ratios);
        c.decoder_channels = static_cast<int>(kv.get_int("model.decoder_channels", c.decoder_channels));
        c.spatial_attn_kernel = static_cast<int>(kv.get_int("model.spatial_attn_kernel", c.spatial_attn_kernel));
        c.channel_attn_reduction = static_cast<int>(kv.get_int("model.channel_attn_reduction", c.channel_attn_reduction));
        c.ffn_expansion = static_cast<int>(kv.get_int("model.ffn_expansion", c.ffn_expansion));
        c.validate();
        return c;
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Registers named parameters and initialises them from one seeded stream,
/// in registration order.
template <typename T>
class ParameterSet {
public:
    explicit ParameterSet(std::uint64_t seed) : rng_(seed) {}

    Tensor<T> kaiming(const std::string& name, const Shape& shape, double fan_in) {
        const double stddev = std::sqrt(2.0 / fan_in);
        std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
        for (auto& x : v) x = static_cast<T>(stddev * rng_.normal());
        return add(name, Tensor<T>::from(shape, std::move(v), true));
    }
    Tensor<T> constant(const std::string& name, const Shape& shape, double value) {
        return add(name, Tensor<T>::full(shape, static_cast<T>(value), true));
    }

    std::vector<NamedTensor<T>>& items() { return items_; }
    const std::vector<NamedTensor<T>>& items() const { return items_; }

private:
    Tensor<T> add(const std::string& name, Tensor<T> t) {
        for (const auto& p : items_) require(p.name != name, ErrorKind::config, "duplicate parameter name " + name);
        items_.push_back({name, t});
        return t;
    }

    Rng rng_;
    std::vector<NamedTensor<T>> items_;
};

// ---------------------------------------------------------------------------
// Token/grid layout helpers.

template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& x) {
    const Shape& s = x.shape();
    const Grid3 g = spatial_of(s);
    return permute(reshape(x, {s[0], s[1], g.count()}), {0, 2, 1});
}

template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens, Grid3 g) {
    const Shape& s = tokens.shape();
    require(s.size() == 3 && s[1] == g.count(), ErrorKind::shape,
            "tokens " + shape_str(s) + " do not fill a " + std::to_string(g.d) + "x" + std::to_string(g.h) + "x" +
                std::to_string(g.w) + " grid");
    return reshape(permute(tokens, {0, 2, 1}), {s[0], s[2], g.d, g.h, g.w});
}

// ---------------------------------------------------------------------------
// Layers.

template <typename T>
struct Linear {
    Tensor<T> weight; // in x out
    Tensor<T> bias;   // out

    Linear() = default;
    Linear(ParameterSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out)
        : weight(ps.kaiming(name + ".weight", {in, out}, static_cast<double>(in))),
          bias(ps.constant(name + ".bias", {out}, 0.0)) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        Shape bshape(x.rank(), 1);
        bshape.back() = bias.numel();
        return add(matmul(x, weight), reshape(bias, bshape));
    }
};

template <typename T>
struct Conv3d {
    Tensor<T> weight;
    std::optional<Tensor<T>> bias;
    ConvOptions options;

    Conv3d() = default;
    Conv3d(ParameterSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k,
           ConvOptions opt, bool with_bias = true)
        : options(opt) {
        const std::int64_t per_group = in / opt.groups;
        weight = ps.kaiming(name + ".weight", {out, per_group, k, k, k}, static_cast<double>(per_group * k * k * k));
        if (with_bias) bias = ps.constant(name + ".bias", {out}, 0.0);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, options); }
};

template <typename T>
struct ConvTranspose3d {
    Tensor<T> weight; // in x out x k^3
    Tensor<T> bias;
    std::int64_t stride = 1;
    std::int64_t padding = 0;

    ConvTranspose3d() = default;
    ConvTranspose3d(ParameterSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k,
                    std::int64_t s, std::int64_t pad = 0)
        : stride(s), padding(pad) {
        const double overlap = static_cast<double>(k * k * k) / static_cast<double>(s * s * s);
        weight = ps.kaiming(name + ".weight", {in, out, k, k, k}, static_cast<double>(in) * std::max(1.0, overlap));
        bias = ps.constant(name + ".bias", {out}, 0.0);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        return conv_transpose3d(x, weight, std::optional<Tensor<T>>(bias), stride, padding);
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParameterSet<T>& ps, const std::string& name, std::int64_t c)
        : gamma(ps.constant(name + ".gamma", {c}, 1.0)), beta(ps.constant(name + ".beta", {c}, 0.0)) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// Self-attention whose keys and values come from a grid downsampled by a
/// strided r^3 convolution. When the grid is smaller than r along some axis
/// it is zero-padded so the reduced grid keeps at least one cell.
template <typename T>
struct EfficientSelfAttention {
    int heads = 1;
    int sr_ratio = 1;
    Linear<T> query, key, value, proj;
    Conv3d<T> reduce;
    LayerNorm<T> reduce_norm;
    mutable Tensor<T> last_attention; // N x heads x L x Lr, from the latest forward

    EfficientSelfAttention() = default;
    EfficientSelfAttention(ParameterSet<T>& ps, const std::string& name, std::int64_t c, int h, int sr)
        : heads(h), sr_ratio(sr), query(ps, name + ".query", c, c), key(ps, name + ".key", c, c),
          value(ps, name + ".value", c, c), proj(ps, name + ".proj", c, c) {
        if (sr > 1) {
            reduce = Conv3d<T>(ps, name + ".reduce", c, c, sr, ConvOptions{sr, 0, 1});
            reduce_norm = LayerNorm<T>(ps, name + ".reduce_norm", c);
        }
    }

    /// Reduction padding that keeps the reduced grid at least 1^3.
    std::int64_t reduction_padding(Grid3 g) const {
        const std::int64_t smallest = std::min({g.d, g.h, g.w});
        return smallest >= sr_ratio ? 0 : (sr_ratio - smallest + 1) / 2;
    }

    Tensor<T> operator()(const Tensor<T>& x, Grid3 grid) const {
        const Shape& s = x.shape();
        require(s.size() == 3 && s[2] % heads == 0, ErrorKind::shape, "attention input must be N x L x C with C % heads == 0");
        const std::int64_t n = s[0], L = s[1], c = s[2], dh = c / heads;

        Tensor<T> kv_src = x;
        if (sr_ratio > 1) {
            ConvOptions opt = reduce.options;
            opt.padding = reduction_padding(grid);
            Tensor<T> reduced = conv3d(tokens_to_grid(x, grid), reduce.weight, reduce.bias, opt);
            kv_src = reduce_norm(grid_to_tokens(reduced));
        }
        const std::int64_t Lr = kv_src.dim(1);

        auto split_heads = [&](const Tensor<T>& t, std::int64_t len) {
            return permute(reshape(t, {n, len, heads, dh}), {0, 2, 1, 3});
        };
        const Tensor<T> q = split_heads(query(x), L);
        const Tensor<T> k = split_heads(key(kv_src), Lr);
        const Tensor<T> v = split_heads(value(kv_src), Lr);
        const Tensor<T> scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
        last_attention = softmax(scores, 3);
        const Tensor<T> mixed = matmul(last_attention, v); // n x h x L x dh
        return proj(reshape(permute(mixed, {0, 2, 1, 3}), {n, L, c}));
    }
};

/// Pointwise expand, depthwise 3^3 convolution on the grid, GELU, pointwise
/// project back.
template <typename T>
struct MixFFN {
    Linear<T> fc1, fc2;
    Conv3d<T> depthwise;

    MixFFN() = default;
    MixFFN(ParameterSet<T>& ps, const std::string& name, std::int64_t c, int expansion)
        : fc1(ps, name + ".fc1", c, c * expansion) {
        const std::int64_t hidden = c * expansion;
        depthwise = Conv3d<T>(ps, name + ".depthwise", hidden, hidden, 3, ConvOptions{1, 1, hidden});
        fc2 = Linear<T>(ps, name + ".fc2", hidden, c);
    }

    Tensor<T> operator()(const Tensor<T>& x, Grid3 grid) const {
        const Tensor<T> h = tokens_to_grid(fc1(x), grid);
        return fc2(gelu(grid_to_tokens(depthwise(h))));
    }
};

template <typename T>
struct TransformerBlock {
    LayerNorm<T> norm1, norm2;
    EfficientSelfAttention<T> attention;
    MixFFN<T> ffn;

    TransformerBlock() = default;
    TransformerBlock(ParameterSet<T>& ps, const std::string& name, std::int64_t c, int heads, int sr, int expansion)
        : norm1(ps, name + ".norm1", c), norm2(ps, name + ".norm2", c),
          attention(ps, name + ".attention", c, heads, sr), ffn(ps, name + ".ffn", c, expansion) {}

    Tensor<T> operator()(const Tensor<T>& x, Grid3 grid) const {
        const Tensor<T> y = add(x, attention(norm1(x), grid));
        return add(y, ffn(norm2(y), grid));
    }
};

/// Overlapped patch merging (kernel 2s-1, padding s-1, so the grid shrinks by
/// exactly s) followed by transformer blocks.
template <typename T>
struct EncoderStage {
    Conv3d<T> patch;
    LayerNorm<T> patch_norm, out_norm;
    std::vector<TransformerBlock<T>> blocks;

    EncoderStage() = default;
    EncoderStage(ParameterSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t c, int stride, int heads,
                 int depth, int sr, int expansion) {
        const std::int64_t k = 2 * stride - 1;
        patch = Conv3d<T>(ps, name + ".patch", in, c, k, ConvOptions{stride, k / 2, 1});
        patch_norm = LayerNorm<T>(ps, name + ".patch_norm", c);
        for (int b = 0; b < depth; ++b)
            blocks.emplace_back(ps, name + ".block" + std::to_string(b), c, heads, sr, expansion);
        out_norm = LayerNorm<T>(ps, name + ".out_norm", c);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        const Tensor<T> merged = patch(x);
        const Grid3 grid = spatial_of(merged.shape());
        Tensor<T> tokens = patch_norm(grid_to_tokens(merged));
        for (const auto& block : blocks) tokens = block(tokens, grid);
        return tokens_to_grid(out_norm(tokens), grid);
    }
};

template <typename T>
struct StemOutput {
    Tensor<T> low, high, high_path, out;
};

/// Two depthwise 3^3 paths: a low-pass path starting as a 1/27 box filter and
/// a Kaiming-initialised path from which the low-pass response is subtracted.
template <typename T>
struct FrequencyStem {
    Conv3d<T> low, high;

    FrequencyStem() = default;
    FrequencyStem(ParameterSet<T>& ps, const std::string& name, std::int64_t c) {
        low.options = ConvOptions{1, 1, c};
        low.weight = ps.constant(name + ".low.weight", {c, 1, 3, 3, 3}, 1.0 / 27.0);
        high = Conv3d<T>(ps, name + ".high", c, c, 3, ConvOptions{1, 1, c}, false);
    }

    StemOutput<T> operator()(const Tensor<T>& x) const {
        Grid3 g = spatial_of(x.shape());
        require(g.d >= 3 && g.h >= 3 && g.w >= 3, ErrorKind::shape, "stem needs spatial dims >= 3");
        StemOutput<T> s;
        s.low = low(x);
        s.high_path = high(x);
        s.high = sub(s.high_path, s.low);
        s.out = concat<T>({s.low, s.high}, 1);
        return s;
    }
};

template <typename T>
struct DualAttentionOutput {
    Tensor<T> spatial;  // N x 1 x d x h x w
    Tensor<T> channel;  // N x C x 1 x 1 x 1
    Tensor<T> attended; // F * spatial * channel
};

template <typename T>
struct DualAttention {
    Conv3d<T> spatial;
    Linear<T> squeeze, excite;

    DualAttention() = default;
    DualAttention(ParameterSet<T>& ps, const std::string& name, std::int64_t c, int kernel, int reduction) {
        spatial = Conv3d<T>(ps, name + ".spatial", 2, 1, kernel, ConvOptions{1, kernel / 2, 1});
        const std::int64_t hidden = std::max<std::int64_t>(1, c / reduction);
        squeeze = Linear<T>(ps, name + ".squeeze", c, hidden);
        excite = Linear<T>(ps, name + ".excite", hidden, c);
    }

    DualAttentionOutput<T> operator()(const Tensor<T>& f) const {
        const Shape& s = f.shape();
        DualAttentionOutput<T> out;
        out.spatial = sigmoid(spatial(concat<T>({channel_max(f), channel_mean(f)}, 1)));
        out.channel = reshape(sigmoid(excite(relu(squeeze(global_avg_pool(f))))), {s[0], s[1], 1, 1, 1});
        out.attended = mul(mul(f, out.spatial), out.channel);
        return out;
    }
};

template <typename T>
struct Decoder {
    std::array<ConvTranspose3d<T>, 3> up;   // 1/32->1/16, 1/16->1/8, 1/8->1/4
    std::array<Conv3d<T>, 3> skip;          // projections of stages 3, 2, 1 (1/16, 1/8, 1/4)
    ConvTranspose3d<T> final_up;            // 1/4 -> 1/1, kernel s + 2 floor(s/2) so neighbours overlap
    Conv3d<T> classifier;

    Decoder() = default;
    Decoder(ParameterSet<T>& ps, const std::string& name, const ModelConfig& cfg) {
        const std::int64_t dc = cfg.decoder_channels;
        for (int i = 0; i < 3; ++i) {
            const int deep = 3 - i;   // source stage of this upsampling
            const int shallow = 2 - i; // skip stage it fuses with
            const std::int64_t in = i == 0 ? cfg.stage_channels[3] : dc;
            const std::int64_t s = cfg.stage_strides[static_cast<std::size_t>(deep)];
            up[static_cast<std::size_t>(i)] = ConvTranspose3d<T>(ps, name + ".up" + std::to_string(i), in, dc, s, s);
            skip[static_cast<std::size_t>(i)] =
                Conv3d<T>(ps, name + ".skip" + std::to_string(shallow), cfg.stage_channels[static_cast<std::size_t>(shallow)], dc, 1, ConvOptions{});
        }
        const std::int64_t s0 = cfg.stage_strides[0];
        final_up = ConvTranspose3d<T>(ps, name + ".final_up", dc, dc, s0 + 2 * (s0 / 2), s0, s0 / 2);
        classifier = Conv3d<T>(ps, name + ".classifier", dc, cfg.num_classes, 1, ConvOptions{});
    }

    Tensor<T> operator()(const std::array<Tensor<T>, 4>& pyramid, const Tensor<T>& attended) const {
        Tensor<T> x = attended;
        for (std::size_t i = 0; i < 3; ++i) x = gelu(add(up[i](x), skip[i](pyramid[2 - i])));
        return classifier(gelu(final_up(x)));
    }
};

template <typename T>
struct ForwardTrace {
    StemOutput<T> stem;
    std::array<Tensor<T>, 4> pyramid;
    DualAttentionOutput<T> attention;
    Tensor<T> logits;
};

template <typename T>
class SegFormer3DPlus {
public:
    explicit SegFormer3DPlus(const ModelConfig& cfg = {}, std::uint64_t seed = 42) : config_(cfg), params_(seed) {
        cfg.validate();
        stem_ = FrequencyStem<T>(params_, "stem", cfg.in_channels);
        std::int64_t in = 2 * cfg.in_channels;
        for (std::size_t i = 0; i < 4; ++i) {
            stages_[i] = EncoderStage<T>(params_, "encoder.stage" + std::to_string(i), in, cfg.stage_channels[i],
                                         cfg.stage_strides[i], cfg.stage_heads[i], cfg.stage_depths[i], cfg.sr_ratios[i],
                                         cfg.ffn_expansion);
            in = cfg.stage_channels[i];
        }
        dual_ = DualAttention<T>(params_, "dual_attention", cfg.stage_channels[3], cfg.spatial_attn_kernel,
                                 cfg.channel_attn_reduction);
        decoder_ = Decoder<T>(params_, "decoder", cfg);
    }

    const ModelConfig& config() const { return config_; }
    std::vector<NamedTensor<T>>& parameters() { return params_.items(); }
    const std::vector<NamedTensor<T>>& parameters() const { return params_.items(); }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& p : params_.items()) n += p.tensor.numel();
        return n;
    }

    const FrequencyStem<T>& stem() const { return stem_; }
    const EncoderStage<T>& stage(std::size_t i) const { return stages_.at(i); }
    const DualAttention<T>& dual_attention() const { return dual_; }

    StemOutput<T> frequency_stem(const Tensor<T>& x) const { return stem_(x); }

    std::array<Tensor<T>, 4> encode(const Tensor<T>& stem_out) const {
        const Grid3 g = spatial_of(stem_out.shape());
        const int div = config_.divisor();
        require(g.d % div == 0 && g.h % div == 0 && g.w % div == 0, ErrorKind::shape,
                "input spatial dims " + std::to_string(g.d) + "x" + std::to_string(g.h) + "x" + std::to_string(g.w) +
                    " must be divisible by " + std::to_string(div) + "; pad the volume first");
        std::array<Tensor<T>, 4> pyramid;
        Tensor<T> x = stem_out;
        for (std::size_t i = 0; i < 4; ++i) {
            x = stages_[i](x);
            pyramid[i] = x;
        }
        return pyramid;
    }

    ForwardTrace<T> forward_traced(const Tensor<T>& x) const {
        require(x.rank() == 5 && x.dim(1) == config_.in_channels, ErrorKind::shape,
                "model input must be N x " + std::to_string(config_.in_channels) + " x D x H x W, got " + shape_str(x.shape()));
        const Grid3 g = spatial_of(x.shape());
        const int div = config_.divisor();
        require(g.d % div == 0 && g.h % div == 0 && g.w % div == 0, ErrorKind::shape,
                "input spatial dims " + std::to_string(g.d) + "x" + std::to_string(g.h) + "x" + std::to_string(g.w) +
                    " must be divisible by " + std::to_string(div) + "; pad the volume first");
        ForwardTrace<T> t;
        t.stem = stem_(x);
        t.pyramid = encode(t.stem.out);
        t.attention = dual_(t.pyramid[3]);
        t.logits = decoder_(t.pyramid, t.attention.attended);
        return t;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return forward_traced(x).logits; }

    std::vector<std::uint8_t> save() const { return encode_checkpoint(params_.items()); }
    void load(const std::vector<std::uint8_t>& bytes) { restore_checkpoint(bytes, params_.items()); }

    /// Copies parameter values from a model of any precision with the same
    /// configuration.
    template <typename U>
    void copy_parameters_from(const SegFormer3DPlus<U>& other) {
        const auto& src = other.parameters();
        auto& dst = params_.items();
        require(src.size() == dst.size(), ErrorKind::checkpoint, "parameter lists differ");
        for (std::size_t i = 0; i < dst.size(); ++i) {
            require(src[i].name == dst[i].name && src[i].tensor.shape() == dst[i].tensor.shape(), ErrorKind::checkpoint,
                    "parameter " + dst[i].name + " differs");
            auto& d = dst[i].tensor.mutable_values();
            const auto& s = src[i].tensor.values();
            for (std::size_t j = 0; j < d.size(); ++j) d[j] = static_cast<T>(s[j]);
        }
    }

private:
    ModelConfig config_;
    ParameterSet<T> params_;
    FrequencyStem<T> stem_;
    std::array<EncoderStage<T>, 4> stages_;
    DualAttention<T> dual_;
    Decoder<T> decoder_;
};

} // namespace gliomaforge
