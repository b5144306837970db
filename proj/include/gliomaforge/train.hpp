#pragma once

// Optimiser, schedule, augmentation, cropping and the training loop.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "gliomaforge/harmonize.hpp"
#include "gliomaforge/loss.hpp"
#include "gliomaforge/model.hpp"
#include "gliomaforge/random.hpp"
#include "gliomaforge/volume_io.hpp"

namespace gliomaforge {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 2;
    int crop = 64;
    int epochs_pretrain = 75;
    int epochs_finetune = 25;
    int patience = 20;
    std::uint64_t seed = 42;
    bool augment = true;
    double flip_prob = 0.5;
    double rotation_deg = 10.0;
    double scale_min = 0.9;
    double scale_max = 1.1;
    /// Held-out fold during fine-tuning.
    int val_fold = 0;
    /// Share of cases held out for validation during pretraining.
    double pretrain_val_fraction = 0.05;

    void validate() const {
        require(lr > 0 && weight_decay >= 0 && eps > 0, ErrorKind::config, "lr and eps must be positive, weight_decay >= 0");
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorKind::config, "betas must lie in [0, 1)");
        require(batch_size >= 1 && crop >= 1, ErrorKind::config, "batch_size and crop must be positive");
        require(epochs_pretrain >= 1 && epochs_finetune >= 1, ErrorKind::config, "epoch budgets must be positive");
        require(patience >= 0, ErrorKind::config, "patience must be >= 0");
        require(flip_prob >= 0 && flip_prob <= 1, ErrorKind::config, "flip_prob must lie in [0, 1]");
        require(rotation_deg >= 0 && scale_min > 0 && scale_min <= scale_max, ErrorKind::config, "bad augmentation ranges");
        require(pretrain_val_fraction >= 0 && pretrain_val_fraction < 1, ErrorKind::config,
                "pretrain_val_fraction must lie in [0, 1)");
    }

    KeyValueConfig to_config() const {
        KeyValueConfig kv;
        kv.set("train.lr", format_double(lr));
        kv.set("train.weight_decay", format_double(weight_decay));
        kv.set("train.beta1", format_double(beta1));
        kv.set("train.beta2", format_double(beta2));
        kv.set("train.eps", format_double(eps));
        kv.set("train.batch_size", std::to_string(batch_size));
        kv.set("train.crop", std::to_string(crop));
        kv.set("train.epochs_pretrain", std::to_string(epochs_pretrain));
        kv.set("train.epochs_finetune", std::to_string(epochs_finetune));
        kv.set("train.patience", std::to_string(patience));
        kv.set("train.seed", std::to_string(seed));
        kv.set("train.augment", augment ? "true" : "false");
        kv.set("train.flip_prob", format_double(flip_prob));
        kv.set("train.rotation_deg", format_double(rotation_deg));
        kv.set("train.scale_min", format_double(scale_min));
        kv.set("train.scale_max", format_double(scale_max));
        kv.set("train.val_fold", std::to_string(val_fold));
        kv.set("train.pretrain_val_fraction", format_double(pretrain_val_fraction));
        return kv;
    }

    static TrainConfig from_config(const KeyValueConfig& kv) {
        TrainConfig c;
        c.lr = kv.get_double("train.lr", c.lr);
        c.weight_decay = kv.get_double("train.weight_decay", c.weight_decay);
        c.beta1 = kv.get_double("train.beta1", c.beta1);
        c.beta2 = kv.get_double("train.beta2", c.beta2);
        c.eps = kv.get_double("train.eps", c.eps);
        c.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.batch_size));
        c.crop = static_cast<int>(kv.get_int("train.crop", c.crop));
        c.epochs_pretrain = static_cast<int>(kv.get_int("train.epochs_pretrain", c.epochs_pretrain));
        c.epochs_finetune = static_cast<int>(kv.get_int("train.epochs_finetune", c.epochs_finetune));
        c.patience = static_cast<int>(kv.get_int("train.patience", c.patience));
        c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<long long>(c.seed)));
        c.augment = kv.get_bool("train.augment", c.augment);
        c.flip_prob = kv.get_double("train.flip_prob", c.flip_prob);
        c.rotation_deg = kv.get_double("train.rotation_deg", c.rotation_deg);
        c.scale_min = kv.get_double("train.scale_min", c.scale_min);
        c.scale_max = kv.get_double("train.scale_max", c.scale_max);
        c.val_fold = static_cast<int>(kv.get_int("train.val_fold", c.val_fold));
        c.pretrain_val_fraction = kv.get_double("train.pretrain_val_fraction", c.pretrain_val_fraction);
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// AdamW.

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

/// One scalar AdamW update with bias-corrected moments and decoupled decay.
/// `step` is the 1-based step count after incrementing.
inline void adamw_scalar(double& theta, double g, double& m, double& v, std::int64_t step, double lr, const AdamHyper& h) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(h.beta1, static_cast<double>(step)));
    const double v_hat = v / (1.0 - std::pow(h.beta2, static_cast<double>(step)));
    theta -= lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * theta);
}

struct OptimizerState {
    std::vector<std::vector<double>> m, v;
    std::int64_t step = 0;
};

/// Applies one AdamW step to every parameter using its accumulated gradient.
/// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
void adamw_step(std::vector<NamedTensor<T>>& params, OptimizerState& state, double lr, const AdamHyper& h) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
            state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
        }
    }
    require(state.m.size() == params.size(), ErrorKind::shape, "optimizer state does not match parameter list");
    ++state.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].tensor.mutable_values();
        require(state.m[i].size() == theta.size(), ErrorKind::shape, "moment shape differs for " + params[i].name);
        const bool has_grad = params[i].tensor.has_grad();
        const std::vector<T>* grad = has_grad ? &params[i].tensor.mutable_grad() : nullptr;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            double t = static_cast<double>(theta[j]);
            adamw_scalar(t, grad ? static_cast<double>((*grad)[j]) : 0.0, state.m[i][j], state.v[i][j], state.step, lr, h);
            theta[j] = static_cast<T>(t);
        }
    }
}

/// lr = 0.5 lr0 (1 + cos(pi t / T)), t clamped to [0, T].
inline double cosine_lr(double t, double total, double lr0) {
    if (total <= 0) return lr0;
    t = std::clamp(t, 0.0, total);
    return std::max(0.0, 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t / total)));
}

// ---------------------------------------------------------------------------
// Training samples: channel-major images on a D x H x W grid (D = z).

struct Sample {
    std::string case_id;
    Grid3 grid{1, 1, 1};
    std::int64_t channels = 4;
    std::vector<float> images; // channels x D x H x W
    std::vector<std::uint8_t> labels; // D x H x W, may be empty
    Spacing3 spacing{1.0, 1.0, 1.0};

    std::int64_t voxels() const { return grid.count(); }
    bool has_labels() const { return !labels.empty(); }
};

/// Z-scores each modality over its own nonzero voxels and stacks them in
/// t1, t1ce, t2, flair order.
inline Sample make_sample(const MultiModalCase& c, bool normalize = true) {
    Sample s;
    s.case_id = c.case_id;
    const Dims3& d = c.dims();
    s.grid = Grid3{d[2], d[1], d[0]};
    s.spacing = c.spacing();
    s.channels = static_cast<std::int64_t>(kModalities.size());
    s.images.reserve(static_cast<std::size_t>(s.channels * s.voxels()));
    for (Modality m : kModalities) {
        const Volume& v = c.modality(m);
        const Volume n = normalize ? zscore_normalize(v) : v;
        s.images.insert(s.images.end(), n.data.begin(), n.data.end());
    }
    if (c.label) s.labels = c.label->labels;
    return s;
}

/// Reverses one spatial axis (0 = D, 1 = H, 2 = W) of images and labels.
inline void flip_axis(Sample& s, int axis) {
    const Grid3 g = s.grid;
    auto flip_plane = [&](auto* data) {
        for (std::int64_t z = 0; z < g.d; ++z)
            for (std::int64_t y = 0; y < g.h; ++y)
                for (std::int64_t x = 0; x < g.w; ++x) {
                    std::int64_t zz = z, yy = y, xx = x;
                    if (axis == 0) zz = g.d - 1 - z;
                    if (axis == 1) yy = g.h - 1 - y;
                    if (axis == 2) xx = g.w - 1 - x;
                    const std::int64_t a = (z * g.h + y) * g.w + x, b = (zz * g.h + yy) * g.w + xx;
                    if (a < b) std::swap(data[a], data[b]);
                }
    };
    for (std::int64_t c = 0; c < s.channels; ++c) flip_plane(s.images.data() + c * g.count());
    if (s.has_labels()) flip_plane(s.labels.data());
}

struct AugmentParams {
    std::array<bool, 3> flip{false, false, false};
    int rotation_axis = 0;
    double angle_deg = 0.0;
    double scale = 1.0;

    bool resamples() const { return angle_deg != 0.0 || scale != 1.0; }
};

inline AugmentParams sample_augment(Rng& rng, const TrainConfig& cfg) {
    AugmentParams p;
    for (auto& f : p.flip) f = rng.bernoulli(cfg.flip_prob);
    p.rotation_axis = static_cast<int>(rng.below(3));
    p.angle_deg = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
    p.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    return p;
}

/// Flips, then rotates about one axis and scales isotropically around the
/// grid centre. Images are sampled trilinearly, labels by nearest neighbour;
/// points outside the grid read as zero.
inline Sample apply_augment(const Sample& in, const AugmentParams& p) {
    Sample s = in;
    for (int a = 0; a < 3; ++a)
        if (p.flip[static_cast<std::size_t>(a)]) flip_axis(s, a);
    if (!p.resamples()) return s;

    const Grid3 g = s.grid;
    const double th = p.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    const std::array<double, 3> centre{(g.d - 1) / 2.0, (g.h - 1) / 2.0, (g.w - 1) / 2.0};
    // Inverse map: output point -> source point.
    auto source_of = [&](double z, double y, double x) {
        std::array<double, 3> q{(z - centre[0]) / p.scale, (y - centre[1]) / p.scale, (x - centre[2]) / p.scale};
        const int i = (p.rotation_axis + 1) % 3, j = (p.rotation_axis + 2) % 3;
        const double qi = q[static_cast<std::size_t>(i)], qj = q[static_cast<std::size_t>(j)];
        q[static_cast<std::size_t>(i)] = c * qi + sn * qj;
        q[static_cast<std::size_t>(j)] = -sn * qi + c * qj;
        return std::array<double, 3>{q[0] + centre[0], q[1] + centre[1], q[2] + centre[2]};
    };

    const std::int64_t n = g.count();
    std::vector<float> images(s.images.size(), 0.0f);
    std::vector<std::uint8_t> labels(s.labels.size(), 0);
    for (std::int64_t z = 0; z < g.d; ++z)
        for (std::int64_t y = 0; y < g.h; ++y)
            for (std::int64_t x = 0; x < g.w; ++x) {
                const auto src = source_of(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x));
                const std::int64_t out = (z * g.h + y) * g.w + x;
                const std::array<std::int64_t, 3> lim{g.d, g.h, g.w};
                if (s.has_labels()) {
                    std::array<std::int64_t, 3> r{};
                    bool inside = true;
                    for (std::size_t a = 0; a < 3; ++a) {
                        r[a] = static_cast<std::int64_t>(std::lround(src[a]));
                        inside = inside && r[a] >= 0 && r[a] < lim[a];
                    }
                    if (inside) labels[static_cast<std::size_t>(out)] = s.labels[static_cast<std::size_t>((r[0] * g.h + r[1]) * g.w + r[2])];
                }
                std::array<std::int64_t, 3> base{};
                std::array<double, 3> frac{};
                for (std::size_t a = 0; a < 3; ++a) {
                    const double f = std::floor(src[a]);
                    base[a] = static_cast<std::int64_t>(f);
                    frac[a] = src[a] - f;
                }
                for (std::int64_t ch = 0; ch < s.channels; ++ch) {
                    const float* img = s.images.data() + ch * n;
                    double acc = 0.0;
                    for (int corner = 0; corner < 8; ++corner) {
                        const std::int64_t zz = base[0] + ((corner >> 2) & 1);
                        const std::int64_t yy = base[1] + ((corner >> 1) & 1);
                        const std::int64_t xx = base[2] + (corner & 1);
                        if (zz < 0 || zz >= g.d || yy < 0 || yy >= g.h || xx < 0 || xx >= g.w) continue;
                        const double w = ((corner >> 2) & 1 ? frac[0] : 1 - frac[0]) * ((corner >> 1) & 1 ? frac[1] : 1 - frac[1]) *
                                         (corner & 1 ? frac[2] : 1 - frac[2]);
                        acc += w * img[(zz * g.h + yy) * g.w + xx];
                    }
                    images[static_cast<std::size_t>(ch * n + out)] = static_cast<float>(acc);
                }
            }
    s.images = std::move(images);
    s.labels = std::move(labels);
    return s;
}

/// Zero-pads each axis at the far end up to at least `target`.
inline Sample pad_to(const Sample& in, Grid3 target) {
    const Grid3 g = in.grid;
    const Grid3 out{std::max(g.d, target.d), std::max(g.h, target.h), std::max(g.w, target.w)};
    if (out.d == g.d && out.h == g.h && out.w == g.w) return in;
    Sample s = in;
    s.grid = out;
    s.images.assign(static_cast<std::size_t>(s.channels * out.count()), 0.0f);
    if (in.has_labels()) s.labels.assign(static_cast<std::size_t>(out.count()), 0);
    for (std::int64_t ch = 0; ch < s.channels; ++ch)
        for (std::int64_t z = 0; z < g.d; ++z)
            for (std::int64_t y = 0; y < g.h; ++y) {
                const auto src = static_cast<std::size_t>(ch * g.count() + (z * g.h + y) * g.w);
                const auto dst = static_cast<std::size_t>(ch * out.count() + (z * out.h + y) * out.w);
                std::copy_n(in.images.begin() + static_cast<std::ptrdiff_t>(src), g.w, s.images.begin() + static_cast<std::ptrdiff_t>(dst));
                if (ch == 0 && in.has_labels())
                    std::copy_n(in.labels.begin() + static_cast<std::ptrdiff_t>((z * g.h + y) * g.w), g.w,
                                s.labels.begin() + static_cast<std::ptrdiff_t>((z * out.h + y) * out.w));
            }
    return s;
}

inline Sample extract_crop(const Sample& in, std::array<std::int64_t, 3> origin, Grid3 size) {
    const Grid3 g = in.grid;
    Sample s = in;
    s.grid = size;
    s.images.resize(static_cast<std::size_t>(s.channels * size.count()));
    if (in.has_labels()) s.labels.resize(static_cast<std::size_t>(size.count()));
    for (std::int64_t ch = 0; ch < s.channels; ++ch)
        for (std::int64_t z = 0; z < size.d; ++z)
            for (std::int64_t y = 0; y < size.h; ++y) {
                const std::int64_t src_row = ((origin[0] + z) * g.h + origin[1] + y) * g.w + origin[2];
                const std::int64_t dst_row = (z * size.h + y) * size.w;
                std::copy_n(in.images.begin() + static_cast<std::ptrdiff_t>(ch * g.count() + src_row), size.w,
                            s.images.begin() + static_cast<std::ptrdiff_t>(ch * size.count() + dst_row));
                if (ch == 0 && in.has_labels())
                    std::copy_n(in.labels.begin() + static_cast<std::ptrdiff_t>(src_row), size.w,
                                s.labels.begin() + static_cast<std::ptrdiff_t>(dst_row));
            }
    return s;
}

inline constexpr int kCropRetries = 10;

/// Draws a uniformly placed crop; when the sample has any foreground, redraws
/// up to kCropRetries times until the crop contains some.
inline Sample random_crop(const Sample& in, int size, Rng& rng) {
    const Grid3 want{size, size, size};
    const Sample padded = pad_to(in, want);
    const Grid3 g = padded.grid;
    const bool any_fg = padded.has_labels() &&
                        std::any_of(padded.labels.begin(), padded.labels.end(), [](std::uint8_t l) { return l != 0; });
    std::array<std::int64_t, 3> origin{};
    for (int attempt = 0; attempt < (any_fg ? kCropRetries : 1); ++attempt) {
        origin = {static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(g.d - size + 1))),
                  static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(g.h - size + 1))),
                  static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(g.w - size + 1)))};
        if (!any_fg) break;
        bool hit = false;
        for (std::int64_t z = 0; z < size && !hit; ++z)
            for (std::int64_t y = 0; y < size && !hit; ++y) {
                const std::int64_t row = ((origin[0] + z) * g.h + origin[1] + y) * g.w + origin[2];
                for (std::int64_t x = 0; x < size; ++x)
                    if (padded.labels[static_cast<std::size_t>(row + x)] != 0) {
                        hit = true;
                        break;
                    }
            }
        if (hit) break;
    }
    return extract_crop(padded, origin, want);
}

template <typename T>
Tensor<T> stack_images(const std::vector<Sample>& batch) {
    require(!batch.empty(), ErrorKind::insufficient_data, "empty batch");
    const Grid3 g = batch.front().grid;
    const std::int64_t c = batch.front().channels;
    std::vector<T> v;
    v.reserve(static_cast<std::size_t>(static_cast<std::int64_t>(batch.size()) * c * g.count()));
    for (const auto& s : batch) {
        require(s.grid.d == g.d && s.grid.h == g.h && s.grid.w == g.w && s.channels == c, ErrorKind::shape,
                "batch members differ in shape");
        for (float x : s.images) v.push_back(static_cast<T>(x));
    }
    return Tensor<T>::from({static_cast<std::int64_t>(batch.size()), c, g.d, g.h, g.w}, std::move(v));
}

inline std::vector<std::uint8_t> stack_labels(const std::vector<Sample>& batch) {
    std::vector<std::uint8_t> out;
    for (const auto& s : batch) {
        require(s.has_labels(), ErrorKind::label, "sample " + s.case_id + " has no labels");
        out.insert(out.end(), s.labels.begin(), s.labels.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inference and the training loop.

/// Pads to the model divisor, runs a forward pass without recording
/// gradients, and returns the argmax class per voxel on the original grid.
template <typename T>
std::vector<std::uint8_t> predict_labels(const SegFormer3DPlus<T>& model, const Sample& s) {
    NoGradGuard guard;
    const int div = model.config().divisor();
    auto up = [div](std::int64_t n) { return (n + div - 1) / div * div; };
    const Sample padded = pad_to(s, Grid3{up(s.grid.d), up(s.grid.h), up(s.grid.w)});
    const Tensor<T> logits = model.forward(stack_images<T>({padded}));
    const Grid3 pg = padded.grid;
    const std::int64_t classes = logits.dim(1);
    const auto& v = logits.values();
    std::vector<std::uint8_t> out(static_cast<std::size_t>(s.grid.count()));
    for (std::int64_t z = 0; z < s.grid.d; ++z)
        for (std::int64_t y = 0; y < s.grid.h; ++y)
            for (std::int64_t x = 0; x < s.grid.w; ++x) {
                const std::int64_t p = (z * pg.h + y) * pg.w + x;
                std::int64_t best = 0;
                for (std::int64_t ch = 1; ch < classes; ++ch)
                    if (v[static_cast<std::size_t>(ch * pg.count() + p)] > v[static_cast<std::size_t>(best * pg.count() + p)]) best = ch;
                out[static_cast<std::size_t>((z * s.grid.h + y) * s.grid.w + x)] = static_cast<std::uint8_t>(best);
            }
    return out;
}

/// Mean hard Dice over labels 1..classes-1; a class absent from both counts 1.
inline double mean_foreground_dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, int classes = 4) {
    require(pred.size() == truth.size(), ErrorKind::shape, "prediction and truth differ in size");
    double total = 0.0;
    for (int c = 1; c < classes; ++c) {
        std::size_t inter = 0, p = 0, g = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool a = pred[i] == c, b = truth[i] == c;
            inter += a && b;
            p += a;
            g += b;
        }
        total += (p + g == 0) ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
    }
    return total / (classes - 1);
}

enum class FitMode { pretrain, finetune };

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_dice = 0.0;
};

struct FitResult {
    std::vector<EpochLog> log;
    std::vector<std::uint8_t> best_checkpoint;
    double best_val_dice = -1.0;
    int best_epoch = -1;
    bool stopped_early = false;
};

inline std::string fit_log_csv(const std::vector<EpochLog>& log) {
    std::string text = "epoch,lr,train_loss,val_dice\n";
    for (const auto& e : log)
        text += std::to_string(e.epoch) + "," + format_double(e.lr) + "," + format_double(e.train_loss) + "," +
                format_double(e.val_dice) + "\n";
    return text;
}

struct FitHooks {
    std::function<void(const EpochLog&)> on_epoch;
};

/// Trains on `train` and tracks mean foreground Dice on `val` (on `train`
/// when `val` is empty). The model ends holding the best weights.
template <typename T>
FitResult fit(SegFormer3DPlus<T>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& cfg, FitMode mode, const FitHooks& hooks = {}) {
    cfg.validate();
    require(!train.empty(), ErrorKind::insufficient_data, "training needs at least one case");
    require(cfg.crop % model.config().divisor() == 0, ErrorKind::config,
            "crop " + std::to_string(cfg.crop) + " must be a multiple of " + std::to_string(model.config().divisor()));
    for (const auto& s : train) require(s.has_labels(), ErrorKind::label, "training case " + s.case_id + " has no labels");

    const int epochs = mode == FitMode::pretrain ? cfg.epochs_pretrain : cfg.epochs_finetune;
    const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    const std::vector<Sample>& monitor = val.empty() ? train : val;
    OptimizerState state;
    FitResult result;
    int stale = 0;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double lr = cosine_lr(epoch, epochs, cfg.lr);
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5eed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<Sample> batch;
            for (std::size_t j = start; j < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++j) {
                Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, order[j]));
                Sample s = random_crop(train[order[j]], cfg.crop, rng);
                if (cfg.augment) s = apply_augment(s, sample_augment(rng, cfg));
                batch.push_back(std::move(s));
            }
            for (auto& p : model.parameters()) p.tensor.zero_grad();
            const Tensor<T> loss = composite_loss(model.forward(stack_images<T>(batch)), stack_labels(batch));
            const double value = static_cast<double>(loss.item());
            require(std::isfinite(value), ErrorKind::numerical,
                    "loss became " + format_double(value) + " at epoch " + std::to_string(epoch) + " (lr " + format_double(lr) + ")");
            backward(loss);
            adamw_step(model.parameters(), state, lr, hyper);
            loss_sum += value;
            ++batches;
        }

        double dice = 0.0;
        for (const auto& s : monitor) dice += mean_foreground_dice(predict_labels(model, s), s.labels);
        dice /= static_cast<double>(monitor.size());

        const EpochLog row{epoch, lr, loss_sum / batches, dice};
        result.log.push_back(row);
        if (hooks.on_epoch) hooks.on_epoch(row);
        if (dice > result.best_val_dice) {
            result.best_val_dice = dice;
            result.best_epoch = epoch;
            result.best_checkpoint = model.save();
            stale = 0;
        } else if (++stale > cfg.patience) {
            result.stopped_early = true;
            break;
        }
    }
    model.load(result.best_checkpoint);
    return result;
}

} // namespace gliomaforge
