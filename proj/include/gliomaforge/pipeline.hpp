#pragma once

// Directory-level pipeline steps shared by the command-line tool and tests.

#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "gliomaforge/harmonize.hpp"
#include "gliomaforge/metrics.hpp"
#include "gliomaforge/model.hpp"
#include "gliomaforge/radiomics.hpp"
#include "gliomaforge/stratify.hpp"
#include "gliomaforge/synthetic.hpp"
#include "gliomaforge/train.hpp"
#include "gliomaforge/volume_io.hpp"

namespace gliomaforge {

struct PipelineConfig {
    std::uint64_t seed = 42;
    int jobs = 1;
    bool remap_legacy_et = true;
    int quantiles = kDefaultQuantiles;
    std::string reference_case; // empty: first case in the reference directory
    double bin_width = kDefaultBinWidth;
    Modality feature_modality = Modality::flair;
    StratifyOptions stratify;
    TrainConfig train;
    ModelConfig model;
    MetricConventions metrics;

    /// Reads `[pipeline]`, `[harmonize]`, `[features]`, `[stratify]`,
    /// `[train]`, `[model]` and `[metrics]` sections; absent keys keep defaults.
    static PipelineConfig from_config(const KeyValueConfig& kv) {
        PipelineConfig c;
        c.seed = static_cast<std::uint64_t>(kv.get_int("pipeline.seed", static_cast<long long>(c.seed)));
        c.jobs = static_cast<int>(kv.get_int("pipeline.jobs", c.jobs));
        c.remap_legacy_et = kv.get_bool("pipeline.remap_legacy_et", c.remap_legacy_et);
        c.quantiles = static_cast<int>(kv.get_int("harmonize.quantiles", c.quantiles));
        c.reference_case = kv.get_string("harmonize.reference_case", c.reference_case);
        c.bin_width = kv.get_double("features.bin_width", c.bin_width);
        c.feature_modality = parse_modality(kv.get_string("features.modality", "flair"));
        c.stratify.k = static_cast<int>(kv.get_int("stratify.k", c.stratify.k));
        c.stratify.pca_components = static_cast<int>(kv.get_int("stratify.pca", c.stratify.pca_components));
        c.stratify.folds = static_cast<int>(kv.get_int("stratify.folds", c.stratify.folds));
        c.stratify.seed = c.seed;
        if (!kv.has("train.seed")) {
            KeyValueConfig copy = kv;
            copy.set("train.seed", std::to_string(c.seed));
            c.train = TrainConfig::from_config(copy);
        } else {
            c.train = TrainConfig::from_config(kv);
        }
        c.model = ModelConfig::from_config(kv);
        c.metrics.dice_both_empty = kv.get_double("metrics.dice_both_empty", c.metrics.dice_both_empty);
        c.metrics.hd95_both_empty = kv.get_double("metrics.hd95_both_empty", c.metrics.hd95_both_empty);
        c.metrics.hd95_one_empty = kv.get_double("metrics.hd95_one_empty", c.metrics.hd95_one_empty);
        c.metrics.percentile = kv.get_double("metrics.percentile", c.metrics.percentile);
        return c;
    }
};

using ProgressFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// harmonize

struct ReferenceCdfs {
    std::string case_id;
    std::map<Modality, EmpiricalCDF> cdfs;
};

inline ReferenceCdfs load_reference(const fs::path& ref_dir, const std::string& case_id = {}) {
    const auto ids = discover_cases(ref_dir);
    require(!ids.empty(), ErrorKind::missing_file, "no reference case in " + ref_dir.string());
    ReferenceCdfs ref;
    ref.case_id = case_id.empty() ? ids.front() : case_id;
    const MultiModalCase c = load_case(ref_dir, ref.case_id);
    for (Modality m : kModalities) ref.cdfs.emplace(m, build_cdf(c.modality(m)));
    return ref;
}

/// Matches every modality of a case against the same modality of the
/// reference. Labels pass through unchanged.
inline MultiModalCase harmonize_case(const MultiModalCase& c, const ReferenceCdfs& ref, int quantiles) {
    MultiModalCase out = c;
    for (Modality m : kModalities) out.modalities[m] = match_histogram(c.modality(m), ref.cdfs.at(m), quantiles);
    return out;
}

inline std::size_t run_harmonize(const fs::path& ref_dir, const fs::path& in_dir, const fs::path& out_dir,
                                 const PipelineConfig& cfg) {
    const ReferenceCdfs ref = load_reference(ref_dir, cfg.reference_case);
    const auto ids = discover_cases(in_dir);
    require(!ids.empty(), ErrorKind::missing_file, "no cases in " + in_dir.string());
    fs::create_directories(out_dir);
    parallel_for(ids.size(), cfg.jobs, [&](std::size_t i) {
        save_case(out_dir, harmonize_case(load_case(in_dir, ids[i], cfg.remap_legacy_et), ref, cfg.quantiles));
    });
    return ids.size();
}

// ---------------------------------------------------------------------------
// features

inline std::string run_features(const fs::path& in_dir, const fs::path& out_csv, const PipelineConfig& cfg) {
    const auto ids = discover_cases(in_dir);
    require(!ids.empty(), ErrorKind::missing_file, "no cases in " + in_dir.string());
    std::vector<FeatureVector> rows(ids.size());
    parallel_for(ids.size(), cfg.jobs, [&](std::size_t i) {
        const auto path = find_case_file(in_dir, ids[i], modality_suffix(cfg.feature_modality));
        require(path.has_value(), ErrorKind::missing_file, "case " + ids[i] + " lacks " + modality_suffix(cfg.feature_modality));
        const Volume v = load_volume(*path);
        rows[i] = first_order_features(v, foreground_mask(v), cfg.bin_width);
        rows[i].case_id = ids[i];
    });
    std::string text = features_csv_header();
    for (const auto& r : rows) text += features_csv_row(r);
    write_text_atomic(out_csv, text);
    return text;
}

// ---------------------------------------------------------------------------
// stratify

inline StratifyOutcome run_stratify(const fs::path& features_csv, const fs::path& out_csv, const PipelineConfig& cfg) {
    StratifyOptions opt = cfg.stratify;
    opt.seed = cfg.seed;
    StratifyOutcome outcome = stratify_cases(read_feature_csv(read_text(features_csv)), opt);
    write_text_atomic(out_csv, fold_csv(outcome.assignment));
    return outcome;
}

// ---------------------------------------------------------------------------
// pretrain / finetune

inline fs::path config_path_for(const fs::path& ckpt) { return fs::path(ckpt.string() + ".cfg"); }
inline fs::path log_path_for(const fs::path& ckpt) { return fs::path(ckpt.string() + ".log.csv"); }

inline void save_model(const fs::path& ckpt, const std::vector<std::uint8_t>& bytes, const ModelConfig& model,
                       const TrainConfig& train) {
    KeyValueConfig kv = model.to_config();
    const KeyValueConfig train_kv = train.to_config();
    for (const auto& [k, v] : train_kv.values()) kv.set(k, v);
    write_text_atomic(config_path_for(ckpt), kv.to_text());
    write_file_atomic(ckpt, bytes);
}

/// Model configuration stored next to a checkpoint, or `fallback` when the
/// checkpoint has no companion file.
inline ModelConfig model_config_for(const fs::path& ckpt, const ModelConfig& fallback) {
    const fs::path p = config_path_for(ckpt);
    return fs::exists(p) ? ModelConfig::from_config(KeyValueConfig::load(p)) : fallback;
}

inline SegFormer3DPlus<float> load_model(const fs::path& ckpt, const ModelConfig& fallback) {
    require(fs::exists(ckpt), ErrorKind::missing_file, "checkpoint not found: " + ckpt.string());
    SegFormer3DPlus<float> model(model_config_for(ckpt, fallback));
    model.load(read_file_bytes(ckpt));
    return model;
}

struct TrainingSplit {
    std::vector<std::string> train, val;
};

/// Pretraining holds out a seeded `pretrain_val_fraction` of the cases;
/// fine-tuning holds out fold `val_fold` of the fold table.
inline TrainingSplit split_cases(const std::vector<std::string>& ids, const std::optional<FoldAssignment>& folds,
                                 const TrainConfig& cfg, FitMode mode) {
    TrainingSplit split;
    if (mode == FitMode::finetune) {
        require(folds.has_value(), ErrorKind::usage, "finetune needs a fold table");
        std::map<std::string, int> fold_of;
        for (std::size_t i = 0; i < folds->case_ids.size(); ++i) fold_of[folds->case_ids[i]] = folds->folds[i];
        for (const auto& id : ids) {
            const auto it = fold_of.find(id);
            if (it == fold_of.end()) continue;
            (it->second == cfg.val_fold ? split.val : split.train).push_back(id);
        }
    } else {
        std::vector<std::string> pool;
        if (folds) {
            std::set<std::string> listed(folds->case_ids.begin(), folds->case_ids.end());
            for (const auto& id : ids)
                if (listed.count(id)) pool.push_back(id);
        } else {
            pool = ids;
        }
        Rng rng(derive_seed(cfg.seed, 0x95));
        rng.shuffle(pool);
        const auto n_val = static_cast<std::size_t>(std::floor(cfg.pretrain_val_fraction * static_cast<double>(pool.size())));
        split.val.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
        split.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
        std::sort(split.val.begin(), split.val.end());
        std::sort(split.train.begin(), split.train.end());
    }
    require(!split.train.empty(), ErrorKind::insufficient_data, "no training cases after splitting");
    return split;
}

struct TrainRequest {
    fs::path data_dir;
    std::optional<fs::path> folds_csv;
    fs::path out_ckpt;
    std::optional<fs::path> init_ckpt;
    FitMode mode = FitMode::pretrain;
};

inline FitResult run_training(const TrainRequest& req, const PipelineConfig& cfg, const ProgressFn& progress = {}) {
    const auto ids = discover_cases(req.data_dir);
    require(!ids.empty(), ErrorKind::missing_file, "no cases in " + req.data_dir.string());
    std::optional<FoldAssignment> folds;
    if (req.folds_csv) folds = read_fold_csv(read_text(*req.folds_csv));
    const TrainingSplit split = split_cases(ids, folds, cfg.train, req.mode);

    auto load_samples = [&](const std::vector<std::string>& which) {
        std::vector<Sample> out;
        for (const auto& id : which) {
            MultiModalCase c = load_case(req.data_dir, id, cfg.remap_legacy_et);
            require(c.label.has_value(), ErrorKind::missing_file, "training case " + id + " has no -seg volume");
            out.push_back(make_sample(c));
        }
        return out;
    };
    const std::vector<Sample> train = load_samples(split.train);
    const std::vector<Sample> val = load_samples(split.val);

    ModelConfig model_cfg = cfg.model;
    if (req.mode == FitMode::finetune) {
        require(req.init_ckpt.has_value(), ErrorKind::usage, "finetune needs an initial checkpoint (--init)");
        model_cfg = model_config_for(*req.init_ckpt, cfg.model);
    }
    SegFormer3DPlus<float> model(model_cfg, cfg.train.seed);
    if (req.init_ckpt) model.load(read_file_bytes(*req.init_ckpt));

    FitHooks hooks;
    if (progress)
        hooks.on_epoch = [&](const EpochLog& e) {
            progress("epoch " + std::to_string(e.epoch) + " lr " + format_double(e.lr) + " loss " +
                     format_double(e.train_loss) + " val_dice " + format_double(e.val_dice));
        };
    FitResult result = fit(model, train, val, cfg.train, req.mode, hooks);
    save_model(req.out_ckpt, result.best_checkpoint, model_cfg, cfg.train);
    write_text_atomic(log_path_for(req.out_ckpt), fit_log_csv(result.log));
    return result;
}

// ---------------------------------------------------------------------------
// predict

/// Optional harmonization, z-scoring, padded forward pass, argmax, crop and
/// largest-component cleanup.
inline SegmentationMask predict_case(const SegFormer3DPlus<float>& model, const MultiModalCase& input,
                                     const ReferenceCdfs* reference, int quantiles) {
    const MultiModalCase c = reference ? harmonize_case(input, *reference, quantiles) : input;
    Sample s = make_sample(c);
    s.labels.clear();
    SegmentationMask mask(c.dims(), c.spacing());
    mask.labels = predict_labels(model, s);
    return keep_largest_per_class(mask);
}

struct PredictRequest {
    fs::path ckpt;
    fs::path in_dir;
    fs::path out;             // a .nii/.nii.gz file for one case, else a directory
    std::string case_id;      // empty: every case (or the only case)
    std::optional<fs::path> ref_dir;
};

inline std::size_t run_predict(const PredictRequest& req, const PipelineConfig& cfg) {
    const SegFormer3DPlus<float> model = load_model(req.ckpt, cfg.model);
    std::optional<ReferenceCdfs> ref;
    if (req.ref_dir) ref = load_reference(*req.ref_dir, cfg.reference_case);
    std::vector<std::string> ids = req.case_id.empty() ? discover_cases(req.in_dir) : std::vector<std::string>{req.case_id};
    require(!ids.empty(), ErrorKind::missing_file, "no cases in " + req.in_dir.string());
    const std::string out_name = req.out.filename().string();
    const bool single_file = out_name.ends_with(".nii") || out_name.ends_with(".nii.gz");
    if (single_file) {
        require(ids.size() == 1, ErrorKind::usage,
                req.in_dir.string() + " holds " + std::to_string(ids.size()) + " cases; pass --case or an output directory");
    } else {
        fs::create_directories(req.out);
    }
    for (const auto& id : ids) {
        const MultiModalCase c = load_case(req.in_dir, id, cfg.remap_legacy_et);
        const SegmentationMask mask = predict_case(model, c, ref ? &*ref : nullptr, cfg.quantiles);
        save_mask(single_file ? req.out : req.out / (id + "-seg.nii"), mask);
    }
    return ids.size();
}

// ---------------------------------------------------------------------------
// evaluate

inline std::string run_evaluate(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_csv,
                                const PipelineConfig& cfg) {
    const std::string text = metrics_csv(evaluate_directories(pred_dir, gt_dir, cfg.jobs, cfg.metrics), cfg.metrics);
    write_text_atomic(out_csv, text);
    return text;
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeRequest {
    fs::path out_dir;
    int count = 8;
    Dims3 dims{32, 32, 32};
    std::string prefix = "case";
    double gain_jitter = 0.2;
    double offset_jitter = 10.0;
    bool with_labels = true;
};

inline std::vector<std::string> run_synthesize(const SynthesizeRequest& req, std::uint64_t seed) {
    require(req.count >= 1, ErrorKind::usage, "--count must be >= 1");
    fs::create_directories(req.out_dir);
    SyntheticOptions opt;
    opt.dims = req.dims;
    opt.gain_jitter = req.gain_jitter;
    opt.offset_jitter = req.offset_jitter;
    std::vector<std::string> ids;
    for (int i = 0; i < req.count; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%03d", i);
        const std::string id = req.prefix + buf;
        MultiModalCase c = synthesize_case(id, derive_seed(seed, 0xca5e, static_cast<std::uint64_t>(i)), opt);
        if (!req.with_labels) c.label.reset();
        save_case(req.out_dir, c);
        ids.push_back(id);
    }
    return ids;
}

} // namespace gliomaforge
