// Command-line front end for the gliomaforge pipeline.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gliomaforge/gliomaforge.hpp"

namespace gf = gliomaforge;

namespace {

struct Common {
    std::string config_path;
    std::optional<long long> seed;
    std::optional<int> jobs;
};

// Precedence: command-line flag > config file > GLIOMAFORGE_SEED > built-in default.
gf::KeyValueConfig base_config(const Common& common) {
    gf::KeyValueConfig kv;
    if (!common.config_path.empty()) {
        gf::require(gf::fs::exists(common.config_path), gf::ErrorKind::usage, "config file not found: " + common.config_path);
        kv = gf::KeyValueConfig::load(common.config_path);
    }
    if (!kv.has("pipeline.seed")) {
        if (const char* env = std::getenv("GLIOMAFORGE_SEED")) kv.set("pipeline.seed", env);
    }
    if (common.seed) {
        kv.set("pipeline.seed", std::to_string(*common.seed));
        kv.set("train.seed", std::to_string(*common.seed));
    }
    if (common.jobs) kv.set("pipeline.jobs", std::to_string(*common.jobs));
    return kv;
}

template <typename V>
void override_key(gf::KeyValueConfig& kv, const std::string& key, const std::optional<V>& value) {
    if (!value) return;
    if constexpr (std::is_same_v<V, std::string>)
        kv.set(key, *value);
    else if constexpr (std::is_floating_point_v<V>)
        kv.set(key, gf::format_double(*value));
    else
        kv.set(key, std::to_string(*value));
}

void require_dir(const std::string& path, const std::string& flag) {
    gf::require(gf::fs::is_directory(path), gf::ErrorKind::usage, flag + " " + path + " is not a directory");
}

void require_file(const std::string& path, const std::string& flag) {
    gf::require(gf::fs::exists(path), gf::ErrorKind::usage, flag + " " + path + " does not exist");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gliomaforge: harmonization, radiomics stratification, SegFormer3D+ training and evaluation"};
    app.fallthrough();
    app.require_subcommand(0, 1);

    Common common;
    app.add_option("--config", common.config_path, "INI-style key=value configuration file");
    app.add_option("--seed", common.seed, "global seed (falls back to GLIOMAFORGE_SEED)");
    app.add_option("--jobs", common.jobs, "worker threads for per-case steps")->check(CLI::PositiveNumber);

    // harmonize
    auto* harmonize = app.add_subcommand("harmonize", "histogram-match every modality against a reference case");
    std::string h_ref, h_in, h_out;
    std::optional<int> h_quantiles;
    std::optional<std::string> h_ref_case;
    harmonize->add_option("--ref-dir", h_ref, "directory holding the reference case")->required();
    harmonize->add_option("--in", h_in, "input case directory")->required();
    harmonize->add_option("--out", h_out, "output case directory")->required();
    harmonize->add_option("--quantiles", h_quantiles, "number of quantile knots");
    harmonize->add_option("--ref-case", h_ref_case, "reference case id (default: first in --ref-dir)");

    // features
    auto* features = app.add_subcommand("features", "first-order radiomics per case");
    std::string f_in, f_out;
    std::optional<double> f_bin_width;
    std::optional<std::string> f_modality;
    features->add_option("--in", f_in, "case directory")->required();
    features->add_option("--out", f_out, "output CSV")->required();
    features->add_option("--bin-width", f_bin_width, "histogram bin width");
    features->add_option("--modality", f_modality, "modality to describe (default flair)");

    // stratify
    auto* stratify = app.add_subcommand("stratify", "PCA + k-means clustering and stratified folds");
    std::string s_features, s_out;
    std::optional<int> s_k, s_pca, s_folds;
    stratify->add_option("--features", s_features, "features CSV")->required();
    stratify->add_option("--out", s_out, "output folds CSV")->required();
    stratify->add_option("--k", s_k, "cluster count");
    stratify->add_option("--pca", s_pca, "principal components kept");
    stratify->add_option("--folds", s_folds, "fold count");

    // pretrain / finetune
    struct TrainFlags {
        std::string data, out;
        std::optional<std::string> folds, init;
        std::optional<double> lr;
        std::optional<int> epochs, crop, batch_size, patience, val_fold;
    };
    TrainFlags pre_flags, fine_flags;
    auto add_train = [&](CLI::App* cmd, TrainFlags& t, bool finetune) {
        cmd->add_option("--data", t.data, "case directory with -seg labels")->required();
        cmd->add_option("--folds", t.folds, "folds CSV from stratify")->required(finetune);
        cmd->add_option("--out", t.out, "output checkpoint")->required();
        cmd->add_option("--init", t.init, "initial checkpoint")->required(finetune);
        cmd->add_option("--lr", t.lr, "initial learning rate");
        cmd->add_option("--epochs", t.epochs, "epoch budget");
        cmd->add_option("--crop", t.crop, "cubic crop edge");
        cmd->add_option("--batch-size", t.batch_size, "cases per step");
        cmd->add_option("--patience", t.patience, "early-stopping patience in epochs");
        if (finetune) cmd->add_option("--val-fold", t.val_fold, "held-out fold");
    };
    auto* pretrain = app.add_subcommand("pretrain", "train from scratch");
    add_train(pretrain, pre_flags, false);
    auto* finetune = app.add_subcommand("finetune", "continue training from a checkpoint");
    add_train(finetune, fine_flags, true);

    // predict
    auto* predict = app.add_subcommand("predict", "segment cases with a checkpoint");
    gf::PredictRequest p_req;
    std::string p_ckpt, p_in, p_out;
    std::optional<std::string> p_ref, p_case;
    predict->add_option("--ckpt", p_ckpt, "checkpoint")->required();
    predict->add_option("--in", p_in, "case directory")->required();
    predict->add_option("--out", p_out, "output .nii file (one case) or directory")->required();
    predict->add_option("--case", p_case, "case id inside --in");
    predict->add_option("--ref-dir", p_ref, "harmonize against this reference first");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "BraTS-style region metrics");
    std::string e_pred, e_gt, e_out;
    std::optional<double> e_sentinel;
    evaluate->add_option("--pred", e_pred, "directory of <case>-seg.nii predictions")->required();
    evaluate->add_option("--gt", e_gt, "directory of <case>-seg.nii ground truth")->required();
    evaluate->add_option("--out", e_out, "output metrics CSV")->required();
    evaluate->add_option("--hd95-empty", e_sentinel, "HD95 reported when exactly one mask is empty");

    // selftest
    auto* selftest = app.add_subcommand("selftest", "run built-in oracle and gradient checks");

    // synthesize
    auto* synthesize = app.add_subcommand("synthesize", "write synthetic multi-modal cases with labels");
    gf::SynthesizeRequest syn;
    std::string syn_out;
    int syn_size = 32;
    bool syn_no_labels = false;
    synthesize->add_option("--out", syn_out, "output directory")->required();
    synthesize->add_option("--count", syn.count, "number of cases");
    synthesize->add_option("--size", syn_size, "cubic edge length")->check(CLI::Range(8, 512));
    synthesize->add_option("--prefix", syn.prefix, "case id prefix");
    synthesize->add_option("--gain-jitter", syn.gain_jitter, "per-case intensity gain spread");
    synthesize->add_option("--offset-jitter", syn.offset_jitter, "per-case intensity offset spread");
    synthesize->add_flag("--no-labels", syn_no_labels, "omit -seg volumes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 1;
    }

    try {
        gf::KeyValueConfig kv = base_config(common);
        if (harmonize->parsed()) {
            require_dir(h_ref, "--ref-dir");
            require_dir(h_in, "--in");
            override_key(kv, "harmonize.quantiles", h_quantiles);
            override_key(kv, "harmonize.reference_case", h_ref_case);
            const auto cfg = gf::PipelineConfig::from_config(kv);
            const auto n = gf::run_harmonize(h_ref, h_in, h_out, cfg);
            std::cout << "harmonized " << n << " cases into " << h_out << "\n";
        } else if (features->parsed()) {
            require_dir(f_in, "--in");
            override_key(kv, "features.bin_width", f_bin_width);
            override_key(kv, "features.modality", f_modality);
            gf::run_features(f_in, f_out, gf::PipelineConfig::from_config(kv));
            std::cout << "wrote " << f_out << "\n";
        } else if (stratify->parsed()) {
            require_file(s_features, "--features");
            override_key(kv, "stratify.k", s_k);
            override_key(kv, "stratify.pca", s_pca);
            override_key(kv, "stratify.folds", s_folds);
            const auto outcome = gf::run_stratify(s_features, s_out, gf::PipelineConfig::from_config(kv));
            for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "wrote " << s_out << " (" << outcome.clustering.iterations << " k-means iterations)\n";
        } else if (pretrain->parsed() || finetune->parsed()) {
            const bool fine = finetune->parsed();
            const TrainFlags& t = fine ? fine_flags : pre_flags;
            require_dir(t.data, "--data");
            if (t.folds) require_file(*t.folds, "--folds");
            if (t.init) require_file(*t.init, "--init");
            override_key(kv, "train.lr", t.lr);
            override_key(kv, fine ? "train.epochs_finetune" : "train.epochs_pretrain", t.epochs);
            override_key(kv, "train.crop", t.crop);
            override_key(kv, "train.batch_size", t.batch_size);
            override_key(kv, "train.patience", t.patience);
            override_key(kv, "train.val_fold", t.val_fold);
            const auto cfg = gf::PipelineConfig::from_config(kv);
            gf::TrainRequest req;
            req.data_dir = t.data;
            if (t.folds) req.folds_csv = *t.folds;
            if (t.init) req.init_ckpt = *t.init;
            req.out_ckpt = t.out;
            req.mode = fine ? gf::FitMode::finetune : gf::FitMode::pretrain;
            const auto result = gf::run_training(req, cfg, [](const std::string& line) { std::cout << line << "\n"; });
            std::cout << "best val_dice " << gf::format_double(result.best_val_dice) << " at epoch " << result.best_epoch
                      << (result.stopped_early ? " (stopped early)" : "") << "; wrote " << t.out << "\n";
        } else if (predict->parsed()) {
            require_file(p_ckpt, "--ckpt");
            require_dir(p_in, "--in");
            if (p_ref) require_dir(*p_ref, "--ref-dir");
            p_req.ckpt = p_ckpt;
            p_req.in_dir = p_in;
            p_req.out = p_out;
            if (p_case) p_req.case_id = *p_case;
            if (p_ref) p_req.ref_dir = *p_ref;
            const auto n = gf::run_predict(p_req, gf::PipelineConfig::from_config(kv));
            std::cout << "predicted " << n << " case(s) into " << p_out << "\n";
        } else if (evaluate->parsed()) {
            require_dir(e_pred, "--pred");
            require_dir(e_gt, "--gt");
            override_key(kv, "metrics.hd95_one_empty", e_sentinel);
            gf::run_evaluate(e_pred, e_gt, e_out, gf::PipelineConfig::from_config(kv));
            std::cout << "wrote " << e_out << "\n";
        } else if (selftest->parsed()) {
            const auto results = gf::run_selftest(std::cout);
            const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
            return ok ? 0 : 2;
        } else if (synthesize->parsed()) {
            syn.out_dir = syn_out;
            syn.dims = {syn_size, syn_size, syn_size};
            syn.with_labels = !syn_no_labels;
            const auto cfg = gf::PipelineConfig::from_config(kv);
            const auto ids = gf::run_synthesize(syn, cfg.seed);
            std::cout << "wrote " << ids.size() << " cases into " << syn_out << "\n";
        }
    } catch (const gf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return (e.kind() == gf::ErrorKind::usage || e.kind() == gf::ErrorKind::config) ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
