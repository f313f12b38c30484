// heterolora: train, score, and export-frequency entry points.
// Exit codes: 0 ok, 1 runtime failure, 2 configuration error.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "heterolora/run_config.hpp"

namespace {

using namespace heterolora;

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::int64_t seed = -1;
    std::string seeds;  // comma list, or "default" for the five canonical seeds
    std::string proxy;
    std::string basis;
    double fraction = -1.0;
    int searches_per_epoch = -1;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    if (text == "default") return {0, 13, 42, 87, 100};
    std::vector<std::uint64_t> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        try {
            out.push_back(std::stoull(item));
        } catch (...) {
            throw ConfigError("bad seed '" + item + "' in --seeds");
        }
        pos = comma + 1;
    }
    if (out.empty()) throw ConfigError("--seeds names no seeds");
    return out;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool need_config) {
    auto* opt = cmd->add_option("--config", f.config_path, "run configuration file (JSON)");
    if (need_config) opt->required();
    cmd->add_option("--out", f.out, "output root (fallback: config out_dir, then $HETEROLORA_OUT)");
    cmd->add_option("--seed", f.seed, "root seed override");
    cmd->add_option("--seeds", f.seeds,
                    "comma-separated seed list for a multi-seed sweep; 'default' = 0,13,42,87,100");
    cmd->add_option("--proxy", f.proxy, "saliency proxy override (constant|snip|synflow|gradnorm)");
    cmd->add_option("--basis", f.basis, "saliency basis override (decomposed|merged)");
    cmd->add_option("--fraction", f.fraction, "enable-fraction override");
    cmd->add_option("--searches-per-epoch", f.searches_per_epoch, "dynamic search frequency override");
}

RunConfig load_with_overrides(const CommonFlags& f) {
    RunConfig cfg = load_run_config(f.config_path);
    if (f.seed >= 0) cfg.set_seed(static_cast<std::uint64_t>(f.seed));
    if (!f.proxy.empty()) cfg.train.alloc.proxy = proxy_from_name(f.proxy);
    if (!f.basis.empty()) cfg.train.alloc.basis = basis_from_name(f.basis);
    if (f.fraction >= 0.0) cfg.train.alloc.fraction = f.fraction;
    if (f.searches_per_epoch >= 0) cfg.train.alloc.searches_per_epoch = f.searches_per_epoch;
    cfg.finalize();
    return cfg;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_train(const CommonFlags& f) {
    RunConfig base_cfg = load_with_overrides(f);
    const std::string out_root = resolve_out_root(base_cfg, f.out);

    std::vector<std::uint64_t> seeds{base_cfg.train.seed};
    if (!f.seeds.empty()) seeds = parse_seed_list(f.seeds);

    std::vector<double> final_accs;
    for (std::uint64_t seed : seeds) {
        RunConfig cfg = base_cfg;
        cfg.set_seed(seed);
        RunMetrics metrics = run_train_pipeline(cfg, out_root);
        const RunPaths paths = run_paths(out_root, seed);
        std::printf("run dir: %s\n", paths.dir.c_str());
        if (!metrics.epochs.empty()) {
            const EpochRecord& last = metrics.epochs.back();
            std::printf("seed %llu final epoch %d: train_loss=%.6f eval_loss=%.6f eval_accuracy=%.4f\n",
                        static_cast<unsigned long long>(seed), last.epoch, last.train_loss, last.eval_loss,
                        last.eval_accuracy);
            final_accs.push_back(last.eval_accuracy);
        }
        std::printf("trainable parameters: %zu\n", metrics.final_trainable);
        std::printf("searches: %d\n", metrics.frequency.total_searches);
        std::printf("wall clock: %.2fs\n", metrics.wall_clock_s);
    }
    if (seeds.size() > 1 && !final_accs.empty()) {
        double mean = 0.0;
        for (double a : final_accs) mean += a;
        mean /= static_cast<double>(final_accs.size());
        std::printf("median final eval accuracy over %zu seeds: %.4f\n", seeds.size(),
                    median_of(final_accs));
        std::printf("mean final eval accuracy over %zu seeds: %.4f\n", seeds.size(), mean);
    }
    return 0;
}

int cmd_score(const CommonFlags& f) {
    RunConfig cfg = load_with_overrides(f);
    const std::string out_root = resolve_out_root(cfg, f.out);
    ScoreMap scores =
        run_score_pipeline(cfg, cfg.train.alloc.proxy, cfg.train.alloc.basis, out_root);
    const RunPaths paths = run_paths(out_root, cfg.train.seed);
    std::printf("wrote %zu scores to %s\n", scores.size(), paths.scores.c_str());
    return 0;
}

int cmd_export_frequency(const std::string& run_dir) {
    const std::string csv = run_export_frequency(run_dir);
    std::printf("wrote %s\n", csv.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HeteroLoRA desk-scale laboratory"};
    app.require_subcommand(1);

    CommonFlags train_flags, score_flags;
    std::string export_dir;

    CLI::App* train_cmd = app.add_subcommand("train", "fine-tune with the configured allocation strategy");
    add_common(train_cmd, train_flags, true);

    CLI::App* score_cmd = app.add_subcommand("score", "one saliency scoring pass, no training");
    add_common(score_cmd, score_flags, true);

    CLI::App* export_cmd = app.add_subcommand("export-frequency", "regenerate frequency.csv for a run");
    export_cmd->add_option("run_dir", export_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_flags);
        if (score_cmd->parsed()) return cmd_score(score_flags);
        if (export_cmd->parsed()) return cmd_export_frequency(export_dir);
    } catch (const heterolora::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
