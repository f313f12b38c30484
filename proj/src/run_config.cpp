#include "heterolora/run_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "heterolora/checkpoint.hpp"
#include "heterolora/report.hpp"

namespace heterolora {

namespace {

using nlohmann::json;

// Wraps a JSON object; every key must be consumed through get()/child() or
// finish() reports it with its full path.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        known_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("bad value for '" + path_ + key + "'");
        }
    }

    bool has(const std::string& key) {
        known_.insert(key);
        return j_.contains(key);
    }

    const json* child(const std::string& key) {
        known_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!known_.count(key)) throw ConfigError("unknown key '" + path_ + key + "'");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> known_;
};

std::vector<Site> parse_sites(const json* arr, const std::string& path) {
    std::vector<Site> out;
    if (!arr) return out;
    if (!arr->is_array()) throw ConfigError("'" + path + "' must be an array of site names");
    for (const auto& v : *arr) out.push_back(site_from_name(v.get<std::string>()));
    return out;
}

json sites_json(const std::vector<Site>& sites) {
    json arr = json::array();
    for (Site s : sites) arr.push_back(site_name(s));
    return arr;
}

}  // namespace

const char* train_scope_name(TrainScope s) {
    switch (s) {
        case TrainScope::Adapters: return "adapters";
        case TrainScope::All: return "all";
        case TrainScope::None: return "none";
    }
    return "?";
}

TrainScope train_scope_from_name(const std::string& name) {
    for (TrainScope s : {TrainScope::Adapters, TrainScope::All, TrainScope::None}) {
        if (name == train_scope_name(s)) return s;
    }
    throw ConfigError("unknown train scope '" + name + "'");
}

void RunConfig::set_seed(std::uint64_t seed) {
    model.seed = seed;
    task.seed = seed;
    train.seed = seed;
}

void RunConfig::finalize() {
    if (model.vocab_size < task.vocab_size) {
        throw ConfigError("model.vocab_size " + std::to_string(model.vocab_size) +
                          " is smaller than task.vocab_size " + std::to_string(task.vocab_size));
    }
    if (model.max_seq_len < task.seq_len) {
        throw ConfigError("model.max_seq_len " + std::to_string(model.max_seq_len) +
                          " is smaller than task.seq_len " + std::to_string(task.seq_len));
    }
    if (task.kind == TaskKind::CopyLm) {
        model.head_type = HeadType::CausalLm;
        model.n_classes = model.vocab_size;
    } else {
        model.head_type = HeadType::Classification;
        model.n_classes = 2;
    }
    model.validate();
    train.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
    json root_json;
    try {
        root_json = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    RunConfig cfg;
    StrictObject root(root_json, "");
    const std::uint64_t seed = root.get<std::uint64_t>("seed", 0);
    cfg.out_dir = root.get<std::string>("out_dir", "");
    cfg.scope = train_scope_from_name(root.get<std::string>("trainable", "adapters"));

    if (const json* tj = root.child("task")) {
        StrictObject t(*tj, "task.");
        cfg.task.kind = task_kind_from_name(t.get<std::string>("kind", "parity"));
        cfg.task.vocab_size = t.get<std::size_t>("vocab_size", 8);
        cfg.task.seq_len = t.get<std::size_t>("seq_len", 8);
        cfg.task.n_train = t.get<int>("n_train", 512);
        cfg.task.n_eval = t.get<int>("n_eval", 256);
        t.finish();
    }

    cfg.model.vocab_size = cfg.task.vocab_size;
    cfg.model.max_seq_len = cfg.task.seq_len;
    if (const json* mj = root.child("model")) {
        StrictObject m(*mj, "model.");
        cfg.model.d_model = m.get<std::size_t>("d_model", 32);
        cfg.model.n_layers = m.get<std::size_t>("n_layers", 2);
        cfg.model.n_heads = m.get<std::size_t>("n_heads", 4);
        cfg.model.d_ff = m.get<std::size_t>("d_ff", 64);
        cfg.model.vocab_size = m.get<std::size_t>("vocab_size", cfg.task.vocab_size);
        cfg.model.max_seq_len = m.get<std::size_t>("max_seq_len", cfg.task.seq_len);
        m.finish();
    }

    if (const json* tj = root.child("train")) {
        StrictObject t(*tj, "train.");
        cfg.train.batch_size = t.get<std::size_t>("batch_size", 16);
        cfg.train.epochs = t.get<int>("epochs", 30);
        cfg.train.learning_rate = t.get<double>("learning_rate", 1e-3);
        cfg.train.weight_decay = t.get<double>("weight_decay", 0.01);
        const std::string prec = t.get<std::string>("precision", "f64");
        if (prec == "f64") {
            cfg.train.precision = Precision::F64;
        } else if (prec == "f32") {
            cfg.train.precision = Precision::F32;
        } else {
            throw ConfigError("train.precision must be 'f64' or 'f32'");
        }
        t.finish();
    }

    if (const json* aj = root.child("adapters")) {
        StrictObject a(*aj, "adapters.");
        cfg.train.adapters.lora_sites = parse_sites(a.child("lora_sites"), "adapters.lora_sites");
        cfg.train.adapters.lora_rank = a.get<std::size_t>("lora_rank", 8);
        cfg.train.adapters.lora_alpha = a.get<double>("lora_alpha", 16.0);
        cfg.train.adapters.shortcut_kinds = parse_sites(a.child("shortcuts"), "adapters.shortcuts");
        cfg.train.adapters.shortcut_rank = a.get<std::size_t>("shortcut_rank", 8);
        cfg.train.adapters.shortcut_alpha = a.get<double>("shortcut_alpha", 4.0);
        a.finish();
    }

    if (const json* lj = root.child("allocation")) {
        StrictObject a(*lj, "allocation.");
        cfg.train.alloc.kind = alloc_kind_from_name(a.get<std::string>("kind", "none"));
        cfg.train.alloc.proxy = proxy_from_name(a.get<std::string>("proxy", "gradnorm"));
        cfg.train.alloc.basis = basis_from_name(a.get<std::string>("basis", "decomposed"));
        cfg.train.alloc.mode = alloc_mode_from_name(a.get<std::string>("pool", "combined"));
        cfg.train.alloc.fraction = a.get<double>("fraction", 0.25);
        cfg.train.alloc.searches_per_epoch = a.get<int>("searches_per_epoch", 5);
        cfg.train.alloc.batch_budget = a.get<int>("batch_budget", 32);
        a.finish();
    }

    root.finish();
    cfg.set_seed(seed);
    cfg.finalize();
    return cfg;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path)); }

std::string effective_config_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.train.seed;
    j["out_dir"] = cfg.out_dir;
    j["trainable"] = train_scope_name(cfg.scope);
    j["task"] = json{{"kind", task_kind_name(cfg.task.kind)},
                     {"vocab_size", cfg.task.vocab_size},
                     {"seq_len", cfg.task.seq_len},
                     {"n_train", cfg.task.n_train},
                     {"n_eval", cfg.task.n_eval}};
    j["model"] = json{{"d_model", cfg.model.d_model},
                      {"n_layers", cfg.model.n_layers},
                      {"n_heads", cfg.model.n_heads},
                      {"d_ff", cfg.model.d_ff},
                      {"vocab_size", cfg.model.vocab_size},
                      {"max_seq_len", cfg.model.max_seq_len}};
    j["train"] = json{{"batch_size", cfg.train.batch_size},
                      {"epochs", cfg.train.epochs},
                      {"learning_rate", cfg.train.learning_rate},
                      {"weight_decay", cfg.train.weight_decay},
                      {"precision", cfg.train.precision == Precision::F64 ? "f64" : "f32"}};
    j["adapters"] = json{{"lora_sites", sites_json(cfg.train.adapters.lora_sites)},
                         {"lora_rank", cfg.train.adapters.lora_rank},
                         {"lora_alpha", cfg.train.adapters.lora_alpha},
                         {"shortcuts", sites_json(cfg.train.adapters.shortcut_kinds)},
                         {"shortcut_rank", cfg.train.adapters.shortcut_rank},
                         {"shortcut_alpha", cfg.train.adapters.shortcut_alpha}};
    j["allocation"] = json{{"kind", alloc_kind_name(cfg.train.alloc.kind)},
                           {"proxy", proxy_name(cfg.train.alloc.proxy)},
                           {"basis", basis_name(cfg.train.alloc.basis)},
                           {"pool", alloc_mode_name(cfg.train.alloc.mode)},
                           {"fraction", cfg.train.alloc.fraction},
                           {"searches_per_epoch", cfg.train.alloc.searches_per_epoch},
                           {"batch_budget", cfg.train.alloc.batch_budget}};
    return j.dump(2) + "\n";
}

RunPaths run_paths(const std::string& out_root, std::uint64_t seed) {
    RunPaths p;
    p.dir = out_root + "/seed-" + std::to_string(seed);
    p.config = p.dir + "/config.json";
    p.metrics = p.dir + "/metrics.jsonl";
    p.checkpoint = p.dir + "/checkpoint.bin";
    p.frequency_csv = p.dir + "/frequency.csv";
    p.frequency_json = p.dir + "/frequency.json";
    p.scores = p.dir + "/scores.csv";
    return p;
}

std::string resolve_out_root(const RunConfig& cfg, const std::string& cli_out) {
    if (!cli_out.empty()) return cli_out;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    if (const char* env = std::getenv("HETEROLORA_OUT"); env && *env) return env;
    return "runs";
}

PreparedRun prepare_run(const RunConfig& cfg) {
    PreparedRun run{Model(cfg.model), Dataset::make(cfg.task)};
    if (cfg.train.adapters.any()) {
        inject(run.model, cfg.train.adapters);
    }
    switch (cfg.scope) {
        case TrainScope::Adapters:
            if (!cfg.train.adapters.any()) run.model.freeze_base();  // head-only fine-tuning
            break;
        case TrainScope::All:
            // meaningful for adapter-free configs, where the base stays
            // trainable; inject() already froze the base when adapters exist
            break;
        case TrainScope::None:
            run.model.freeze_base();
            run.model.head_weight().set_requires_grad(false);
            run.model.head_bias().set_requires_grad(false);
            for (auto& [id, ad] : run.model.registry()) {
                ad.a.set_requires_grad(false);
                ad.b.set_requires_grad(false);
            }
            break;
    }
    return run;
}

RunMetrics run_train_pipeline(const RunConfig& cfg, const std::string& out_root) {
    PreparedRun run = prepare_run(cfg);
    RunPaths paths = run_paths(out_root, cfg.train.seed);
    std::filesystem::create_directories(paths.dir);

    RunConfig persisted = cfg;
    persisted.out_dir = out_root;
    write_text_file(paths.config, effective_config_json(persisted));

    save_checkpoint(run.model, paths.checkpoint);  // initial state is the first last-good state

    RunMetrics partial;  // written even when training aborts mid-run
    auto flush_artifacts = [&](const RunMetrics& m) {
        write_text_file(paths.metrics, metrics_jsonl(m));
        write_text_file(paths.frequency_json, frequency_matrix_json(m.frequency));
        if (m.frequency.total_searches > 0) {
            write_text_file(paths.frequency_csv, frequency_csv(m.frequency, run.model.registry()));
        } else {
            write_text_file(paths.frequency_csv, "layer,site,count,frequency\n");
        }
    };

    try {
        RunMetrics metrics = train(
            run.model, run.data, cfg.train,
            [&](const EpochRecord& e) {
                partial.epochs.push_back(e);
                save_checkpoint(run.model, paths.checkpoint);  // last-good
            },
            [&](const SearchRecord& s) {
                partial.searches.push_back(s);
                AllocationPlan plan;
                plan.enabled = s.enabled;
                partial.frequency.record(plan);
            });
        save_checkpoint(run.model, paths.checkpoint);
        flush_artifacts(metrics);
        return metrics;
    } catch (...) {
        flush_artifacts(partial);
        throw;
    }
}

ScoreMap run_score_pipeline(const RunConfig& cfg, Proxy proxy, Basis basis, const std::string& out_root) {
    PreparedRun run = prepare_run(cfg);
    if (run.model.registry().empty()) {
        throw ConfigError("score: the adapter config installs no modules to score");
    }
    BatchLossFn loss_fn = [&](int i) {
        return batch_loss(run.model, run.data.train_batch(static_cast<std::size_t>(i), cfg.train.batch_size),
                          run.data);
    };
    ScoreMap scores = compute_scores(run.model, proxy, basis, loss_fn, cfg.train.alloc.batch_budget);

    RunPaths paths = run_paths(out_root, cfg.train.seed);
    std::filesystem::create_directories(paths.dir);
    write_text_file(paths.scores, scores_csv(scores));
    return scores;
}

std::string run_export_frequency(const std::string& run_dir) {
    const std::string matrix_path = run_dir + "/frequency.json";
    if (!std::filesystem::exists(matrix_path)) {
        throw ContractError("no frequency matrix at '" + matrix_path + "'");
    }
    FrequencyMatrix matrix = frequency_matrix_from_json(read_text_file(matrix_path));
    if (matrix.total_searches == 0) {
        throw ContractError("frequency matrix in '" + run_dir + "' records no searches");
    }

    // Regenerate rows in ModuleId order; the registry layout comes from the
    // stored counts (every module that was ever enabled) plus the checkpoint
    // when present for never-enabled modules.
    AdapterRegistry layout;
    const std::string ckpt_path = run_dir + "/checkpoint.bin";
    std::optional<Model> model;
    if (std::filesystem::exists(ckpt_path)) {
        model.emplace(load_checkpoint(ckpt_path));
    }
    const AdapterRegistry* reg = nullptr;
    if (model && !model->registry().empty()) {
        reg = &model->registry();
    } else {
        for (const auto& [id, c] : matrix.counts) {
            Adapter stub;
            stub.id = id;
            stub.w0 = Tensor::zeros({1, 1});
            stub.a = Tensor::zeros({1, 1});
            stub.b = Tensor::zeros({1, 1});
            stub.rank = 1;
            layout.install(std::move(stub));
        }
        reg = &layout;
    }
    const std::string csv_path = run_dir + "/frequency.csv";
    write_text_file(csv_path, frequency_csv(matrix, *reg));
    return csv_path;
}

}  // namespace heterolora
