#include "heterolora/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace heterolora {

const char* alloc_kind_name(AllocKind k) {
    switch (k) {
        case AllocKind::None: return "none";
        case AllocKind::Static: return "static";
        case AllocKind::Dynamic: return "dynamic";
    }
    return "?";
}

AllocKind alloc_kind_from_name(const std::string& name) {
    for (AllocKind k : {AllocKind::None, AllocKind::Static, AllocKind::Dynamic}) {
        if (name == alloc_kind_name(k)) return k;
    }
    throw ConfigError("unknown allocation kind '" + name + "'");
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (epochs <= 0) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (alloc.kind != AllocKind::None) {
        if (!(alloc.fraction > 0.0 && alloc.fraction <= 1.0)) {
            throw ConfigError("train: allocation fraction must lie in (0, 1]");
        }
        if (alloc.batch_budget <= 0 && alloc.proxy != Proxy::Constant && alloc.proxy != Proxy::Synflow) {
            throw ConfigError("train: allocation batch_budget must be >= 1");
        }
        if (alloc.kind == AllocKind::Dynamic && alloc.searches_per_epoch < 1) {
            throw ConfigError("train: searches_per_epoch must be >= 1");
        }
    }
}

double RunMetrics::median_eval_accuracy() const {
    if (epochs.empty()) return 0.0;
    std::vector<double> acc;
    for (const auto& e : epochs) acc.push_back(e.eval_accuracy);
    std::sort(acc.begin(), acc.end());
    const std::size_t n = acc.size();
    return n % 2 == 1 ? acc[n / 2] : 0.5 * (acc[n / 2 - 1] + acc[n / 2]);
}

double RunMetrics::mean_eval_accuracy() const {
    if (epochs.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : epochs) s += e.eval_accuracy;
    return s / static_cast<double>(epochs.size());
}

Tensor batch_loss(Model& model, const Batch& batch, const Dataset& data) {
    if (batch.samples.empty()) throw ContractError("batch_loss: empty batch");
    if (data.spec().kind == TaskKind::CopyLm) {
        const std::size_t half = data.spec().seq_len / 2;
        std::vector<Tensor> rows;
        std::vector<int> targets;
        for (const Sample& s : batch.samples) {
            Tensor logits = model.forward(s.tokens);  // (t, vocab)
            rows.push_back(slice_rows(logits, half - 1, half));
            for (std::size_t i = half; i < 2 * half; ++i) targets.push_back(s.tokens[i]);
        }
        return cross_entropy(concat(rows, 0), targets);
    }
    std::vector<Tensor> rows;
    std::vector<int> targets;
    for (const Sample& s : batch.samples) {
        Tensor logits = model.forward(s.tokens);  // (n_classes,)
        rows.push_back(reshape(logits, {1, logits.size()}));
        targets.push_back(s.label);
    }
    return cross_entropy(concat(rows, 0), targets);
}

EvalResult evaluate(Model& model, const std::vector<Sample>& eval_set, const Dataset& data) {
    if (eval_set.empty()) throw ContractError("evaluate: empty evaluation stream");
    const bool lm = data.spec().kind == TaskKind::CopyLm;
    const std::size_t half = data.spec().seq_len / 2;
    double loss_sum = 0.0;
    long correct = 0, total = 0, loss_rows = 0;
    for (const Sample& s : eval_set) {
        Tensor logits = model.forward(s.tokens);
        if (lm) {
            for (std::size_t i = 0; i < half; ++i) {
                const std::size_t row = half - 1 + i;
                const int target = s.tokens[half + i];
                std::size_t argmax = 0;
                double best = logits.at(row, 0);
                double mx = best;
                for (std::size_t c = 1; c < logits.cols(); ++c) {
                    const double v = logits.at(row, c);
                    if (v > best) {
                        best = v;
                        argmax = c;
                    }
                    mx = std::max(mx, v);
                }
                double denom = 0.0;
                for (std::size_t c = 0; c < logits.cols(); ++c) denom += std::exp(logits.at(row, c) - mx);
                loss_sum += mx + std::log(denom) - logits.at(row, static_cast<std::size_t>(target));
                ++loss_rows;
                if (argmax == static_cast<std::size_t>(target)) ++correct;
                ++total;
            }
        } else {
            std::size_t argmax = 0;
            double best = logits.at(0);
            double mx = best;
            for (std::size_t c = 1; c < logits.size(); ++c) {
                if (logits.at(c) > best) {
                    best = logits.at(c);
                    argmax = c;
                }
                mx = std::max(mx, logits.at(c));
            }
            double denom = 0.0;
            for (std::size_t c = 0; c < logits.size(); ++c) denom += std::exp(logits.at(c) - mx);
            loss_sum += mx + std::log(denom) - logits.at(static_cast<std::size_t>(s.label));
            ++loss_rows;
            if (argmax == static_cast<std::size_t>(s.label)) ++correct;
            ++total;
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(total),
            loss_sum / static_cast<double>(loss_rows)};
}

namespace {

class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : prev_(precision_mode()) { set_precision_mode(p); }
    ~PrecisionScope() { set_precision_mode(prev_); }

private:
    Precision prev_;
};

}  // namespace

RunMetrics train(Model& model, const Dataset& data, const TrainConfig& cfg, const EpochSink& on_epoch,
                 const SearchSink& on_search) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    PrecisionScope precision(cfg.precision);

    const std::size_t steps = data.steps_per_epoch(cfg.batch_size);
    std::vector<std::size_t> boundaries;
    if (cfg.alloc.kind == AllocKind::Dynamic) {
        boundaries = search_steps(steps, static_cast<std::size_t>(cfg.alloc.searches_per_epoch));
    }

    AdamW optimizer({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
    RngPool run_rng(cfg.seed);
    RunMetrics metrics;

    auto scoring_fn_at = [&](std::size_t position) -> BatchLossFn {
        return [&model, &data, &cfg, position](int i) {
            return batch_loss(model, data.train_batch(position + static_cast<std::size_t>(i), cfg.batch_size),
                              data);
        };
    };

    int search_index = 0;
    auto run_search = [&](int epoch, std::size_t step, std::size_t position) {
        ScoreMap scores = compute_scores(model, cfg.alloc.proxy, cfg.alloc.basis, scoring_fn_at(position),
                                         cfg.alloc.batch_budget);
        AllocationPlan plan =
            select(scores, cfg.alloc.fraction, cfg.alloc.mode, run_rng.stream("alloc.tiebreak"));
        plan.search_index = search_index;
        set_enabled(model.registry(), plan.enabled);
        metrics.frequency.record(plan);
        SearchRecord rec{search_index, epoch, step, plan.enabled, model.count_parameters(true)};
        metrics.searches.push_back(rec);
        if (on_search) on_search(rec);
        ++search_index;
    };

    if (cfg.alloc.kind == AllocKind::Static) {
        run_search(0, 0, 0);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            const std::size_t position = static_cast<std::size_t>(epoch) * steps + step;
            if (cfg.alloc.kind == AllocKind::Dynamic &&
                std::find(boundaries.begin(), boundaries.end(), step) != boundaries.end()) {
                run_search(epoch, step, position);
            }
            model.zero_grads();
            Tape tape;
            TapeScope scope(tape);
            Tensor loss = batch_loss(model, data.train_batch(position, cfg.batch_size), data);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw NumericError("training aborted: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   ", step " + std::to_string(step));
            }
            backward(loss);
            optimizer.step(model.trainable_parameters());
            loss_sum += loss_value;
        }
        model.zero_grads();
        EvalResult ev = evaluate(model, data.eval(), data);
        EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(steps), ev.mean_loss, ev.accuracy};
        metrics.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }

    metrics.final_trainable = model.count_parameters(true);
    metrics.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return metrics;
}

}  // namespace heterolora
