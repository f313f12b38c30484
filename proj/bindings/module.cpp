// Python bindings over the core operations: tensor math for smoke checks,
// allocator selection, and the train/score/export pipelines the CLI wraps.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "heterolora/checkpoint.hpp"
#include "heterolora/report.hpp"
#include "heterolora/run_config.hpp"

namespace py = pybind11;
using namespace heterolora;

namespace {

Tensor tensor_from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DimensionError("empty matrix");
    const std::size_t r = rows.size(), c = rows[0].size();
    std::vector<double> flat;
    flat.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(flat));
}

std::vector<std::vector<double>> rows_from_tensor(const Tensor& t) {
    std::vector<std::vector<double>> out(t.rows());
    const std::size_t c = t.cols();
    for (std::size_t i = 0; i < t.rows(); ++i)
        out[i] = std::vector<double>(t.values().begin() + i * c, t.values().begin() + (i + 1) * c);
    return out;
}

py::dict epoch_dict(const EpochRecord& e) {
    py::dict d;
    d["epoch"] = e.epoch;
    d["train_loss"] = e.train_loss;
    d["eval_loss"] = e.eval_loss;
    d["eval_accuracy"] = e.eval_accuracy;
    return d;
}

py::dict metrics_dict(const RunMetrics& m) {
    py::dict d;
    py::list epochs;
    for (const EpochRecord& e : m.epochs) epochs.append(epoch_dict(e));
    d["epochs"] = epochs;
    d["searches"] = m.frequency.total_searches;
    d["final_trainable"] = m.final_trainable;
    d["wall_clock_s"] = m.wall_clock_s;
    py::list freq;
    for (const auto& [id, count] : m.frequency.counts) {
        py::dict row;
        row["layer"] = id.layer;
        row["site"] = site_name(id.site);
        row["count"] = count;
        freq.append(row);
    }
    d["frequency_counts"] = freq;
    return d;
}

py::list scores_list(const ScoreMap& scores) {
    py::list out;
    for (const auto& [id, sc] : scores) {
        py::dict row;
        row["layer"] = id.layer;
        row["site"] = site_name(id.site);
        row["proxy"] = proxy_name(sc.proxy);
        row["basis"] = basis_name(sc.basis);
        row["value"] = sc.value;
        out.append(row);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_heterolora, m) {
    m.doc() = "HeteroLoRA desk-scale laboratory: LoRA + shortcut adapters, zero-cost "
              "saliency proxies, and rank-allocation scheduling on a small Transformer.";

    m.def(
        "matmul",
        [](const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
            return rows_from_tensor(matmul(tensor_from_rows(a), tensor_from_rows(b)));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "softmax",
        [](const std::vector<double>& x) {
            Tensor t({x.size()}, std::vector<double>(x));
            return softmax(t, 0).values();
        },
        py::arg("x"));

    m.def(
        "layer_norm",
        [](const std::vector<double>& x, const std::vector<double>& gain,
           const std::vector<double>& bias, double eps) {
            Tensor xt({x.size()}, std::vector<double>(x));
            Tensor g({gain.size()}, std::vector<double>(gain));
            Tensor b({bias.size()}, std::vector<double>(bias));
            return layer_norm(xt, g, b, eps).values();
        },
        py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 1e-5);

    m.def(
        "select_modules",
        [](const std::vector<std::tuple<std::size_t, std::string, double>>& scored, double fraction,
           const std::string& mode, std::uint64_t seed) {
            ScoreMap scores;
            for (const auto& [layer, site, value] : scored) {
                ModuleId id{layer, site_from_name(site)};
                scores[id] = SaliencyScore{id, value, Proxy::Constant, Basis::Decomposed, 0};
            }
            Rng rng(seed);
            AllocationPlan plan = select(scores, fraction, alloc_mode_from_name(mode), rng);
            std::vector<std::pair<std::size_t, std::string>> out;
            for (const ModuleId& id : plan.enabled) out.emplace_back(id.layer, site_name(id.site));
            return out;
        },
        py::arg("scores"), py::arg("fraction") = 0.25, py::arg("mode") = "combined", py::arg("seed") = 0,
        "Top-k module selection with seeded uniform tie-breaking.");

    m.def(
        "count_parameters",
        [](const std::string& config_json) {
            RunConfig cfg = parse_run_config(config_json);
            PreparedRun run = prepare_run(cfg);
            py::dict d;
            d["total"] = run.model.count_parameters(false);
            d["trainable"] = run.model.count_parameters(true);
            return d;
        },
        py::arg("config_json"));

    m.def(
        "train_run",
        [](const std::string& config_json, const std::string& out_root) {
            RunConfig cfg = parse_run_config(config_json);
            return metrics_dict(run_train_pipeline(cfg, out_root));
        },
        py::arg("config_json"), py::arg("out_root"),
        "Run the full training pipeline; writes config/metrics/checkpoint/frequency artifacts.");

    m.def(
        "score_run",
        [](const std::string& config_json, const std::string& proxy, const std::string& basis,
           const std::string& out_root) {
            RunConfig cfg = parse_run_config(config_json);
            return scores_list(
                run_score_pipeline(cfg, proxy_from_name(proxy), basis_from_name(basis), out_root));
        },
        py::arg("config_json"), py::arg("proxy"), py::arg("basis") = "decomposed", py::arg("out_root"),
        "One saliency scoring pass; writes scores.csv.");

    m.def("export_frequency", &run_export_frequency, py::arg("run_dir"),
          "Regenerate frequency.csv from a run directory; returns the CSV path.");

    py::register_exception<ConfigError>(m, "HeteroLoraConfigError", PyExc_ValueError);

    m.attr("__version__") = "0.1.0";
}
