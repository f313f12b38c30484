#include "heterolora/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace heterolora {

namespace {

using nlohmann::json;

std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string shortest(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string frequency_csv(const FrequencyMatrix& matrix, const AdapterRegistry& registry) {
    std::ostringstream os;
    os << "layer,site,count,frequency\n";
    for (const FrequencyRow& row : frequency_report(matrix, registry)) {
        os << row.layer << "," << site_name(row.site) << "," << row.count << "," << fixed6(row.frequency)
           << "\n";
    }
    return os.str();
}

std::string scores_csv(const ScoreMap& scores) {
    std::ostringstream os;
    os << "layer,site,proxy,basis,value\n";
    for (const auto& [id, sc] : scores) {
        os << id.layer << "," << site_name(id.site) << "," << proxy_name(sc.proxy) << ","
           << basis_name(sc.basis) << "," << shortest(sc.value) << "\n";
    }
    return os.str();
}

std::string metrics_jsonl(const RunMetrics& metrics) {
    std::ostringstream os;
    // searches and epochs interleaved chronologically: searches carry their
    // (epoch, step) position, epochs close each pass
    for (const SearchRecord& s : metrics.searches) {
        json j{{"type", "search"},
               {"index", s.search_index},
               {"epoch", s.epoch},
               {"step", s.step},
               {"trainable_params", s.trainable_params}};
        json mods = json::array();
        for (const ModuleId& id : s.enabled) mods.push_back(to_string(id));
        j["enabled"] = mods;
        os << j.dump() << "\n";
    }
    for (const EpochRecord& e : metrics.epochs) {
        json j{{"type", "epoch"},
               {"epoch", e.epoch},
               {"train_loss", e.train_loss},
               {"eval_loss", e.eval_loss},
               {"eval_accuracy", e.eval_accuracy}};
        os << j.dump() << "\n";
    }
    json fin{{"type", "final"},
             {"epochs", metrics.epochs.size()},
             {"searches", metrics.searches.size()},
             {"trainable_params", metrics.final_trainable}};
    os << fin.dump() << "\n";
    return os.str();
}

std::string frequency_matrix_json(const FrequencyMatrix& matrix) {
    json j;
    j["total_searches"] = matrix.total_searches;
    json counts = json::array();
    for (const auto& [id, c] : matrix.counts) {
        counts.push_back(json{{"layer", id.layer}, {"site", site_name(id.site)}, {"count", c}});
    }
    j["counts"] = counts;
    return j.dump(2) + "\n";
}

FrequencyMatrix frequency_matrix_from_json(const std::string& text) {
    FrequencyMatrix m;
    json j = json::parse(text);
    m.total_searches = j.at("total_searches").get<int>();
    for (const auto& cj : j.at("counts")) {
        ModuleId id{cj.at("layer").get<std::size_t>(), site_from_name(cj.at("site").get<std::string>())};
        m.counts[id] = cj.at("count").get<int>();
    }
    return m;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("cannot open '" + path + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace heterolora
