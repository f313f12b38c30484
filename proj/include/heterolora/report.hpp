#pragma once

#include <string>

#include "heterolora/allocator.hpp"
#include "heterolora/train.hpp"

namespace heterolora {

// Plain-text exports, kept free of timestamps and map-iteration order so
// equal-seed runs produce byte-identical files.

// header `layer,site,count,frequency`, rows in ModuleId order, frequency
// printed with 6 decimal places.
std::string frequency_csv(const FrequencyMatrix& matrix, const AdapterRegistry& registry);

// header `layer,site,proxy,basis,value`, rows in ModuleId order.
std::string scores_csv(const ScoreMap& scores);

// Line-delimited records: one per epoch, one per search, one final summary.
// Wall-clock never appears here.
std::string metrics_jsonl(const RunMetrics& metrics);

// FrequencyMatrix persistence for the export-frequency command.
std::string frequency_matrix_json(const FrequencyMatrix& matrix);
FrequencyMatrix frequency_matrix_from_json(const std::string& text);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace heterolora
