#ifndef GATENAS_REPORT_HPP
#define GATENAS_REPORT_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatenas/search.hpp"

namespace gatenas {

struct ReportRow {
    std::string method;
    double cost = 0.0;
    double accuracy = 0.0;
    std::uint64_t seed = 0;
};

nlohmann::json point_to_json(const ArchitecturePoint& point);

// result.json holds one point object or an array of them.
std::vector<ReportRow> collect_results(const std::filesystem::path& root);

// Writes method,cost,accuracy,seed rows for every result.json under `root`
// (sorted by path) to `csv_path`. Returns the number of rows.
std::size_t write_report(const std::filesystem::path& root, const std::filesystem::path& csv_path);

std::vector<ReportRow> read_report(const std::filesystem::path& csv_path);

} // namespace gatenas

#endif // GATENAS_REPORT_HPP
