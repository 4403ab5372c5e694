#include "gatenas/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gatenas/errors.hpp"

namespace gatenas {

namespace fs = std::filesystem;

nlohmann::json point_to_json(const ArchitecturePoint& point)
{
    return {{"method", point.method},   {"cost", point.cost},     {"accuracy", point.accuracy},
            {"seed", point.seed},       {"lambda", point.lambda}, {"arch", architecture_to_json(point.arch)}};
}

namespace {

ReportRow row_from_json(const nlohmann::json& j)
{
    return ReportRow{j.at("method").get<std::string>(), j.at("cost").get<double>(), j.at("accuracy").get<double>(),
                     j.at("seed").get<std::uint64_t>()};
}

} // namespace

std::vector<ReportRow> collect_results(const fs::path& root)
{
    std::vector<fs::path> files;
    if (fs::exists(root)) {
        for (const auto& entry : fs::recursive_directory_iterator(root)) {
            if (entry.is_regular_file() && entry.path().filename() == "result.json") {
                files.push_back(entry.path());
            }
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<ReportRow> rows;
    for (const auto& f : files) {
        std::ifstream in(f);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw LoadError("cannot parse " + f.string() + ": " + e.what());
        }
        if (doc.is_array()) {
            for (const auto& j : doc) {
                rows.push_back(row_from_json(j));
            }
        } else {
            rows.push_back(row_from_json(doc));
        }
    }
    return rows;
}

std::size_t write_report(const fs::path& root, const fs::path& csv_path)
{
    const auto rows = collect_results(root);
    if (csv_path.has_parent_path()) {
        fs::create_directories(csv_path.parent_path());
    }
    std::ofstream out(csv_path);
    out << "method,cost,accuracy,seed\n";
    out << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.method << ',' << r.cost << ',' << r.accuracy << ',' << r.seed << '\n';
    }
    return rows.size();
}

std::vector<ReportRow> read_report(const fs::path& csv_path)
{
    std::ifstream in(csv_path);
    if (!in) {
        throw LoadError("cannot open " + csv_path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != "method,cost,accuracy,seed") {
        throw LoadError("unexpected report header in " + csv_path.string());
    }
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        ReportRow r;
        std::string cost;
        std::string acc;
        std::string seed;
        std::getline(ss, r.method, ',');
        std::getline(ss, cost, ',');
        std::getline(ss, acc, ',');
        std::getline(ss, seed, ',');
        r.cost = std::stod(cost);
        r.accuracy = std::stod(acc);
        r.seed = std::stoull(seed);
        rows.push_back(r);
    }
    return rows;
}

} // namespace gatenas
