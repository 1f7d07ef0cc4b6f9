#include "mrtlmm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mrtlmm/errors.hpp"

namespace mrtlmm {

std::size_t LongitudinalDataset::n_obs() const {
    std::size_t n = 0;
    for (const auto& s : individuals) n += static_cast<std::size_t>(s.size());
    return n;
}

int LongitudinalDataset::covariate_index(const std::string& name) const {
    auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
    if (it == covariate_names.end()) return -1;
    return static_cast<int>(it - covariate_names.begin());
}

void LongitudinalDataset::validate() const {
    const auto k = static_cast<Eigen::Index>(covariate_names.size());
    for (const auto& s : individuals) {
        if (s.size() < 1)
            throw ValidationError("individual '" + s.id + "' has no records");
        if (s.covariates.rows() != s.size() || s.covariates.cols() != k)
            throw ValidationError("individual '" + s.id + "' has inconsistent covariate dimensions");
        if (static_cast<Eigen::Index>(s.time.size()) != s.size())
            throw ValidationError("individual '" + s.id + "' time/outcome length mismatch");
        for (std::size_t r = 1; r < s.time.size(); ++r) {
            if (s.time[r] <= s.time[r - 1])
                throw ValidationError("individual '" + s.id + "' time indices not strictly increasing");
        }
        if (!s.outcome.allFinite() || !s.covariates.allFinite())
            throw ValidationError("individual '" + s.id + "' contains non-finite values");
        if (has_treatment && static_cast<Eigen::Index>(s.treatment.size()) != s.size())
            throw ValidationError("individual '" + s.id + "' treatment column length mismatch");
        if (has_availability && static_cast<Eigen::Index>(s.availability.size()) != s.size())
            throw ValidationError("individual '" + s.id + "' availability column length mismatch");
        for (Eigen::Index r = 0; r < s.size(); ++r) {
            const int avail = has_availability ? s.availability[r] : 1;
            if (has_availability && avail != 0 && avail != 1)
                throw ValidationError("individual '" + s.id + "' availability not in {0,1}");
            if (has_treatment) {
                const int trt = s.treatment[r];
                if (trt != 0 && trt != 1)
                    throw ValidationError("individual '" + s.id + "' treatment not in {0,1}");
                if (has_availability && avail == 0 && trt == 1)
                    throw ValidationError("individual '" + s.id + "' treated while unavailable at t=" +
                                          std::to_string(s.time[r]));
                if (has_prob && avail == 1) {
                    const double pr = s.prob[r];
                    if (!(pr > 0.0 && pr < 1.0))
                        throw ValidationError("individual '" + s.id +
                                              "' randomization probability outside (0,1) at t=" +
                                              std::to_string(s.time[r]));
                }
            }
        }
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& cell, std::size_t row, const std::string& col) {
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    while (last != first && (*(last - 1) == ' ' || *(last - 1) == '\r' || *(last - 1) == '\t')) --last;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last)
        throw ParseError("row " + std::to_string(row) + ": cannot parse '" + cell +
                         "' in column '" + col + "' as a number");
    return value;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    auto e = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

} // namespace

LongitudinalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file: " + path.string());
    auto header = split_csv_line(line);
    for (auto& h : header) h = trim(h);

    auto col_of = [&](const std::string& name) -> int {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };

    const int id_col = col_of(schema.id);
    const int t_col = col_of(schema.time);
    const int y_col = col_of(schema.outcome);
    if (id_col < 0) throw ValidationError("missing required column '" + schema.id + "'");
    if (t_col < 0) throw ValidationError("missing required column '" + schema.time + "'");
    if (y_col < 0) throw ValidationError("missing required column '" + schema.outcome + "'");
    const int avail_col = col_of(schema.availability);
    const int trt_col = col_of(schema.treatment);
    const int prob_col = col_of(schema.prob);

    std::vector<int> cov_cols;
    std::vector<std::string> cov_names;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        if (c == id_col || c == t_col || c == y_col || c == avail_col || c == trt_col ||
            c == prob_col)
            continue;
        cov_cols.push_back(c);
        cov_names.push_back(header[c]);
    }

    struct Row {
        int t;
        double y;
        std::vector<double> cov;
        int avail, trt;
        double prob;
    };
    std::vector<std::string> order;           // ids in first-appearance order
    std::map<std::string, std::vector<Row>> by_id;

    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError("row " + std::to_string(row_no) + ": expected " +
                             std::to_string(header.size()) + " cells, got " +
                             std::to_string(cells.size()));
        Row r;
        r.t = static_cast<int>(parse_double(cells[t_col], row_no, schema.time));
        r.y = parse_double(cells[y_col], row_no, schema.outcome);
        r.avail = avail_col >= 0
                      ? static_cast<int>(parse_double(cells[avail_col], row_no, schema.availability))
                      : 1;
        r.trt = trt_col >= 0 ? static_cast<int>(parse_double(cells[trt_col], row_no, schema.treatment))
                             : 0;
        r.prob = prob_col >= 0 ? parse_double(cells[prob_col], row_no, schema.prob) : 0.5;
        r.cov.reserve(cov_cols.size());
        for (std::size_t j = 0; j < cov_cols.size(); ++j)
            r.cov.push_back(parse_double(cells[cov_cols[j]], row_no, cov_names[j]));

        const std::string id = trim(cells[id_col]);
        auto [it, inserted] = by_id.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back(std::move(r));
    }

    LongitudinalDataset data;
    data.covariate_names = cov_names;
    data.has_availability = avail_col >= 0;
    data.has_treatment = trt_col >= 0;
    data.has_prob = prob_col >= 0;

    for (const auto& id : order) {
        auto& rows = by_id[id];
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
        for (std::size_t r = 1; r < rows.size(); ++r)
            if (rows[r].t == rows[r - 1].t)
                throw ValidationError("duplicate (id,t) = ('" + id + "'," +
                                      std::to_string(rows[r].t) + ")");
        IndividualSeries s;
        s.id = id;
        const auto n = static_cast<Eigen::Index>(rows.size());
        s.covariates.resize(n, static_cast<Eigen::Index>(cov_names.size()));
        s.outcome.resize(n);
        s.time.resize(rows.size());
        if (data.has_availability) s.availability.resize(rows.size());
        if (data.has_treatment) s.treatment.resize(rows.size());
        if (data.has_prob) s.prob.resize(rows.size());
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto& row = rows[static_cast<std::size_t>(r)];
            s.time[static_cast<std::size_t>(r)] = row.t;
            s.outcome[r] = row.y;
            for (Eigen::Index j = 0; j < s.covariates.cols(); ++j)
                s.covariates(r, j) = row.cov[static_cast<std::size_t>(j)];
            if (data.has_availability) s.availability[static_cast<std::size_t>(r)] = row.avail;
            if (data.has_treatment) s.treatment[static_cast<std::size_t>(r)] = row.trt;
            if (data.has_prob) s.prob[static_cast<std::size_t>(r)] = row.prob;
        }
        data.individuals.push_back(std::move(s));
    }

    data.validate();
    return data;
}

void save_csv(const LongitudinalDataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path.string());
    out.precision(17);

    out << "id,t";
    if (data.has_availability) out << ",avail";
    if (data.has_treatment) out << ",trt";
    if (data.has_prob) out << ",prob";
    out << ",y";
    for (const auto& c : data.covariate_names) out << "," << c;
    out << "\n";

    for (const auto& s : data.individuals) {
        for (Eigen::Index r = 0; r < s.size(); ++r) {
            out << s.id << "," << s.time[static_cast<std::size_t>(r)];
            if (data.has_availability) out << "," << s.availability[static_cast<std::size_t>(r)];
            if (data.has_treatment) out << "," << s.treatment[static_cast<std::size_t>(r)];
            if (data.has_prob) out << "," << s.prob[static_cast<std::size_t>(r)];
            out << "," << s.outcome[r];
            for (Eigen::Index j = 0; j < s.covariates.cols(); ++j) out << "," << s.covariates(r, j);
            out << "\n";
        }
    }
}

} // namespace mrtlmm
