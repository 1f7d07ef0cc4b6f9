#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mrtlmm {

/// One individual's ordered person-time records. Row r of `covariates`
/// belongs to time index `time[r]`.
struct IndividualSeries {
    std::string id;
    std::vector<int> time;             // strictly increasing
    Eigen::MatrixXd covariates;        // n x k, one column per covariate
    Eigen::VectorXd outcome;           // n
    std::vector<int> availability;     // empty unless dataset has availability
    std::vector<int> treatment;        // empty unless dataset has treatment
    std::vector<double> prob;          // empty unless dataset has prob

    Eigen::Index size() const { return outcome.size(); }
};

/// Long-format longitudinal/MRT data, validated and immutable after load.
struct LongitudinalDataset {
    std::vector<IndividualSeries> individuals;
    std::vector<std::string> covariate_names;
    bool has_treatment = false;
    bool has_availability = false;
    bool has_prob = false;

    std::size_t n_obs() const;
    int covariate_index(const std::string& name) const; // -1 if absent

    /// Throws ValidationError on any invariant breach (unsorted times,
    /// treatment while unavailable, prob outside (0,1) when available, ...).
    void validate() const;
};

/// Column-name mapping for CSV ingestion. Any header column not mapped
/// here is treated as a numeric covariate.
struct CsvSchema {
    std::string id = "id";
    std::string time = "t";
    std::string outcome = "y";
    std::string availability = "avail"; // optional in the file
    std::string treatment = "trt";      // optional in the file
    std::string prob = "prob";          // optional in the file
};

LongitudinalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void save_csv(const LongitudinalDataset& data, const std::filesystem::path& path);

} // namespace mrtlmm
