#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mrtlmm/dataset.hpp"

namespace mrtlmm {

/// Declarative model layout. A term is either the literal "1" (intercept)
/// or the name of a covariate column. Fixed-effect columns are laid out as
///   [ fixed_main | I*fixed_main (if availability_interactions) | A*gate*fixed_trt ]
/// and random-effect columns as
///   [ random_main | A*gate*random_trt ]
/// where gate = availability when gate_treatment_by_availability and the
/// dataset carries availability, and 1 otherwise.
struct ModelSpec {
    std::vector<std::string> fixed_main;
    std::vector<std::string> fixed_trt;
    std::vector<std::string> random_main;
    std::vector<std::string> random_trt;
    bool availability_interactions = false;
    bool gate_treatment_by_availability = true;
    bool diagonal_g = false; // independent random effects

    static ModelSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct IndividualDesign {
    std::string id;
    Eigen::MatrixXd X; // n_i x p
    Eigen::MatrixXd Z; // n_i x q
    Eigen::VectorXd y; // n_i
};

/// Per-individual design matrices with a shared column layout.
struct DesignBundle {
    std::vector<IndividualDesign> groups;
    std::vector<std::string> x_names;
    std::vector<std::string> z_names;
    bool diagonal_g = false;

    Eigen::Index p() const { return static_cast<Eigen::Index>(x_names.size()); }
    Eigen::Index q() const { return static_cast<Eigen::Index>(z_names.size()); }
    std::size_t n_obs() const;
};

DesignBundle build_design(const LongitudinalDataset& data, const ModelSpec& spec);

} // namespace mrtlmm
