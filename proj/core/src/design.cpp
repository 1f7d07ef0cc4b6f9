#include "mrtlmm/design.hpp"

#include "mrtlmm/errors.hpp"

namespace mrtlmm {

namespace {

std::vector<std::string> get_terms(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) return {};
    return j.at(key).get<std::vector<std::string>>();
}

} // namespace

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.fixed_main = get_terms(j, "fixed_main");
    s.fixed_trt = get_terms(j, "fixed_trt");
    s.random_main = get_terms(j, "random_main");
    s.random_trt = get_terms(j, "random_trt");
    s.availability_interactions = j.value("availability_interactions", false);
    s.gate_treatment_by_availability = j.value("gate_treatment_by_availability", true);
    s.diagonal_g = j.value("diagonal_g", false);
    return s;
}

nlohmann::json ModelSpec::to_json() const {
    return nlohmann::json{{"fixed_main", fixed_main},
                          {"fixed_trt", fixed_trt},
                          {"random_main", random_main},
                          {"random_trt", random_trt},
                          {"availability_interactions", availability_interactions},
                          {"gate_treatment_by_availability", gate_treatment_by_availability},
                          {"diagonal_g", diagonal_g}};
}

std::size_t DesignBundle::n_obs() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += static_cast<std::size_t>(g.y.size());
    return n;
}

namespace {

// A term is the intercept literal "1" or a covariate column index.
struct Term {
    bool intercept;
    int col; // covariate index when !intercept
};

std::vector<Term> resolve(const std::vector<std::string>& names, const LongitudinalDataset& data) {
    std::vector<Term> terms;
    terms.reserve(names.size());
    for (const auto& name : names) {
        if (name == "1") {
            terms.push_back({true, -1});
        } else {
            const int c = data.covariate_index(name);
            if (c < 0) throw ValidationError("unknown model term '" + name + "'");
            terms.push_back({false, c});
        }
    }
    return terms;
}

double term_value(const Term& t, const IndividualSeries& s, Eigen::Index r) {
    return t.intercept ? 1.0 : s.covariates(r, t.col);
}

} // namespace

DesignBundle build_design(const LongitudinalDataset& data, const ModelSpec& spec) {
    if (!data.has_treatment && (!spec.fixed_trt.empty() || !spec.random_trt.empty()))
        throw ValidationError("spec declares treatment terms but the dataset has no treatment column");

    const auto fm = resolve(spec.fixed_main, data);
    const auto ft = resolve(spec.fixed_trt, data);
    const auto rm = resolve(spec.random_main, data);
    const auto rt = resolve(spec.random_trt, data);

    DesignBundle bundle;
    bundle.diagonal_g = spec.diagonal_g;

    auto label = [](const std::string& prefix, const std::string& term) {
        return prefix.empty() ? term : prefix + ":" + term;
    };
    for (const auto& t : spec.fixed_main) bundle.x_names.push_back(label("", t));
    if (spec.availability_interactions)
        for (const auto& t : spec.fixed_main) bundle.x_names.push_back(label("avail", t));
    for (const auto& t : spec.fixed_trt) bundle.x_names.push_back(label("trt", t));
    for (const auto& t : spec.random_main) bundle.z_names.push_back(label("", t));
    for (const auto& t : spec.random_trt) bundle.z_names.push_back(label("trt", t));

    if (bundle.q() == 0)
        throw ValidationError("no random-effect terms declared; use an OLS routine for pure "
                              "fixed-effects models");

    const bool gated = spec.gate_treatment_by_availability && data.has_availability;

    for (const auto& s : data.individuals) {
        IndividualDesign g;
        g.id = s.id;
        const Eigen::Index n = s.size();
        g.X.resize(n, bundle.p());
        g.Z.resize(n, bundle.q());
        g.y = s.outcome;
        for (Eigen::Index r = 0; r < n; ++r) {
            const double avail = data.has_availability
                                     ? static_cast<double>(s.availability[static_cast<std::size_t>(r)])
                                     : 1.0;
            const double trt = data.has_treatment
                                   ? static_cast<double>(s.treatment[static_cast<std::size_t>(r)])
                                   : 0.0;
            const double gate = gated ? avail : 1.0;
            Eigen::Index c = 0;
            for (const auto& t : fm) g.X(r, c++) = term_value(t, s, r);
            if (spec.availability_interactions)
                for (const auto& t : fm) g.X(r, c++) = avail * term_value(t, s, r);
            for (const auto& t : ft) g.X(r, c++) = trt * gate * term_value(t, s, r);
            c = 0;
            for (const auto& t : rm) g.Z(r, c++) = term_value(t, s, r);
            for (const auto& t : rt) g.Z(r, c++) = trt * gate * term_value(t, s, r);
        }
        bundle.groups.push_back(std::move(g));
    }
    return bundle;
}

} // namespace mrtlmm
