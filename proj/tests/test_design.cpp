#include <doctest.h>

#include "mrtlmm/design.hpp"
#include "mrtlmm/errors.hpp"
#include "mrtlmm/simulate.hpp"

using namespace mrtlmm;

namespace {

// One individual, hand-set records.
LongitudinalDataset tiny(std::vector<double> x, std::vector<int> avail, std::vector<int> trt) {
    LongitudinalDataset d;
    d.covariate_names = {"x"};
    d.has_availability = !avail.empty();
    d.has_treatment = !trt.empty();
    IndividualSeries s;
    s.id = "a";
    const int n = static_cast<int>(x.size());
    s.covariates.resize(n, 1);
    s.outcome.resize(n);
    for (int t = 0; t < n; ++t) {
        s.time.push_back(t + 1);
        s.covariates(t, 0) = x[static_cast<std::size_t>(t)];
        s.outcome[t] = 0.0;
    }
    s.availability = std::move(avail);
    s.treatment = std::move(trt);
    d.individuals.push_back(std::move(s));
    return d;
}

} // namespace

TEST_CASE("gated treatment columns for a single record") {
    ModelSpec spec;
    spec.fixed_main = {"1", "x"};
    spec.fixed_trt = {"1"};
    spec.random_main = {"1"};
    spec.random_trt = {"1"};

    SUBCASE("available and treated") {
        const auto b = build_design(tiny({2.0}, {1}, {1}), spec);
        REQUIRE(b.p() == 3);
        REQUIRE(b.q() == 2);
        CHECK(b.x_names == std::vector<std::string>{"1", "x", "trt:1"});
        CHECK(b.z_names == std::vector<std::string>{"1", "trt:1"});
        CHECK(b.groups[0].X(0, 0) == 1.0);
        CHECK(b.groups[0].X(0, 1) == 2.0);
        CHECK(b.groups[0].X(0, 2) == 1.0);
        CHECK(b.groups[0].Z(0, 0) == 1.0);
        CHECK(b.groups[0].Z(0, 1) == 1.0);
    }
    SUBCASE("unavailable record zeroes the treatment block") {
        // trt must be 0 whenever avail is 0, so the gate shows up only
        // through A itself here; the gated column is 0 either way.
        const auto b = build_design(tiny({2.0}, {0}, {0}), spec);
        CHECK(b.groups[0].X(0, 2) == 0.0);
        CHECK(b.groups[0].Z(0, 1) == 0.0);
    }
}

TEST_CASE("availability-interaction layout has the full column count") {
    ModelSpec spec;
    spec.fixed_main = {"1", "day", "homework", "logstep_pre"};
    spec.fixed_trt = {"1", "day", "homework"};
    spec.random_main = {"1"};
    spec.random_trt = {"1"};
    spec.availability_interactions = true;

    const auto data = simulate_heartsteps_like(4, 6, HeartstepsCoefs{}, 0.8, 7);
    const auto b = build_design(data, spec);
    CHECK(b.p() == 11); // 4 main + 4 avail-interactions + 3 gated treatment
    CHECK(b.x_names[4] == "avail:1");
    CHECK(b.x_names[8] == "trt:1");

    // every treatment column is zero wherever A * avail is zero
    REQUIRE(b.groups.size() == data.individuals.size());
    for (std::size_t gi = 0; gi < b.groups.size(); ++gi) {
        const auto& g = b.groups[gi];
        const auto& ind = data.individuals[gi];
        REQUIRE(g.id == ind.id);
        for (Eigen::Index r = 0; r < g.X.rows(); ++r) {
            const int gate = ind.treatment[static_cast<std::size_t>(r)] *
                             ind.availability[static_cast<std::size_t>(r)];
            if (gate == 0) {
                for (Eigen::Index c = 8; c < 11; ++c) CHECK(g.X(r, c) == 0.0);
                CHECK(g.Z(r, 1) == 0.0);
            } else {
                CHECK(g.X(r, 8) == 1.0);
            }
            if (ind.availability[static_cast<std::size_t>(r)] == 0)
                for (Eigen::Index c = 4; c < 8; ++c) CHECK(g.X(r, c) == 0.0);
        }
    }
}

TEST_CASE("no gating when the dataset has no availability column") {
    ModelSpec spec;
    spec.fixed_main = {"1"};
    spec.fixed_trt = {"1"};
    spec.random_main = {"1"};

    const auto b = build_design(tiny({0.0, 0.0}, {}, {1, 0}), spec);
    CHECK(b.p() == 2);
    CHECK(b.groups[0].X(0, 1) == 1.0);
    CHECK(b.groups[0].X(1, 1) == 0.0);
}

TEST_CASE("design errors") {
    ModelSpec spec;
    spec.fixed_main = {"1", "nope"};
    spec.random_main = {"1"};
    CHECK_THROWS_AS(build_design(tiny({1.0}, {}, {}), spec), ValidationError);

    ModelSpec no_random;
    no_random.fixed_main = {"1"};
    CHECK_THROWS_AS(build_design(tiny({1.0}, {}, {}), no_random), ValidationError);

    ModelSpec trt_spec;
    trt_spec.fixed_main = {"1"};
    trt_spec.fixed_trt = {"1"};
    trt_spec.random_main = {"1"};
    CHECK_THROWS_AS(build_design(tiny({1.0}, {}, {}), trt_spec), ValidationError);
}

TEST_CASE("model spec json round trip") {
    ModelSpec spec;
    spec.fixed_main = {"1", "x"};
    spec.fixed_trt = {"1"};
    spec.random_main = {"1"};
    spec.random_trt = {"1"};
    spec.availability_interactions = true;
    spec.diagonal_g = true;
    const auto back = ModelSpec::from_json(spec.to_json());
    CHECK(back.fixed_main == spec.fixed_main);
    CHECK(back.fixed_trt == spec.fixed_trt);
    CHECK(back.random_main == spec.random_main);
    CHECK(back.random_trt == spec.random_trt);
    CHECK(back.availability_interactions == spec.availability_interactions);
    CHECK(back.gate_treatment_by_availability == spec.gate_treatment_by_availability);
    CHECK(back.diagonal_g == spec.diagonal_g);
}
