#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mrtlmm/dataset.hpp"
#include "mrtlmm/errors.hpp"
#include "mrtlmm/simulate.hpp"

using namespace mrtlmm;
namespace fs = std::filesystem;

namespace {

fs::path write_tmp(const std::string& name, const std::string& content) {
    fs::path p = fs::temp_directory_path() / name;
    std::ofstream f(p);
    f << content;
    return p;
}

} // namespace

TEST_CASE("csv round trip on a small mrt file") {
    const auto p = write_tmp("ds_small.csv",
                             "id,t,avail,trt,prob,y,x\n"
                             "a,1,1,1,0.5,2.5,0.1\n"
                             "a,2,1,0,0.5,1.0,-0.3\n"
                             "b,1,0,0,0.5,0.0,1.2\n"
                             "b,3,1,1,0.7,3.25,0.4\n");
    const auto data = load_csv(p);
    CHECK(data.individuals.size() == 2);
    CHECK(data.n_obs() == 4);
    CHECK(data.has_availability);
    CHECK(data.has_treatment);
    CHECK(data.has_prob);
    CHECK(data.covariate_names == std::vector<std::string>{"x"});
    CHECK(data.individuals[0].id == "a");
    CHECK(data.individuals[1].time == std::vector<int>{1, 3});
    CHECK(data.individuals[0].outcome[0] == doctest::Approx(2.5));
    CHECK(data.individuals[1].covariates(1, 0) == doctest::Approx(0.4));

    const fs::path p2 = fs::temp_directory_path() / "ds_small_rt.csv";
    save_csv(data, p2);
    const auto data2 = load_csv(p2);
    REQUIRE(data2.individuals.size() == data.individuals.size());
    for (std::size_t i = 0; i < data.individuals.size(); ++i) {
        CHECK(data2.individuals[i].id == data.individuals[i].id);
        CHECK(data2.individuals[i].time == data.individuals[i].time);
        CHECK((data2.individuals[i].outcome - data.individuals[i].outcome).norm() == 0.0);
        CHECK((data2.individuals[i].covariates - data.individuals[i].covariates).norm() == 0.0);
        CHECK(data2.individuals[i].treatment == data.individuals[i].treatment);
        CHECK(data2.individuals[i].availability == data.individuals[i].availability);
    }
}

TEST_CASE("simulated dataset survives save/load bit-exactly") {
    SimConfig cfg;
    cfg.gm = 2;
    cfg.n = 5;
    cfg.T = 4;
    cfg.seed = 99;
    const auto data = simulate_gm(cfg);
    const fs::path p = fs::temp_directory_path() / "ds_gm2_rt.csv";
    save_csv(data, p);
    const auto back = load_csv(p);
    REQUIRE(back.individuals.size() == data.individuals.size());
    for (std::size_t i = 0; i < data.individuals.size(); ++i) {
        CHECK((back.individuals[i].outcome - data.individuals[i].outcome).norm() == 0.0);
        CHECK((back.individuals[i].covariates - data.individuals[i].covariates).norm() == 0.0);
        CHECK(back.individuals[i].prob == data.individuals[i].prob);
    }
}

TEST_CASE("rows out of time order are sorted within individual") {
    const auto p = write_tmp("ds_unsorted.csv",
                             "id,t,y,x\n"
                             "a,2,1.0,0.0\n"
                             "a,1,2.0,0.5\n");
    const auto data = load_csv(p);
    CHECK(data.individuals[0].time == std::vector<int>{1, 2});
    CHECK(data.individuals[0].outcome[0] == doctest::Approx(2.0));
}

TEST_CASE("malformed input is rejected with the right error type") {
    SUBCASE("non-numeric outcome") {
        const auto p = write_tmp("ds_bad_num.csv", "id,t,y\na,1,NA\n");
        CHECK_THROWS_AS(load_csv(p), ParseError);
    }
    SUBCASE("duplicate (id, t)") {
        const auto p = write_tmp("ds_dup.csv", "id,t,y\na,1,1.0\na,1,2.0\n");
        CHECK_THROWS_AS(load_csv(p), ValidationError);
    }
    SUBCASE("missing required column") {
        const auto p = write_tmp("ds_nocol.csv", "id,t\na,1\n");
        CHECK_THROWS_AS(load_csv(p), ValidationError);
    }
    SUBCASE("treated while unavailable") {
        const auto p = write_tmp("ds_gate.csv",
                                 "id,t,avail,trt,prob,y\na,1,0,1,0.5,1.0\n");
        CHECK_THROWS_AS(load_csv(p), ValidationError);
    }
    SUBCASE("prob outside (0,1) at an available time") {
        const auto p = write_tmp("ds_prob.csv",
                                 "id,t,avail,trt,prob,y\na,1,1,0,1.5,1.0\n");
        CHECK_THROWS_AS(load_csv(p), ValidationError);
    }
    SUBCASE("ragged row") {
        const auto p = write_tmp("ds_ragged.csv", "id,t,y\na,1\n");
        CHECK_THROWS_AS(load_csv(p), ParseError);
    }
    SUBCASE("nonexistent file") {
        CHECK_THROWS_AS(load_csv(fs::temp_directory_path() / "no_such_file.csv"), Error);
    }
}

TEST_CASE("binary flags must be 0/1") {
    const auto p = write_tmp("ds_badflag.csv",
                             "id,t,avail,trt,prob,y\na,1,2,0,0.5,1.0\n");
    CHECK_THROWS_AS(load_csv(p), ValidationError);
}
