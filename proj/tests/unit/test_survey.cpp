#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "closs/survey.hpp"

using namespace closs;

namespace {

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& name, const std::string& content) {
        path = std::filesystem::temp_directory_path() / name;
        std::ofstream out(path);
        out << content;
    }
    ~TempFile() { std::filesystem::remove(path); }
};

const char* kStrata = "stratum_id,lambda_ha\nS1,100\nS2,50\n";

survey::SurveyDataset load(const std::string& plots, const std::string& strata = kStrata) {
    TempFile p("closs_plots_test.csv", plots);
    TempFile s("closs_strata_test.csv", strata);
    return survey::load_dataset(p.path.string(), s.path.string());
}

} // namespace

TEST_CASE("load_dataset: two rows form one cluster of two subplots") {
    auto ds = load(
        "cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
        "c1,1,2018,S1,0.5,1,2016,10.2,2013\n"
        "c1,2,2018,S1,0,1,,,\n");
    REQUIRE(ds.plots.size() == 1);
    CHECK(ds.plots[0].m() == 2);
    CHECK(ds.plots[0].panel_year == 2018);
    CHECK(ds.plots[0].subplots[0].als_height == doctest::Approx(10.2));
    CHECK(!ds.plots[0].subplots[1].fcl_loss_year.has_value());
    CHECK(ds.plots[0].subplots[0].in_domain(0));
    CHECK(ds.stratum("S1").lambda_ha == doctest::Approx(100.0));
}

TEST_CASE("load_dataset: als height without year violates the invariant") {
    CHECK_THROWS_WITH_AS(
        load("cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
             "c1,1,2018,S1,0.5,1,,9.5,\n"),
        doctest::Contains("als"), InputError);
}

TEST_CASE("load_dataset: negative loss rejected with the row number") {
    CHECK_THROWS_WITH_AS(
        load("cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
             "c1,1,2018,S1,0.25,1,,,\n"
             "c2,1,2018,S1,-0.1,1,,,\n"),
        doctest::Contains("3"), InputError);
}

TEST_CASE("load_dataset: missing column reported") {
    CHECK_THROWS_WITH_AS(
        load("cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year\n"
             "c1,1,2018,S1,0.25,1,\n"),
        doctest::Contains("als_height"), InputError);
}

TEST_CASE("load_dataset: unknown stratum reported with row number") {
    CHECK_THROWS_WITH_AS(
        load("cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
             "c1,1,2018,S9,0.25,1,,,\n"),
        doctest::Contains("S9"), InputError);
}

TEST_CASE("load_dataset: duplicate (cluster, subplot) rejected") {
    CHECK_THROWS_WITH_AS(
        load("cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
             "c1,1,2018,S1,0.25,1,,,\n"
             "c1,1,2018,S1,0.5,1,,,\n"),
        doctest::Contains("duplicate"), InputError);
}

TEST_CASE("load_dataset: unparseable value reported with row number") {
    CHECK_THROWS_WITH_AS(
        load("cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
             "c1,1,2018,S1,abc,1,,,\n"),
        doctest::Contains("2"), InputError);
}

TEST_CASE("load_dataset: row count preserved across clusters") {
    auto ds = load(
        "cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
        "c1,1,2018,S1,0.5,1,,,\n"
        "c2,1,2017,S2,0.1,0,,,\n"
        "c1,2,2018,S1,0,1,,,\n"
        "c3,1,2018,S1,1.5,1,2017,,\n");
    std::size_t rows = 0;
    for (auto& p : ds.plots) rows += p.m();
    CHECK(rows == 4);
    CHECK(ds.plots.size() == 3);
}

TEST_CASE("cluster_domain_mean: divisor stays m regardless of the domain") {
    survey::ClusterPlot p;
    p.cluster_id = "c1";
    for (int j = 0; j < 2; ++j) {
        survey::SubPlotRecord s;
        s.cluster_id = "c1";
        s.subplot_index = j + 1;
        s.c_loss = j == 0 ? 2.0 : 4.0;
        s.domain_bits = 1;
        p.subplots.push_back(s);
    }
    CHECK(survey::cluster_domain_mean(p, survey::ResolvedDomain{}) == doctest::Approx(3.0));
    p.subplots[1].domain_bits = 0;
    CHECK(survey::cluster_domain_mean(p, survey::ResolvedDomain{0}) == doctest::Approx(1.0));
    // single out-of-domain subplot contributes zero
    survey::ClusterPlot q;
    survey::SubPlotRecord s;
    s.c_loss = 5.0;
    s.domain_bits = 0;
    q.subplots.push_back(s);
    CHECK(survey::cluster_domain_mean(q, survey::ResolvedDomain{0}) == doctest::Approx(0.0));
}

TEST_CASE("cluster_domain_mean: all-domain equals the arithmetic mean") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> uy(0.0, 10.0);
    for (int rep = 0; rep < 30; ++rep) {
        survey::ClusterPlot p;
        const std::size_t m = 1 + gen() % 7;
        double sum = 0;
        for (std::size_t j = 0; j < m; ++j) {
            survey::SubPlotRecord s;
            s.c_loss = uy(gen);
            s.domain_bits = gen() & 1;
            sum += s.c_loss;
            p.subplots.push_back(s);
        }
        CHECK(survey::cluster_domain_mean(p, survey::ResolvedDomain{}) ==
              doctest::Approx(sum / static_cast<double>(m)).epsilon(1e-13));
    }
}

TEST_CASE("cluster_domain_mean: adding a subplot to the domain is additive") {
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> uy(0.0, 10.0);
    for (int rep = 0; rep < 30; ++rep) {
        survey::ClusterPlot p;
        const std::size_t m = 2 + gen() % 6;
        for (std::size_t j = 0; j < m; ++j) {
            survey::SubPlotRecord s;
            s.c_loss = uy(gen);
            s.domain_bits = gen() & 1;
            p.subplots.push_back(s);
        }
        const double before = survey::cluster_domain_mean(p, survey::ResolvedDomain{0});
        // move one subplot into the domain: the mean changes by exactly its share
        std::size_t j = gen() % m;
        if (!p.subplots[j].in_domain(0)) {
            p.subplots[j].domain_bits |= 1;
            const double after = survey::cluster_domain_mean(p, survey::ResolvedDomain{0});
            CHECK(after - before ==
                  doctest::Approx(p.subplots[j].c_loss / static_cast<double>(m)).epsilon(1e-12));
        }
    }
}

TEST_CASE("split_panels: partition of the pooled sample") {
    auto ds = load(
        "cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
        "c1,1,2014,S1,0.5,1,,,\n"
        "c2,1,2015,S1,0.1,1,,,\n"
        "c3,1,2016,S1,0,1,,,\n"
        "c4,1,2017,S1,0,1,,,\n"
        "c5,1,2018,S1,0.2,1,,,\n");
    auto panels = survey::split_panels(ds);
    CHECK(panels.size() == 5);
    std::size_t total = 0;
    for (auto& [year, plots] : panels) {
        CHECK(plots.size() == 1);
        total += plots.size();
    }
    CHECK(total == ds.plots.size());
}

TEST_CASE("split_panels: single panel and empty dataset") {
    auto ds = load(
        "cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
        "c1,1,2018,S1,0.5,1,,,\n"
        "c2,1,2018,S1,0.1,1,,,\n");
    auto panels = survey::split_panels(ds);
    REQUIRE(panels.size() == 1);
    CHECK(panels.at(2018).size() == 2);

    survey::SurveyDataset empty;
    CHECK(survey::split_panels(empty).empty());
}

TEST_CASE("resolve_domain: named flag must be declared") {
    auto ds = load(
        "cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
        "c1,1,2018,S1,0.5,1,,,\n");
    auto all = survey::resolve_domain(ds, survey::DomainSelector::all());
    CHECK(!all.bit.has_value());
    auto forest = survey::resolve_domain(ds, survey::DomainSelector::named("forest"));
    CHECK(forest.bit == 0u);
    CHECK_THROWS_AS(survey::resolve_domain(ds, survey::DomainSelector::named("wetland")),
                    InputError);
}

TEST_CASE("load_dataset: strata must have positive area") {
    CHECK_THROWS_AS(
        load("cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
             "c1,1,2018,S1,0.5,1,,,\n",
             "stratum_id,lambda_ha\nS1,0\n"),
        InputError);
}

TEST_CASE("load_dataset: cluster split across panel years rejected") {
    CHECK_THROWS_AS(
        load("cluster_id,subplot_index,panel_year,stratum_id,c_loss,forest,fcl_loss_year,als_height,als_year\n"
             "c1,1,2018,S1,0.5,1,,,\n"
             "c1,2,2017,S1,0.5,1,,,\n"),
        InputError);
}
