#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "closs/assist.hpp"
#include "closs/design.hpp"
#include "closs/models.hpp"
#include "closs/rng.hpp"
#include "closs/survey.hpp"

namespace closs::sim {

struct LognormalSpec {
    double mean = 0.0;      // mean of the distribution itself
    double sigma_log = 0.5; // log-space standard deviation
};

struct StratumConfig {
    std::string id = "S1";
    double lambda_ha = 15.0e6;
    std::size_t n_clusters = 60000;
};

// Synthetic population of clusters with a single calendar disturbance
// history per cluster. A plot measured in panel year t observes the
// disturbance only when its year falls in [t - interval + 1, t]; the FCL
// map carries the calendar year (subject to omission/commission), so pooled
// windows see flags whose losses fall outside a panel's own lookback, which
// reproduces the temporal-mismatch penalty of pooled runs.
struct PopulationConfig {
    std::vector<StratumConfig> strata{StratumConfig{}};
    int subplots_per_cluster = 1;
    int panel_count = 5;
    int first_panel_year = 2014;
    int interval_years = 5;

    // probability that a plot shows a disturbance within its panel window
    double loss_prevalence = 0.017;
    LognormalSpec loss_magnitude{85.0, 0.5}; // removed stock, t/ha
    LognormalSpec baseline_loss{0.32, 1.0};  // undisturbed loss, t/ha/a (mixture mean)
    double baseline_zero_prob = 0.7;

    double fcl_omission = 0.10;   // P(true loss unflagged)
    double fcl_commission = 0.005; // P(no loss but flagged)

    double als_coverage = 0.25;   // fraction of clusters with usable ALS
    double als_noise_sd_m = 1.5;  // height spread around the inverted stock curve
    // stock curve whose inverse generates heights; also the model family
    // the estimators refit
    model::CstockModelParams height_to_stock{1.18, 8.57, 0.087, 0};

    // per-panel prevalence multipliers (size panel_count); empty = flat
    std::vector<double> trend;

    std::uint64_t seed = 20180914;

    int last_panel_year() const { return first_panel_year + panel_count - 1; }
    std::size_t total_clusters() const;
    double total_lambda() const;
    void validate() const;
};

void save_population_config(const PopulationConfig& cfg, const std::string& path);
PopulationConfig load_population_config(const std::string& path);

// Fully enumerated population, stored cluster-major (subplot arrays have
// n_clusters * subplots_per_cluster entries). Sentinel year_absent marks
// missing years; heights are NaN outside ALS coverage.
struct Population {
    static constexpr std::int32_t year_absent = INT32_MIN;

    PopulationConfig cfg;
    std::vector<std::uint32_t> cluster_stratum; // cluster -> index into cfg.strata
    std::vector<double> baseline;   // t/ha/a
    std::vector<double> magnitude;  // removed stock t/ha, 0 when undisturbed
    std::vector<std::int32_t> dist_year;
    std::vector<std::int32_t> flag_year;
    std::vector<double> als_height;
    std::vector<std::int32_t> als_year;

    std::size_t n_clusters() const { return cluster_stratum.size(); }
    std::size_t n_subplots() const { return baseline.size(); }
    int m() const { return cfg.subplots_per_cluster; }

    // annualized loss observed when the cluster is measured in panel year t
    double observed_y(std::size_t subplot, int panel_year) const;

    // exact per-panel-year population total (t), all strata
    double true_total(int panel_year) const;
    // equal-weight mean of the per-year totals (the average/pooled estimand)
    double true_total_average() const;

    // exact auxiliary census per (stratum, window); pixel heights included
    assist::AggregatesSet census_aggregates() const;
};

Population generate_population(const PopulationConfig& cfg);

struct SampleDesign {
    enum class Kind { srs, systematic };
    Kind kind = Kind::srs;
    std::size_t sample_size = 3000; // srs
    std::size_t step = 0;           // systematic: every step-th cluster
};

// Draws one sample and materializes it as a SurveyDataset: srs without
// replacement, or systematic from a random start. Sampled clusters are
// assigned to panels round-robin in population order.
survey::SurveyDataset draw_sample(const Population& pop, const SampleDesign& design, Rng& rng);

enum class EstimatorId { be, ma_fcl, ma_als_fcl };

struct EstimatorRequest {
    EstimatorId id = EstimatorId::be;
    design::Scope scope = design::Scope::average; // average or pooled
};

std::string to_string(EstimatorId id);
std::string estimator_label(const EstimatorRequest& r);

struct RunOptions {
    SampleDesign design;
    std::size_t replications = 1000;
    std::vector<EstimatorRequest> estimators; // empty = all x {average, pooled}
    bool exhaustive = false;                  // enumerate all C(N, n) srs samples
    std::size_t exhaustive_cap = 1000000;
    // fixed working models (never refit); default refits per replication
    std::optional<model::ModelSet> fixed_models;
    model::OutlierRule outlier_rule;
    double failure_rate_threshold = 0.05;
    int threads = 0; // 0 = hardware concurrency
};

struct EstimatorStats {
    EstimatorRequest request;
    std::string label;
    std::size_t n_success = 0;
    std::size_t n_failure = 0;
    double true_total = 0.0;
    double mean_total = 0.0;
    double rel_bias = 0.0;
    double mcse_rel = 0.0;      // sd(t)/sqrt(R)/T; 0 in exhaustive mode
    double emp_var_total = 0.0;
    double mean_vhat = 0.0;
    double vhat_ratio = 0.0;    // mean_vhat / emp_var_total
    std::optional<double> mean_re; // MA only: mean of V_BE/V_MA
};

struct ValidationReport {
    PopulationConfig config;
    SampleDesign design;
    std::size_t replications = 0;
    bool exhaustive = false;
    bool fixed_models = false;
    double true_total_average = 0.0;
    std::map<int, double> true_total_by_year;
    std::vector<EstimatorStats> estimators;
};

// Repeated-sampling validation. Deterministic for a fixed seed: each
// replication derives its stream from (seed, index), and results are
// reduced in index order regardless of thread scheduling.
ValidationReport run_replications(const Population& pop, const RunOptions& opts);
ValidationReport run_replications(const PopulationConfig& cfg, const RunOptions& opts);

// Asserted design properties: |relative bias| <= 3 MCSE per estimator,
// variance-ratio calibration within [0.9, 1.1] for srs (>= 0.9 under
// systematic sampling), failure rates under the threshold. Throws
// ValidationError describing every violation.
void check_report(const ValidationReport& report, double failure_rate_threshold = 0.05);

} // namespace closs::sim
