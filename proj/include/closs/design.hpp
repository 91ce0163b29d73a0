#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "closs/errors.hpp"

namespace closs::design {

enum class EstimatorKind { be, ma };
enum class Scope { annual, average, pooled };

std::string to_string(EstimatorKind k);
std::string to_string(Scope s);

// Provenance of an estimate: which estimator produced it, over which slice.
struct EstimatorTag {
    EstimatorKind estimator = EstimatorKind::be;
    std::string model;              // "", "FCL", "ALS-FCL", "BEST"
    Scope scope = Scope::pooled;
    std::optional<int> panel_year;  // set for annual scope
    std::string stratum_id;         // stratum id or "combined"
    std::string domain = "all";

    std::string label() const;
    // equality ignoring stratum, for stratified combination checks
    bool same_modulo_stratum(const EstimatorTag& o) const;
};

struct EstimateResult {
    double total = 0.0;          // t
    double variance_total = 0.0; // t^2
    std::size_t n = 0;           // sample size used
    EstimatorTag tag;

    // 100*sqrt(V)/|total|; absent when the total is exactly zero
    std::optional<double> se_pct() const;
};

// builds a result from a published (total, SE%) pair
EstimateResult from_total_se(double total, double se_pct, EstimatorTag tag = {});

// One cluster reduced to its sub-plot count and cluster/domain mean.
struct PlotStat {
    double m = 1.0;
    double y = 0.0;
};

// Point estimate: (mean per area, expanded total). Mean is the m-weighted
// ratio over clusters, equal to the plain sub-plot mean.
std::pair<double, double> be_total(std::span<const PlotStat> sample, double lambda);

// Variance of (mean, total): 1/(n(n-1)) * sum (m_i/mbar)^2 (y_i - mean)^2,
// scaled by lambda^2 for the total. Requires n >= 2.
std::pair<double, double> be_variance(std::span<const PlotStat> sample, double lambda);

// Convenience: total + variance as one EstimateResult.
EstimateResult be_estimate(std::span<const PlotStat> sample, double lambda, EstimatorTag tag);

// Per-panel estimates. Errors are reported with the panel year attached.
std::map<int, EstimateResult> be_annual(
    const std::map<int, std::vector<PlotStat>>& panels, double lambda,
    EstimatorTag tag);

// Weighted average of annual estimates with panel sizes n_t as weights:
// total = sum n_t t_t / n_P, variance = sum n_t^2 V_t / n_P^2.
EstimateResult average_annual(const std::map<int, EstimateResult>& results,
                              const std::map<int, std::size_t>& n_t);

// Adds totals and variances over independent strata. Tags must agree
// modulo stratum.
EstimateResult stratified_combine(std::span<const EstimateResult> per_stratum);

} // namespace closs::design
