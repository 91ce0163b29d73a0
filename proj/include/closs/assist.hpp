#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "closs/design.hpp"
#include "closs/models.hpp"
#include "closs/survey.hpp"

namespace closs::assist {

// Known population-level areas for one (stratum, window): the FCL split
// lambda = lambda_cl + lambda_n, extended by the ALS-covered loss area
// lambda_l with its mean canopy height. heights_l optionally carries the
// per-pixel heights over the lambda_l area for pixel-sum synthetic totals.
struct PopulationAggregates {
    double lambda_ha = 0.0;
    double lambda_cl_ha = 0.0;
    double lambda_n_ha = 0.0;
    std::optional<double> lambda_l_ha;
    std::optional<double> xbar_l_m;
    std::vector<double> heights_l;
    std::size_t excluded_nodata_cells = 0;

    bool has_als() const { return lambda_l_ha.has_value(); }
    void validate() const; // area additivity and xbar presence
};

// Per-cluster model residuals e_i paired with the sub-plot counts m_i.
struct ResidualSample {
    std::vector<design::PlotStat> plots; // (m_i, e_i)
};

// e_i = sum_j I_d (y_ij - yhat_ij) / m_i. The indicator multiplies the
// difference: out-of-domain predictions are zeroed together with the
// observations.
ResidualSample residuals(std::span<const survey::ClusterPlot> plots,
                         const model::FclModelParams& m,
                         const survey::ResolvedDomain& d,
                         const model::PanelWindow& w);
ResidualSample residuals(std::span<const survey::ClusterPlot> plots,
                         const model::AlsFclModel& m,
                         const survey::ResolvedDomain& d,
                         const model::PanelWindow& w);
// generic form used by the two overloads and the simulation harness
ResidualSample residuals(std::span<const survey::ClusterPlot> plots,
                         const std::function<double(const survey::SubPlotRecord&)>& predict,
                         const survey::ResolvedDomain& d);

// Synthetic total of the two-mean model: lambda_cl ybar_cl + lambda_n ybar_n.
double synthetic_total_fcl(const PopulationAggregates& a, const model::FclModelParams& p);

// Collapses ALS-aware aggregates to the FCL split: the two-mean model does
// not distinguish ALS coverage, so lambda_l folds into lambda_cl.
PopulationAggregates fold_als_into_cl(const PopulationAggregates& a);

struct SyntheticOptions {
    // divide the stock prediction by the remeasurement interval so the
    // synthetic term is in the same annual units as the correction
    bool annualize = true;
    enum class Mode { automatic, aggregate, pixel_sum };
    // automatic = pixel_sum when per-pixel heights are available
    Mode mode = Mode::automatic;
};

// Synthetic total of the ALS-FCL model. Aggregate mode evaluates the
// quadratic at xbar_l; pixel-sum mode averages clamped per-pixel
// predictions, which differs by the Jensen gap whenever beta2 != 0.
double synthetic_total_als_fcl(const PopulationAggregates& a, const model::AlsFclModel& m,
                               const SyntheticOptions& opts = {});

// Model-assisted total: synthetic estimate plus the expanded mean residual,
// with the BE variance estimator applied to the residuals (weighted mean
// residual).
design::EstimateResult ma_total(double synthetic, const ResidualSample& res,
                                double lambda, design::EstimatorTag tag);

// RE = V(BE) / V(MA); > 1 means the MA estimator is more efficient.
double relative_efficiency(const design::EstimateResult& be,
                           const design::EstimateResult& ma);

// Per-year selection of the lowest-variance candidate (ties broken by
// ALS-FCL > FCL > BE), averaged over panels.
design::EstimateResult best_combination(
    const std::map<int, std::vector<design::EstimateResult>>& per_year_candidates,
    const std::map<int, std::size_t>& n_t);

// ---- aggregates file -------------------------------------------------

struct WindowKey {
    bool pooled = false;
    int year = 0;       // panel year; last year when pooled
    int first_year = 0; // pooled only

    static WindowKey from(const model::PanelWindow& w) {
        return WindowKey{w.pooled, w.year, w.pooled ? w.first_year : 0};
    }
    model::PanelWindow window() const;
    std::string label() const;
    auto operator<=>(const WindowKey&) const = default;
};

// aggregates per (stratum, window)
using AggregatesSet = std::map<std::pair<std::string, WindowKey>, PopulationAggregates>;

void save_aggregates(const AggregatesSet& a, const std::string& path);
AggregatesSet load_aggregates(const std::string& path);

} // namespace closs::assist
