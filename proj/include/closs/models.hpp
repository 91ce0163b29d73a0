#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "closs/errors.hpp"
#include "closs/survey.hpp"

namespace closs::model {

// Two-mean working model: mean observed loss at sub-plots with and without
// a mapped forest-cover loss.
struct FclModelParams {
    double ybar_cl = 0.0; // t/ha/a at FCL = 1
    double ybar_n = 0.0;  // t/ha/a at FCL = 0
    std::size_t n_cl = 0;
    std::size_t n_n = 0;
};

// Quadratic C-stock model: stock (t/ha) as a function of canopy height (m).
struct CstockModelParams {
    double beta0 = 0.0;
    double beta1 = 0.0;
    double beta2 = 0.0;
    std::size_t fit_n = 0;

    double predict_stock(double height_m) const {
        return beta0 + height_m * (beta1 + beta2 * height_m);
    }
};

// C-stock model applied inside ALS coverage, with the two-mean model as
// fallback outside it.
struct AlsFclModel {
    CstockModelParams cstock;
    FclModelParams fcl;
    int interval_years = 5;
    bool clamp_negative = true;
};

// Reference period of a run: one panel year, or the pooled span of panels.
struct PanelWindow {
    int year = 0;       // panel year t; last panel year for pooled
    bool pooled = false;
    int first_year = 0; // first panel year, pooled only

    static PanelWindow annual(int t) { return PanelWindow{t, false, 0}; }
    static PanelWindow pooled_span(int t_first, int t_last);

    std::string label() const;
};

// Recode of the mapped loss year against the window: annual windows cover
// [t-4, t], pooled windows [t1-4, t_last]. The 4-year lookback follows from
// the 5-year remeasurement interval.
bool recode_fcl(std::optional<int> loss_year, const PanelWindow& w);

// ALS acquisitions are usable only if they predate every loss the window can
// contain: als_year <= t-5 (annual) or <= t1-5 (pooled).
bool als_eligible(std::optional<int> als_year, const PanelWindow& w);

// Class means over (c_loss, fcl_flag) sub-plot pairs. Both classes must be
// populated.
FclModelParams fit_fcl_model(std::span<const std::pair<double, bool>> subplots);

// One (height, stock) calibration observation with the timing metadata the
// exclusion rule needs.
struct CstockObs {
    double height_m = 0.0;
    double stock = 0.0; // t/ha
    std::optional<int> loss_year;
    std::optional<int> als_year;
    int panel_year = 0;
};

// Stand-in for the subjective removal of outlying calibration plots.
struct OutlierRule {
    // drop pairs whose ALS acquisition does not predate the mapped loss
    // (the height no longer describes the pre-disturbance canopy)
    bool drop_als_not_before_loss = true;
    // drop pairs with a mapped loss before the measurement year
    bool drop_loss_before_measurement = false;
    // optional single refit after removing large absolute residuals
    std::optional<double> abs_residual_cutoff;
};

// OLS fit of stock = b0 + b1 x + b2 x^2 after applying the exclusion rule.
// Needs >= 3 retained pairs with >= 3 distinct heights.
CstockModelParams fit_cstock_model(std::span<const CstockObs> pairs,
                                   const OutlierRule& rule = {});

// Working-model predictions at a sub-plot (t/ha/a).
double predict_subplot(const survey::SubPlotRecord& s, const FclModelParams& m,
                       const PanelWindow& w);
double predict_subplot(const survey::SubPlotRecord& s, const AlsFclModel& m,
                       const PanelWindow& w);

enum class AlsHeightKind { first_returns, all_returns };

std::string to_string(AlsHeightKind k);
AlsHeightKind als_height_kind_from_string(const std::string& s);

// Fitted (or externally supplied) parameters for a whole run: one FCL model
// per panel, an optional pooled FCL model, and an optional C-stock model.
struct ModelSet {
    int interval_years = 5;
    bool clamp_negative = true;
    AlsHeightKind height_kind = AlsHeightKind::first_returns;
    std::map<int, FclModelParams> fcl_annual;
    std::optional<FclModelParams> fcl_pooled;
    std::optional<CstockModelParams> cstock;

    const FclModelParams& fcl_for(const PanelWindow& w) const;
    AlsFclModel als_fcl_for(const PanelWindow& w) const; // requires cstock
};

// Parameter file round trip (structured text). Serialization is
// deterministic: save(load(save(x))) is byte-identical to save(x).
void save_models(const ModelSet& m, const std::string& path);
ModelSet load_models(const std::string& path);

} // namespace closs::model
