#pragma once

#include <optional>
#include <string>
#include <vector>

#include "closs/assist.hpp"
#include "closs/design.hpp"
#include "closs/models.hpp"
#include "closs/survey.hpp"
#include "closs/table.hpp"

namespace closs::run {

struct FitOptions {
    model::OutlierRule outlier_rule;
    bool clamp_negative = true;
    model::AlsHeightKind height_kind = model::AlsHeightKind::first_returns;
    bool fit_pooled = true;
    bool fit_cstock = true; // fit the stock model when calibration pairs exist
};

struct FitOutput {
    model::ModelSet models;
    Table panel_table;  // per-panel class means and counts (+ pooled row)
    Table cstock_table; // stock-model coefficients, empty when not fitted
};

// Fits the per-panel and pooled two-mean models plus the quadratic stock
// model from the dataset. Throws DegenerateError naming every panel with an
// empty FCL class.
FitOutput fit_models(const survey::SurveyDataset& ds, const FitOptions& opts = {});

struct EstimateOptions {
    bool annual = true;
    bool average = false;
    bool pooled = false;
    bool best = false;

    bool with_be = true;
    bool with_ma_fcl = false;
    bool with_ma_als_fcl = false;

    std::vector<survey::DomainSelector> domains{survey::DomainSelector::all()};
    assist::SyntheticOptions synthetic;
    bool per_stratum_rows = true; // emit per-stratum rows besides the combined ones
};

struct EstimateOutput {
    std::vector<design::EstimateResult> results;
    std::vector<std::optional<double>> re_vs_be; // parallel to results; MA rows only
    Table table;
};

// Runs the requested estimators over every (scope, stratum, domain) slice
// and assembles the report table with deterministic row ordering. MA
// estimators need models and aggregates covering every (stratum, window)
// they touch. ALS-FCL rows are omitted for windows where no sampled
// sub-plot has a flagged loss with eligible ALS, mirroring the "-" entries
// such panels get in published tables.
EstimateOutput estimate(const survey::SurveyDataset& ds,
                        const model::ModelSet* models,
                        const assist::AggregatesSet* aggregates,
                        const EstimateOptions& opts);

} // namespace closs::run
