#include "closs/assist.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace closs::assist {

namespace {
constexpr double kAreaTolerance = 1e-6; // relative slack for area additivity
}

void PopulationAggregates::validate() const {
    if (lambda_ha <= 0.0) throw InputError("aggregates: lambda must be > 0");
    if (lambda_cl_ha < 0.0 || lambda_n_ha < 0.0 || lambda_l_ha.value_or(0.0) < 0.0)
        throw InputError("aggregates: areas must be >= 0");
    const double sum = lambda_cl_ha + lambda_n_ha + lambda_l_ha.value_or(0.0);
    if (std::abs(sum - lambda_ha) > kAreaTolerance * lambda_ha)
        throw InputError("aggregates: lambda_cl + lambda_n" +
                         std::string(has_als() ? " + lambda_l" : "") +
                         " must equal lambda (" + std::to_string(sum) + " vs " +
                         std::to_string(lambda_ha) + ")");
    if (has_als() && *lambda_l_ha > 0.0 && !xbar_l_m.has_value() && heights_l.empty())
        throw InputError("aggregates: lambda_l > 0 needs xbar_l or per-pixel heights");
}

ResidualSample residuals(std::span<const survey::ClusterPlot> plots,
                         const std::function<double(const survey::SubPlotRecord&)>& predict,
                         const survey::ResolvedDomain& d) {
    ResidualSample out;
    out.plots.reserve(plots.size());
    for (const auto& plot : plots) {
        double e = 0.0;
        for (const auto& s : plot.subplots)
            if (d.contains(s)) e += s.c_loss - predict(s);
        e /= static_cast<double>(plot.subplots.size());
        out.plots.push_back({static_cast<double>(plot.subplots.size()), e});
    }
    return out;
}

ResidualSample residuals(std::span<const survey::ClusterPlot> plots,
                         const model::FclModelParams& m, const survey::ResolvedDomain& d,
                         const model::PanelWindow& w) {
    return residuals(
        plots, [&](const survey::SubPlotRecord& s) { return model::predict_subplot(s, m, w); },
        d);
}

ResidualSample residuals(std::span<const survey::ClusterPlot> plots, const model::AlsFclModel& m,
                         const survey::ResolvedDomain& d, const model::PanelWindow& w) {
    return residuals(
        plots, [&](const survey::SubPlotRecord& s) { return model::predict_subplot(s, m, w); },
        d);
}

double synthetic_total_fcl(const PopulationAggregates& a, const model::FclModelParams& p) {
    if (a.has_als())
        throw InputError("FCL-only synthetic total called with ALS aggregates present");
    a.validate();
    return a.lambda_cl_ha * p.ybar_cl + a.lambda_n_ha * p.ybar_n;
}

PopulationAggregates fold_als_into_cl(const PopulationAggregates& a) {
    PopulationAggregates out;
    out.lambda_ha = a.lambda_ha;
    out.lambda_cl_ha = a.lambda_cl_ha + a.lambda_l_ha.value_or(0.0);
    out.lambda_n_ha = a.lambda_n_ha;
    out.excluded_nodata_cells = a.excluded_nodata_cells;
    return out;
}

double synthetic_total_als_fcl(const PopulationAggregates& a, const model::AlsFclModel& m,
                               const SyntheticOptions& opts) {
    if (!a.has_als()) {
        PopulationAggregates b = a;
        b.lambda_l_ha = 0.0;
        return synthetic_total_als_fcl(b, m, opts);
    }
    a.validate();
    const double lambda_l = *a.lambda_l_ha;
    double t_l = 0.0;
    if (lambda_l > 0.0) {
        const double divisor =
            opts.annualize ? static_cast<double>(m.interval_years) : 1.0;
        auto predict = [&](double h) {
            double stock = m.cstock.predict_stock(h);
            if (m.clamp_negative && stock < 0.0) stock = 0.0;
            return stock / divisor;
        };
        bool pixel_sum = opts.mode == SyntheticOptions::Mode::pixel_sum;
        if (opts.mode == SyntheticOptions::Mode::automatic) pixel_sum = !a.heights_l.empty();
        if (pixel_sum) {
            if (a.heights_l.empty())
                throw InputError("pixel-sum synthetic total needs per-pixel heights");
            double sum = 0.0;
            for (double h : a.heights_l) sum += predict(h);
            t_l = lambda_l * sum / static_cast<double>(a.heights_l.size());
        } else {
            if (!a.xbar_l_m)
                throw InputError("aggregate-mode synthetic total needs xbar_l");
            t_l = lambda_l * predict(*a.xbar_l_m);
        }
    }
    return t_l + a.lambda_cl_ha * m.fcl.ybar_cl + a.lambda_n_ha * m.fcl.ybar_n;
}

design::EstimateResult ma_total(double synthetic, const ResidualSample& res, double lambda,
                                design::EstimatorTag tag) {
    if (res.plots.empty()) throw DegenerateError("no plots for the model-assisted correction");
    for (const auto& p : res.plots)
        if (!std::isfinite(p.y)) throw InputError("non-finite model residual");
    const auto [mean_res, correction] = design::be_total(res.plots, lambda);
    design::EstimateResult out;
    out.total = synthetic + correction;
    out.variance_total = design::be_variance(res.plots, lambda).second;
    out.n = res.plots.size();
    out.tag = std::move(tag);
    return out;
}

double relative_efficiency(const design::EstimateResult& be, const design::EstimateResult& ma) {
    if (ma.variance_total <= 0.0)
        throw DegenerateError("relative efficiency undefined: MA variance is zero");
    if (be.variance_total <= 0.0)
        throw DegenerateError("relative efficiency undefined: BE variance is zero");
    return be.variance_total / ma.variance_total;
}

namespace {

int model_priority(const design::EstimatorTag& tag) {
    if (tag.model == "ALS-FCL") return 0;
    if (tag.model == "FCL") return 1;
    if (tag.estimator == design::EstimatorKind::be) return 3;
    return 2;
}

} // namespace

design::EstimateResult best_combination(
    const std::map<int, std::vector<design::EstimateResult>>& per_year_candidates,
    const std::map<int, std::size_t>& n_t) {
    std::map<int, design::EstimateResult> picked;
    for (const auto& [year, candidates] : per_year_candidates) {
        if (candidates.empty())
            throw InputError("best_combination: no candidates for panel " + std::to_string(year));
        const design::EstimateResult* best = &candidates.front();
        for (const auto& c : candidates) {
            if (c.variance_total < best->variance_total ||
                (c.variance_total == best->variance_total &&
                 model_priority(c.tag) < model_priority(best->tag)))
                best = &c;
        }
        picked[year] = *best;
        picked[year].tag.model = "BEST";
        picked[year].tag.estimator = design::EstimatorKind::ma;
    }
    auto out = design::average_annual(picked, n_t);
    out.tag.model = "BEST";
    return out;
}

model::PanelWindow WindowKey::window() const {
    return pooled ? model::PanelWindow::pooled_span(first_year, year)
                  : model::PanelWindow::annual(year);
}

std::string WindowKey::label() const { return window().label(); }

void save_aggregates(const AggregatesSet& set, const std::string& path) {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& [key, a] : set) {
        nlohmann::ordered_json e;
        e["stratum"] = key.first;
        e["window"]["mode"] = key.second.pooled ? "pooled" : "annual";
        e["window"]["year"] = key.second.year;
        if (key.second.pooled) e["window"]["first_year"] = key.second.first_year;
        e["lambda_ha"] = a.lambda_ha;
        e["lambda_cl_ha"] = a.lambda_cl_ha;
        e["lambda_n_ha"] = a.lambda_n_ha;
        if (a.lambda_l_ha) e["lambda_l_ha"] = *a.lambda_l_ha;
        if (a.xbar_l_m) e["xbar_l_m"] = *a.xbar_l_m;
        if (!a.heights_l.empty()) e["heights_l_m"] = a.heights_l;
        if (a.excluded_nodata_cells) e["excluded_nodata_cells"] = a.excluded_nodata_cells;
        entries.push_back(std::move(e));
    }
    nlohmann::ordered_json j;
    j["aggregates"] = std::move(entries);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write aggregates file: " + path);
    out << j.dump(2) << "\n";
}

AggregatesSet load_aggregates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open aggregates file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed aggregates file " + path + ": " + e.what());
    }
    AggregatesSet set;
    try {
        for (const auto& e : j.at("aggregates")) {
            WindowKey key;
            const std::string mode = e.at("window").at("mode").get<std::string>();
            if (mode == "pooled") {
                key.pooled = true;
                key.first_year = e.at("window").at("first_year").get<int>();
            } else if (mode != "annual") {
                throw InputError("aggregates window mode must be annual or pooled");
            }
            key.year = e.at("window").at("year").get<int>();
            PopulationAggregates a;
            a.lambda_ha = e.at("lambda_ha").get<double>();
            a.lambda_cl_ha = e.at("lambda_cl_ha").get<double>();
            a.lambda_n_ha = e.at("lambda_n_ha").get<double>();
            if (e.contains("lambda_l_ha")) a.lambda_l_ha = e.at("lambda_l_ha").get<double>();
            if (e.contains("xbar_l_m")) a.xbar_l_m = e.at("xbar_l_m").get<double>();
            if (e.contains("heights_l_m")) a.heights_l = e.at("heights_l_m").get<std::vector<double>>();
            if (e.contains("excluded_nodata_cells"))
                a.excluded_nodata_cells = e.at("excluded_nodata_cells").get<std::size_t>();
            a.validate();
            set[{e.at("stratum").get<std::string>(), key}] = std::move(a);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError("aggregates file " + path + " is missing fields: " + e.what());
    }
    return set;
}

} // namespace closs::assist
