#include "closs/design.hpp"

#include <cmath>

namespace closs::design {

std::string to_string(EstimatorKind k) {
    return k == EstimatorKind::be ? "BE" : "MA";
}

std::string to_string(Scope s) {
    switch (s) {
        case Scope::annual: return "annual";
        case Scope::average: return "average";
        default: return "pooled";
    }
}

std::string EstimatorTag::label() const {
    std::string out = to_string(estimator);
    if (!model.empty()) out += "-" + model;
    out += "/" + to_string(scope);
    if (panel_year) out += ":" + std::to_string(*panel_year);
    return out;
}

bool EstimatorTag::same_modulo_stratum(const EstimatorTag& o) const {
    return estimator == o.estimator && model == o.model && scope == o.scope &&
           panel_year == o.panel_year && domain == o.domain;
}

std::optional<double> EstimateResult::se_pct() const {
    if (total == 0.0) return std::nullopt;
    return 100.0 * std::sqrt(variance_total) / std::abs(total);
}

EstimateResult from_total_se(double total, double se_pct, EstimatorTag tag) {
    const double se_abs = std::abs(total) * se_pct / 100.0;
    return EstimateResult{total, se_abs * se_abs, 0, std::move(tag)};
}

std::pair<double, double> be_total(std::span<const PlotStat> sample, double lambda) {
    if (sample.empty()) throw DegenerateError("no plots in stratum/panel");
    if (lambda <= 0.0) throw InputError("stratum area must be > 0");
    double sum_my = 0.0, sum_m = 0.0;
    for (const auto& p : sample) {
        sum_my += p.m * p.y;
        sum_m += p.m;
    }
    const double mean = sum_my / sum_m;
    return {mean, lambda * mean};
}

std::pair<double, double> be_variance(std::span<const PlotStat> sample, double lambda) {
    const std::size_t n = sample.size();
    if (n < 2) throw DegenerateError("variance undefined for n = " + std::to_string(n));
    const auto [mean, total] = be_total(sample, lambda);
    double sum_m = 0.0;
    for (const auto& p : sample) sum_m += p.m;
    const double mbar = sum_m / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& p : sample) {
        const double w = p.m / mbar;
        const double d = p.y - mean;
        ss += w * w * d * d;
    }
    const double v_mean = ss / (static_cast<double>(n) * static_cast<double>(n - 1));
    return {v_mean, lambda * lambda * v_mean};
}

EstimateResult be_estimate(std::span<const PlotStat> sample, double lambda, EstimatorTag tag) {
    EstimateResult r;
    r.total = be_total(sample, lambda).second;
    r.variance_total = be_variance(sample, lambda).second;
    r.n = sample.size();
    r.tag = std::move(tag);
    return r;
}

std::map<int, EstimateResult> be_annual(const std::map<int, std::vector<PlotStat>>& panels,
                                        double lambda, EstimatorTag tag) {
    std::map<int, EstimateResult> out;
    for (const auto& [year, sample] : panels) {
        EstimatorTag t = tag;
        t.scope = Scope::annual;
        t.panel_year = year;
        try {
            out[year] = be_estimate(sample, lambda, std::move(t));
        } catch (const DegenerateError& e) {
            throw DegenerateError("panel " + std::to_string(year) + ": " + e.what());
        }
    }
    return out;
}

EstimateResult average_annual(const std::map<int, EstimateResult>& results,
                              const std::map<int, std::size_t>& n_t) {
    if (results.empty()) throw InputError("average_annual: no annual results");
    if (results.size() != n_t.size())
        throw InputError("average_annual: year sets of results and panel sizes differ");
    double n_p = 0.0;
    for (const auto& [year, n] : n_t) {
        if (!results.count(year))
            throw InputError("average_annual: no result for panel " + std::to_string(year));
        n_p += static_cast<double>(n);
    }
    if (n_p <= 0.0) throw InputError("average_annual: total panel size is zero");

    EstimateResult out;
    std::size_t n_total = 0;
    for (const auto& [year, r] : results) {
        const double w = static_cast<double>(n_t.at(year));
        out.total += w * r.total;
        out.variance_total += w * w * r.variance_total;
        n_total += n_t.at(year);
    }
    out.total /= n_p;
    out.variance_total /= n_p * n_p;
    out.n = n_total;
    out.tag = results.begin()->second.tag;
    out.tag.scope = Scope::average;
    out.tag.panel_year.reset();
    return out;
}

EstimateResult stratified_combine(std::span<const EstimateResult> per_stratum) {
    if (per_stratum.empty()) throw InputError("stratified_combine: no stratum results");
    EstimateResult out;
    out.tag = per_stratum.front().tag;
    out.tag.stratum_id = "combined";
    for (const auto& r : per_stratum) {
        if (!r.tag.same_modulo_stratum(out.tag))
            throw InputError("stratified_combine: mixed estimator tags (" + r.tag.label() +
                             " vs " + out.tag.label() + ")");
        out.total += r.total;
        out.variance_total += r.variance_total;
        out.n += r.n;
    }
    return out;
}

} // namespace closs::design
