#include "closs/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace closs::sim {

std::size_t PopulationConfig::total_clusters() const {
    std::size_t n = 0;
    for (const auto& s : strata) n += s.n_clusters;
    return n;
}

double PopulationConfig::total_lambda() const {
    double l = 0.0;
    for (const auto& s : strata) l += s.lambda_ha;
    return l;
}

void PopulationConfig::validate() const {
    if (strata.empty()) throw InputError("population config: no strata");
    for (const auto& s : strata) {
        if (s.n_clusters == 0)
            throw InputError("population config: stratum " + s.id + " has zero clusters");
        if (s.lambda_ha <= 0.0)
            throw InputError("population config: stratum " + s.id + " area must be > 0");
    }
    if (subplots_per_cluster < 1)
        throw InputError("population config: subplots_per_cluster must be >= 1");
    if (panel_count < 1) throw InputError("population config: panel_count must be >= 1");
    if (interval_years < 1) throw InputError("population config: interval_years must be >= 1");
    auto prob = [](double p, const char* name) {
        if (p < 0.0 || p > 1.0)
            throw InputError(std::string("population config: ") + name + " must be in [0, 1]");
    };
    prob(loss_prevalence, "loss_prevalence");
    prob(fcl_omission, "fcl_omission");
    prob(fcl_commission, "fcl_commission");
    prob(als_coverage, "als_coverage");
    prob(baseline_zero_prob, "baseline_zero_prob");
    if (baseline_zero_prob >= 1.0 && baseline_loss.mean > 0.0)
        throw InputError("population config: baseline_zero_prob = 1 with nonzero baseline mean");
    if (loss_magnitude.mean < 0.0 || baseline_loss.mean < 0.0)
        throw InputError("population config: distribution means must be >= 0");
    if (als_noise_sd_m < 0.0) throw InputError("population config: als_noise_sd_m must be >= 0");
    if (!trend.empty() && trend.size() != static_cast<std::size_t>(panel_count))
        throw InputError("population config: trend needs one multiplier per panel");
    for (double t : trend)
        if (t < 0.0) throw InputError("population config: trend multipliers must be >= 0");
}

namespace {

// disturbance-year probabilities over the calendar horizon [t1-4, t_last];
// scaled so a flat trend gives P(observed in any panel window) = prevalence
std::vector<double> year_probabilities(const PopulationConfig& cfg) {
    const int first = cfg.first_panel_year - 4;
    const int last = cfg.last_panel_year();
    std::vector<double> p;
    double total = 0.0;
    for (int y = first; y <= last; ++y) {
        double w = 1.0;
        if (!cfg.trend.empty()) {
            const int panel = std::max(0, y - cfg.first_panel_year);
            w = cfg.trend[static_cast<std::size_t>(panel)];
        }
        const double py = cfg.loss_prevalence / 5.0 * w;
        p.push_back(py);
        total += py;
    }
    if (total > 1.0)
        throw InputError("population config: prevalence/trend imply disturbance probability > 1");
    return p;
}

// positive root of beta0 + beta1 x + beta2 x^2 = stock
double invert_stock_curve(const model::CstockModelParams& g, double stock) {
    if (g.beta2 == 0.0) {
        if (g.beta1 == 0.0) throw InputError("height_to_stock curve is constant");
        return std::max(0.0, (stock - g.beta0) / g.beta1);
    }
    const double disc = g.beta1 * g.beta1 - 4.0 * g.beta2 * (g.beta0 - stock);
    if (disc < 0.0) return 0.0;
    return std::max(0.0, (-g.beta1 + std::sqrt(disc)) / (2.0 * g.beta2));
}

} // namespace

double Population::observed_y(std::size_t subplot, int panel_year) const {
    const std::int32_t dy = dist_year[subplot];
    if (dy != year_absent && dy > panel_year - cfg.interval_years && dy <= panel_year)
        return magnitude[subplot] / static_cast<double>(cfg.interval_years);
    return baseline[subplot];
}

double Population::true_total(int panel_year) const {
    const std::size_t m = static_cast<std::size_t>(cfg.subplots_per_cluster);
    double total = 0.0;
    std::size_t sp = 0;
    std::size_t cluster = 0;
    for (std::size_t si = 0; si < cfg.strata.size(); ++si) {
        const auto& st = cfg.strata[si];
        double sum = 0.0;
        for (std::size_t c = 0; c < st.n_clusters; ++c, ++cluster)
            for (std::size_t j = 0; j < m; ++j, ++sp) sum += observed_y(sp, panel_year);
        total += st.lambda_ha * sum / (static_cast<double>(st.n_clusters) * static_cast<double>(m));
    }
    return total;
}

double Population::true_total_average() const {
    double sum = 0.0;
    for (int t = cfg.first_panel_year; t <= cfg.last_panel_year(); ++t) sum += true_total(t);
    return sum / static_cast<double>(cfg.panel_count);
}

assist::AggregatesSet Population::census_aggregates() const {
    assist::AggregatesSet set;
    std::vector<model::PanelWindow> windows;
    for (int t = cfg.first_panel_year; t <= cfg.last_panel_year(); ++t)
        windows.push_back(model::PanelWindow::annual(t));
    windows.push_back(model::PanelWindow::pooled_span(cfg.first_panel_year, cfg.last_panel_year()));

    const std::size_t m = static_cast<std::size_t>(cfg.subplots_per_cluster);
    for (const auto& w : windows) {
        std::size_t sp_base = 0;
        for (const auto& st : cfg.strata) {
            const std::size_t n_sub = st.n_clusters * m;
            std::size_t n_cl = 0, n_l = 0, n_n = 0;
            double h_sum = 0.0;
            std::vector<double> heights;
            for (std::size_t k = 0; k < n_sub; ++k) {
                const std::size_t sp = sp_base + k;
                std::optional<int> flag;
                if (flag_year[sp] != year_absent) flag = flag_year[sp];
                if (!model::recode_fcl(flag, w)) {
                    ++n_n;
                    continue;
                }
                std::optional<int> ay;
                if (als_year[sp] != year_absent) ay = als_year[sp];
                if (model::als_eligible(ay, w) && !std::isnan(als_height[sp])) {
                    ++n_l;
                    h_sum += als_height[sp];
                    heights.push_back(als_height[sp]);
                } else {
                    ++n_cl;
                }
            }
            assist::PopulationAggregates a;
            const double per_subplot = st.lambda_ha / static_cast<double>(n_sub);
            a.lambda_ha = st.lambda_ha;
            a.lambda_cl_ha = per_subplot * static_cast<double>(n_cl);
            a.lambda_n_ha = per_subplot * static_cast<double>(n_n);
            a.lambda_l_ha = per_subplot * static_cast<double>(n_l);
            if (n_l > 0) a.xbar_l_m = h_sum / static_cast<double>(n_l);
            a.heights_l = std::move(heights);
            set[{st.id, assist::WindowKey::from(w)}] = std::move(a);
            sp_base += n_sub;
        }
    }
    return set;
}

Population generate_population(const PopulationConfig& cfg) {
    cfg.validate();
    Population pop;
    pop.cfg = cfg;
    const std::size_t n_clusters = cfg.total_clusters();
    const std::size_t m = static_cast<std::size_t>(cfg.subplots_per_cluster);
    const std::size_t n_sub = n_clusters * m;
    pop.cluster_stratum.reserve(n_clusters);
    pop.baseline.resize(n_sub);
    pop.magnitude.assign(n_sub, 0.0);
    pop.dist_year.assign(n_sub, Population::year_absent);
    pop.flag_year.assign(n_sub, Population::year_absent);
    pop.als_height.assign(n_sub, std::numeric_limits<double>::quiet_NaN());
    pop.als_year.assign(n_sub, Population::year_absent);

    const auto year_p = year_probabilities(cfg);
    const int horizon_first = cfg.first_panel_year - 4;
    const int horizon_len = static_cast<int>(year_p.size());
    const int als_acq_year = cfg.first_panel_year - 5;
    const double baseline_cond_mean =
        cfg.baseline_zero_prob < 1.0 ? cfg.baseline_loss.mean / (1.0 - cfg.baseline_zero_prob)
                                     : 0.0;

    Rng rng(cfg.seed);
    std::size_t sp = 0;
    for (std::size_t si = 0; si < cfg.strata.size(); ++si) {
        for (std::size_t c = 0; c < cfg.strata[si].n_clusters; ++c) {
            pop.cluster_stratum.push_back(static_cast<std::uint32_t>(si));
            // cluster-level disturbance event with a calendar year
            std::int32_t cluster_dist = Population::year_absent;
            double u = rng.uniform01();
            for (int k = 0; k < horizon_len; ++k) {
                if (u < year_p[static_cast<std::size_t>(k)]) {
                    cluster_dist = horizon_first + k;
                    break;
                }
                u -= year_p[static_cast<std::size_t>(k)];
            }
            const bool covered = rng.bernoulli(cfg.als_coverage);
            for (std::size_t j = 0; j < m; ++j, ++sp) {
                pop.baseline[sp] =
                    (baseline_cond_mean <= 0.0 || rng.bernoulli(cfg.baseline_zero_prob))
                        ? 0.0
                        : rng.lognormal_mean(baseline_cond_mean, cfg.baseline_loss.sigma_log);
                double stand_stock = 0.0; // pre-disturbance stock the ALS sees
                if (cluster_dist != Population::year_absent) {
                    pop.dist_year[sp] = cluster_dist;
                    pop.magnitude[sp] =
                        rng.lognormal_mean(cfg.loss_magnitude.mean, cfg.loss_magnitude.sigma_log);
                    stand_stock = pop.magnitude[sp];
                    if (!rng.bernoulli(cfg.fcl_omission)) pop.flag_year[sp] = cluster_dist;
                } else {
                    // intact forest; its stock matters only for commission flags
                    stand_stock =
                        rng.lognormal_mean(cfg.loss_magnitude.mean, cfg.loss_magnitude.sigma_log);
                    if (rng.bernoulli(cfg.fcl_commission))
                        pop.flag_year[sp] = horizon_first +
                                            static_cast<std::int32_t>(rng.uniform_below(
                                                static_cast<std::uint64_t>(horizon_len)));
                }
                if (covered) {
                    const double h = invert_stock_curve(cfg.height_to_stock, stand_stock) +
                                     rng.normal(0.0, cfg.als_noise_sd_m);
                    pop.als_height[sp] = std::max(0.0, h);
                    pop.als_year[sp] = als_acq_year;
                }
            }
        }
    }
    return pop;
}

namespace {

survey::SurveyDataset materialize_sample(const Population& pop,
                                         const std::vector<std::uint32_t>& clusters) {
    const auto& cfg = pop.cfg;
    survey::SurveyDataset ds;
    ds.interval_years = cfg.interval_years;
    for (const auto& st : cfg.strata) ds.strata.push_back({st.id, st.lambda_ha});
    ds.plots.reserve(clusters.size());
    const std::size_t m = static_cast<std::size_t>(cfg.subplots_per_cluster);
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        const std::uint32_t c = clusters[i];
        survey::ClusterPlot plot;
        plot.cluster_id = "c" + std::to_string(c);
        plot.panel_year = cfg.first_panel_year + static_cast<int>(i % cfg.panel_count);
        plot.stratum_id = cfg.strata[pop.cluster_stratum[c]].id;
        plot.subplots.reserve(m);
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t sp = static_cast<std::size_t>(c) * m + j;
            survey::SubPlotRecord s;
            s.cluster_id = plot.cluster_id;
            s.subplot_index = static_cast<int>(j + 1);
            s.c_loss = pop.observed_y(sp, plot.panel_year);
            s.domain_bits = 1;
            if (pop.flag_year[sp] != Population::year_absent) s.fcl_loss_year = pop.flag_year[sp];
            if (pop.als_year[sp] != Population::year_absent) {
                s.als_year = pop.als_year[sp];
                s.als_height = pop.als_height[sp];
            }
            plot.subplots.push_back(std::move(s));
        }
        ds.plots.push_back(std::move(plot));
    }
    return ds;
}

} // namespace

survey::SurveyDataset draw_sample(const Population& pop, const SampleDesign& design, Rng& rng) {
    const std::size_t N = pop.n_clusters();
    std::vector<std::uint32_t> picked;
    if (design.kind == SampleDesign::Kind::srs) {
        if (design.sample_size == 0 || design.sample_size > N)
            throw InputError("srs sample size must be in [1, " + std::to_string(N) + "]");
        thread_local std::vector<std::uint32_t> pool;
        pool.resize(N);
        std::iota(pool.begin(), pool.end(), 0u);
        for (std::size_t i = 0; i < design.sample_size; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(N - i));
            std::swap(pool[i], pool[j]);
        }
        picked.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(design.sample_size));
        std::sort(picked.begin(), picked.end());
    } else {
        if (design.step == 0 || design.step > N)
            throw InputError("systematic step must be in [1, " + std::to_string(N) + "]");
        const std::size_t start = static_cast<std::size_t>(rng.uniform_below(design.step));
        for (std::size_t i = start; i < N; i += design.step)
            picked.push_back(static_cast<std::uint32_t>(i));
    }
    return materialize_sample(pop, picked);
}

std::string to_string(EstimatorId id) {
    switch (id) {
        case EstimatorId::be: return "BE";
        case EstimatorId::ma_fcl: return "MA-FCL";
        default: return "MA-ALSFCL";
    }
}

std::string estimator_label(const EstimatorRequest& r) {
    return to_string(r.id) + "/" + design::to_string(r.scope);
}

namespace {

using design::EstimateResult;
using design::PlotStat;
using survey::ClusterPlot;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct RepOut {
    std::vector<double> total; // NaN = estimator failed in this replicate
    std::vector<double> vhat;
    std::vector<double> re;
};

template <class Predict>
assist::ResidualSample residuals_of(const std::vector<const ClusterPlot*>& plots,
                                    const Predict& predict) {
    assist::ResidualSample out;
    out.plots.reserve(plots.size());
    for (const auto* plot : plots) {
        double e = 0.0;
        for (const auto& s : plot->subplots) e += s.c_loss - predict(s);
        out.plots.push_back({static_cast<double>(plot->subplots.size()),
                             e / static_cast<double>(plot->subplots.size())});
    }
    return out;
}

std::vector<PlotStat> plot_stats(const std::vector<const ClusterPlot*>& plots) {
    std::vector<PlotStat> out;
    out.reserve(plots.size());
    for (const auto* p : plots)
        out.push_back({static_cast<double>(p->subplots.size()),
                       survey::cluster_domain_mean(*p, survey::ResolvedDomain{})});
    return out;
}

struct StratumView {
    std::string id;
    double lambda = 0.0;
    std::vector<const ClusterPlot*> plots;
    std::map<int, std::vector<const ClusterPlot*>> panels;
    std::map<int, std::size_t> n_t;
};

class ReplicationContext {
public:
    ReplicationContext(const Population& pop, const RunOptions& opts,
                       std::vector<EstimatorRequest> requests)
        : pop_(pop), opts_(opts), requests_(std::move(requests)) {
        census_ = pop.census_aggregates();
        pooled_window_ = model::PanelWindow::pooled_span(pop.cfg.first_panel_year,
                                                         pop.cfg.last_panel_year());
        for (const auto& [key, a] : census_) folded_[key] = assist::fold_als_into_cl(a);
    }

    const std::vector<EstimatorRequest>& requests() const { return requests_; }

    RepOut replicate(const survey::SurveyDataset& ds) const {
        RepOut out;
        out.total.assign(requests_.size(), kNaN);
        out.vhat.assign(requests_.size(), kNaN);
        out.re.assign(requests_.size(), kNaN);

        // group plots by stratum and panel
        std::vector<StratumView> strata;
        for (const auto& st : ds.strata) {
            StratumView v;
            v.id = st.stratum_id;
            v.lambda = st.lambda_ha;
            strata.push_back(std::move(v));
        }
        for (const auto& plot : ds.plots) {
            for (auto& v : strata) {
                if (v.id == plot.stratum_id) {
                    v.plots.push_back(&plot);
                    v.panels[plot.panel_year].push_back(&plot);
                    ++v.n_t[plot.panel_year];
                    break;
                }
            }
        }
        std::erase_if(strata, [](const StratumView& v) { return v.plots.empty(); });

        // shared working models (fit over the whole sample, like the
        // published per-country parameter tables)
        std::map<int, model::FclModelParams> fcl_annual;
        std::map<int, std::string> fcl_annual_error;
        std::optional<model::FclModelParams> fcl_pooled;
        std::string fcl_pooled_error;
        std::optional<model::CstockModelParams> cstock;
        std::string cstock_error;
        const bool need_ma = std::any_of(requests_.begin(), requests_.end(), [](const auto& r) {
            return r.id != EstimatorId::be;
        });
        if (need_ma) {
            if (opts_.fixed_models) {
                const auto& fm = *opts_.fixed_models;
                fcl_annual = fm.fcl_annual;
                fcl_pooled = fm.fcl_pooled;
                cstock = fm.cstock;
                if (!fcl_pooled) fcl_pooled_error = "fixed models lack pooled FCL parameters";
                if (!cstock) cstock_error = "fixed models lack C-stock parameters";
            } else {
                fit_working_models(ds, fcl_annual, fcl_annual_error, fcl_pooled, fcl_pooled_error,
                                   cstock, cstock_error);
            }
        }

        // BE results are needed for every RE, so compute them first
        std::optional<EstimateResult> be_avg, be_pooled;
        std::string be_avg_error, be_pooled_error;
        try {
            be_avg = combined_scope(strata, design::Scope::average, nullptr, &fcl_annual, nullptr);
        } catch (const DegenerateError& e) {
            be_avg_error = e.what();
        }
        try {
            be_pooled = combined_scope(strata, design::Scope::pooled, nullptr, nullptr,
                                       fcl_pooled ? &*fcl_pooled : nullptr);
        } catch (const DegenerateError& e) {
            be_pooled_error = e.what();
        }

        for (std::size_t i = 0; i < requests_.size(); ++i) {
            const auto& req = requests_[i];
            try {
                std::optional<EstimateResult> r;
                const bool pooled = req.scope == design::Scope::pooled;
                switch (req.id) {
                    case EstimatorId::be:
                        r = pooled ? be_pooled : be_avg;
                        if (!r)
                            throw DegenerateError(pooled ? be_pooled_error : be_avg_error);
                        break;
                    case EstimatorId::ma_fcl:
                    case EstimatorId::ma_als_fcl: {
                        const bool als = req.id == EstimatorId::ma_als_fcl;
                        if (als && !cstock) throw DegenerateError(cstock_error);
                        if (pooled) {
                            if (!fcl_pooled) throw DegenerateError(fcl_pooled_error);
                            r = combined_scope(strata, design::Scope::pooled,
                                               als ? &*cstock : nullptr, nullptr, &*fcl_pooled);
                        } else {
                            for (const auto& [year, err] : fcl_annual_error)
                                throw DegenerateError(err);
                            r = combined_scope(strata, design::Scope::average,
                                               als ? &*cstock : nullptr, &fcl_annual, nullptr);
                        }
                        const auto& be = pooled ? be_pooled : be_avg;
                        if (be && r->variance_total > 0.0)
                            out.re[i] = be->variance_total / r->variance_total;
                        break;
                    }
                }
                out.total[i] = r->total;
                out.vhat[i] = r->variance_total;
            } catch (const DegenerateError&) {
                // failure recorded as NaN; counted per estimator
            }
        }
        return out;
    }

private:
    void fit_working_models(const survey::SurveyDataset& ds,
                            std::map<int, model::FclModelParams>& fcl_annual,
                            std::map<int, std::string>& fcl_annual_error,
                            std::optional<model::FclModelParams>& fcl_pooled,
                            std::string& fcl_pooled_error,
                            std::optional<model::CstockModelParams>& cstock,
                            std::string& cstock_error) const {
        std::map<int, std::vector<std::pair<double, bool>>> annual_pairs;
        std::vector<std::pair<double, bool>> pooled_pairs;
        std::vector<model::CstockObs> stock_pairs;
        for (const auto& plot : ds.plots) {
            const auto w = model::PanelWindow::annual(plot.panel_year);
            for (const auto& s : plot.subplots) {
                const bool flag = model::recode_fcl(s.fcl_loss_year, w);
                annual_pairs[plot.panel_year].push_back({s.c_loss, flag});
                pooled_pairs.push_back({s.c_loss, model::recode_fcl(s.fcl_loss_year, pooled_window_)});
                if (flag && s.als_height) {
                    model::CstockObs o;
                    o.height_m = *s.als_height;
                    o.stock = s.c_loss * static_cast<double>(ds.interval_years);
                    o.loss_year = s.fcl_loss_year;
                    o.als_year = s.als_year;
                    o.panel_year = plot.panel_year;
                    stock_pairs.push_back(o);
                }
            }
        }
        for (const auto& [year, pairs] : annual_pairs) {
            try {
                fcl_annual[year] = model::fit_fcl_model(pairs);
            } catch (const DegenerateError& e) {
                fcl_annual_error[year] = "panel " + std::to_string(year) + ": " + e.what();
            }
        }
        try {
            fcl_pooled = model::fit_fcl_model(pooled_pairs);
        } catch (const DegenerateError& e) {
            fcl_pooled_error = e.what();
        }
        try {
            cstock = model::fit_cstock_model(stock_pairs, opts_.outlier_rule);
        } catch (const DegenerateError& e) {
            cstock_error = e.what();
        }
    }

    const assist::PopulationAggregates& census(const std::string& stratum,
                                               const model::PanelWindow& w, bool folded) const {
        const auto key = std::make_pair(stratum, assist::WindowKey::from(w));
        const auto& set = folded ? folded_ : census_;
        const auto it = set.find(key);
        if (it == set.end())
            throw InputError("missing census aggregates for stratum " + stratum + " window " +
                             w.label());
        return it->second;
    }

    // one estimator at one scope, combined over strata; cstock == nullptr
    // means the FCL model, and for BE both model pointers stay null
    std::optional<EstimateResult> combined_scope(
        const std::vector<StratumView>& strata, design::Scope scope,
        const model::CstockModelParams* cstock,
        const std::map<int, model::FclModelParams>* fcl_annual,
        const model::FclModelParams* fcl_pooled) const {
        const bool be = fcl_annual == nullptr && fcl_pooled == nullptr && cstock == nullptr;
        std::vector<EstimateResult> per_stratum;
        for (const auto& v : strata) {
            design::EstimatorTag tag;
            tag.estimator = be ? design::EstimatorKind::be : design::EstimatorKind::ma;
            tag.model = be ? "" : (cstock ? "ALS-FCL" : "FCL");
            tag.stratum_id = v.id;
            if (scope == design::Scope::pooled) {
                tag.scope = design::Scope::pooled;
                if (be) {
                    per_stratum.push_back(design::be_estimate(plot_stats(v.plots), v.lambda, tag));
                } else {
                    per_stratum.push_back(
                        ma_one(v, v.plots, pooled_window_, cstock, *fcl_pooled, tag));
                }
            } else {
                std::map<int, EstimateResult> annual;
                for (const auto& [year, plots] : v.panels) {
                    design::EstimatorTag t = tag;
                    t.scope = design::Scope::annual;
                    t.panel_year = year;
                    if (be) {
                        try {
                            annual[year] = design::be_estimate(plot_stats(plots), v.lambda, t);
                        } catch (const DegenerateError& e) {
                            throw DegenerateError("panel " + std::to_string(year) + ": " +
                                                  e.what());
                        }
                    } else {
                        annual[year] = ma_one(v, plots, model::PanelWindow::annual(year), cstock,
                                              fcl_annual->at(year), t);
                    }
                }
                per_stratum.push_back(design::average_annual(annual, v.n_t));
            }
        }
        return design::stratified_combine(per_stratum);
    }

    EstimateResult ma_one(const StratumView& v, const std::vector<const ClusterPlot*>& plots,
                          const model::PanelWindow& w, const model::CstockModelParams* cstock,
                          const model::FclModelParams& fcl, design::EstimatorTag tag) const {
        double synthetic = 0.0;
        assist::ResidualSample res;
        if (cstock) {
            model::AlsFclModel m;
            m.cstock = *cstock;
            m.fcl = fcl;
            m.interval_years = pop_.cfg.interval_years;
            res = residuals_of(plots, [&](const survey::SubPlotRecord& s) {
                return model::predict_subplot(s, m, w);
            });
            synthetic = assist::synthetic_total_als_fcl(census(v.id, w, false), m);
        } else {
            res = residuals_of(plots, [&](const survey::SubPlotRecord& s) {
                return model::predict_subplot(s, fcl, w);
            });
            synthetic = assist::synthetic_total_fcl(census(v.id, w, true), fcl);
        }
        return assist::ma_total(synthetic, res, v.lambda, std::move(tag));
    }

    const Population& pop_;
    const RunOptions& opts_;
    std::vector<EstimatorRequest> requests_;
    assist::AggregatesSet census_;
    assist::AggregatesSet folded_;
    model::PanelWindow pooled_window_;
};

std::uint64_t combination_count(std::size_t N, std::size_t n, std::uint64_t cap) {
    if (n > N) return 0;
    n = std::min(n, N - n);
    std::uint64_t c = 1;
    for (std::size_t k = 1; k <= n; ++k) {
        // C(N, k) = C(N, k-1) * (N - k + 1) / k, always integer
        const std::uint64_t num = static_cast<std::uint64_t>(N - k + 1);
        if (c > (cap * 16) / std::max<std::uint64_t>(num, 1)) return cap + 1; // avoid overflow
        c = c * num / k;
        if (c > cap) return cap + 1;
    }
    return c;
}

} // namespace

ValidationReport run_replications(const Population& pop, const RunOptions& opts) {
    std::vector<EstimatorRequest> requests = opts.estimators;
    if (requests.empty()) {
        for (auto id : {EstimatorId::be, EstimatorId::ma_fcl, EstimatorId::ma_als_fcl})
            for (auto scope : {design::Scope::average, design::Scope::pooled})
                requests.push_back({id, scope});
    }
    for (const auto& r : requests)
        if (r.scope == design::Scope::annual)
            throw InputError("replication estimators use average or pooled scope");
    if (!opts.exhaustive && opts.replications < 2)
        throw InputError("replication count must be >= 2");

    ReplicationContext ctx(pop, opts, requests);
    const std::size_t N = pop.n_clusters();

    std::vector<RepOut> results;
    std::size_t R = 0;
    if (opts.exhaustive) {
        if (opts.design.kind != SampleDesign::Kind::srs)
            throw InputError("exhaustive mode enumerates srs samples only");
        const std::size_t n = opts.design.sample_size;
        if (n == 0 || n > N)
            throw InputError("srs sample size must be in [1, " + std::to_string(N) + "]");
        const std::uint64_t count = combination_count(N, n, opts.exhaustive_cap);
        if (count > opts.exhaustive_cap)
            throw InputError("C(N, n) exceeds the exhaustive cap of " +
                             std::to_string(opts.exhaustive_cap));
        R = static_cast<std::size_t>(count);
        results.reserve(R);
        std::vector<std::uint32_t> combo(n);
        std::iota(combo.begin(), combo.end(), 0u);
        for (;;) {
            results.push_back(ctx.replicate(materialize_sample(pop, combo)));
            std::size_t k = n;
            while (k > 0 && combo[k - 1] == static_cast<std::uint32_t>(N - n + k - 1)) --k;
            if (k == 0) break;
            ++combo[k - 1];
            for (std::size_t j = k; j < n; ++j) combo[j] = combo[j - 1] + 1;
        }
    } else {
        R = opts.replications;
        results.resize(R);
        unsigned threads = opts.threads > 0 ? static_cast<unsigned>(opts.threads)
                                            : std::thread::hardware_concurrency();
        if (threads == 0) threads = 1;
        threads = static_cast<unsigned>(std::min<std::size_t>(threads, R));
        auto worker = [&](unsigned tid, std::exception_ptr& error) {
            try {
                for (std::size_t rep = tid; rep < R; rep += threads) {
                    Rng rng(pop.cfg.seed, rep + 1);
                    results[rep] = ctx.replicate(draw_sample(pop, opts.design, rng));
                }
            } catch (...) {
                error = std::current_exception();
            }
        };
        if (threads == 1) {
            std::exception_ptr error;
            worker(0, error);
            if (error) std::rethrow_exception(error);
        } else {
            std::vector<std::thread> tids;
            std::vector<std::exception_ptr> errors(threads);
            for (unsigned t = 0; t < threads; ++t)
                tids.emplace_back(worker, t, std::ref(errors[t]));
            for (auto& t : tids) t.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
    }

    ValidationReport report;
    report.config = pop.cfg;
    report.design = opts.design;
    report.replications = R;
    report.exhaustive = opts.exhaustive;
    report.fixed_models = opts.fixed_models.has_value();
    report.true_total_average = pop.true_total_average();
    for (int t = pop.cfg.first_panel_year; t <= pop.cfg.last_panel_year(); ++t)
        report.true_total_by_year[t] = pop.true_total(t);

    for (std::size_t i = 0; i < requests.size(); ++i) {
        EstimatorStats st;
        st.request = requests[i];
        st.label = estimator_label(requests[i]);
        st.true_total = report.true_total_average;
        double sum = 0.0, sum_vhat = 0.0, sum_re = 0.0;
        std::size_t n_re = 0;
        std::vector<double> totals;
        totals.reserve(R);
        for (const auto& r : results) {
            if (std::isnan(r.total[i])) {
                ++st.n_failure;
                continue;
            }
            ++st.n_success;
            totals.push_back(r.total[i]);
            sum += r.total[i];
            sum_vhat += r.vhat[i];
            if (!std::isnan(r.re[i])) {
                sum_re += r.re[i];
                ++n_re;
            }
        }
        if (st.n_success > 0) {
            const double n = static_cast<double>(st.n_success);
            st.mean_total = sum / n;
            double ss = 0.0;
            for (double t : totals) {
                const double d = t - st.mean_total;
                ss += d * d;
            }
            // exhaustive enumeration is the full sampling distribution
            st.emp_var_total = opts.exhaustive ? ss / n : (st.n_success > 1 ? ss / (n - 1) : 0.0);
            st.mean_vhat = sum_vhat / n;
            st.rel_bias = (st.mean_total - st.true_total) / st.true_total;
            st.mcse_rel = opts.exhaustive
                              ? 0.0
                              : std::sqrt(st.emp_var_total / n) / std::abs(st.true_total);
            st.vhat_ratio = st.emp_var_total > 0.0 ? st.mean_vhat / st.emp_var_total : 0.0;
            if (n_re > 0) st.mean_re = sum_re / static_cast<double>(n_re);
        }
        report.estimators.push_back(std::move(st));
    }
    return report;
}

ValidationReport run_replications(const PopulationConfig& cfg, const RunOptions& opts) {
    return run_replications(generate_population(cfg), opts);
}

void check_report(const ValidationReport& report, double failure_rate_threshold) {
    std::string violations;
    auto add = [&violations](const std::string& v) {
        if (!violations.empty()) violations += "; ";
        violations += v;
    };
    for (const auto& st : report.estimators) {
        const std::string& name = st.label;
        if (st.n_success == 0) {
            add(name + ": no successful replications");
            continue;
        }
        const double fail_rate = static_cast<double>(st.n_failure) /
                                 static_cast<double>(st.n_success + st.n_failure);
        if (fail_rate > failure_rate_threshold)
            add(name + ": failure rate " + std::to_string(fail_rate) + " above threshold");
        const bool strict = report.exhaustive && (st.request.id == EstimatorId::be ||
                                                  report.fixed_models);
        if (strict) {
            if (std::abs(st.rel_bias) > 1e-12)
                add(name + ": exhaustive relative bias " + std::to_string(st.rel_bias));
        } else if (!report.exhaustive) {
            if (std::abs(st.rel_bias) > 3.0 * st.mcse_rel)
                add(name + ": |relative bias| " + std::to_string(std::abs(st.rel_bias)) +
                    " above 3 MCSE = " + std::to_string(3.0 * st.mcse_rel));
        }
        if (!report.exhaustive) {
            // no finite-population correction: small sampling fractions only
            if (report.design.kind == SampleDesign::Kind::srs) {
                if (st.vhat_ratio < 0.9 || st.vhat_ratio > 1.1)
                    add(name + ": variance ratio " + std::to_string(st.vhat_ratio) +
                        " outside [0.9, 1.1]");
            } else {
                if (st.vhat_ratio < 0.9)
                    add(name + ": variance ratio " + std::to_string(st.vhat_ratio) +
                        " below 0.9 under systematic sampling");
            }
        }
    }
    if (!violations.empty()) throw ValidationError(violations);
}

namespace {

nlohmann::ordered_json lognormal_to_json(const LognormalSpec& s) {
    nlohmann::ordered_json j;
    j["mean"] = s.mean;
    j["sigma_log"] = s.sigma_log;
    return j;
}

LognormalSpec lognormal_from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("sigma_log").get<double>()};
}

} // namespace

void save_population_config(const PopulationConfig& cfg, const std::string& path) {
    nlohmann::ordered_json j;
    auto strata = nlohmann::ordered_json::array();
    for (const auto& s : cfg.strata) {
        nlohmann::ordered_json e;
        e["id"] = s.id;
        e["lambda_ha"] = s.lambda_ha;
        e["n_clusters"] = s.n_clusters;
        strata.push_back(std::move(e));
    }
    j["strata"] = std::move(strata);
    j["subplots_per_cluster"] = cfg.subplots_per_cluster;
    j["panel_count"] = cfg.panel_count;
    j["first_panel_year"] = cfg.first_panel_year;
    j["interval_years"] = cfg.interval_years;
    j["loss_prevalence"] = cfg.loss_prevalence;
    j["loss_magnitude"] = lognormal_to_json(cfg.loss_magnitude);
    j["baseline_loss"] = lognormal_to_json(cfg.baseline_loss);
    j["baseline_zero_prob"] = cfg.baseline_zero_prob;
    j["fcl_omission"] = cfg.fcl_omission;
    j["fcl_commission"] = cfg.fcl_commission;
    j["als_coverage"] = cfg.als_coverage;
    j["als_noise_sd_m"] = cfg.als_noise_sd_m;
    j["height_to_stock"]["beta0"] = cfg.height_to_stock.beta0;
    j["height_to_stock"]["beta1"] = cfg.height_to_stock.beta1;
    j["height_to_stock"]["beta2"] = cfg.height_to_stock.beta2;
    if (!cfg.trend.empty()) j["trend"] = cfg.trend;
    j["seed"] = cfg.seed;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write population config: " + path);
    out << j.dump(2) << "\n";
}

PopulationConfig load_population_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open population config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed population config " + path + ": " + e.what());
    }
    PopulationConfig cfg;
    try {
        if (j.contains("strata")) {
            cfg.strata.clear();
            for (const auto& e : j.at("strata"))
                cfg.strata.push_back({e.at("id").get<std::string>(),
                                      e.at("lambda_ha").get<double>(),
                                      e.at("n_clusters").get<std::size_t>()});
        }
        cfg.subplots_per_cluster = j.value("subplots_per_cluster", cfg.subplots_per_cluster);
        cfg.panel_count = j.value("panel_count", cfg.panel_count);
        cfg.first_panel_year = j.value("first_panel_year", cfg.first_panel_year);
        cfg.interval_years = j.value("interval_years", cfg.interval_years);
        cfg.loss_prevalence = j.value("loss_prevalence", cfg.loss_prevalence);
        if (j.contains("loss_magnitude")) cfg.loss_magnitude = lognormal_from_json(j.at("loss_magnitude"));
        if (j.contains("baseline_loss")) cfg.baseline_loss = lognormal_from_json(j.at("baseline_loss"));
        cfg.baseline_zero_prob = j.value("baseline_zero_prob", cfg.baseline_zero_prob);
        cfg.fcl_omission = j.value("fcl_omission", cfg.fcl_omission);
        cfg.fcl_commission = j.value("fcl_commission", cfg.fcl_commission);
        cfg.als_coverage = j.value("als_coverage", cfg.als_coverage);
        cfg.als_noise_sd_m = j.value("als_noise_sd_m", cfg.als_noise_sd_m);
        if (j.contains("height_to_stock")) {
            cfg.height_to_stock.beta0 = j.at("height_to_stock").at("beta0").get<double>();
            cfg.height_to_stock.beta1 = j.at("height_to_stock").at("beta1").get<double>();
            cfg.height_to_stock.beta2 = j.at("height_to_stock").at("beta2").get<double>();
        }
        if (j.contains("trend")) cfg.trend = j.at("trend").get<std::vector<double>>();
        cfg.seed = j.value("seed", cfg.seed);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("population config " + path + " is missing fields: " + e.what());
    }
    cfg.validate();
    return cfg;
}

} // namespace closs::sim
