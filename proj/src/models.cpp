#include "closs/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace closs::model {

PanelWindow PanelWindow::pooled_span(int t_first, int t_last) {
    if (t_first > t_last)
        throw InputError("pooled window: first year " + std::to_string(t_first) +
                         " is after last year " + std::to_string(t_last));
    PanelWindow w;
    w.year = t_last;
    w.pooled = true;
    w.first_year = t_first;
    return w;
}

std::string PanelWindow::label() const {
    if (pooled) return "pooled:" + std::to_string(first_year) + "-" + std::to_string(year);
    return "annual:" + std::to_string(year);
}

bool recode_fcl(std::optional<int> loss_year, const PanelWindow& w) {
    if (!loss_year) return false;
    const int lo = (w.pooled ? w.first_year : w.year) - 4;
    return *loss_year >= lo && *loss_year <= w.year;
}

bool als_eligible(std::optional<int> als_year, const PanelWindow& w) {
    if (!als_year) return false;
    return *als_year <= (w.pooled ? w.first_year : w.year) - 5;
}

FclModelParams fit_fcl_model(std::span<const std::pair<double, bool>> subplots) {
    FclModelParams p;
    double sum_cl = 0.0, sum_n = 0.0;
    for (const auto& [loss, flag] : subplots) {
        if (flag) {
            sum_cl += loss;
            ++p.n_cl;
        } else {
            sum_n += loss;
            ++p.n_n;
        }
    }
    if (p.n_cl == 0) throw DegenerateError("degenerate working model: no subplots with FCL=1");
    if (p.n_n == 0) throw DegenerateError("degenerate working model: no subplots with FCL=0");
    p.ybar_cl = sum_cl / static_cast<double>(p.n_cl);
    p.ybar_n = sum_n / static_cast<double>(p.n_n);
    return p;
}

namespace {

// 3x3 least squares via normal equations in extended precision
CstockModelParams solve_quadratic(const std::vector<const CstockObs*>& obs) {
    std::size_t distinct = 0;
    {
        std::vector<double> xs;
        for (const auto* o : obs) xs.push_back(o->height_m);
        std::sort(xs.begin(), xs.end());
        distinct = std::unique(xs.begin(), xs.end()) - xs.begin();
    }
    if (obs.size() < 3 || distinct < 3)
        throw DegenerateError("stock model needs >= 3 pairs with >= 3 distinct heights (" +
                              std::to_string(obs.size()) + " pairs, " + std::to_string(distinct) +
                              " distinct)");
    std::array<std::array<long double, 4>, 3> a{};
    for (const auto* o : obs) {
        const long double x = o->height_m;
        const long double y = o->stock;
        const std::array<long double, 3> basis{1.0L, x, x * x};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) a[r][c] += basis[r] * basis[c];
            a[r][3] += basis[r] * y;
        }
    }
    // Gaussian elimination with partial pivoting
    for (int pivot = 0; pivot < 3; ++pivot) {
        int best = pivot;
        for (int r = pivot + 1; r < 3; ++r)
            if (std::fabs(static_cast<double>(a[r][pivot])) >
                std::fabs(static_cast<double>(a[best][pivot])))
                best = r;
        std::swap(a[pivot], a[best]);
        if (a[pivot][pivot] == 0.0L)
            throw DegenerateError("stock model design matrix is rank deficient");
        for (int r = 0; r < 3; ++r) {
            if (r == pivot) continue;
            const long double f = a[r][pivot] / a[pivot][pivot];
            for (int c = pivot; c < 4; ++c) a[r][c] -= f * a[pivot][c];
        }
    }
    CstockModelParams p;
    p.beta0 = static_cast<double>(a[0][3] / a[0][0]);
    p.beta1 = static_cast<double>(a[1][3] / a[1][1]);
    p.beta2 = static_cast<double>(a[2][3] / a[2][2]);
    p.fit_n = obs.size();
    return p;
}

} // namespace

CstockModelParams fit_cstock_model(std::span<const CstockObs> pairs, const OutlierRule& rule) {
    std::vector<const CstockObs*> kept;
    for (const auto& o : pairs) {
        if (rule.drop_als_not_before_loss && o.loss_year && o.als_year &&
            *o.als_year >= *o.loss_year)
            continue;
        if (rule.drop_loss_before_measurement && o.loss_year && *o.loss_year < o.panel_year)
            continue;
        kept.push_back(&o);
    }
    CstockModelParams p = solve_quadratic(kept);
    if (rule.abs_residual_cutoff) {
        std::vector<const CstockObs*> refit;
        for (const auto* o : kept)
            if (std::abs(o->stock - p.predict_stock(o->height_m)) <= *rule.abs_residual_cutoff)
                refit.push_back(o);
        if (refit.size() != kept.size()) p = solve_quadratic(refit);
    }
    return p;
}

double predict_subplot(const survey::SubPlotRecord& s, const FclModelParams& m,
                       const PanelWindow& w) {
    return recode_fcl(s.fcl_loss_year, w) ? m.ybar_cl : m.ybar_n;
}

double predict_subplot(const survey::SubPlotRecord& s, const AlsFclModel& m,
                       const PanelWindow& w) {
    if (!recode_fcl(s.fcl_loss_year, w)) return m.fcl.ybar_n;
    if (als_eligible(s.als_year, w) && s.als_height) {
        double stock = m.cstock.predict_stock(*s.als_height);
        if (m.clamp_negative && stock < 0.0) stock = 0.0;
        return stock / static_cast<double>(m.interval_years);
    }
    return m.fcl.ybar_cl;
}

std::string to_string(AlsHeightKind k) {
    return k == AlsHeightKind::first_returns ? "first_returns" : "all_returns";
}

AlsHeightKind als_height_kind_from_string(const std::string& s) {
    if (s == "first_returns") return AlsHeightKind::first_returns;
    if (s == "all_returns") return AlsHeightKind::all_returns;
    throw InputError("unknown als_height_kind: " + s);
}

const FclModelParams& ModelSet::fcl_for(const PanelWindow& w) const {
    if (w.pooled) {
        if (!fcl_pooled) throw InputError("model set has no pooled FCL parameters");
        return *fcl_pooled;
    }
    const auto it = fcl_annual.find(w.year);
    if (it == fcl_annual.end())
        throw InputError("model set has no FCL parameters for panel " + std::to_string(w.year));
    return it->second;
}

AlsFclModel ModelSet::als_fcl_for(const PanelWindow& w) const {
    if (!cstock) throw InputError("model set has no C-stock model parameters");
    AlsFclModel m;
    m.cstock = *cstock;
    m.fcl = fcl_for(w);
    m.interval_years = interval_years;
    m.clamp_negative = clamp_negative;
    return m;
}

namespace {

nlohmann::ordered_json fcl_to_json(const FclModelParams& p) {
    nlohmann::ordered_json j;
    j["ybar_cl"] = p.ybar_cl;
    j["ybar_n"] = p.ybar_n;
    j["n_cl"] = p.n_cl;
    j["n_n"] = p.n_n;
    return j;
}

FclModelParams fcl_from_json(const nlohmann::json& j) {
    FclModelParams p;
    p.ybar_cl = j.at("ybar_cl").get<double>();
    p.ybar_n = j.at("ybar_n").get<double>();
    p.n_cl = j.at("n_cl").get<std::size_t>();
    p.n_n = j.at("n_n").get<std::size_t>();
    if (p.ybar_cl < 0.0 || p.ybar_n < 0.0)
        throw InputError("FCL model means must be >= 0");
    if (p.n_cl < 1 || p.n_n < 1)
        throw InputError("FCL model class counts must be >= 1");
    return p;
}

} // namespace

void save_models(const ModelSet& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["interval_years"] = m.interval_years;
    j["clamp_negative"] = m.clamp_negative;
    j["als_height_kind"] = to_string(m.height_kind);
    auto annual = nlohmann::ordered_json::array();
    for (const auto& [year, p] : m.fcl_annual) {
        auto e = fcl_to_json(p);
        e["year"] = year;
        annual.push_back(std::move(e));
    }
    j["fcl_annual"] = std::move(annual);
    if (m.fcl_pooled) j["fcl_pooled"] = fcl_to_json(*m.fcl_pooled);
    if (m.cstock) {
        nlohmann::ordered_json c;
        c["beta0"] = m.cstock->beta0;
        c["beta1"] = m.cstock->beta1;
        c["beta2"] = m.cstock->beta2;
        c["fit_n"] = m.cstock->fit_n;
        j["cstock"] = std::move(c);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write model file: " + path);
    out << j.dump(2) << "\n";
}

ModelSet load_models(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open model file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed model file " + path + ": " + e.what());
    }
    try {
        ModelSet m;
        m.interval_years = j.at("interval_years").get<int>();
        if (m.interval_years < 1) throw InputError("interval_years must be >= 1");
        m.clamp_negative = j.value("clamp_negative", true);
        m.height_kind = als_height_kind_from_string(
            j.value("als_height_kind", std::string("first_returns")));
        for (const auto& e : j.at("fcl_annual"))
            m.fcl_annual[e.at("year").get<int>()] = fcl_from_json(e);
        if (j.contains("fcl_pooled")) m.fcl_pooled = fcl_from_json(j.at("fcl_pooled"));
        if (j.contains("cstock")) {
            CstockModelParams c;
            c.beta0 = j.at("cstock").at("beta0").get<double>();
            c.beta1 = j.at("cstock").at("beta1").get<double>();
            c.beta2 = j.at("cstock").at("beta2").get<double>();
            c.fit_n = j.at("cstock").value("fit_n", std::size_t{0});
            m.cstock = c;
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("model file " + path + " is missing fields: " + e.what());
    }
}

} // namespace closs::model
