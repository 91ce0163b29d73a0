#include "closs/survey.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace closs::survey {

namespace {

std::string trim(std::string_view v) {
    const char* ws = " \t\r\n";
    const auto b = v.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = v.find_last_not_of(ws);
    return std::string(v.substr(b, e - b + 1));
}

std::vector<std::string> split_line(const std::string& line, char delimiter) {
    std::vector<std::string> out;
    std::string::size_type start = 0;
    for (;;) {
        const auto pos = line.find(delimiter, start);
        if (pos == std::string::npos) {
            out.push_back(trim(std::string_view(line).substr(start)));
            break;
        }
        out.push_back(trim(std::string_view(line).substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

double parse_double(const std::string& s, const std::string& column, std::size_t row) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw InputError("row " + std::to_string(row) + ": unparseable value '" + s +
                         "' in column " + column);
    return v;
}

int parse_int(const std::string& s, const std::string& column, std::size_t row) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw InputError("row " + std::to_string(row) + ": unparseable value '" + s +
                         "' in column " + column);
    return v;
}

bool parse_bool(const std::string& s, const std::string& column, std::size_t row) {
    if (s == "1" || s == "true" || s == "TRUE" || s == "True") return true;
    if (s == "0" || s == "false" || s == "FALSE" || s == "False") return false;
    throw InputError("row " + std::to_string(row) + ": unparseable boolean '" + s +
                     "' in column " + column);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

} // namespace

const Stratum& SurveyDataset::stratum(const std::string& id) const {
    for (const auto& s : strata)
        if (s.stratum_id == id) return s;
    throw InputError("unknown stratum_id: " + id);
}

std::vector<int> SurveyDataset::panel_years() const {
    std::set<int> years;
    for (const auto& p : plots) years.insert(p.panel_year);
    return {years.begin(), years.end()};
}

ResolvedDomain resolve_domain(const SurveyDataset& ds, const DomainSelector& d) {
    if (d.is_all()) return {};
    for (std::size_t i = 0; i < ds.domain_names.size(); ++i)
        if (ds.domain_names[i] == d.flag()) return {static_cast<std::uint32_t>(i)};
    throw InputError("domain flag '" + d.flag() + "' is not declared by the dataset");
}

double cluster_domain_mean(const ClusterPlot& plot, const ResolvedDomain& d) {
    double sum = 0.0;
    for (const auto& s : plot.subplots)
        if (d.contains(s)) sum += s.c_loss;
    return sum / static_cast<double>(plot.subplots.size());
}

std::map<int, std::vector<const ClusterPlot*>> split_panels(const SurveyDataset& ds) {
    std::map<int, std::vector<const ClusterPlot*>> panels;
    for (const auto& p : ds.plots) panels[p.panel_year].push_back(&p);
    return panels;
}

std::vector<Stratum> load_strata(const std::string& path, char delimiter) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw InputError("strata file is empty: " + path);
    const auto header = split_line(lines[0], delimiter);
    if (header.size() < 2 || header[0] != "stratum_id" || header[1] != "lambda_ha")
        throw InputError("strata file header must be 'stratum_id,lambda_ha'");
    std::vector<Stratum> strata;
    std::set<std::string> seen;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const auto fields = split_line(lines[i], delimiter);
        if (fields.size() != 2)
            throw InputError("row " + std::to_string(i + 1) + ": expected 2 fields");
        Stratum s;
        s.stratum_id = fields[0];
        s.lambda_ha = parse_double(fields[1], "lambda_ha", i + 1);
        if (s.lambda_ha <= 0.0)
            throw InputError("row " + std::to_string(i + 1) + ": stratum area must be > 0");
        if (!seen.insert(s.stratum_id).second)
            throw InputError("row " + std::to_string(i + 1) + ": duplicate stratum_id " +
                             s.stratum_id);
        strata.push_back(std::move(s));
    }
    if (strata.empty()) throw InputError("strata file declares no strata: " + path);
    return strata;
}

SurveyDataset load_dataset(const std::string& plot_path, const std::string& strata_path,
                           int interval_years, const LoadSchema& schema) {
    if (interval_years < 1) throw InputError("interval_years must be >= 1");

    SurveyDataset ds;
    ds.interval_years = interval_years;
    ds.strata = load_strata(strata_path, schema.delimiter);
    for (const auto& extra : schema.extra_domain_columns) ds.domain_names.push_back(extra);
    if (ds.domain_names.size() > 32) throw InputError("too many domain flags (max 32)");

    const auto lines = read_lines(plot_path);
    if (lines.empty()) throw InputError("plot file is empty: " + plot_path);

    auto mapped = [&schema](const std::string& logical) {
        const auto it = schema.columns.find(logical);
        return it == schema.columns.end() ? logical : it->second;
    };
    const std::vector<std::string> required = {
        "cluster_id", "subplot_index", "panel_year", "stratum_id", "c_loss",
        "forest",     "fcl_loss_year", "als_height", "als_year"};

    const auto header = split_line(lines[0], schema.delimiter);
    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (!col.emplace(header[i], i).second)
            throw InputError("duplicate column '" + header[i] + "' in plot file header");
    }
    std::unordered_map<std::string, std::size_t> idx; // logical -> column index
    for (const auto& logical : required) {
        const auto it = col.find(mapped(logical));
        if (it == col.end())
            throw InputError("plot file is missing column '" + mapped(logical) + "'");
        idx[logical] = it->second;
    }
    std::vector<std::size_t> domain_cols; // parallel to ds.domain_names
    domain_cols.push_back(idx["forest"]);
    for (const auto& extra : schema.extra_domain_columns) {
        const auto it = col.find(extra);
        if (it == col.end())
            throw InputError("plot file is missing domain column '" + extra + "'");
        domain_cols.push_back(it->second);
    }
    // reject unknown columns: silent extras usually mean a typo in the schema
    {
        std::set<std::size_t> known;
        for (auto& [name, i] : idx) known.insert(i);
        for (auto c : domain_cols) known.insert(c);
        for (std::size_t i = 0; i < header.size(); ++i)
            if (!known.count(i))
                throw InputError("unexpected column '" + header[i] +
                                 "' in plot file (map it or list it as a domain column)");
    }

    std::set<std::string> stratum_ids;
    for (const auto& s : ds.strata) stratum_ids.insert(s.stratum_id);

    std::unordered_map<std::string, std::size_t> cluster_pos;
    std::set<std::pair<std::string, int>> seen_subplots;

    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (trim(lines[li]).empty()) continue;
        const std::size_t row = li + 1;
        const auto fields = split_line(lines[li], schema.delimiter);
        if (fields.size() != header.size())
            throw InputError("row " + std::to_string(row) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        SubPlotRecord s;
        s.cluster_id = fields[idx["cluster_id"]];
        if (s.cluster_id.empty())
            throw InputError("row " + std::to_string(row) + ": empty cluster_id");
        s.subplot_index = parse_int(fields[idx["subplot_index"]], "subplot_index", row);
        const int panel_year = parse_int(fields[idx["panel_year"]], "panel_year", row);
        const std::string stratum_id = fields[idx["stratum_id"]];
        if (!stratum_ids.count(stratum_id))
            throw InputError("row " + std::to_string(row) + ": unknown stratum_id " + stratum_id);
        s.c_loss = parse_double(fields[idx["c_loss"]], "c_loss", row);
        if (s.c_loss < 0.0)
            throw InputError("row " + std::to_string(row) + ": negative loss " +
                             fields[idx["c_loss"]] + " (c_loss is a gross loss, >= 0)");
        for (std::size_t d = 0; d < domain_cols.size(); ++d) {
            if (parse_bool(fields[domain_cols[d]], ds.domain_names[d], row))
                s.domain_bits |= (1u << d);
        }
        const std::string& loss_year = fields[idx["fcl_loss_year"]];
        if (!loss_year.empty()) s.fcl_loss_year = parse_int(loss_year, "fcl_loss_year", row);
        const std::string& als_h = fields[idx["als_height"]];
        const std::string& als_y = fields[idx["als_year"]];
        if (als_h.empty() != als_y.empty())
            throw InputError("row " + std::to_string(row) +
                             ": als_height and als_year must be present together");
        if (!als_h.empty()) {
            s.als_height = parse_double(als_h, "als_height", row);
            s.als_year = parse_int(als_y, "als_year", row);
        }
        if (!seen_subplots.emplace(s.cluster_id, s.subplot_index).second)
            throw InputError("row " + std::to_string(row) + ": duplicate (cluster_id, "
                             "subplot_index) = (" + s.cluster_id + ", " +
                             std::to_string(s.subplot_index) + ")");

        const auto it = cluster_pos.find(s.cluster_id);
        if (it == cluster_pos.end()) {
            cluster_pos[s.cluster_id] = ds.plots.size();
            ClusterPlot p;
            p.cluster_id = s.cluster_id;
            p.panel_year = panel_year;
            p.stratum_id = stratum_id;
            p.subplots.push_back(std::move(s));
            ds.plots.push_back(std::move(p));
        } else {
            ClusterPlot& p = ds.plots[it->second];
            if (p.panel_year != panel_year)
                throw InputError("row " + std::to_string(row) + ": cluster " + s.cluster_id +
                                 " spans panel years " + std::to_string(p.panel_year) + " and " +
                                 std::to_string(panel_year));
            if (p.stratum_id != stratum_id)
                throw InputError("row " + std::to_string(row) + ": cluster " + s.cluster_id +
                                 " spans strata " + p.stratum_id + " and " + stratum_id);
            p.subplots.push_back(std::move(s));
        }
    }
    return ds;
}

} // namespace closs::survey
