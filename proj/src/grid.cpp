#include "closs/grid.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "closs/table.hpp"

namespace closs::grid {

void GridRaster::validate() const {
    if (ncols == 0 || nrows == 0) throw InputError("grid dimensions must be positive");
    if (cell_area_ha <= 0.0) throw InputError("grid cell area must be > 0");
    if (values.size() != ncols * nrows)
        throw InputError("grid declares " + std::to_string(ncols * nrows) + " cells but has " +
                         std::to_string(values.size()));
}

GridRaster load_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open grid file: " + path);
    GridRaster g;
    bool saw_ncols = false, saw_nrows = false, saw_area = false, saw_nodata = false;
    std::string key;
    for (int i = 0; i < 4; ++i) {
        if (!(in >> key)) throw InputError("grid file " + path + ": truncated header");
        double value = 0.0;
        if (!(in >> value))
            throw InputError("grid file " + path + ": unparseable header value for " + key);
        if (key == "ncols") {
            g.ncols = static_cast<std::size_t>(value);
            saw_ncols = true;
        } else if (key == "nrows") {
            g.nrows = static_cast<std::size_t>(value);
            saw_nrows = true;
        } else if (key == "cellarea_ha") {
            g.cell_area_ha = value;
            saw_area = true;
        } else if (key == "nodata") {
            g.nodata = value;
            saw_nodata = true;
        } else {
            throw InputError("grid file " + path + ": unknown header key '" + key + "'");
        }
    }
    if (!saw_ncols || !saw_nrows || !saw_area || !saw_nodata)
        throw InputError("grid file " + path +
                         ": header must declare ncols, nrows, cellarea_ha, nodata");
    double v;
    while (in >> v) g.values.push_back(v);
    try {
        g.validate();
    } catch (const InputError& e) {
        throw InputError("grid file " + path + ": " + e.what());
    }
    return g;
}

void save_grid(const GridRaster& g, const std::string& path) {
    g.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write grid file: " + path);
    out << "ncols " << g.ncols << "\n"
        << "nrows " << g.nrows << "\n"
        << "cellarea_ha " << run::Table::format_number(g.cell_area_ha) << "\n"
        << "nodata " << run::Table::format_number(g.nodata) << "\n";
    for (std::size_t r = 0; r < g.nrows; ++r) {
        for (std::size_t c = 0; c < g.ncols; ++c) {
            if (c) out << " ";
            out << run::Table::format_number(g.at(r, c));
        }
        out << "\n";
    }
}

namespace {

void check_compatible(const GridRaster& a, const GridRaster& b, const char* name) {
    if (a.ncols != b.ncols || a.nrows != b.nrows)
        throw InputError(std::string("grid dimension mismatch: ") + name);
    if (a.cell_area_ha != b.cell_area_ha)
        throw InputError(std::string("grid cell-area mismatch: ") + name);
}

std::optional<int> cell_loss_year(const GridRaster& fcl, std::size_t i) {
    const double v = fcl.values[i];
    if (fcl.is_nodata(v) || v == 0.0) return std::nullopt;
    return static_cast<int>(v);
}

} // namespace

assist::PopulationAggregates aggregate(const GridRaster& fcl_years, const GridRaster* als_height,
                                       const GridRaster* als_year, const model::PanelWindow& w) {
    fcl_years.validate();
    if (als_height) check_compatible(fcl_years, *als_height, "als_height");
    if (als_year) check_compatible(fcl_years, *als_year, "als_year");
    const bool with_als = als_height != nullptr && als_year != nullptr;

    assist::PopulationAggregates a;
    std::size_t n_cl = 0, n_n = 0, n_l = 0, n_pop = 0;
    std::size_t eligible_without_height = 0;
    double height_sum = 0.0;
    for (std::size_t i = 0; i < fcl_years.values.size(); ++i) {
        if (fcl_years.is_nodata(fcl_years.values[i])) {
            ++a.excluded_nodata_cells;
            continue;
        }
        ++n_pop;
        const bool flag = model::recode_fcl(cell_loss_year(fcl_years, i), w);
        if (!flag) {
            ++n_n;
            continue;
        }
        bool eligible = false;
        if (with_als && !als_year->is_nodata(als_year->values[i]))
            eligible = model::als_eligible(static_cast<int>(als_year->values[i]), w);
        if (eligible) {
            const double h = als_height->values[i];
            if (als_height->is_nodata(h)) {
                // usable acquisition year but no height: fall back to the
                // FCL class, counted so the caller can see the gap
                ++eligible_without_height;
                ++n_cl;
            } else {
                ++n_l;
                height_sum += h;
                a.heights_l.push_back(h);
            }
        } else {
            ++n_cl;
        }
    }
    if (n_l == 0 && eligible_without_height > 0)
        throw InputError("ALS-eligible loss cells present but all heights are no-data");
    const double area = fcl_years.cell_area_ha;
    a.lambda_ha = area * static_cast<double>(n_pop);
    a.lambda_cl_ha = area * static_cast<double>(n_cl);
    a.lambda_n_ha = area * static_cast<double>(n_n);
    if (with_als) {
        a.lambda_l_ha = area * static_cast<double>(n_l);
        if (n_l > 0) a.xbar_l_m = height_sum / static_cast<double>(n_l);
    }
    if (n_pop == 0) throw InputError("grid has no cells with defined FCL status");
    a.validate();
    return a;
}

GridRaster synthetic_map(const GridRaster& fcl_years, const GridRaster* als_height,
                         const GridRaster* als_year, const model::AlsFclModel& m,
                         const model::PanelWindow& w) {
    fcl_years.validate();
    if (als_height) check_compatible(fcl_years, *als_height, "als_height");
    if (als_year) check_compatible(fcl_years, *als_year, "als_year");
    const bool with_als = als_height != nullptr && als_year != nullptr;

    GridRaster out;
    out.ncols = fcl_years.ncols;
    out.nrows = fcl_years.nrows;
    out.cell_area_ha = fcl_years.cell_area_ha;
    out.nodata = -9999.0;
    out.values.resize(fcl_years.values.size(), out.nodata);
    for (std::size_t i = 0; i < fcl_years.values.size(); ++i) {
        if (fcl_years.is_nodata(fcl_years.values[i])) continue;
        survey::SubPlotRecord s;
        s.fcl_loss_year = cell_loss_year(fcl_years, i);
        if (with_als && !als_year->is_nodata(als_year->values[i]) &&
            !als_height->is_nodata(als_height->values[i])) {
            s.als_year = static_cast<int>(als_year->values[i]);
            s.als_height = als_height->values[i];
        }
        out.values[i] = model::predict_subplot(s, m, w);
    }
    return out;
}

} // namespace closs::grid
