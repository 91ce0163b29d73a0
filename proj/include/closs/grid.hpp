#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "closs/assist.hpp"
#include "closs/models.hpp"

namespace closs::grid {

// Row-major numeric grid with a declared no-data sentinel. Plain-text
// format: header lines ncols/nrows/cellarea_ha/nodata, then whitespace-
// separated cells.
struct GridRaster {
    std::size_t ncols = 0;
    std::size_t nrows = 0;
    double cell_area_ha = 0.0;
    double nodata = -9999.0;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    bool is_nodata(double v) const { return v == nodata; }
    double at(std::size_t row, std::size_t col) const { return values[row * ncols + col]; }

    void validate() const;
};

GridRaster load_grid(const std::string& path);
void save_grid(const GridRaster& g, const std::string& path);

// Population aggregates from the loss-year grid, optionally intersected
// with ALS height/year grids. Cell classification per window:
//   lambda_l:  FCL recode 1, eligible ALS year, height defined
//   lambda_cl: FCL recode 1 otherwise
//   lambda_n:  FCL recode 0
// Cells with no-data loss status are excluded from the population entirely
// (counted in excluded_nodata_cells). A loss-year value of 0 means no
// mapped loss. It is an error when eligible loss cells exist but none of
// them has a height.
assist::PopulationAggregates aggregate(const GridRaster& fcl_years,
                                       const GridRaster* als_height,
                                       const GridRaster* als_year,
                                       const model::PanelWindow& w);

// Per-cell working-model predictions (t/ha/a); no-data FCL cells stay
// no-data. Summing cells x cell_area reproduces the pixel-sum synthetic
// total.
GridRaster synthetic_map(const GridRaster& fcl_years,
                         const GridRaster* als_height,
                         const GridRaster* als_year,
                         const model::AlsFclModel& m,
                         const model::PanelWindow& w);

} // namespace closs::grid
