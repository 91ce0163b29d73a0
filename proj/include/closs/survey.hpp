#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "closs/errors.hpp"

namespace closs::survey {

// One sub-plot observation. c_loss is the annualized gross C-stock loss
// (t/ha/a). domain_bits holds the named land-use flags declared by the
// owning dataset; bit 0 is always "forest".
struct SubPlotRecord {
    std::string cluster_id;
    int subplot_index = 0;
    double c_loss = 0.0;
    std::uint32_t domain_bits = 0;
    std::optional<int> fcl_loss_year;   // mapped canopy-loss year, absent = none
    std::optional<double> als_height;   // m; present iff als_year present
    std::optional<int> als_year;

    bool in_domain(std::uint32_t bit) const { return (domain_bits >> bit) & 1u; }
};

// A sample plot: the cluster of m_i sub-plots measured in one panel year.
struct ClusterPlot {
    std::string cluster_id;
    int panel_year = 0;
    std::string stratum_id;
    std::vector<SubPlotRecord> subplots;

    std::size_t m() const { return subplots.size(); }
};

struct Stratum {
    std::string stratum_id;
    double lambda_ha = 0.0; // known area, > 0
};

struct SurveyDataset {
    std::vector<Stratum> strata;
    std::vector<ClusterPlot> plots;
    int interval_years = 5; // remeasurement interval
    std::vector<std::string> domain_names{"forest"};

    const Stratum& stratum(const std::string& id) const;
    std::vector<int> panel_years() const; // sorted, unique
};

// Restricts an estimate to one named land-use flag, or selects all land.
class DomainSelector {
public:
    static DomainSelector all() { return DomainSelector{}; }
    static DomainSelector named(std::string flag) {
        DomainSelector d;
        d.flag_ = std::move(flag);
        return d;
    }

    bool is_all() const { return !flag_.has_value(); }
    const std::string& flag() const { return *flag_; }
    std::string label() const { return flag_.value_or("all"); }

private:
    std::optional<std::string> flag_;
};

// DomainSelector resolved against a dataset's declared flags: the bit to
// test, or none for the all-land selector. Resolution fails with InputError
// when the flag is not declared.
struct ResolvedDomain {
    std::optional<std::uint32_t> bit;

    bool contains(const SubPlotRecord& s) const {
        return !bit || s.in_domain(*bit);
    }
};

ResolvedDomain resolve_domain(const SurveyDataset& ds, const DomainSelector& d);

// Eq.-style cluster/domain mean: sum of in-domain sub-plot losses divided by
// m_i, no matter how many sub-plots fall inside the domain.
double cluster_domain_mean(const ClusterPlot& plot, const ResolvedDomain& d);

// Partition of the sample into annual panels keyed by panel year.
std::map<int, std::vector<const ClusterPlot*>> split_panels(const SurveyDataset& ds);

// Column mapping and parsing options for the plot/strata files.
struct LoadSchema {
    char delimiter = ',';
    // logical name -> header name in the file; unset entries use the
    // logical name itself.
    std::map<std::string, std::string> columns;
    // extra boolean columns to register as additional domain flags
    std::vector<std::string> extra_domain_columns;
};

// Loads and validates the plot + strata files. Errors carry the offending
// row number. Row count is preserved: one SubPlotRecord per data line.
SurveyDataset load_dataset(const std::string& plot_path,
                           const std::string& strata_path,
                           int interval_years = 5,
                           const LoadSchema& schema = {});

std::vector<Stratum> load_strata(const std::string& path, char delimiter = ',');

} // namespace closs::survey
