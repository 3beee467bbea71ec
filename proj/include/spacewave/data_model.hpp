#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace spacewave {

/// Strictly increasing wavelengths in nm.
class WavelengthGrid {
public:
    WavelengthGrid() = default;
    explicit WavelengthGrid(std::vector<double> values);

    /// `count` equally spaced wavelengths covering [lo, hi].
    static WavelengthGrid linspace(double lo, double hi, std::size_t count);

    [[nodiscard]] std::size_t size() const { return values_.size(); }
    [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
    [[nodiscard]] const std::vector<double>& values() const { return values_; }
    [[nodiscard]] double front() const { return values_.front(); }
    [[nodiscard]] double back() const { return values_.back(); }

private:
    std::vector<double> values_;
};

enum class CoordinateSystem { lonlat, planar };

[[nodiscard]] std::string to_string(CoordinateSystem c);
[[nodiscard]] CoordinateSystem coordinate_system_from_string(const std::string& s);

struct SiteTable {
    std::vector<std::string> ids;
    Eigen::MatrixX2d coords;  // (lon, lat) degrees or planar (x, y)
    std::vector<std::string> covariate_names;
    Eigen::MatrixXd covariates;  // N_s x p, raw
    CoordinateSystem units = CoordinateSystem::lonlat;

    [[nodiscard]] std::size_t size() const { return ids.size(); }
    [[nodiscard]] std::size_t n_covariates() const { return covariate_names.size(); }
    /// Row of `id`, or -1.
    [[nodiscard]] int find(const std::string& id) const;
    void validate() const;
};

struct SpectrumRecord {
    int site = 0;   // row in SiteTable
    int genus = 0;  // index into SpectraDataset::genus_ids
    std::string replicate_id;
};

/// Curves at sites. Responses are stored on the log scale, one column per record.
struct SpectraDataset {
    WavelengthGrid grid;
    SiteTable sites;
    std::vector<std::string> genus_ids;
    std::vector<SpectrumRecord> records;
    Eigen::MatrixXd responses;  // N_wave x N_rep

    [[nodiscard]] std::size_t n_records() const { return records.size(); }
    [[nodiscard]] std::size_t n_sites() const { return sites.size(); }
    [[nodiscard]] std::size_t n_genera() const { return genus_ids.size(); }
    [[nodiscard]] std::size_t n_wave() const { return grid.size(); }

    void validate() const;

    /// Copy keeping only the listed records (in the given order). Sites and genera are kept intact.
    [[nodiscard]] SpectraDataset subset(const std::vector<int>& record_rows) const;
};

enum class ResponseScale { log, raw };

struct GridSpec {
    double lo = 450.0;
    double hi = 950.0;
    std::size_t count = 500;
};

struct LoadOptions {
    GridSpec grid;
    CoordinateSystem units = CoordinateSystem::lonlat;
    ResponseScale scale = ResponseScale::log;
};

[[nodiscard]] SpectraDataset load_dataset(const std::filesystem::path& spectra_path,
                                          const std::filesystem::path& sites_path,
                                          const LoadOptions& options);

/// Writes both CSVs in the schemas `load_dataset` reads. Responses are written on the log scale.
void write_dataset(const SpectraDataset& ds,
                   const std::filesystem::path& spectra_path,
                   const std::filesystem::path& sites_path);

void write_sites(const SiteTable& sites, const std::filesystem::path& path);
[[nodiscard]] SiteTable read_sites(const std::filesystem::path& path, CoordinateSystem units);

/// Index arrays for the imbalanced design plus covariates standardized over records.
struct DesignIndex {
    std::vector<int> m_s;   // record -> site row
    std::vector<int> m_sg;  // record -> cell
    struct Cell {
        int site;
        int genus;
    };
    std::vector<Cell> cells;                      // observed (site, genus) pairs, genus-major
    std::vector<std::vector<int>> genus_cells;    // cells per genus, ascending site
    Eigen::MatrixXd centered_X;                   // N_s x p, standardized
    Eigen::VectorXd covariate_mean;               // raw-scale record-expanded mean
    Eigen::VectorXd covariate_scale;              // raw-scale record-expanded sd (divisor N_rep)

    /// M_s X: one row per record.
    [[nodiscard]] Eigen::MatrixXd record_covariates() const;
    /// Applies the stored standardization to raw covariate rows.
    [[nodiscard]] Eigen::MatrixXd standardize(const Eigen::MatrixXd& raw) const;
    /// Full-width M_sg column (site * N_g + genus) for record k.
    [[nodiscard]] int full_cell_column(int record, int n_genera) const;
    /// Cell index of (site, genus), or -1 when unobserved.
    [[nodiscard]] int find_cell(int site, int genus) const;
};

[[nodiscard]] DesignIndex build_design(const SpectraDataset& ds);

/// lo, lo + spacing, ..., hi. The range must be an integral number of spacings.
[[nodiscard]] std::vector<double> make_knot_grid(double lo, double hi, double spacing);

/// Great-circle km for lon/lat, Euclidean otherwise.
[[nodiscard]] double site_distance(const Eigen::Vector2d& a, const Eigen::Vector2d& b, CoordinateSystem units);
[[nodiscard]] Eigen::MatrixXd distance_matrix(const Eigen::MatrixX2d& coords, CoordinateSystem units);
[[nodiscard]] Eigen::MatrixXd cross_distance(const Eigen::MatrixX2d& from, const Eigen::MatrixX2d& to,
                                             CoordinateSystem units);

/// Shortest round-trip decimal form of `v`.
[[nodiscard]] std::string format_double(double v);

}  // namespace spacewave
