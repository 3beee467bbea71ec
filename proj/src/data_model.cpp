#include "spacewave/data_model.hpp"

#include "spacewave/csv.hpp"
#include "spacewave/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

namespace spacewave {

WavelengthGrid::WavelengthGrid(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) {
        throw Error(ErrorKind::validation, "wavelength grid needs at least 2 points");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw Error(ErrorKind::validation, "wavelength grid has a non-finite value");
        }
        if (i > 0 && values_[i] <= values_[i - 1]) {
            throw Error(ErrorKind::validation, "wavelength grid must be strictly increasing");
        }
    }
}

WavelengthGrid WavelengthGrid::linspace(double lo, double hi, std::size_t count) {
    if (count < 2 || !(hi > lo)) {
        throw Error(ErrorKind::validation, "grid spec needs lo < hi and count >= 2");
    }
    std::vector<double> v(count);
    const double step = (hi - lo) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) {
        v[i] = lo + step * static_cast<double>(i);
    }
    v.back() = hi;
    return WavelengthGrid(std::move(v));
}

std::string to_string(CoordinateSystem c) {
    return c == CoordinateSystem::lonlat ? "lonlat" : "planar";
}

CoordinateSystem coordinate_system_from_string(const std::string& s) {
    if (s == "lonlat") return CoordinateSystem::lonlat;
    if (s == "planar") return CoordinateSystem::planar;
    throw Error(ErrorKind::validation, "unknown coordinate system '" + s + "'");
}

int SiteTable::find(const std::string& id) const {
    auto it = std::find(ids.begin(), ids.end(), id);
    return it == ids.end() ? -1 : static_cast<int>(it - ids.begin());
}

void SiteTable::validate() const {
    std::set<std::string> seen;
    for (const auto& id : ids) {
        if (!seen.insert(id).second) {
            throw Error(ErrorKind::validation, "duplicate site_id '" + id + "'");
        }
    }
    if (static_cast<std::size_t>(coords.rows()) != ids.size() ||
        static_cast<std::size_t>(covariates.rows()) != ids.size() ||
        static_cast<std::size_t>(covariates.cols()) != covariate_names.size()) {
        throw Error(ErrorKind::validation, "site table dimensions are inconsistent");
    }
    if (!coords.allFinite()) {
        throw Error(ErrorKind::validation, "site coordinates must be finite");
    }
    if (!covariates.allFinite()) {
        throw Error(ErrorKind::validation, "site covariates must be finite and non-missing");
    }
}

void SpectraDataset::validate() const {
    sites.validate();
    if (records.empty()) {
        throw Error(ErrorKind::validation, "no records");
    }
    if (static_cast<std::size_t>(responses.rows()) != grid.size() ||
        static_cast<std::size_t>(responses.cols()) != records.size()) {
        throw Error(ErrorKind::validation, "response matrix does not match grid x records");
    }
    std::set<std::tuple<int, int, std::string>> keys;
    for (const auto& r : records) {
        if (r.site < 0 || static_cast<std::size_t>(r.site) >= sites.size()) {
            throw Error(ErrorKind::validation, "record references an unknown site");
        }
        if (r.genus < 0 || static_cast<std::size_t>(r.genus) >= genus_ids.size()) {
            throw Error(ErrorKind::validation, "record references an unknown genus");
        }
        if (!keys.emplace(r.site, r.genus, r.replicate_id).second) {
            throw Error(ErrorKind::validation, "duplicate (site, genus, replicate) key '" + sites.ids[r.site] + "," +
                                                   genus_ids[r.genus] + "," + r.replicate_id + "'");
        }
    }
    if (!responses.allFinite()) {
        throw Error(ErrorKind::validation, "responses must be finite");
    }
}

SpectraDataset SpectraDataset::subset(const std::vector<int>& record_rows) const {
    SpectraDataset out;
    out.grid = grid;
    out.sites = sites;
    out.genus_ids = genus_ids;
    out.responses.resize(responses.rows(), static_cast<Eigen::Index>(record_rows.size()));
    out.records.reserve(record_rows.size());
    for (std::size_t k = 0; k < record_rows.size(); ++k) {
        out.records.push_back(records.at(record_rows[k]));
        out.responses.col(static_cast<Eigen::Index>(k)) = responses.col(record_rows[k]);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        throw Error(ErrorKind::io, "failed to format number");
    }
    return std::string(buf, ptr);
}

SiteTable read_sites(const std::filesystem::path& path, CoordinateSystem units) {
    CsvTable table = read_csv(path);
    const auto& header = table.header;
    if (header.size() < 3 || header[0] != "site_id" || header[1] != "lon" || header[2] != "lat") {
        throw Error(ErrorKind::parse, path.string() + ": header must start with site_id,lon,lat");
    }
    SiteTable sites;
    sites.units = units;
    sites.covariate_names.assign(header.begin() + 3, header.end());
    const auto n = static_cast<Eigen::Index>(table.rows.size());
    const auto p = static_cast<Eigen::Index>(sites.covariate_names.size());
    sites.coords.resize(n, 2);
    sites.covariates.resize(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = table.rows[i];
        const std::size_t line = table.line_numbers[i];
        if (row.size() != header.size()) {
            throw Error(ErrorKind::parse, path.string() + ": row " + std::to_string(line) + " has " +
                                              std::to_string(row.size()) + " fields, expected " +
                                              std::to_string(header.size()));
        }
        sites.ids.push_back(row[0]);
        sites.coords(i, 0) = parse_double(row[1], path, line);
        sites.coords(i, 1) = parse_double(row[2], path, line);
        for (Eigen::Index j = 0; j < p; ++j) {
            sites.covariates(i, j) = parse_double(row[3 + j], path, line);
        }
    }
    sites.validate();
    return sites;
}

SpectraDataset load_dataset(const std::filesystem::path& spectra_path,
                            const std::filesystem::path& sites_path,
                            const LoadOptions& options) {
    SpectraDataset ds;
    ds.grid = WavelengthGrid::linspace(options.grid.lo, options.grid.hi, options.grid.count);
    ds.sites = read_sites(sites_path, options.units);

    CsvTable table = read_csv(spectra_path);
    const auto& header = table.header;
    if (header.size() < 3 || header[0] != "site_id" || header[1] != "genus_id" || header[2] != "replicate_id") {
        throw Error(ErrorKind::parse, spectra_path.string() + ": header must start with site_id,genus_id,replicate_id");
    }
    const std::size_t n_wave = ds.grid.size();
    if (header.size() - 3 != n_wave) {
        throw Error(ErrorKind::validation, spectra_path.string() + ": header has " + std::to_string(header.size() - 3) +
                                               " wavelength columns but the grid has " + std::to_string(n_wave));
    }
    if (table.rows.empty()) {
        throw Error(ErrorKind::validation, "no records");
    }

    std::map<std::string, int> genus_index;
    ds.responses.resize(static_cast<Eigen::Index>(n_wave), static_cast<Eigen::Index>(table.rows.size()));
    for (std::size_t k = 0; k < table.rows.size(); ++k) {
        const auto& row = table.rows[k];
        const std::size_t line = table.line_numbers[k];
        if (row.size() != header.size()) {
            throw Error(ErrorKind::validation, spectra_path.string() + ": row " + std::to_string(line) +
                                                   " has " + std::to_string(row.size() - std::min<std::size_t>(3, row.size())) +
                                                   " values, expected " + std::to_string(n_wave));
        }
        SpectrumRecord rec;
        rec.site = ds.sites.find(row[0]);
        if (rec.site < 0) {
            throw Error(ErrorKind::validation, spectra_path.string() + ": row " + std::to_string(line) +
                                                   " references unknown site_id '" + row[0] + "'");
        }
        auto [it, inserted] = genus_index.emplace(row[1], static_cast<int>(ds.genus_ids.size()));
        if (inserted) {
            ds.genus_ids.push_back(row[1]);
        }
        rec.genus = it->second;
        rec.replicate_id = row[2];
        for (std::size_t m = 0; m < n_wave; ++m) {
            double v = parse_double(row[3 + m], spectra_path, line);
            if (options.scale == ResponseScale::raw) {
                if (!(v > 0.0)) {
                    throw Error(ErrorKind::validation, spectra_path.string() + ": row " + std::to_string(line) +
                                                           " has a non-positive raw reflectance");
                }
                v = std::log(v);
            }
            ds.responses(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = v;
        }
        ds.records.push_back(std::move(rec));
    }
    ds.validate();
    return ds;
}

void write_sites(const SiteTable& sites, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorKind::io, "cannot write " + path.string());
    }
    out << "site_id,lon,lat";
    for (const auto& name : sites.covariate_names) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < sites.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out << sites.ids[i] << ',' << format_double(sites.coords(r, 0)) << ',' << format_double(sites.coords(r, 1));
        for (Eigen::Index j = 0; j < sites.covariates.cols(); ++j) {
            out << ',' << format_double(sites.covariates(r, j));
        }
        out << '\n';
    }
}

void write_dataset(const SpectraDataset& ds,
                   const std::filesystem::path& spectra_path,
                   const std::filesystem::path& sites_path) {
    write_sites(ds.sites, sites_path);
    std::ofstream out(spectra_path, std::ios::binary);
    if (!out) {
        throw Error(ErrorKind::io, "cannot write " + spectra_path.string());
    }
    out << "site_id,genus_id,replicate_id";
    for (std::size_t m = 0; m < ds.n_wave(); ++m) out << ",w" << (m + 1);
    out << '\n';
    for (std::size_t k = 0; k < ds.records.size(); ++k) {
        const auto& r = ds.records[k];
        out << ds.sites.ids[r.site] << ',' << ds.genus_ids[r.genus] << ',' << r.replicate_id;
        for (Eigen::Index m = 0; m < ds.responses.rows(); ++m) {
            out << ',' << format_double(ds.responses(m, static_cast<Eigen::Index>(k)));
        }
        out << '\n';
    }
}

Eigen::MatrixXd DesignIndex::record_covariates() const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(m_s.size()), centered_X.cols());
    for (std::size_t k = 0; k < m_s.size(); ++k) {
        out.row(static_cast<Eigen::Index>(k)) = centered_X.row(m_s[k]);
    }
    return out;
}

Eigen::MatrixXd DesignIndex::standardize(const Eigen::MatrixXd& raw) const {
    Eigen::MatrixXd out = raw;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        out.col(j) = (out.col(j).array() - covariate_mean(j)) / covariate_scale(j);
    }
    return out;
}

int DesignIndex::full_cell_column(int record, int n_genera) const {
    const auto& c = cells.at(m_sg.at(record));
    return c.site * n_genera + c.genus;
}

int DesignIndex::find_cell(int site, int genus) const {
    if (genus < 0 || static_cast<std::size_t>(genus) >= genus_cells.size()) return -1;
    for (int c : genus_cells[genus]) {
        if (cells[c].site == site) return c;
    }
    return -1;
}

DesignIndex build_design(const SpectraDataset& ds) {
    DesignIndex d;
    const std::size_t n_rep = ds.n_records();
    if (n_rep == 0) {
        throw Error(ErrorKind::validation, "no records");
    }
    std::map<std::pair<int, int>, int> cell_of;  // (genus, site) -> placeholder
    for (const auto& r : ds.records) {
        cell_of.emplace(std::make_pair(r.genus, r.site), 0);
    }
    d.genus_cells.assign(ds.n_genera(), {});
    for (auto& [key, idx] : cell_of) {
        idx = static_cast<int>(d.cells.size());
        d.cells.push_back({key.second, key.first});
        d.genus_cells[key.first].push_back(idx);
    }
    d.m_s.reserve(n_rep);
    d.m_sg.reserve(n_rep);
    for (const auto& r : ds.records) {
        d.m_s.push_back(r.site);
        d.m_sg.push_back(cell_of.at({r.genus, r.site}));
    }

    const Eigen::MatrixXd& raw = ds.sites.covariates;
    const Eigen::Index p = raw.cols();
    d.covariate_mean.resize(p);
    d.covariate_scale.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        double mean = 0.0;
        for (int s : d.m_s) mean += raw(s, j);
        mean /= static_cast<double>(n_rep);
        double ss = 0.0;
        for (int s : d.m_s) ss += (raw(s, j) - mean) * (raw(s, j) - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n_rep));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            throw Error(ErrorKind::validation,
                        "covariate '" + ds.sites.covariate_names[j] + "' has zero variance over records");
        }
        d.covariate_mean(j) = mean;
        d.covariate_scale(j) = sd;
    }
    d.centered_X = d.standardize(raw);
    return d;
}

std::vector<double> make_knot_grid(double lo, double hi, double spacing) {
    if (!(lo < hi) || !(spacing > 0.0)) {
        throw Error(ErrorKind::validation, "knot grid needs lo < hi and spacing > 0");
    }
    const double steps = (hi - lo) / spacing;
    const double rounded = std::round(steps);
    if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps)) {
        throw Error(ErrorKind::validation, "knot range " + format_double(lo) + "-" + format_double(hi) +
                                               " is not a multiple of spacing " + format_double(spacing));
    }
    const auto n = static_cast<std::size_t>(rounded) + 1;
    std::vector<double> knots(n);
    for (std::size_t i = 0; i < n; ++i) {
        knots[i] = lo + spacing * static_cast<double>(i);
    }
    knots.back() = hi;
    return knots;
}

double site_distance(const Eigen::Vector2d& a, const Eigen::Vector2d& b, CoordinateSystem units) {
    if (units == CoordinateSystem::planar) {
        return (a - b).norm();
    }
    constexpr double earth_radius_km = 6371.0088;
    constexpr double deg = std::numbers::pi / 180.0;
    const double lat1 = a(1) * deg;
    const double lat2 = b(1) * deg;
    const double dlat = lat2 - lat1;
    const double dlon = (b(0) - a(0)) * deg;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1) * std::cos(lat2) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * earth_radius_km * std::asin(std::min(1.0, std::sqrt(h)));
}

Eigen::MatrixXd cross_distance(const Eigen::MatrixX2d& from, const Eigen::MatrixX2d& to, CoordinateSystem units) {
    Eigen::MatrixXd d(from.rows(), to.rows());
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
        for (Eigen::Index j = 0; j < to.rows(); ++j) {
            d(i, j) = site_distance(from.row(i).transpose(), to.row(j).transpose(), units);
        }
    }
    return d;
}

Eigen::MatrixXd distance_matrix(const Eigen::MatrixX2d& coords, CoordinateSystem units) {
    const Eigen::Index n = coords.rows();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            d(i, j) = d(j, i) = site_distance(coords.row(i).transpose(), coords.row(j).transpose(), units);
        }
    }
    return d;
}

}  // namespace spacewave
