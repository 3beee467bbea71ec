#include "spacewave/samples_io.hpp"

#include "spacewave/csv.hpp"
#include "spacewave/error.hpp"

#include <fstream>

namespace spacewave {

namespace {

constexpr int kSamplesFormat = 1;

std::string column_name(const BlockRef& b, Eigen::Index i) {
    if (b.rows * b.cols == 1) return b.name;
    const Eigen::Index r = i % b.rows;
    const Eigen::Index c = i / b.rows;
    if (b.cols == 1) return std::string(b.name) + "[" + std::to_string(r) + "]";
    return std::string(b.name) + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
}

}  // namespace

void write_samples(const std::filesystem::path& dir, const PosteriorSamples& samples, const ModelContext& ctx,
                   const SpectraDataset& ds, const nlohmann::json& data_source) {
    std::filesystem::create_directories(dir);
    if (samples.draws.empty()) throw Error(ErrorKind::validation, "no kept draws to write");
    nlohmann::json dims = nlohmann::json::object();
    nlohmann::json files = nlohmann::json::array();

    // one pass over the blocks of the first draw decides the files
    std::vector<std::string> names;
    visit_blocks(samples.draws.front(), [&](const BlockRef& b) {
        dims[b.name] = {b.rows, b.cols};
        if (b.rows * b.cols > 0) names.emplace_back(b.name);
    });
    for (const std::string& name : names) {
        const std::filesystem::path path = dir / (name + ".csv");
        std::ofstream os(path, std::ios::binary);
        if (!os) throw Error(ErrorKind::io, "cannot write " + path.string());
        bool header_done = false;
        for (std::size_t d = 0; d < samples.draws.size(); ++d) {
            visit_blocks(samples.draws[d], [&](const BlockRef& b) {
                if (name != b.name) return;
                const Eigen::Index n = b.rows * b.cols;
                if (!header_done) {
                    os << "iteration";
                    for (Eigen::Index i = 0; i < n; ++i) os << ',' << column_name(b, i);
                    os << '\n';
                    header_done = true;
                }
                os << samples.iterations[d];
                for (Eigen::Index i = 0; i < n; ++i) os << ',' << format_double(b.data[i]);
                os << '\n';
            });
        }
        files.push_back(name + ".csv");
    }

    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : ctx.cells) cells.push_back({ds.sites.ids[c.site], ds.genus_ids[c.genus]});
    nlohmann::json acceptance = nlohmann::json::object();
    for (const auto& [k, v] : samples.acceptance) acceptance[k] = v;
    nlohmann::json steps = nlohmann::json::object();
    for (const auto& [k, v] : samples.step_sizes) steps[k] = std::vector<double>(v.data(), v.data() + v.size());
    const Schedule& s = samples.schedule;
    const nlohmann::json manifest = {
        {"format", kSamplesFormat},
        {"schedule", {{"n_iter", s.n_iter}, {"n_burn", s.n_burn}, {"thin", s.thin}, {"n_keep", s.n_keep}, {"seed", s.seed}}},
        {"n_draws", samples.draws.size()},
        {"config", to_json(ctx.config)},
        {"config_hash", config_hash(ctx.config)},
        {"dims", dims},
        {"files", files},
        {"cells", cells},
        {"genus_ids", ds.genus_ids},
        {"site_ids", ds.sites.ids},
        {"acceptance", acceptance},
        {"step_sizes", steps},
        {"data", data_source},
    };
    std::ofstream os(dir / "manifest.json", std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

nlohmann::json read_samples_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::io, "cannot read " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, path.string() + ": " + e.what());
    }
}

PosteriorSamples read_samples(const std::filesystem::path& dir, const ModelContext& ctx) {
    const nlohmann::json m = read_samples_manifest(dir);
    PosteriorSamples out;
    try {
        const auto& s = m.at("schedule");
        out.schedule = {s.at("n_iter").get<std::int64_t>(), s.at("n_burn").get<std::int64_t>(),
                        s.at("thin").get<std::int64_t>(), s.at("n_keep").get<std::int64_t>(),
                        s.at("seed").get<std::uint64_t>()};
        for (const auto& [k, v] : m.at("acceptance").items()) out.acceptance[k] = v.get<double>();
        for (const auto& [k, v] : m.at("step_sizes").items()) {
            const auto vals = v.get<std::vector<double>>();
            out.step_sizes[k] = Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, (dir / "manifest.json").string() + ": " + e.what());
    }
    const auto n_draws = m.at("n_draws").get<std::size_t>();
    const ChainState shape = zero_state(ctx);
    out.draws.assign(n_draws, shape);
    out.iterations.assign(n_draws, 0);
    std::vector<std::string> names;
    visit_blocks(shape, [&](const BlockRef& b) {
        if (b.rows * b.cols > 0) names.emplace_back(b.name);
    });
    for (const std::string& name : names) {
        const std::filesystem::path path = dir / (name + ".csv");
        const CsvTable t = read_csv(path);
        if (t.rows.size() != n_draws) {
            throw Error(ErrorKind::validation, path.string() + ": expected " + std::to_string(n_draws) + " draws");
        }
        for (std::size_t d = 0; d < n_draws; ++d) {
            const auto& row = t.rows[d];
            out.iterations[d] = static_cast<std::int64_t>(parse_double(row.at(0), path, t.line_numbers[d]));
            visit_blocks(out.draws[d], [&](const BlockRef& b) {
                if (name != b.name) return;
                const Eigen::Index n = b.rows * b.cols;
                if (static_cast<Eigen::Index>(row.size()) != n + 1) {
                    throw Error(ErrorKind::validation, path.string() + ": block shape does not match the model");
                }
                for (Eigen::Index i = 0; i < n; ++i) b.data[i] = parse_double(row[i + 1], path, t.line_numbers[d]);
            });
        }
    }
    return out;
}

}  // namespace spacewave
