// spacewave: simulate, fit, predict, cross-validate, orthogonalize and compare space-wavelength models.

#include "spacewave/config.hpp"
#include "spacewave/csv.hpp"
#include "spacewave/data_model.hpp"
#include "spacewave/error.hpp"
#include "spacewave/likelihood.hpp"
#include "spacewave/orthogonalize.hpp"
#include "spacewave/parallel.hpp"
#include "spacewave/predict.hpp"
#include "spacewave/samples_io.hpp"
#include "spacewave/sampler.hpp"
#include "spacewave/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef SPACEWAVE_VERSION
#define SPACEWAVE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spacewave;

namespace {

constexpr int kUsageExit = 64;

struct CommonArgs {
    std::vector<std::string> configs;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    int threads = 1;
};

struct DataArgs {
    std::string bundle;
    std::string spectra;
    std::string sites;
    std::string grid = "450,950,500";
    bool planar = false;
    bool raw = false;
};

// Wall-clock per stage plus the files written, for run_manifest.json.
class RunManifest {
public:
    explicit RunManifest(std::string command) : command_(std::move(command)) {}

    template <class F>
    auto stage(const std::string& name, F&& f) {
        spdlog::info("{}...", name);
        const auto t0 = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            record(name, t0);
        } else {
            auto r = f();
            record(name, t0);
            return r;
        }
    }

    void add_file(const fs::path& p) { files_.push_back(p); }
    void set(const std::string& key, json value) { extra_[key] = std::move(value); }

    void write(const fs::path& dir) const {
        json inventory = json::array();
        for (const auto& p : files_) {
            std::ifstream is(p, std::ios::binary);
            std::ostringstream buf;
            buf << is.rdbuf();
            const std::string bytes = buf.str();
            std::ostringstream hex;
            hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
            inventory.push_back({{"path", fs::relative(p, dir).generic_string()},
                                 {"bytes", bytes.size()},
                                 {"fnv1a64", hex.str()}});
        }
        json m = extra_;
        m["command"] = command_;
        m["version"] = SPACEWAVE_VERSION;
        m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                     std::to_string(EIGEN_MINOR_VERSION);
        m["timings_seconds"] = timings_;
        m["files"] = inventory;
        std::ofstream os(dir / "run_manifest.json", std::ios::binary);
        if (!os) throw Error(ErrorKind::io, "cannot write " + (dir / "run_manifest.json").string());
        os << m.dump(2) << '\n';
    }

private:
    void record(const std::string& name, std::chrono::steady_clock::time_point t0) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        timings_[name] = s;
        spdlog::debug("{} took {:.3f} s", name, s);
    }

    std::string command_;
    json extra_ = json::object();
    json timings_ = json::object();
    std::vector<fs::path> files_;
};

json read_json_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(ErrorKind::io, "cannot read " + p.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, p.string() + ": " + e.what());
    }
}

// Later files override earlier ones key by key.
ModelConfig merged_config(const std::vector<std::string>& paths, json base = json::object()) {
    for (const auto& p : paths) base.merge_patch(read_json_file(p));
    return config_from_json(base);
}

GridSpec parse_grid(const std::string& s) {
    GridSpec g;
    char c1 = 0;
    char c2 = 0;
    std::istringstream is(s);
    if (!(is >> g.lo >> c1 >> g.hi >> c2 >> g.count) || c1 != ',' || c2 != ',' || !is.eof()) {
        throw Error(ErrorKind::parse, "--grid expects lo,hi,count, got '" + s + "'");
    }
    return g;
}

json data_source(const DataArgs& a) {
    if (!a.bundle.empty()) return {{"bundle", a.bundle}};
    if (a.spectra.empty() || a.sites.empty()) {
        throw Error(ErrorKind::validation, "give --data <bundle dir> or both --spectra and --sites");
    }
    const GridSpec g = parse_grid(a.grid);
    return {{"spectra", a.spectra},
            {"sites", a.sites},
            {"grid", {{"lo", g.lo}, {"hi", g.hi}, {"count", g.count}}},
            {"units", a.planar ? "planar" : "lonlat"},
            {"scale", a.raw ? "raw" : "log"}};
}

SpectraDataset load_source(const json& src) {
    try {
        if (src.contains("bundle")) return load_bundle(src.at("bundle").get<std::string>());
        LoadOptions opt;
        opt.grid.lo = src.at("grid").at("lo").get<double>();
        opt.grid.hi = src.at("grid").at("hi").get<double>();
        opt.grid.count = src.at("grid").at("count").get<std::size_t>();
        opt.units = coordinate_system_from_string(src.at("units").get<std::string>());
        opt.scale = src.at("scale").get<std::string>() == "raw" ? ResponseScale::raw : ResponseScale::log;
        return load_dataset(src.at("spectra").get<std::string>(), src.at("sites").get<std::string>(), opt);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("data source: ") + e.what());
    }
}

bool has_data_args(const DataArgs& a) { return !a.bundle.empty() || !a.spectra.empty(); }

void add_common(CLI::App* cmd, CommonArgs& c, bool configs = true) {
    if (configs) cmd->add_option("--config", c.configs, "Model config JSON; repeat to layer overrides");
    cmd->add_option("--seed", c.seed, "Seed (overrides mcmc.seed)");
    cmd->add_option("--out", c.out, "Output directory")->required();
    cmd->add_option("--threads", c.threads, "Maximum worker threads")->check(CLI::PositiveNumber);
}

void add_data(CLI::App* cmd, DataArgs& d) {
    cmd->add_option("--data", d.bundle, "Dataset bundle directory (from simulate)");
    cmd->add_option("--spectra", d.spectra, "Spectra CSV");
    cmd->add_option("--sites", d.sites, "Sites CSV");
    cmd->add_option("--grid", d.grid, "Wavelength grid lo,hi,count");
    cmd->add_flag("--planar", d.planar, "Site coordinates are planar km rather than lon/lat");
    cmd->add_flag("--raw", d.raw, "Responses are raw reflectance (logged on load)");
}

std::ofstream open_out(const fs::path& p, RunManifest& m) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot write " + p.string());
    m.add_file(p);
    return os;
}

// Linear interpolation between order statistics.
double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string g(double v) { return format_double(v); }

// Fitted samples plus everything needed to rebuild their context.
struct FittedRun {
    SpectraDataset ds;
    DesignIndex design;
    ModelContext ctx;
    PosteriorSamples samples;
    json manifest;
};

FittedRun load_fitted(const fs::path& samples_dir, const DataArgs& data) {
    FittedRun r;
    r.manifest = read_samples_manifest(samples_dir);
    const ModelConfig cfg = config_from_json(r.manifest.at("config"));
    r.ds = has_data_args(data) ? load_source(data_source(data)) : load_source(r.manifest.at("data"));
    r.design = build_design(r.ds);
    r.ctx = make_context(r.ds, r.design, cfg);
    r.samples = read_samples(samples_dir, r.ctx);
    return r;
}

std::vector<NamedConfig> parse_models(const std::vector<std::string>& specs, const std::vector<std::string>& base) {
    std::vector<NamedConfig> out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw Error(ErrorKind::parse, "--model expects NAME=CONFIG.json, got '" + s + "'");
        }
        std::vector<std::string> layers = base;
        layers.push_back(s.substr(eq + 1));
        out.push_back({s.substr(0, eq), merged_config(layers)});
    }
    if (out.empty()) throw Error(ErrorKind::validation, "give at least one --model NAME=CONFIG.json");
    return out;
}

// ---- simulate ----

struct SimulateArgs {
    CommonArgs common;
    std::string benchmark = "tiny";
};

int cmd_simulate(const SimulateArgs& a) {
    RunManifest m("simulate");
    SynthSpec spec = benchmark_spec(a.benchmark);
    if (!a.common.configs.empty()) spec.config = merged_config(a.common.configs, to_json(spec.config));
    const std::uint64_t seed = a.common.seed.value_or(spec.config.mcmc.seed);
    const fs::path out = a.common.out;
    m.stage("simulate", [&] {
        Rng rng(seed);
        const SynthResult r = simulate(spec, rng);
        write_bundle(r, spec, a.benchmark, seed, out);
    });
    for (const char* f : {"spectra.csv", "sites.csv", "mean.csv", "truth.json", "bundle.json"}) m.add_file(out / f);
    m.set("seed", seed);
    m.set("config_hash", config_hash(spec.config));
    m.write(out);
    return 0;
}

// ---- fit ----

struct FitArgs {
    CommonArgs common;
    DataArgs data;
    std::int64_t checkpoint_every = 0;
    std::string resume;
};

int cmd_fit(const FitArgs& a) {
    RunManifest m("fit");
    ModelConfig cfg = merged_config(a.common.configs);
    if (a.common.seed) cfg.mcmc.seed = *a.common.seed;
    const json src = data_source(a.data);
    const SpectraDataset ds = m.stage("load", [&] { return load_source(src); });
    const DesignIndex design = build_design(ds);
    const ModelContext ctx = make_context(ds, design, cfg);
    spdlog::info("{} records, {} sites, {} genera, {} wavelengths", ctx.n_records(), ctx.n_sites(), ctx.n_genera(),
                 ctx.n_wave());
    const fs::path out = a.common.out;
    fs::create_directories(out);
    const fs::path ckpt = out / "checkpoint.bin";

    ChainRunner runner = a.resume.empty() ? ChainRunner(ctx) : ChainRunner::resume(ctx, a.resume);
    m.stage("mcmc", [&] {
        const std::int64_t chunk = std::max<std::int64_t>(1, cfg.mcmc.n_iter / 10);
        while (!runner.done()) {
            std::int64_t step = chunk - runner.iteration() % chunk;
            if (a.checkpoint_every > 0) step = std::min(step, a.checkpoint_every - runner.iteration() % a.checkpoint_every);
            runner.advance(step);
            if (a.checkpoint_every > 0 && runner.iteration() % a.checkpoint_every == 0) runner.save_checkpoint(ckpt);
            if (runner.iteration() % chunk == 0 || runner.done()) {
                spdlog::info("iteration {}/{}", runner.iteration(), cfg.mcmc.n_iter);
            }
        }
    });
    runner.save_checkpoint(ckpt);
    m.add_file(ckpt);
    const PosteriorSamples samples = runner.samples();
    const fs::path sdir = out / "samples";
    m.stage("write", [&] { write_samples(sdir, samples, ctx, ds, src); });
    for (const auto& e : fs::directory_iterator(sdir)) m.add_file(e.path());
    const DicResult d = m.stage("dic", [&] { return dic(samples, ctx); });
    {
        std::ofstream os = open_out(out / "dic.csv", m);
        os << "d_bar,d_hat,p_d,dic\n" << g(d.d_bar) << ',' << g(d.d_hat) << ',' << g(d.p_d) << ',' << g(d.dic) << '\n';
    }
    for (const auto& [k, v] : samples.acceptance) spdlog::info("acceptance {}: {:.3f}", k, v);
    m.set("seed", cfg.mcmc.seed);
    m.set("config_hash", config_hash(cfg));
    m.write(out);
    return 0;
}

// ---- predict ----

struct PredictArgs {
    CommonArgs common;
    DataArgs data;
    std::string samples;
    std::string targets;
    bool no_noise = false;
};

std::vector<PredictionTarget> read_targets(const fs::path& path, const FittedRun& f, std::vector<std::string>& labels) {
    const CsvTable t = read_csv(path);
    const auto col = [&](const std::string& name) -> int {
        const auto it = std::find(t.header.begin(), t.header.end(), name);
        return it == t.header.end() ? -1 : static_cast<int>(it - t.header.begin());
    };
    const int c_genus = col("genus_id");
    const int c_site = col("site_id");
    if (c_genus < 0 || c_site < 0) throw Error(ErrorKind::parse, path.string() + ": needs genus_id and site_id columns");
    const int c_x = col("x");
    const int c_y = col("y");
    std::vector<PredictionTarget> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& row = t.rows[i];
        const std::size_t line = t.line_numbers[i];
        PredictionTarget target;
        const auto g_it = std::find(f.ds.genus_ids.begin(), f.ds.genus_ids.end(), row[c_genus]);
        if (g_it == f.ds.genus_ids.end()) {
            throw Error(ErrorKind::validation,
                        path.string() + ":" + std::to_string(line) + ": genus '" + row[c_genus] + "' was not fitted");
        }
        target.genus = static_cast<int>(g_it - f.ds.genus_ids.begin());
        target.site = f.ds.sites.find(row[c_site]);
        if (target.site < 0) {
            if (c_x < 0 || c_y < 0) {
                throw Error(ErrorKind::parse, path.string() + ": new site '" + row[c_site] + "' needs x and y columns");
            }
            target.coord = {parse_double(row[c_x], path, line), parse_double(row[c_y], path, line)};
            target.covariates.resize(static_cast<Eigen::Index>(f.ds.sites.covariate_names.size()));
            for (std::size_t j = 0; j < f.ds.sites.covariate_names.size(); ++j) {
                const int c = col(f.ds.sites.covariate_names[j]);
                if (c < 0) {
                    throw Error(ErrorKind::parse,
                                path.string() + ": new sites need covariate column '" + f.ds.sites.covariate_names[j] + "'");
                }
                target.covariates(static_cast<Eigen::Index>(j)) = parse_double(row[c], path, line);
            }
        }
        labels.push_back(row[c_genus] + "@" + row[c_site]);
        out.push_back(target);
    }
    return out;
}

int cmd_predict(const PredictArgs& a) {
    RunManifest m("predict");
    const FittedRun f = m.stage("load", [&] { return load_fitted(a.samples, a.data); });
    std::vector<PredictionTarget> targets;
    std::vector<std::string> labels;
    if (a.targets.empty()) {
        // every fitted (site, genus) cell
        for (const auto& c : f.ctx.cells) {
            PredictionTarget t;
            t.genus = c.genus;
            t.site = c.site;
            targets.push_back(t);
            labels.push_back(f.ds.genus_ids[c.genus] + "@" + f.ds.sites.ids[c.site]);
        }
    } else {
        targets = read_targets(a.targets, f, labels);
    }
    const std::uint64_t seed = a.common.seed.value_or(derive_seed(f.ctx.config.mcmc.seed, 2));
    Rng rng(seed);
    const auto draws = m.stage("predict", [&] {
        return predict_spectra(f.samples, f.ctx, f.design, targets, rng, !a.no_noise);
    });
    const fs::path out = a.common.out;
    fs::create_directories(out);
    m.stage("write", [&] {
        std::ofstream os = open_out(out / "predictive_draws.csv", m);
        os << "target,draw,wavelength,value\n";
        for (std::size_t i = 0; i < draws.size(); ++i) {
            for (Eigen::Index d = 0; d < draws[i].rows(); ++d) {
                for (Eigen::Index t = 0; t < draws[i].cols(); ++t) {
                    os << labels[i] << ',' << d << ',' << g(f.ctx.grid[static_cast<std::size_t>(t)]) << ','
                       << g(draws[i](d, t)) << '\n';
                }
            }
        }
        std::ofstream ss = open_out(out / "predictions.csv", m);
        ss << "target,wavelength,mean,q05,q50,q95\n";
        for (std::size_t i = 0; i < draws.size(); ++i) {
            for (Eigen::Index t = 0; t < draws[i].cols(); ++t) {
                std::vector<double> v(draws[i].col(t).data(), draws[i].col(t).data() + draws[i].rows());
                ss << labels[i] << ',' << g(f.ctx.grid[static_cast<std::size_t>(t)]) << ',' << g(draws[i].col(t).mean())
                   << ',' << g(quantile(v, 0.05)) << ',' << g(quantile(v, 0.5)) << ',' << g(quantile(v, 0.95)) << '\n';
            }
        }
    });
    m.set("seed", seed);
    m.set("config_hash", config_hash(f.ctx.config));
    m.write(out);
    return 0;
}

// ---- crossval ----

struct ModelArgs {
    CommonArgs common;
    DataArgs data;
    std::vector<std::string> models;
    int folds = 10;
};

int cmd_crossval(const ModelArgs& a) {
    RunManifest m("crossval");
    std::vector<NamedConfig> models = parse_models(a.models, a.common.configs);
    const std::uint64_t seed = a.common.seed.value_or(models.front().config.mcmc.seed);
    const SpectraDataset ds = m.stage("load", [&] { return load_source(data_source(a.data)); });
    const CrossvalResult cv = m.stage("crossval", [&] { return crossval(ds, models, a.folds, seed, a.common.threads); });
    const fs::path out = a.common.out;
    fs::create_directories(out);
    {
        std::ofstream os = open_out(out / "scores.csv", m);
        os << "model,MSE,MAE,MCRPS,relative_MCRPS\n";
        for (const auto& r : cv.models) {
            os << r.model << ',' << g(r.mse) << ',' << g(r.mae) << ',' << g(r.mcrps) << ',' << g(r.relative_mcrps) << '\n';
        }
    }
    {
        std::ofstream os = open_out(out / "folds.csv", m);
        os << "model,fold,n_train,n_test,likelihood_terms,MSE,MAE,MCRPS\n";
        for (const auto& d : cv.folds) {
            os << d.model << ',' << d.fold << ',' << d.n_train << ',' << d.n_test << ',' << d.likelihood_terms << ','
               << g(d.mse) << ',' << g(d.mae) << ',' << g(d.mcrps) << '\n';
        }
    }
    {
        std::ofstream os = open_out(out / "records.csv", m);
        os << "model,record,site_id,genus_id,MSE,MAE,MCRPS\n";
        for (const auto& r : cv.models) {
            for (const auto& s : r.records) {
                const auto& rec = ds.records[static_cast<std::size_t>(s.record)];
                os << r.model << ',' << s.record << ',' << ds.sites.ids[rec.site] << ',' << ds.genus_ids[rec.genus] << ','
                   << g(s.mse) << ',' << g(s.mae) << ',' << g(s.mcrps) << '\n';
            }
        }
    }
    for (const auto& r : cv.models) spdlog::info("{}: MCRPS {:.4f} (relative {:.3f})", r.model, r.mcrps, r.relative_mcrps);
    json hashes = json::object();
    for (const auto& nc : models) hashes[nc.name] = config_hash(nc.config);
    m.set("seed", seed);
    m.set("config_hash", hashes);
    m.write(out);
    return 0;
}

// ---- compare ----

int cmd_compare(const ModelArgs& a) {
    RunManifest m("compare");
    std::vector<NamedConfig> models = parse_models(a.models, a.common.configs);
    if (a.common.seed) {
        for (auto& nc : models) nc.config.mcmc.seed = *a.common.seed;
    }
    const SpectraDataset ds = m.stage("load", [&] { return load_source(data_source(a.data)); });
    const DesignIndex design = build_design(ds);
    std::vector<DicResult> results(models.size());
    m.stage("fit", [&] {
        parallel_for(static_cast<int>(models.size()), a.common.threads, [&](int i) {
            const ModelContext ctx = make_context(ds, design, models[static_cast<std::size_t>(i)].config);
            results[static_cast<std::size_t>(i)] = dic(run_chain(ctx), ctx);
        });
    });
    const fs::path out = a.common.out;
    fs::create_directories(out);
    std::ofstream os = open_out(out / "dic.csv", m);
    os << "model,d_bar,d_hat,p_d,dic\n";
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto& d = results[i];
        os << models[i].name << ',' << g(d.d_bar) << ',' << g(d.d_hat) << ',' << g(d.p_d) << ',' << g(d.dic) << '\n';
    }
    os.close();
    json hashes = json::object();
    for (const auto& nc : models) hashes[nc.name] = config_hash(nc.config);
    m.set("config_hash", hashes);
    m.write(out);
    return 0;
}

// ---- orthogonalize ----

struct OrthoArgs {
    CommonArgs common;
    DataArgs data;
    std::string samples;
};

void write_summary_rows(std::ostream& os, const std::string& prefix, const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    os << prefix << ",mean," << g(mean) << '\n';
    os << prefix << ",q025," << g(quantile(v, 0.025)) << '\n';
    os << prefix << ",q975," << g(quantile(v, 0.975)) << '\n';
}

int cmd_orthogonalize(const OrthoArgs& a) {
    RunManifest m("orthogonalize");
    const FittedRun f = m.stage("load", [&] { return load_fitted(a.samples, a.data); });
    const ModelContext& ctx = f.ctx;
    const int threads = a.common.threads;
    const auto unconf = m.stage("unconfound", [&] { return unconfound(f.samples, ctx, threads); });
    const auto raw = m.stage("decompose_raw", [&] { return variance_decomposition(f.samples, ctx, false, threads); });
    const auto orth = m.stage("decompose_orthogonalized", [&] { return variance_decomposition(f.samples, ctx, true, threads); });
    const fs::path out = a.common.out;
    fs::create_directories(out);
    const std::size_t n = f.samples.draws.size();
    const int p = ctx.n_covariates();
    const auto cov_name = [&](int j) { return ctx.covariate_names[static_cast<std::size_t>(j)]; };

    m.stage("write", [&] {
        {
            std::ofstream os = open_out(out / "B_star.csv", m);
            const Eigen::MatrixXd& B0 = unconf.front().B_star;
            os << "iteration";
            for (Eigen::Index c = 0; c < B0.cols(); ++c) {
                for (Eigen::Index r = 0; r < B0.rows(); ++r) os << ",B_star[" << r << ',' << c << ']';
            }
            for (Eigen::Index c = 0; c < unconf.front().gamma_coef.size(); ++c) os << ",gamma_coef[" << c << ']';
            os << '\n';
            for (std::size_t d = 0; d < n; ++d) {
                os << f.samples.iterations[d];
                const auto& B = unconf[d].B_star;
                for (Eigen::Index i = 0; i < B.size(); ++i) os << ',' << g(B.data()[i]);
                for (Eigen::Index i = 0; i < unconf[d].gamma_coef.size(); ++i) os << ',' << g(unconf[d].gamma_coef(i));
                os << '\n';
            }
        }
        {
            std::ofstream os = open_out(out / "decomposition_overall.csv", m);
            os << "version,draw,term,proportion\n";
            for (const auto* vd : {&raw, &orth}) {
                const char* version = vd->orthogonalized ? "orthogonalized" : "raw";
                for (std::size_t d = 0; d < n; ++d) {
                    for (std::size_t j = 0; j < kTerms.size(); ++j) {
                        os << version << ',' << d << ',' << to_string(kTerms[j]) << ','
                           << g(vd->overall(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j))) << '\n';
                    }
                }
            }
        }
        {
            std::ofstream os = open_out(out / "decomposition_wavelength.csv", m);
            os << "version,term,wavelength,statistic,value\n";
            std::vector<double> v(n);
            for (const auto* vd : {&raw, &orth}) {
                const std::string version = vd->orthogonalized ? "orthogonalized" : "raw";
                for (std::size_t j = 0; j < kTerms.size(); ++j) {
                    for (int t = 0; t < ctx.n_wave(); ++t) {
                        for (std::size_t d = 0; d < n; ++d) v[d] = vd->by_wavelength[d](t, static_cast<Eigen::Index>(j));
                        write_summary_rows(os, version + ',' + to_string(kTerms[j]) + ',' + g(ctx.grid[static_cast<std::size_t>(t)]), v);
                    }
                }
            }
        }
        const Eigen::MatrixXd imp_raw = covariate_importance(f.samples, ctx);
        const Eigen::MatrixXd imp_star = covariate_importance(f.samples, ctx, &unconf);
        {
            std::ofstream os = open_out(out / "importance.csv", m);
            os << "version,covariate,draw,value\n";
            for (int j = 0; j < p; ++j) {
                for (std::size_t d = 0; d < n; ++d) os << "raw," << cov_name(j) << ',' << d << ',' << g(imp_raw(static_cast<Eigen::Index>(d), j)) << '\n';
                for (std::size_t d = 0; d < n; ++d) os << "unconfounded," << cov_name(j) << ',' << d << ',' << g(imp_star(static_cast<Eigen::Index>(d), j)) << '\n';
            }
            std::ofstream ss = open_out(out / "importance_summary.csv", m);
            ss << "version,covariate,statistic,value\n";
            for (int j = 0; j < p; ++j) {
                for (const auto& [version, M] : {std::pair{"raw", &imp_raw}, std::pair{"unconfounded", &imp_star}}) {
                    std::vector<double> v(M->col(j).data(), M->col(j).data() + n);
                    write_summary_rows(ss, std::string(version) + ',' + cov_name(j), v);
                }
            }
        }
        {
            // coefficient-function ribbons
            std::ofstream os = open_out(out / "beta_curves.csv", m);
            os << "version,covariate,wavelength,statistic,value\n";
            std::vector<Eigen::MatrixXd> curves_raw(n);
            std::vector<Eigen::MatrixXd> curves_star(n);
            for (std::size_t d = 0; d < n; ++d) {
                const Eigen::MatrixXd K = ctx.kernel_beta(f.samples.draws[d].theta_beta);
                curves_raw[d] = K * f.samples.draws[d].B.transpose();
                curves_star[d] = K * unconf[d].B_star.transpose();
            }
            std::vector<double> v(n);
            for (const auto& [version, curves] : {std::pair{"raw", &curves_raw}, std::pair{"unconfounded", &curves_star}}) {
                for (int j = 0; j < p; ++j) {
                    for (int t = 0; t < ctx.n_wave(); ++t) {
                        for (std::size_t d = 0; d < n; ++d) v[d] = (*curves)[d](t, j);
                        write_summary_rows(os, std::string(version) + ',' + cov_name(j) + ',' + g(ctx.grid[static_cast<std::size_t>(t)]), v);
                    }
                }
            }
        }
    });
    m.set("config_hash", config_hash(ctx.config));
    m.write(out);
    return 0;
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("spacewave");
    logger->set_pattern("[%H:%M:%S] %^%l%$: %v");
    spdlog::set_default_logger(logger);
    const char* env = std::getenv("SPACEWAVE_LOG");
    spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Bayesian space-wavelength models for leaf reflectance spectra"};
    app.set_version_flag("--version", SPACEWAVE_VERSION);
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "Write a synthetic dataset bundle");
    add_common(c_sim, sim.common);
    c_sim->add_option("--benchmark", sim.benchmark, "tiny, small or medium")->check(CLI::IsMember({"tiny", "small", "medium"}));

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit", "Run the sampler and write posterior draws");
    add_common(c_fit, fit.common);
    add_data(c_fit, fit.data);
    c_fit->add_option("--checkpoint-every", fit.checkpoint_every, "Write checkpoint.bin every N iterations");
    c_fit->add_option("--resume", fit.resume, "Continue from a checkpoint file");

    PredictArgs pred;
    auto* c_pred = app.add_subcommand("predict", "Posterior predictive spectra");
    add_common(c_pred, pred.common, false);
    add_data(c_pred, pred.data);
    c_pred->add_option("--samples", pred.samples, "Samples directory written by fit")->required();
    c_pred->add_option("--targets", pred.targets,
                       "CSV with genus_id,site_id and, for new sites, x,y and raw covariate columns");
    c_pred->add_flag("--no-noise", pred.no_noise, "Predict the mean surface without observation noise");

    ModelArgs cv;
    auto* c_cv = app.add_subcommand("crossval", "Hold-out scores (MSE, MAE, MCRPS) across models");
    add_common(c_cv, cv.common);
    add_data(c_cv, cv.data);
    c_cv->add_option("--model", cv.models, "NAME=CONFIG.json, layered over --config; repeat")->required();
    c_cv->add_option("--folds", cv.folds, "Number of folds")->check(CLI::PositiveNumber);

    ModelArgs cmp;
    auto* c_cmp = app.add_subcommand("compare", "DIC table across models");
    add_common(c_cmp, cmp.common);
    add_data(c_cmp, cmp.data);
    c_cmp->add_option("--model", cmp.models, "NAME=CONFIG.json, layered over --config; repeat")->required();

    OrthoArgs orth;
    auto* c_orth = app.add_subcommand("orthogonalize", "Unconfounded coefficients, variance decomposition, importance");
    add_common(c_orth, orth.common, false);
    add_data(c_orth, orth.data);
    c_orth->add_option("--samples", orth.samples, "Samples directory written by fit")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageExit;
    }

    try {
        if (*c_sim) return cmd_simulate(sim);
        if (*c_fit) return cmd_fit(fit);
        if (*c_pred) return cmd_predict(pred);
        if (*c_cv) return cmd_crossval(cv);
        if (*c_cmp) return cmd_compare(cmp);
        if (*c_orth) return cmd_orthogonalize(orth);
    } catch (const Error& e) {
        spdlog::error("[{}] {}", to_string(e.kind()), e.what());
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        spdlog::error("[internal] {}", e.what());
        return 1;
    }
    return kUsageExit;
}
