#include "spacewave/synth.hpp"

#include "spacewave/error.hpp"
#include "spacewave/sampler.hpp"
#include "spacewave/spatial.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace spacewave {

namespace {

std::string padded(const char* prefix, int i, int n) {
    const int width = n >= 100 ? 3 : 2;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i + 1);
    return buf;
}

int draw_index(Rng& rng, int n) {
    const int v = static_cast<int>(draw_uniform(rng) * n);
    return std::min(v, n - 1);
}

void write_json(const nlohmann::json& j, const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot write " + p.string());
    os << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(ErrorKind::io, "cannot read " + p.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, p.string() + ": " + e.what());
    }
}

}  // namespace

void SynthSpec::validate() const {
    std::vector<std::string> bad;
    if (n_sites < 2) bad.push_back("n_sites must be at least 2");
    if (n_genera < 1) bad.push_back("n_genera must be at least 1");
    if (n_covariates < 0) bad.push_back("n_covariates must be non-negative");
    if (min_replicates < 1 || max_replicates < min_replicates) bad.push_back("replicate range is empty");
    if (!(presence > 0.0 && presence <= 1.0)) bad.push_back("presence must lie in (0, 1]");
    if (!(extent > 0.0)) bad.push_back("extent must be positive");
    if (coords && coords->rows() != n_sites) bad.push_back("supplied coordinates must have n_sites rows");
    if (!(hyper.phi_alpha > 0.0)) bad.push_back("phi_alpha must be positive");
    if (!bad.empty()) {
        std::string msg = "invalid synth spec:";
        for (const auto& b : bad) msg += "\n  " + b;
        throw Error(ErrorKind::validation, msg);
    }
    config.validate();
}

ChainState draw_truth(const ModelContext& ctx, const TruthHyper& h, Rng& rng) {
    ChainState s = zero_state(ctx);
    s.alpha = h.alpha;
    s.sigma2_alpha = h.sigma2_alpha;
    s.sigma2_alpha_s = h.sigma2_alpha_s;
    s.phi_alpha = h.phi_alpha;
    s.sigma2_beta = h.sigma2_beta;
    s.theta_beta = h.theta_beta;
    s.sigma2_gamma = h.sigma2_gamma;
    s.sigma2_gamma_genus = h.sigma2_gamma_genus;
    s.mu_theta_gamma = h.mu_theta_gamma;
    s.sigma2_theta_gamma = h.sigma2_theta_gamma;
    s.theta_eta = h.theta_eta;
    s.sigma2_A = h.sigma2_A;

    const double sd_alpha = std::sqrt(h.sigma2_alpha);
    for (int g = 0; g < ctx.n_genera(); ++g) s.alpha_genus(g) = h.alpha + sd_alpha * draw_normal(rng);

    if (ctx.has_alpha_spatial()) {
        for (int g = 0; g < ctx.n_genera(); ++g) {
            const auto& cells = ctx.genus_cells[g];
            if (cells.empty()) continue;
            Eigen::MatrixXd d(cells.size(), cells.size());
            for (std::size_t a = 0; a < cells.size(); ++a) {
                for (std::size_t b = 0; b < cells.size(); ++b) {
                    d(a, b) = ctx.site_dist(ctx.cells[cells[a]].site, ctx.cells[cells[b]].site);
                }
            }
            const Eigen::VectorXd v = chol_sample(Eigen::VectorXd::Zero(d.rows()),
                                                  h.sigma2_alpha_s * exp_corr_matrix(d, h.phi_alpha), rng);
            for (std::size_t a = 0; a < cells.size(); ++a) s.alpha_spatial(cells[a]) = v(a);
        }
    }

    const double sd_beta = std::sqrt(h.sigma2_beta);
    for (Eigen::Index i = 0; i < s.B.size(); ++i) s.B.data()[i] = sd_beta * draw_normal(rng);

    if (ctx.has_gamma()) {
        const Eigen::VectorXd log_theta = chol_sample(Eigen::VectorXd::Constant(ctx.j_gamma(), h.mu_theta_gamma),
                                                      h.sigma2_theta_gamma * ctx.R_gamma, rng);
        s.theta_gamma = log_theta.array().exp();
        s.gamma_star = std::sqrt(h.sigma2_gamma) * draw_normal_vector(rng, ctx.j_gamma());
        if (ctx.config.gamma_mode == GammaMode::per_genus) {
            for (int g = 0; g < ctx.n_genera(); ++g) {
                s.gamma_genus.col(g) = s.gamma_star + std::sqrt(h.sigma2_gamma_genus) * draw_normal_vector(rng, ctx.j_gamma());
            }
        }
    }

    const double sd_a = std::sqrt(h.sigma2_A);
    if (ctx.config.eta_variant == EtaVariant::independent) {
        s.A = Eigen::MatrixXd::Identity(ctx.j_eta(), ctx.rank());
    } else if (ctx.samples_A()) {
        for (Eigen::Index k = 0; k < s.A.cols(); ++k) {
            for (Eigen::Index j = 0; j < s.A.rows(); ++j) {
                if (ctx.lower_triangular_A() && j < k) continue;
                const double v = sd_a * draw_normal(rng);
                s.A(j, k) = ctx.lower_triangular_A() && j == k ? std::abs(v) : v;
            }
        }
    }
    if (ctx.has_factor_eta()) {
        for (int j = 0; j < ctx.rank(); ++j) {
            s.w.col(j) = chol_sample(Eigen::VectorXd::Zero(ctx.n_sites()),
                                     exp_corr_matrix(ctx.site_dist, s.phi_w(j)), rng);
        }
    }
    if (ctx.config.eta_variant == EtaVariant::spatial_convolution) {
        for (Eigen::Index i = 0; i < s.z_wave.size(); ++i) s.z_wave.data()[i] = sd_a * draw_normal(rng);
    }

    const auto K = static_cast<Eigen::Index>(s.beta_sigma.size());
    for (Eigen::Index k = 0; k < K; ++k) {
        const double phase = K > 1 ? static_cast<double>(k) / static_cast<double>(K - 1) : 0.0;
        s.beta_sigma(k) = std::log(h.noise_level) + h.noise_wiggle * std::sin(2.0 * std::numbers::pi * phase);
    }
    s.validate();
    return s;
}

SynthResult simulate(const SynthSpec& spec, Rng& rng) {
    spec.validate();
    const int ns = spec.n_sites;
    const int ng = spec.n_genera;

    SpectraDataset ds;
    ds.grid = spec.grid;
    ds.sites.units = CoordinateSystem::planar;
    ds.sites.coords.resize(ns, 2);
    if (spec.coords) {
        ds.sites.coords = *spec.coords;
    } else {
        for (int s = 0; s < ns; ++s) {
            ds.sites.coords(s, 0) = spec.extent * draw_uniform(rng);
            ds.sites.coords(s, 1) = spec.extent * draw_uniform(rng);
        }
    }
    for (int s = 0; s < ns; ++s) ds.sites.ids.push_back(padded("S", s, ns));
    ds.sites.covariates.resize(ns, spec.n_covariates);
    for (int j = 0; j < spec.n_covariates; ++j) {
        ds.sites.covariate_names.push_back("x" + std::to_string(j + 1));
        for (int s = 0; s < ns; ++s) {
            double v = draw_normal(rng);
            if (j == 0) v = 2.0 * ds.sites.coords(s, 0) / spec.extent - 1.0 + 0.5 * v;  // mild spatial trend
            ds.sites.covariates(s, j) = v;
        }
    }
    for (int g = 0; g < ng; ++g) ds.genus_ids.push_back(padded("G", g, ng));

    // presence pattern: every site and every genus observed, and some genus at two or more sites
    Eigen::MatrixXi present(ns, ng);
    for (int s = 0; s < ns; ++s) {
        for (int g = 0; g < ng; ++g) present(s, g) = draw_uniform(rng) < spec.presence ? 1 : 0;
    }
    for (int s = 0; s < ns; ++s) {
        if (present.row(s).sum() == 0) present(s, draw_index(rng, ng)) = 1;
    }
    for (int g = 0; g < ng; ++g) {
        if (present.col(g).sum() == 0) present(draw_index(rng, ns), g) = 1;
    }
    if (present.colwise().sum().maxCoeff() < 2) {
        int other = draw_index(rng, ns - 1);
        const int first = [&] {
            for (int s = 0; s < ns; ++s) if (present(s, 0)) return s;
            return 0;
        }();
        if (other >= first) ++other;
        present(other, 0) = 1;
    }
    const int span = spec.max_replicates - spec.min_replicates + 1;
    for (int g = 0; g < ng; ++g) {
        for (int s = 0; s < ns; ++s) {
            if (!present(s, g)) continue;
            const int reps = spec.min_replicates + draw_index(rng, span);
            for (int r = 0; r < reps; ++r) {
                ds.records.push_back({s, g, "r" + std::to_string(r + 1)});
            }
        }
    }
    ds.responses = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ds.n_wave()), static_cast<Eigen::Index>(ds.records.size()));

    const DesignIndex design = build_design(ds);
    const ModelContext ctx = make_context(ds, design, spec.config);
    SynthResult out;
    if (spec.truth) {
        out.truth = *spec.truth;
        check_state(out.truth, ctx);
    } else {
        out.truth = draw_truth(ctx, spec.hyper, rng);
    }
    out.mean = mean_surface(out.truth, ctx);
    const Eigen::VectorXd sd = ctx.sigma2(out.truth.beta_sigma).array().sqrt();
    ds.responses = out.mean;
    for (Eigen::Index k = 0; k < ds.responses.cols(); ++k) {
        for (Eigen::Index m = 0; m < ds.responses.rows(); ++m) ds.responses(m, k) += sd(m) * draw_normal(rng);
    }
    out.data = std::move(ds);
    return out;
}

SynthSpec benchmark_spec(const std::string& name) {
    SynthSpec spec;
    spec.config.rank = 3;
    if (name == "tiny") {
        spec.n_sites = 10;
        spec.n_genera = 3;
        spec.grid = WavelengthGrid::linspace(450.0, 950.0, 40);
    } else if (name == "small") {
        spec.n_sites = 30;
        spec.n_genera = 6;
        spec.grid = WavelengthGrid::linspace(450.0, 950.0, 100);
        spec.presence = 0.5;
    } else if (name == "medium") {
        spec.n_sites = 80;
        spec.n_genera = 12;
        spec.grid = WavelengthGrid::linspace(450.0, 950.0, 250);
        spec.presence = 0.35;
    } else {
        throw Error(ErrorKind::validation, "unknown benchmark '" + name + "' (expected tiny, small or medium)");
    }
    return spec;
}

nlohmann::json state_to_json(const ChainState& s) {
    nlohmann::json j = nlohmann::json::object();
    visit_blocks(s, [&](const BlockRef& b) {
        std::vector<double> v(b.data, b.data + b.rows * b.cols);
        j[b.name] = {{"rows", b.rows}, {"cols", b.cols}, {"data", v}};
    });
    return j;
}

void state_from_json(const nlohmann::json& j, ChainState& s) {
    visit_blocks(s, [&](const BlockRef& b) {
        if (!j.contains(b.name)) throw Error(ErrorKind::parse, std::string("state is missing block ") + b.name);
        const auto& e = j.at(b.name);
        const auto rows = e.at("rows").get<Eigen::Index>();
        const auto cols = e.at("cols").get<Eigen::Index>();
        const auto data = e.at("data").get<std::vector<double>>();
        if (rows != b.rows || cols != b.cols || static_cast<Eigen::Index>(data.size()) != rows * cols) {
            throw Error(ErrorKind::validation, std::string("state block ") + b.name + " has the wrong shape");
        }
        std::copy(data.begin(), data.end(), b.data);
    });
}

void write_bundle(const SynthResult& result, const SynthSpec& spec, const std::string& name, std::uint64_t seed,
                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_dataset(result.data, dir / "spectra.csv", dir / "sites.csv");
    SpectraDataset mean = result.data;
    mean.responses = result.mean;
    write_dataset(mean, dir / "mean.csv", dir / "sites.csv");  // sites are rewritten unchanged
    const auto& h = spec.hyper;
    nlohmann::json truth = {
        {"state", state_to_json(result.truth)},
        {"hyper",
         {{"alpha", h.alpha},
          {"sigma2_alpha", h.sigma2_alpha},
          {"sigma2_alpha_s", h.sigma2_alpha_s},
          {"phi_alpha", h.phi_alpha},
          {"sigma2_beta", h.sigma2_beta},
          {"theta_beta", h.theta_beta},
          {"sigma2_gamma", h.sigma2_gamma},
          {"sigma2_gamma_genus", h.sigma2_gamma_genus},
          {"mu_theta_gamma", h.mu_theta_gamma},
          {"sigma2_theta_gamma", h.sigma2_theta_gamma},
          {"theta_eta", h.theta_eta},
          {"sigma2_A", h.sigma2_A},
          {"noise_level", h.noise_level},
          {"noise_wiggle", h.noise_wiggle}}},
        {"config", to_json(spec.config)},
        {"mean_path", "mean.csv"},
    };
    write_json(truth, dir / "truth.json");
    const nlohmann::json bundle = {
        {"name", name},
        {"seed", seed},
        {"grid", {{"lo", result.data.grid.front()}, {"hi", result.data.grid.back()}, {"count", result.data.n_wave()}}},
        {"units", to_string(result.data.sites.units)},
        {"scale", "log"},
        {"n_sites", result.data.n_sites()},
        {"n_genera", result.data.n_genera()},
        {"n_records", result.data.n_records()},
    };
    write_json(bundle, dir / "bundle.json");
}

void make_benchmark(const std::string& name, std::uint64_t seed, const std::filesystem::path& dir) {
    const SynthSpec spec = benchmark_spec(name);
    Rng rng(seed);
    const SynthResult r = simulate(spec, rng);
    write_bundle(r, spec, name, seed, dir);
}

SpectraDataset load_bundle(const std::filesystem::path& dir) {
    const nlohmann::json b = read_json(dir / "bundle.json");
    try {
        LoadOptions opt;
        opt.grid.lo = b.at("grid").at("lo").get<double>();
        opt.grid.hi = b.at("grid").at("hi").get<double>();
        opt.grid.count = b.at("grid").at("count").get<std::size_t>();
        opt.units = coordinate_system_from_string(b.at("units").get<std::string>());
        opt.scale = b.value("scale", std::string("log")) == "raw" ? ResponseScale::raw : ResponseScale::log;
        return load_dataset(dir / "spectra.csv", dir / "sites.csv", opt);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, (dir / "bundle.json").string() + ": " + e.what());
    }
}

ChainState load_bundle_truth(const std::filesystem::path& dir, const ModelContext& ctx) {
    const nlohmann::json t = read_json(dir / "truth.json");
    ChainState s = zero_state(ctx);
    state_from_json(t.at("state"), s);
    return s;
}

}  // namespace spacewave
