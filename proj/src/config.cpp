#include "spacewave/config.hpp"

#include "spacewave/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

namespace spacewave {

namespace {

template <class E, std::size_t N>
using EnumTable = std::array<std::pair<E, const char*>, N>;

constexpr EnumTable<InterceptMode, 2> kInterceptNames{{
    {InterceptMode::genus_scalar, "genus_scalar"},
    {InterceptMode::genus_spatial, "genus_spatial"},
}};
constexpr EnumTable<GammaMode, 3> kGammaNames{{
    {GammaMode::none, "none"},
    {GammaMode::global, "global"},
    {GammaMode::per_genus, "per_genus"},
}};
constexpr EnumTable<BetaMode, 2> kBetaNames{{
    {BetaMode::scalar, "scalar"},
    {BetaMode::functional, "functional"},
}};
constexpr EnumTable<EtaVariant, 7> kEtaNames{{
    {EtaVariant::none, "none"},
    {EtaVariant::spatial_only, "spatial_only"},
    {EtaVariant::factor, "factor"},
    {EtaVariant::independent, "independent"},
    {EtaVariant::separable, "separable"},
    {EtaVariant::lmc, "lmc"},
    {EtaVariant::spatial_convolution, "spatial_convolution"},
}};
constexpr EnumTable<KernelFamily, 2> kKernelNames{{
    {KernelFamily::gaussian, "gaussian"},
    {KernelFamily::double_exponential, "double_exponential"},
}};
constexpr EnumTable<PhiWMode, 4> kPhiNames{{
    {PhiWMode::fixed_single, "fixed_single"},
    {PhiWMode::fixed_sequence, "fixed_sequence"},
    {PhiWMode::random_single, "random_single"},
    {PhiWMode::random_sequence, "random_sequence"},
}};

template <class E, std::size_t N>
std::string enum_name(const EnumTable<E, N>& table, E v) {
    for (const auto& [e, name] : table) {
        if (e == v) return name;
    }
    return "?";
}

/// Walks a JSON object, collecting every problem instead of stopping at the first.
class StrictReader {
public:
    explicit StrictReader(std::vector<std::string>& errors) : errors_(errors) {}

    void object(const nlohmann::json& j, const std::string& path, const std::vector<std::string>& allowed) {
        if (!j.is_object()) {
            errors_.push_back(path + ": expected an object");
            return;
        }
        for (const auto& [key, _] : j.items()) {
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
                errors_.push_back(join(path, key) + ": unknown key");
            }
        }
    }

    void number(const nlohmann::json& j, const std::string& path, const char* key, double& out) {
        if (!j.is_object() || !j.contains(key)) return;
        const auto& v = j.at(key);
        if (!v.is_number()) {
            errors_.push_back(join(path, key) + ": expected a number");
            return;
        }
        out = v.get<double>();
    }

    template <class I>
    void integer(const nlohmann::json& j, const std::string& path, const char* key, I& out) {
        if (!j.is_object() || !j.contains(key)) return;
        const auto& v = j.at(key);
        if (!v.is_number_integer()) {
            errors_.push_back(join(path, key) + ": expected an integer");
            return;
        }
        out = v.get<I>();
    }

    void boolean(const nlohmann::json& j, const std::string& path, const char* key, bool& out) {
        if (!j.is_object() || !j.contains(key)) return;
        const auto& v = j.at(key);
        if (!v.is_boolean()) {
            errors_.push_back(join(path, key) + ": expected true or false");
            return;
        }
        out = v.get<bool>();
    }

    template <class E, std::size_t N>
    void enumeration(const nlohmann::json& j, const std::string& path, const char* key,
                     const EnumTable<E, N>& table, E& out) {
        if (!j.is_object() || !j.contains(key)) return;
        const auto& v = j.at(key);
        if (v.is_string()) {
            for (const auto& [e, name] : table) {
                if (v.get<std::string>() == name) {
                    out = e;
                    return;
                }
            }
        }
        std::string options;
        for (const auto& [e, name] : table) options += std::string(options.empty() ? "" : "|") + name;
        errors_.push_back(join(path, key) + ": expected one of " + options);
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }

private:
    std::vector<std::string>& errors_;
};

void read_knots(StrictReader& r, const nlohmann::json& j, const std::string& path, const char* key, KnotSpec& k) {
    if (!j.contains(key)) return;
    const auto& o = j.at(key);
    const std::string p = StrictReader::join(path, key);
    r.object(o, p, {"lo", "hi", "spacing"});
    r.number(o, p, "lo", k.lo);
    r.number(o, p, "hi", k.hi);
    r.number(o, p, "spacing", k.spacing);
}

void read_ig(StrictReader& r, const nlohmann::json& j, const std::string& path, const char* key, InvGammaPrior& g) {
    if (!j.contains(key)) return;
    const auto& o = j.at(key);
    const std::string p = StrictReader::join(path, key);
    r.object(o, p, {"shape", "scale"});
    r.number(o, p, "shape", g.shape);
    r.number(o, p, "scale", g.scale);
}

void read_gamma(StrictReader& r, const nlohmann::json& j, const std::string& path, const char* key, GammaPrior& g) {
    if (!j.contains(key)) return;
    const auto& o = j.at(key);
    const std::string p = StrictReader::join(path, key);
    r.object(o, p, {"shape", "rate"});
    r.number(o, p, "shape", g.shape);
    r.number(o, p, "rate", g.rate);
}

void read_normal(StrictReader& r, const nlohmann::json& j, const std::string& path, const char* key, NormalPrior& g) {
    if (!j.contains(key)) return;
    const auto& o = j.at(key);
    const std::string p = StrictReader::join(path, key);
    r.object(o, p, {"mean", "var"});
    r.number(o, p, "mean", g.mean);
    r.number(o, p, "var", g.var);
}

nlohmann::json knots_json(const KnotSpec& k) {
    return {{"lo", k.lo}, {"hi", k.hi}, {"spacing", k.spacing}};
}

}  // namespace

std::int64_t McmcConfig::thin() const {
    if (n_keep <= 0) return 0;
    return (n_iter - n_burn) / n_keep;
}

const std::vector<std::string>& block_names() {
    static const std::vector<std::string> names{
        "alpha_genus", "alpha_spatial", "alpha",       "B",           "gamma",       "w",
        "mu_theta_gamma", "A",          "sigma2_alpha", "sigma2_alpha_s", "sigma2_beta", "sigma2_gamma",
        "sigma2_gamma_genus", "sigma2_A", "sigma2_theta_gamma", "phi_alpha", "theta_beta", "theta_gamma",
        "theta_eta", "beta_sigma", "phi_w",
    };
    return names;
}

void ModelConfig::validate() const {
    const auto errors = validation_errors();
    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw Error(ErrorKind::validation, msg);
    }
}

std::vector<std::string> ModelConfig::validation_errors() const {
    std::vector<std::string> errors;
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok) errors.push_back(msg);
    };
    check(mcmc.n_iter > 0, "mcmc.n_iter: must be positive");
    check(mcmc.n_burn >= 0 && mcmc.n_burn < mcmc.n_iter, "mcmc.n_burn: must satisfy 0 <= n_burn < n_iter");
    check(mcmc.n_keep >= 1 && mcmc.n_keep <= mcmc.n_iter - mcmc.n_burn,
          "mcmc.n_keep: must be in [1, n_iter - n_burn]");
    check(mcmc.target_acceptance > 0 && mcmc.target_acceptance < 1, "mcmc.target_acceptance: must be in (0, 1)");
    const auto& s = mcmc.step;
    check(s.phi_alpha >= 0 && s.theta_beta >= 0 && s.theta_gamma >= 0 && s.theta_eta >= 0 && s.beta_sigma >= 0 &&
              s.phi_w >= 0,
          "mcmc.step: step sizes must be >= 0");
    check(rank >= 1, "rank: must be >= 1");
    for (const auto& [name, k] : {std::pair{"beta_knots", beta_knots}, std::pair{"gamma_knots", gamma_knots},
                                  std::pair{"eta_knots", eta_knots}, std::pair{"sigma_knots", sigma_knots}}) {
        const bool ordered = k.lo < k.hi && k.spacing > 0;
        check(ordered, std::string(name) + ": need lo < hi and spacing > 0");
        if (ordered) {
            const double steps = (k.hi - k.lo) / k.spacing;
            check(std::abs(steps - std::round(steps)) <= 1e-9 * std::max(1.0, steps),
                  std::string(name) + ": range is not a multiple of spacing");
        }
    }
    for (double phi : phi_w) check(phi > 0, "phi_w: decays must be positive");
    if (phi_w_mode == PhiWMode::fixed_sequence || phi_w_mode == PhiWMode::random_sequence) {
        for (std::size_t i = 1; i < phi_w.size(); ++i) {
            check(phi_w[i] > phi_w[i - 1], "phi_w: sequence must be strictly increasing");
        }
    }
    check(phi_gamma > 0, "phi_gamma: must be positive");
    check(spatial_knots_per_side >= 1, "spatial_knots_per_side: must be >= 1");
    const auto& p = priors;
    check(p.alpha.var > 0, "priors.alpha.var: must be positive");
    for (const auto& [name, g] :
         {std::pair{"sigma2_alpha", p.sigma2_alpha}, std::pair{"sigma2_alpha_s", p.sigma2_alpha_s},
          std::pair{"sigma2_beta", p.sigma2_beta}, std::pair{"sigma2_gamma", p.sigma2_gamma},
          std::pair{"sigma2_gamma_genus", p.sigma2_gamma_genus}, std::pair{"sigma2_A", p.sigma2_A},
          std::pair{"sigma2_theta_gamma", p.sigma2_theta_gamma}}) {
        check(g.shape > 0 && g.scale > 0, std::string("priors.") + name + ": shape and scale must be positive");
    }
    check(p.phi_alpha_lo > 0 && p.phi_alpha_lo < p.phi_alpha_hi, "priors.phi_alpha: need 0 < lo < hi");
    check(p.theta_beta.shape > 0 && p.theta_beta.rate > 0, "priors.theta_beta: shape and rate must be positive");
    check(p.theta_eta.shape > 0 && p.theta_eta.rate > 0, "priors.theta_eta: shape and rate must be positive");
    check(p.mu_theta_gamma.var > 0, "priors.mu_theta_gamma.var: must be positive");
    check(p.beta_sigma_var > 0, "priors.beta_sigma_var: must be positive");
    for (const auto& b : frozen) {
        const auto& names = block_names();
        check(std::find(names.begin(), names.end(), b) != names.end(), "frozen: unknown block '" + b + "'");
    }
    return errors;
}

nlohmann::json to_json(const ModelConfig& c) {
    const auto& p = c.priors;
    auto ig = [](const InvGammaPrior& g) { return nlohmann::json{{"shape", g.shape}, {"scale", g.scale}}; };
    auto ga = [](const GammaPrior& g) { return nlohmann::json{{"shape", g.shape}, {"rate", g.rate}}; };
    auto no = [](const NormalPrior& g) { return nlohmann::json{{"mean", g.mean}, {"var", g.var}}; };
    nlohmann::json j;
    j["intercept_mode"] = enum_name(kInterceptNames, c.intercept_mode);
    j["gamma_mode"] = enum_name(kGammaNames, c.gamma_mode);
    j["beta_mode"] = enum_name(kBetaNames, c.beta_mode);
    j["eta_variant"] = enum_name(kEtaNames, c.eta_variant);
    j["rank"] = c.rank;
    j["kernel_family"] = enum_name(kKernelNames, c.kernel_family);
    j["beta_knots"] = knots_json(c.beta_knots);
    j["gamma_knots"] = knots_json(c.gamma_knots);
    j["eta_knots"] = knots_json(c.eta_knots);
    j["sigma_knots"] = knots_json(c.sigma_knots);
    j["phi_w_mode"] = enum_name(kPhiNames, c.phi_w_mode);
    j["phi_w"] = c.phi_w;
    j["phi_gamma"] = c.phi_gamma;
    j["spatial_knots_per_side"] = c.spatial_knots_per_side;
    j["gamma_fixed_effect"] = c.gamma_fixed_effect;
    j["priors"] = {
        {"alpha", no(p.alpha)},
        {"sigma2_alpha", ig(p.sigma2_alpha)},
        {"sigma2_alpha_s", ig(p.sigma2_alpha_s)},
        {"sigma2_beta", ig(p.sigma2_beta)},
        {"sigma2_gamma", ig(p.sigma2_gamma)},
        {"sigma2_gamma_genus", ig(p.sigma2_gamma_genus)},
        {"sigma2_A", ig(p.sigma2_A)},
        {"sigma2_theta_gamma", ig(p.sigma2_theta_gamma)},
        {"phi_alpha_lo", p.phi_alpha_lo},
        {"phi_alpha_hi", p.phi_alpha_hi},
        {"theta_beta", ga(p.theta_beta)},
        {"theta_eta", ga(p.theta_eta)},
        {"mu_theta_gamma", no(p.mu_theta_gamma)},
        {"beta_sigma_var", p.beta_sigma_var},
    };
    const auto& s = c.mcmc.step;
    j["mcmc"] = {
        {"n_iter", c.mcmc.n_iter},
        {"n_burn", c.mcmc.n_burn},
        {"n_keep", c.mcmc.n_keep},
        {"seed", c.mcmc.seed},
        {"adapt", c.mcmc.adapt},
        {"target_acceptance", c.mcmc.target_acceptance},
        {"prior_only", c.mcmc.prior_only},
        {"joint_level", c.mcmc.joint_level},
        {"joint_beta_eta", c.mcmc.joint_beta_eta},
        {"collapsed_theta_beta", c.mcmc.collapsed_theta_beta},
        {"step",
         {{"phi_alpha", s.phi_alpha},
          {"theta_beta", s.theta_beta},
          {"theta_gamma", s.theta_gamma},
          {"theta_eta", s.theta_eta},
          {"beta_sigma", s.beta_sigma},
          {"phi_w", s.phi_w}}},
    };
    j["frozen"] = std::vector<std::string>(c.frozen.begin(), c.frozen.end());
    return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    std::vector<std::string> errors;
    StrictReader r(errors);
    r.object(j, "", {"intercept_mode", "gamma_mode", "beta_mode", "eta_variant", "rank", "kernel_family",
                     "beta_knots", "gamma_knots", "eta_knots", "sigma_knots", "phi_w_mode", "phi_w", "phi_gamma",
                     "spatial_knots_per_side", "gamma_fixed_effect", "priors", "mcmc", "frozen"});
    if (j.is_object()) {
        r.enumeration(j, "", "intercept_mode", kInterceptNames, c.intercept_mode);
        r.enumeration(j, "", "gamma_mode", kGammaNames, c.gamma_mode);
        r.enumeration(j, "", "beta_mode", kBetaNames, c.beta_mode);
        r.enumeration(j, "", "eta_variant", kEtaNames, c.eta_variant);
        r.integer(j, "", "rank", c.rank);
        r.enumeration(j, "", "kernel_family", kKernelNames, c.kernel_family);
        read_knots(r, j, "", "beta_knots", c.beta_knots);
        read_knots(r, j, "", "gamma_knots", c.gamma_knots);
        read_knots(r, j, "", "eta_knots", c.eta_knots);
        read_knots(r, j, "", "sigma_knots", c.sigma_knots);
        r.enumeration(j, "", "phi_w_mode", kPhiNames, c.phi_w_mode);
        if (j.contains("phi_w")) {
            const auto& v = j.at("phi_w");
            if (!v.is_array()) {
                errors.emplace_back("phi_w: expected an array of numbers");
            } else {
                for (const auto& e : v) {
                    if (!e.is_number()) {
                        errors.emplace_back("phi_w: expected an array of numbers");
                        break;
                    }
                    c.phi_w.push_back(e.get<double>());
                }
            }
        }
        r.number(j, "", "phi_gamma", c.phi_gamma);
        r.integer(j, "", "spatial_knots_per_side", c.spatial_knots_per_side);
        r.boolean(j, "", "gamma_fixed_effect", c.gamma_fixed_effect);
        if (j.contains("priors")) {
            const auto& pj = j.at("priors");
            auto& p = c.priors;
            r.object(pj, "priors",
                     {"alpha", "sigma2_alpha", "sigma2_alpha_s", "sigma2_beta", "sigma2_gamma", "sigma2_gamma_genus",
                      "sigma2_A", "sigma2_theta_gamma", "phi_alpha_lo", "phi_alpha_hi", "theta_beta", "theta_eta",
                      "mu_theta_gamma", "beta_sigma_var"});
            if (pj.is_object()) {
                read_normal(r, pj, "priors", "alpha", p.alpha);
                read_ig(r, pj, "priors", "sigma2_alpha", p.sigma2_alpha);
                read_ig(r, pj, "priors", "sigma2_alpha_s", p.sigma2_alpha_s);
                read_ig(r, pj, "priors", "sigma2_beta", p.sigma2_beta);
                read_ig(r, pj, "priors", "sigma2_gamma", p.sigma2_gamma);
                read_ig(r, pj, "priors", "sigma2_gamma_genus", p.sigma2_gamma_genus);
                read_ig(r, pj, "priors", "sigma2_A", p.sigma2_A);
                read_ig(r, pj, "priors", "sigma2_theta_gamma", p.sigma2_theta_gamma);
                r.number(pj, "priors", "phi_alpha_lo", p.phi_alpha_lo);
                r.number(pj, "priors", "phi_alpha_hi", p.phi_alpha_hi);
                read_gamma(r, pj, "priors", "theta_beta", p.theta_beta);
                read_gamma(r, pj, "priors", "theta_eta", p.theta_eta);
                read_normal(r, pj, "priors", "mu_theta_gamma", p.mu_theta_gamma);
                r.number(pj, "priors", "beta_sigma_var", p.beta_sigma_var);
            }
        }
        if (j.contains("mcmc")) {
            const auto& mj = j.at("mcmc");
            auto& m = c.mcmc;
            r.object(mj, "mcmc", {"n_iter", "n_burn", "n_keep", "seed", "adapt", "target_acceptance", "prior_only", "joint_level", "joint_beta_eta", "collapsed_theta_beta", "step"});
            if (mj.is_object()) {
                r.integer(mj, "mcmc", "n_iter", m.n_iter);
                r.integer(mj, "mcmc", "n_burn", m.n_burn);
                r.integer(mj, "mcmc", "n_keep", m.n_keep);
                r.integer(mj, "mcmc", "seed", m.seed);
                r.boolean(mj, "mcmc", "adapt", m.adapt);
                r.number(mj, "mcmc", "target_acceptance", m.target_acceptance);
                r.boolean(mj, "mcmc", "prior_only", m.prior_only);
                r.boolean(mj, "mcmc", "joint_level", m.joint_level);
                r.boolean(mj, "mcmc", "joint_beta_eta", m.joint_beta_eta);
                r.boolean(mj, "mcmc", "collapsed_theta_beta", m.collapsed_theta_beta);
                if (mj.contains("step")) {
                    const auto& sj = mj.at("step");
                    r.object(sj, "mcmc.step", {"phi_alpha", "theta_beta", "theta_gamma", "theta_eta", "beta_sigma", "phi_w"});
                    r.number(sj, "mcmc.step", "phi_alpha", m.step.phi_alpha);
                    r.number(sj, "mcmc.step", "theta_beta", m.step.theta_beta);
                    r.number(sj, "mcmc.step", "theta_gamma", m.step.theta_gamma);
                    r.number(sj, "mcmc.step", "theta_eta", m.step.theta_eta);
                    r.number(sj, "mcmc.step", "beta_sigma", m.step.beta_sigma);
                    r.number(sj, "mcmc.step", "phi_w", m.step.phi_w);
                }
            }
        }
        if (j.contains("frozen")) {
            const auto& v = j.at("frozen");
            if (!v.is_array()) {
                errors.emplace_back("frozen: expected an array of block names");
            } else {
                for (const auto& e : v) {
                    if (!e.is_string()) {
                        errors.emplace_back("frozen: expected an array of block names");
                        break;
                    }
                    c.frozen.insert(e.get<std::string>());
                }
            }
        }
    }
    for (auto& e : c.validation_errors()) errors.push_back(std::move(e));
    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw Error(ErrorKind::validation, msg);
    }
    return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string config_hash(const ModelConfig& config) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(config).dump())));
    return buf;
}

std::string to_string(EtaVariant v) { return enum_name(kEtaNames, v); }
std::string to_string(InterceptMode v) { return enum_name(kInterceptNames, v); }
std::string to_string(GammaMode v) { return enum_name(kGammaNames, v); }
std::string to_string(BetaMode v) { return enum_name(kBetaNames, v); }
std::string to_string(KernelFamily v) { return enum_name(kKernelNames, v); }
std::string to_string(PhiWMode v) { return enum_name(kPhiNames, v); }

}  // namespace spacewave
