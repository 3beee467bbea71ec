#include "spacewave/predict.hpp"

#include "spacewave/error.hpp"
#include "spacewave/parallel.hpp"
#include "spacewave/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spacewave {

std::vector<Eligibility> holdout_eligibility(const SpectraDataset& ds) {
    const std::size_t n = ds.n_records();
    std::vector<int> per_site(ds.n_sites(), 0);
    std::vector<std::vector<int>> genus_sites(ds.n_genera());
    for (const auto& r : ds.records) {
        ++per_site[r.site];
        genus_sites[r.genus].push_back(r.site);
    }
    std::vector<Eligibility> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& r = ds.records[k];
        out[k].co_sited = per_site[r.site] >= 2;
        const auto& sites = genus_sites[r.genus];
        out[k].genus_elsewhere = std::any_of(sites.begin(), sites.end(), [&](int s) { return s != r.site; });
    }
    return out;
}

std::vector<int> HoldoutPlan::fold_records(int f) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (fold[i] == f) out.push_back(records[i]);
    }
    return out;
}

std::vector<int> HoldoutPlan::training_records(int f, std::size_t n_records) const {
    std::vector<char> held(n_records, 0);
    for (int k : fold_records(f)) held[k] = 1;
    std::vector<int> out;
    for (std::size_t k = 0; k < n_records; ++k) {
        if (!held[k]) out.push_back(static_cast<int>(k));
    }
    return out;
}

HoldoutPlan select_holdouts(const SpectraDataset& ds, int n_folds, std::uint64_t seed) {
    if (n_folds < 1) throw Error(ErrorKind::validation, "n_folds must be at least 1");
    const auto flags = holdout_eligibility(ds);
    HoldoutPlan plan;
    plan.n_folds = n_folds;
    plan.seed = seed;
    for (std::size_t k = 0; k < flags.size(); ++k) {
        if (flags[k].eligible()) {
            plan.records.push_back(static_cast<int>(k));
            plan.reasons.push_back(flags[k]);
        }
    }
    if (plan.records.empty()) {
        throw Error(ErrorKind::validation, "no record is eligible for hold-out");
    }
    // Fisher-Yates over positions, then deal round-robin
    std::vector<int> order(plan.records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = std::min(static_cast<std::size_t>(draw_uniform(rng) * static_cast<double>(i)), i - 1);
        std::swap(order[i - 1], order[j]);
    }
    plan.fold.assign(plan.records.size(), 0);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        plan.fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(n_folds));
    }
    return plan;
}

namespace {

double draw_conditional(const Gaussian& g, Rng& rng) {
    const double var = std::max(g.cov(0, 0), 0.0);
    return g.mean(0) + std::sqrt(var) * draw_normal(rng);
}

}  // namespace

std::vector<Eigen::MatrixXd> predict_spectra(const PosteriorSamples& samples, const ModelContext& ctx,
                                             const DesignIndex& design, const std::vector<PredictionTarget>& targets,
                                             Rng& rng, bool noise) {
    const int n_wave = ctx.n_wave();
    const auto n_draws = static_cast<Eigen::Index>(samples.draws.size());
    for (const auto& t : targets) {
        if (t.genus < 0 || t.genus >= ctx.n_genera()) {
            throw Error(ErrorKind::validation, "prediction target has an unknown genus");
        }
        if (t.site >= ctx.n_sites()) throw Error(ErrorKind::validation, "prediction target has an unknown site");
        if (t.site < 0 && t.covariates.size() != ctx.n_covariates()) {
            throw Error(ErrorKind::validation, "new-site target needs " + std::to_string(ctx.n_covariates()) +
                                                   " covariate values");
        }
    }
    // standardized covariates and coordinates per target
    std::vector<Eigen::VectorXd> x(targets.size());
    std::vector<Eigen::Vector2d> where(targets.size());
    std::vector<int> cell(targets.size(), -1);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& t = targets[i];
        if (t.site >= 0) {
            x[i] = ctx.X_site.row(t.site).transpose();
            where[i] = ctx.coords.row(t.site).transpose();
            cell[i] = design.find_cell(t.site, t.genus);
        } else {
            x[i] = design.standardize(t.covariates.transpose()).row(0).transpose();
            where[i] = t.coord;
        }
    }
    // coordinates of each genus's cells for kriging the spatial intercept
    std::vector<Eigen::MatrixX2d> genus_coords(ctx.n_genera());
    for (int g = 0; g < ctx.n_genera(); ++g) {
        const auto& cells = ctx.genus_cells[g];
        genus_coords[g].resize(static_cast<Eigen::Index>(cells.size()), 2);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            genus_coords[g].row(static_cast<Eigen::Index>(c)) = ctx.coords.row(ctx.cells[cells[c]].site);
        }
    }

    std::vector<Eigen::MatrixXd> out(targets.size(), Eigen::MatrixXd(n_draws, n_wave));
    for (Eigen::Index d = 0; d < n_draws; ++d) {
        const ChainState& s = samples.draws[static_cast<std::size_t>(d)];
        const Eigen::MatrixXd KB =
            ctx.n_covariates() > 0 ? Eigen::MatrixXd(ctx.kernel_beta(s.theta_beta) * s.B.transpose())
                                   : Eigen::MatrixXd::Zero(n_wave, 0);
        Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(n_wave, ctx.n_genera());
        if (ctx.has_gamma()) {
            const Eigen::MatrixXd Kg = ctx.kernel_gamma(s.theta_gamma);
            if (ctx.config.gamma_mode == GammaMode::global) {
                gamma.colwise() = Kg * s.gamma_star;
            } else {
                gamma = Kg * s.gamma_genus;
            }
        }
        Eigen::MatrixXd KA;
        if (ctx.has_factor_eta()) KA = ctx.kernel_eta(s.theta_eta) * s.A;
        const Eigen::VectorXd sd = ctx.sigma2(s.beta_sigma).array().sqrt();

        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto& t = targets[i];
            double level = s.alpha_genus(t.genus);
            if (ctx.has_alpha_spatial()) {
                if (cell[i] >= 0) {
                    level += s.alpha_spatial(cell[i]);
                } else {
                    const auto& cells = ctx.genus_cells[t.genus];
                    Eigen::VectorXd vals(static_cast<Eigen::Index>(cells.size()));
                    for (std::size_t c = 0; c < cells.size(); ++c) vals(static_cast<Eigen::Index>(c)) = s.alpha_spatial(cells[c]);
                    Eigen::MatrixX2d q(1, 2);
                    q.row(0) = where[i].transpose();
                    // an empty conditioning set returns the prior
                    level += draw_conditional(
                        gp_conditional(genus_coords[t.genus], vals, q, s.phi_alpha, s.sigma2_alpha_s, ctx.units), rng);
                }
            }
            Eigen::VectorXd curve = Eigen::VectorXd::Constant(n_wave, level);
            if (ctx.n_covariates() > 0) curve += KB * x[i];
            curve += gamma.col(t.genus);
            if (ctx.has_factor_eta()) {
                Eigen::VectorXd w(ctx.rank());
                if (t.site >= 0) {
                    w = s.w.row(t.site).transpose();
                } else {
                    Eigen::MatrixX2d q(1, 2);
                    q.row(0) = where[i].transpose();
                    for (int j = 0; j < ctx.rank(); ++j) {
                        w(j) = draw_conditional(gp_conditional(ctx.coords, s.w.col(j), q, s.phi_w(j), 1.0, ctx.units), rng);
                    }
                }
                curve += KA * w;
            } else if (ctx.config.eta_variant == EtaVariant::spatial_convolution) {
                Eigen::MatrixX2d q(1, 2);
                q.row(0) = where[i].transpose();
                const Eigen::RowVectorXd dist = cross_distance(q, ctx.spatial_knots, ctx.units).row(0);
                const Eigen::VectorXd k = (-0.5 * (dist.array() / ctx.spatial_bandwidth).square()).exp().transpose();
                curve += s.z_wave.transpose() * k;
            }
            if (noise) {
                for (int m = 0; m < n_wave; ++m) curve(m) += sd(m) * draw_normal(rng);
            }
            out[i].row(d) = curve.transpose();
        }
    }
    return out;
}

double crps_empirical(const Eigen::VectorXd& draws, double y) {
    const Eigen::Index m = draws.size();
    if (m < 1) throw Error(ErrorKind::validation, "crps needs at least one draw");
    std::vector<double> x(draws.data(), draws.data() + m);
    std::sort(x.begin(), x.end());
    double abs_err = 0.0;
    double spread = 0.0;  // half the sum over ordered pairs |x_i - x_j|, as gaps weighted by i (m - i)
    for (Eigen::Index i = 0; i < m; ++i) {
        abs_err += std::abs(x[static_cast<std::size_t>(i)] - y);
        if (i + 1 < m) {
            const double gap = x[static_cast<std::size_t>(i + 1)] - x[static_cast<std::size_t>(i)];
            spread += static_cast<double>(i + 1) * static_cast<double>(m - i - 1) * gap;
        }
    }
    const auto md = static_cast<double>(m);
    return std::max(0.0, abs_err / md - spread / (md * md));
}

RecordScore score_record(const Eigen::MatrixXd& draws, const Eigen::VectorXd& y) {
    if (draws.cols() != y.size()) throw Error(ErrorKind::validation, "draws and observation lengths differ");
    RecordScore r;
    const Eigen::Index n_wave = y.size();
    const Eigen::Index m = draws.rows();
    std::vector<double> col(static_cast<std::size_t>(m));
    for (Eigen::Index t = 0; t < n_wave; ++t) {
        const double mean = draws.col(t).mean();
        for (Eigen::Index i = 0; i < m; ++i) col[static_cast<std::size_t>(i)] = draws(i, t);
        std::sort(col.begin(), col.end());
        const std::size_t h = col.size() / 2;
        const double median = col.size() % 2 == 1 ? col[h] : 0.5 * (col[h - 1] + col[h]);
        r.mse += (mean - y(t)) * (mean - y(t));
        r.mae += std::abs(median - y(t));
        r.mcrps += crps_empirical(draws.col(t), y(t));
    }
    const auto n = static_cast<double>(n_wave);
    r.mse /= n;
    r.mae /= n;
    r.mcrps /= n;
    return r;
}

std::vector<double> relative_scores(const std::vector<double>& mcrps) {
    if (mcrps.empty()) throw Error(ErrorKind::validation, "no scores to compare");
    const double best = *std::min_element(mcrps.begin(), mcrps.end());
    if (!(best > 0.0)) throw Error(ErrorKind::validation, "scores must be positive");
    std::vector<double> out;
    out.reserve(mcrps.size());
    for (double v : mcrps) out.push_back(v / best);
    return out;
}

void ScoreReport::aggregate() {
    mse = mae = mcrps = 0.0;
    if (records.empty()) return;
    for (const auto& r : records) {
        mse += r.mse;
        mae += r.mae;
        mcrps += r.mcrps;
    }
    const auto n = static_cast<double>(records.size());
    mse /= n;
    mae /= n;
    mcrps /= n;
}

void score_models(std::vector<ScoreReport>& reports) {
    std::vector<double> m;
    for (const auto& r : reports) m.push_back(r.mcrps);
    const auto rel = relative_scores(m);
    for (std::size_t i = 0; i < reports.size(); ++i) reports[i].relative_mcrps = rel[i];
}

CrossvalResult crossval(const SpectraDataset& ds, const std::vector<NamedConfig>& models, int n_folds,
                        std::uint64_t seed, int threads) {
    if (models.empty()) throw Error(ErrorKind::validation, "crossval needs at least one model");
    CrossvalResult result;
    result.plan = select_holdouts(ds, n_folds, seed);
    const int n_models = static_cast<int>(models.size());
    const int n_jobs = n_models * n_folds;
    std::vector<std::vector<RecordScore>> job_scores(static_cast<std::size_t>(n_jobs));
    std::vector<FoldDetail> details(static_cast<std::size_t>(n_jobs));

    auto run_job = [&](int job) {
        const int m = job / n_folds;
        const int f = job % n_folds;
        FoldDetail& det = details[static_cast<std::size_t>(job)];
        det.model = models[static_cast<std::size_t>(m)].name;
        det.fold = f;
        const std::vector<int> test = result.plan.fold_records(f);
        det.n_test = static_cast<int>(test.size());
        if (test.empty()) return;
        const std::vector<int> train = result.plan.training_records(f, ds.n_records());
        const SpectraDataset train_ds = ds.subset(train);
        const DesignIndex design = build_design(train_ds);
        ModelConfig cfg = models[static_cast<std::size_t>(m)].config;
        cfg.mcmc.seed = derive_seed(derive_seed(seed, 1 + static_cast<std::uint64_t>(m)), static_cast<std::uint64_t>(f));
        const ModelContext ctx = make_context(train_ds, design, cfg);
        det.n_train = ctx.n_records();
        det.likelihood_terms = static_cast<std::int64_t>(ctx.n_records()) * ctx.n_wave();
        const PosteriorSamples samples = run_chain(ctx);
        std::vector<PredictionTarget> targets;
        for (int k : test) {
            PredictionTarget t;
            t.genus = ds.records[static_cast<std::size_t>(k)].genus;
            t.site = ds.records[static_cast<std::size_t>(k)].site;
            targets.push_back(t);
        }
        Rng rng(derive_seed(derive_seed(seed, 1001 + static_cast<std::uint64_t>(m)), static_cast<std::uint64_t>(f)));
        const auto draws = predict_spectra(samples, ctx, design, targets, rng, true);
        auto& scores = job_scores[static_cast<std::size_t>(job)];
        for (std::size_t i = 0; i < test.size(); ++i) {
            RecordScore r = score_record(draws[i], ds.responses.col(test[i]));
            r.record = test[i];
            scores.push_back(r);
            det.mse += r.mse;
            det.mae += r.mae;
            det.mcrps += r.mcrps;
        }
        det.mse /= static_cast<double>(test.size());
        det.mae /= static_cast<double>(test.size());
        det.mcrps /= static_cast<double>(test.size());
    };

    parallel_for(n_jobs, threads, run_job);

    for (int m = 0; m < n_models; ++m) {
        ScoreReport rep;
        rep.model = models[static_cast<std::size_t>(m)].name;
        for (int f = 0; f < n_folds; ++f) {
            const auto& s = job_scores[static_cast<std::size_t>(m * n_folds + f)];
            rep.records.insert(rep.records.end(), s.begin(), s.end());
        }
        std::sort(rep.records.begin(), rep.records.end(),
                  [](const RecordScore& a, const RecordScore& b) { return a.record < b.record; });
        rep.aggregate();
        result.models.push_back(std::move(rep));
    }
    score_models(result.models);
    result.folds = std::move(details);
    return result;
}

}  // namespace spacewave
