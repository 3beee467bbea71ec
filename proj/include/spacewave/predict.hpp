#pragma once

#include "spacewave/config.hpp"
#include "spacewave/data_model.hpp"
#include "spacewave/likelihood.hpp"
#include "spacewave/rng.hpp"
#include "spacewave/sampler.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace spacewave {

/// Why a record may be held out: another spectrum at its site, and its genus observed at another site.
struct Eligibility {
    bool co_sited = false;
    bool genus_elsewhere = false;

    [[nodiscard]] bool eligible() const { return co_sited && genus_elsewhere; }
};

[[nodiscard]] std::vector<Eligibility> holdout_eligibility(const SpectraDataset& ds);

struct HoldoutPlan {
    std::vector<int> records;  // held-out record rows, ascending
    std::vector<Eligibility> reasons;
    std::vector<int> fold;     // fold of each held-out record
    int n_folds = 10;
    std::uint64_t seed = 0;

    [[nodiscard]] std::vector<int> fold_records(int f) const;
    /// Records used to fit fold f: everything except that fold's held-out records.
    [[nodiscard]] std::vector<int> training_records(int f, std::size_t n_records) const;
};

/// Every eligible record, shuffled with `seed` and dealt round-robin into `n_folds` folds.
[[nodiscard]] HoldoutPlan select_holdouts(const SpectraDataset& ds, int n_folds, std::uint64_t seed);

/// A spectrum to predict: a genus at a fitted site, or at a new location with raw covariates.
struct PredictionTarget {
    int genus = 0;
    int site = -1;  // row in the fitted site table, or -1 for a new site
    Eigen::Vector2d coord = Eigen::Vector2d::Zero();
    Eigen::VectorXd covariates;  // raw scale, used only for new sites
};

/// One predictive draw per kept draw for each target (composition sampling): spatial intercepts and
/// latent factors are kriged to the target, then observation noise is added when `noise` is set.
/// Returns one N_draws x N_wave matrix per target.
[[nodiscard]] std::vector<Eigen::MatrixXd> predict_spectra(const PosteriorSamples& samples, const ModelContext& ctx,
                                                           const DesignIndex& design,
                                                           const std::vector<PredictionTarget>& targets, Rng& rng,
                                                           bool noise = true);

/// (1/M) sum |x_m - y| - (1/(2 M^2)) sum sum |x_m - x_l|, evaluated in O(M log M).
[[nodiscard]] double crps_empirical(const Eigen::VectorXd& draws, double y);

struct RecordScore {
    int record = -1;
    double mse = 0.0;    // predictive mean
    double mae = 0.0;    // predictive median
    double mcrps = 0.0;  // CRPS averaged over wavelengths
};

/// `draws` is M x N_wave, `y` the observed curve.
[[nodiscard]] RecordScore score_record(const Eigen::MatrixXd& draws, const Eigen::VectorXd& y);

/// Each MCRPS divided by the smallest.
[[nodiscard]] std::vector<double> relative_scores(const std::vector<double>& mcrps);

struct ScoreReport {
    std::string model;
    std::vector<RecordScore> records;
    double mse = 0.0;
    double mae = 0.0;
    double mcrps = 0.0;
    double relative_mcrps = 1.0;

    /// Means over records.
    void aggregate();
};

/// Fills relative_mcrps across the reports.
void score_models(std::vector<ScoreReport>& reports);

struct NamedConfig {
    std::string name;
    ModelConfig config;
};

struct FoldDetail {
    std::string model;
    int fold = 0;
    int n_train = 0;
    int n_test = 0;
    std::int64_t likelihood_terms = 0;  // N_wave x training records actually in the likelihood
    double mse = 0.0;
    double mae = 0.0;
    double mcrps = 0.0;
};

struct CrossvalResult {
    HoldoutPlan plan;
    std::vector<ScoreReport> models;
    std::vector<FoldDetail> folds;
};

/// Fits every model on every fold's training records and scores its held-out predictions.
/// Jobs run on up to `threads` threads; results do not depend on the thread count.
[[nodiscard]] CrossvalResult crossval(const SpectraDataset& ds, const std::vector<NamedConfig>& models, int n_folds,
                                      std::uint64_t seed, int threads = 1);

}  // namespace spacewave
