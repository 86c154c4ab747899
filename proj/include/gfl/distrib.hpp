#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gfl {

/// Evenly spaced regression support {y0, y0 + delta, ..., y0 + n * delta}.
struct Support {
    double y0 = 0.0;
    int n = 16;
    double delta = 1.0;

    double knot(int i) const { return y0 + i * delta; }
    double max() const { return y0 + n * delta; }
    int size() const { return n + 1; }

    void validate() const;

    friend bool operator==(const Support&, const Support&) = default;
};

/// Probabilities over the knots of a Support.
struct DiscreteDistribution {
    std::vector<double> probs;
};

/// Target y split across its neighbouring knots: y = w_left * y_i + w_right * y_{i+1}.
struct ProjectedTarget {
    int left_index = 0;
    double w_left = 1.0;
    double w_right = 0.0;
};

enum class RegressorKind { Dirac, Gaussian, General };

/// Raw outputs per box side: 1 (offset), 2 (mean, log-variance) or n + 1 (knot logits).
int side_arity(RegressorKind kind, const Support& support);

const char* to_string(RegressorKind kind);
RegressorKind regressor_from_string(const std::string& s);

DiscreteDistribution softmax(std::span<const double> logits);

/// log softmax, computed with a log-sum-exp shift.
std::vector<double> log_softmax(std::span<const double> logits);

double expectation(const DiscreteDistribution& dist, const Support& support);

/// d expectation(softmax(z)) / dz_j = S_j (y_j - y_hat).
std::vector<double> expectation_jacobian(std::span<const double> logits, const Support& support);

/// Upper clamp offset applied before projection so the right neighbour always exists.
inline constexpr double kProjectionUpperMargin = 1e-6;

ProjectedTarget project_target(double y, const Support& support);

// ---------------------------------------------------------------------------
// Disturbance simulation
// ---------------------------------------------------------------------------

struct DisturbanceConfig {
    std::vector<double> targets{1.5, 2.5, 3.5};
    double perturb_norm = 0.1;
    int trials = 100;
    std::uint64_t seed = 0;
    int feature_dim = 16;
    Support support{};
    double dirac_lr = 0.1;
    double general_lr = 1.0;
    int max_iterations = 20000;
    double tolerance = 1e-3;

    friend bool operator==(const DisturbanceConfig&, const DisturbanceConfig&) = default;
};

struct DisturbanceCell {
    std::string representation;   // "dirac" or "general"
    double target = 0.0;
    double median_error = 0.0;
    int trials = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    int iterations = 0;
};

/// Trains a linear Dirac head and a linear General-distribution head (DFL) on one fixed
/// unit feature per target, then reports the median output change under random
/// perturbations of the feature. Cells that fail to converge are flagged, not thrown.
std::vector<DisturbanceCell> disturbance_experiment(const DisturbanceConfig& config);

/// CSV with header: representation,target,median_error,trials,seed
std::string disturbance_csv(std::span<const DisturbanceCell> cells);

}   // namespace gfl
