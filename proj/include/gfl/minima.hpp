#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gfl/common.hpp"
#include "gfl/distrib.hpp"

namespace gfl {

struct QflDescent {
    double target = 0.0;
    double sigma = 0.5;
    int iterations = 0;
};

/// Gradient descent on the logit of qfl(., y, beta) from logit 0, with a backtracking
/// line search whose trial step doubles after every accepted step.
QflDescent qfl_descent(double y, double beta, int max_iterations = 10000);

struct DflDescent {
    double target = 0.0;
    double estimate = 0.0;
    /// Probability mass on the two knots adjacent to the target.
    double adjacent_mass = 0.0;
    int iterations = 0;
};

/// Descent on dfl over the logits from uniform logits. The direction is the gradient
/// divided by the softmax probabilities (a diagonal preconditioner), with Armijo
/// backtracking from step 1.
DflDescent dfl_descent(double y, const Support& support, int max_iterations = 10000);

struct GflSearch {
    double y_l = 0.0;
    double y_r = 1.0;
    double y = 0.5;
    double beta = 0.0;
    double minimizer_value = 0.0;
    /// Smallest GFL value over the random simplex candidates.
    double best_candidate = 0.0;
};

/// Compares gfl at gfl_minimizer(y_l, y_r, y) with `candidates` random points of the simplex.
GflSearch gfl_random_search(double y_l, double y_r, double y, double beta, int candidates, Rng& rng);

/// For beta = 0, grid search over p_yl in [1e-4, 1 - 1e-4] (step 1e-4); returns the
/// distance between the grid argmin and the closed-form p_yl.
double gfl_grid_argmin_distance(double y_l, double y_r, double y);

struct MinimaCheck {
    std::string name;
    int cases = 0;
    /// Worst observed value of the checked quantity (direction depends on the check).
    double worst = 0.0;
    double threshold = 0.0;
    bool passed = false;
};

struct MinimaOptions {
    int qfl_targets = 100;
    int dfl_targets = 100;
    int gfl_cases = 20;
    int gfl_candidates = 100000;
    int specialization_samples = 10000;
    std::uint64_t seed = 0;
    Support support{};
    double beta = 2.0;
};

std::vector<MinimaCheck> run_minima(const MinimaOptions& o);

/// CSV `check,cases,worst,threshold,status`.
std::string minima_csv(std::span<const MinimaCheck> checks);

}   // namespace gfl
