#pragma once

// Seeded generators for test inputs. Everything is drawn from gm::NormalStream
// so a (seed, stream) pair pins the whole case.

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

#include "gaussmarkov/rng.hpp"
#include "gaussmarkov/semigroup.hpp"

namespace testing {

inline Eigen::MatrixXd gaussian_matrix(gm::NormalStream& rng, Eigen::Index rows, Eigen::Index cols)
{
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng();
    return m;
}

/// B B^T / cols + shift I.
inline Eigen::MatrixXd random_spd(gm::NormalStream& rng, Eigen::Index n, double shift = 0.1, Eigen::Index cols = -1)
{
    if (cols < 0) cols = n;
    const Eigen::MatrixXd b = gaussian_matrix(rng, n, cols);
    return b * b.transpose() / static_cast<double>(cols) + shift * Eigen::MatrixXd::Identity(n, n);
}

/// A = scale G / sqrt(n) - shift I has spectral abscissa near scale - shift;
/// Q_diff is a (possibly rank-deficient) Gram matrix.
inline gm::GeneratorModel<double> random_stable_model(std::uint64_t seed, Eigen::Index n, double scale = 0.5,
                                                      double shift = 1.0, Eigen::Index noise_rank = -1)
{
    gm::NormalStream rng(seed, 0x6d6f64656cull);
    Eigen::MatrixXd a = scale * gaussian_matrix(rng, n, n) / std::sqrt(static_cast<double>(n)) -
                        shift * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b = gaussian_matrix(rng, n, 1).col(0);
    if (noise_rank < 0) noise_rank = n;
    Eigen::MatrixXd q = noise_rank == 0 ? Eigen::MatrixXd::Zero(n, n)
                                        : random_spd(rng, n, 0.0, noise_rank).eval();
    return gm::GeneratorModel<double>(std::move(a), std::move(b), q);
}

inline gm::GeneratorModel<double> scalar_ou()
{
    return gm::GeneratorModel<double>(Eigen::MatrixXd::Constant(1, 1, -1.0), Eigen::VectorXd::Constant(1, 1.0),
                                      Eigen::MatrixXd::Constant(1, 1, 2.0), 1.0);
}

}  // namespace testing
