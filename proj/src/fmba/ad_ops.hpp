#pragma once

// Vector-valued tape kernels with hand-written adjoints.

#include <Eigen/Core>

#include <functional>
#include <span>

#include "fmba/ad.hpp"

namespace fmba::ad {

using VarVector = Eigen::Matrix<Var, Eigen::Dynamic, 1>;
using VarMatrix = Eigen::Matrix<Var, Eigen::Dynamic, Eigen::Dynamic>;

/// Finds the tape shared by a set of values, or nullptr if all are constant.
Tape* find_tape(std::span<const Var> values);

/// y = W x + b as a single tape op.
VarVector affine(const VarMatrix& weights, const VarVector& bias, const VarVector& x);

/// G = M^T M for a row-major rows x cols matrix. Entries (a, b) and (b, a)
/// share one tape node.
VarMatrix gram(std::span<const Var> m, Eigen::Index rows, Eigen::Index cols);

using SymmetricSolver = std::function<Eigen::VectorXd(const Eigen::MatrixXd&, const Eigen::VectorXd&)>;

/// x = A^{-1} b for symmetric A. The backward pass solves A v = dL/dx with
/// the same solver, then dL/db = v and dL/dA = -v x^T.
VarVector solve_symmetric(const VarMatrix& a, const VarVector& b, const SymmetricSolver& solver);

Eigen::MatrixXd values(const VarMatrix& m);
Eigen::VectorXd values(const VarVector& v);

}  // namespace fmba::ad
