#include "fmba/ad_ops.hpp"

#include <vector>

namespace fmba::ad {

Tape* find_tape(std::span<const Var> values) {
  for (const auto& v : values) {
    if (v.tracked()) return v.tape;
  }
  return nullptr;
}

Eigen::MatrixXd values(const VarMatrix& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) out(r, c) = m(r, c).val;
  }
  return out;
}

Eigen::VectorXd values(const VarVector& v) {
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = v[i].val;
  return out;
}

namespace {

template <typename M>
std::vector<std::int32_t> ids_of(const M& m) {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) ids[static_cast<std::size_t>(i)] = m.data()[i].id;
  return ids;
}

template <typename M>
Tape* tape_in(const M& m) {
  return find_tape(std::span<const Var>(m.data(), static_cast<std::size_t>(m.size())));
}

}  // namespace

VarVector affine(const VarMatrix& weights, const VarVector& bias, const VarVector& x) {
  const Eigen::MatrixXd w = values(weights);
  const Eigen::VectorXd xv = values(x);
  const Eigen::VectorXd y = w * xv + values(bias);
  VarVector out(y.size());
  Tape* tape = tape_in(weights);
  if (tape == nullptr) tape = tape_in(bias);
  if (tape == nullptr) tape = tape_in(x);
  if (tape == nullptr) {
    for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = Var(y[i]);
    return out;
  }
  const auto first = tape->custom(
      static_cast<std::int32_t>(y.size()),
      [w, xv, w_ids = ids_of(weights), b_ids = ids_of(bias), x_ids = ids_of(x)](Adjoints& adj, std::int32_t first) {
        const Eigen::Index n_out = w.rows();
        const Eigen::Index n_in = w.cols();
        Eigen::VectorXd gy(n_out);
        for (Eigen::Index o = 0; o < n_out; ++o) gy[o] = adj[first + static_cast<std::int32_t>(o)];
        if (gy.isZero(0.0)) return;
        // Column-major storage: W(o, i) lives at o + i * n_out.
        for (Eigen::Index i = 0; i < n_in; ++i) {
          for (Eigen::Index o = 0; o < n_out; ++o) adj.add(w_ids[static_cast<std::size_t>(o + i * n_out)], gy[o] * xv[i]);
        }
        for (Eigen::Index o = 0; o < n_out; ++o) adj.add(b_ids[static_cast<std::size_t>(o)], gy[o]);
        const Eigen::VectorXd gx = w.transpose() * gy;
        for (Eigen::Index i = 0; i < n_in; ++i) adj.add(x_ids[static_cast<std::size_t>(i)], gx[i]);
      });
  for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = Var(y[i], first + static_cast<std::int32_t>(i), tape);
  return out;
}

VarMatrix gram(std::span<const Var> m, Eigen::Index rows, Eigen::Index cols) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mv(rows, cols);
  std::vector<std::int32_t> ids(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    mv.data()[i] = m[i].val;
    ids[i] = m[i].id;
  }
  const Eigen::MatrixXd g = mv.transpose() * mv;
  VarMatrix out(cols, cols);
  Tape* tape = find_tape(m);
  if (tape == nullptr) {
    for (Eigen::Index a = 0; a < cols; ++a) {
      for (Eigen::Index b = 0; b < cols; ++b) out(a, b) = Var(g(a, b));
    }
    return out;
  }
  const auto n_out = static_cast<std::int32_t>(cols * (cols + 1) / 2);
  const auto first = tape->custom(n_out, [mv, ids = std::move(ids), cols](Adjoints& adj, std::int32_t first) {
    Eigen::MatrixXd sym(cols, cols);
    std::int32_t k = first;
    bool any = false;
    for (Eigen::Index a = 0; a < cols; ++a) {
      for (Eigen::Index b = a; b < cols; ++b, ++k) {
        const double g = adj[k];
        any = any || g != 0.0;
        if (a == b) {
          sym(a, a) = 2.0 * g;
        } else {
          sym(a, b) = g;
          sym(b, a) = g;
        }
      }
    }
    if (!any) return;
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gm = mv * sym;
    for (Eigen::Index i = 0; i < gm.size(); ++i) adj.add(ids[static_cast<std::size_t>(i)], gm.data()[i]);
  });
  std::int32_t k = first;
  for (Eigen::Index a = 0; a < cols; ++a) {
    for (Eigen::Index b = a; b < cols; ++b, ++k) {
      out(a, b) = Var(g(a, b), k, tape);
      out(b, a) = out(a, b);
    }
  }
  return out;
}

VarVector solve_symmetric(const VarMatrix& a, const VarVector& b, const SymmetricSolver& solver) {
  const Eigen::MatrixXd av = values(a);
  const Eigen::VectorXd x = solver(av, values(b));
  VarVector out(x.size());
  Tape* tape = tape_in(a);
  if (tape == nullptr) tape = tape_in(b);
  if (tape == nullptr) {
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = Var(x[i]);
    return out;
  }
  const auto first = tape->custom(static_cast<std::int32_t>(x.size()),
                                  [av, x, solver, a_ids = ids_of(a), b_ids = ids_of(b)](Adjoints& adj, std::int32_t first) {
                                    const Eigen::Index n = x.size();
                                    Eigen::VectorXd gx(n);
                                    for (Eigen::Index i = 0; i < n; ++i) gx[i] = adj[first + static_cast<std::int32_t>(i)];
                                    if (gx.isZero(0.0)) return;
                                    const Eigen::VectorXd v = solver(av, gx);
                                    for (Eigen::Index i = 0; i < n; ++i) adj.add(b_ids[static_cast<std::size_t>(i)], v[i]);
                                    for (Eigen::Index c = 0; c < n; ++c) {
                                      for (Eigen::Index r = 0; r < n; ++r) {
                                        adj.add(a_ids[static_cast<std::size_t>(r + c * n)], -v[r] * x[c]);
                                      }
                                    }
                                  });
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = Var(x[i], first + static_cast<std::int32_t>(i), tape);
  return out;
}

}  // namespace fmba::ad
