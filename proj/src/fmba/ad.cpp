#include "fmba/ad.hpp"

namespace fmba::ad {

Var Tape::variable(double v) { return Var(v, push(-1, 0.0), this); }

std::int32_t Tape::push(std::int32_t p0, double d0, std::int32_t p1, double d1) {
  nodes_.push_back({p0, p1, d0, d1});
  custom_at_.push_back(-1);
  return static_cast<std::int32_t>(nodes_.size() - 1);
}

std::int32_t Tape::custom(std::int32_t count, Backward backward) {
  const auto first = static_cast<std::int32_t>(nodes_.size());
  for (std::int32_t k = 0; k < count; ++k) push(-1, 0.0);
  if (count > 0) {
    custom_at_[static_cast<std::size_t>(first)] = static_cast<std::int32_t>(customs_.size());
    customs_.emplace_back(first, std::move(backward));
  }
  return first;
}

Adjoints Tape::backward(std::span<const std::pair<std::int32_t, double>> seeds) const {
  Adjoints adj(nodes_.size());
  for (const auto& [id, g] : seeds) adj.add(id, g);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const std::int32_t op = custom_at_[i];
    if (op >= 0) {
      const auto& [first, fn] = customs_[static_cast<std::size_t>(op)];
      fn(adj, first);
      continue;
    }
    const double g = adj[static_cast<std::int32_t>(i)];
    if (g == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.p0 >= 0) adj.add(n.p0, g * n.d0);
    if (n.p1 >= 0) adj.add(n.p1, g * n.d1);
  }
  return adj;
}

Adjoints Tape::backward(const Var& output) const {
  const std::pair<std::int32_t, double> seed{output.id, 1.0};
  return backward(std::span(&seed, 1));
}

}  // namespace fmba::ad
