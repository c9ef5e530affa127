#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace kbc {

// Weighted real-valued conjunction
//
//   and(x; beta, w) = clamp(beta - w.(1 - x), 0, 1)
//
// subject to, for a fixed alpha in (1/2, 1]:
//   (1) beta - alpha*w_i <= 1 - alpha   for every i   (any low input -> low)
//   (2) beta - (1-alpha) * sum(w) >= alpha            (all high inputs -> high)
//   (3) w >= 0                                        (monotone)
//
// beta = 1, w = 1 recovers the Lukasiewicz t-norm.
struct LnnConjunction {
  double beta = 1.0;
  std::vector<double> weights;
  double alpha = 0.7;

  std::size_t arity() const { return weights.size(); }
};

struct ConjGrads {
  double beta = 0.0;
  std::vector<double> weights;
  std::vector<double> inputs;
};

namespace detail {
inline void check_arity(const LnnConjunction& op, std::span<const double> x) {
  if (x.size() != op.weights.size())
    throw std::invalid_argument("LnnConjunction: input size " + std::to_string(x.size()) +
                                " != arity " + std::to_string(op.weights.size()));
}
}  // namespace detail

inline double conj_preclip(const LnnConjunction& op, std::span<const double> x) {
  double z = op.beta;
  for (std::size_t i = 0; i < x.size(); ++i) z -= op.weights[i] * (1.0 - x[i]);
  return z;
}

inline double conj_forward(const LnnConjunction& op, std::span<const double> x) {
  detail::check_arity(op, x);
  return std::clamp(conj_preclip(op, x), 0.0, 1.0);
}

// Subgradients of conj_forward. Outside [0, 1] the clamp is flat and all
// gradients vanish; at exactly 0 or 1 we take the pass-through (interior)
// side, so finite-difference checks must avoid exact boundary points.
inline ConjGrads conj_backward(const LnnConjunction& op, std::span<const double> x,
                               double upstream) {
  detail::check_arity(op, x);
  ConjGrads g;
  g.weights.assign(x.size(), 0.0);
  g.inputs.assign(x.size(), 0.0);
  const double z = conj_preclip(op, x);
  if (z < 0.0 || z > 1.0) return g;
  g.beta = upstream;
  for (std::size_t i = 0; i < x.size(); ++i) {
    g.weights[i] = -(1.0 - x[i]) * upstream;
    g.inputs[i] = op.weights[i] * upstream;
  }
  return g;
}

// De Morgan dual: or(x) = 1 - and(1 - x).
inline double disj_forward(const LnnConjunction& op, std::span<const double> x) {
  detail::check_arity(op, x);
  std::vector<double> flipped(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) flipped[i] = 1.0 - x[i];
  return 1.0 - conj_forward(op, flipped);
}

// Mixture: pred(x; w) = w.x with w on the probability simplex.
inline double pred_forward(std::span<const double> weights, std::span<const double> x) {
  if (weights.size() != x.size())
    throw std::invalid_argument("pred_forward: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += weights[i] * x[i];
  return acc;
}

// Euclidean projection onto {w >= 0, sum(w) = 1} (Held et al. threshold rule).
inline void project_simplex(std::vector<double>& w) {
  if (w.empty()) throw std::invalid_argument("project_simplex: empty vector");
  std::vector<double> sorted(w);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0, tau = 0.0;
  std::size_t support = 0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumsum += sorted[j];
    const double cand = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - cand > 0.0) {
      tau = cand;
      support = j + 1;
    }
  }
  (void)support;
  for (double& v : w) v = std::max(0.0, v - tau);
}

inline std::vector<double> uniform_simplex(std::size_t k) {
  if (k == 0) throw std::invalid_argument("uniform_simplex: k must be >= 1");
  return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

inline double conjunction_violation(const LnnConjunction& op) {
  double v = 0.0;
  double wsum = 0.0;
  for (double w : op.weights) {
    v = std::max(v, -w);
    v = std::max(v, op.beta - op.alpha * w - (1.0 - op.alpha));
    wsum += w;
  }
  v = std::max(v, op.alpha - (op.beta - (1.0 - op.alpha) * wsum));
  return v;
}

inline bool conjunction_feasible(const LnnConjunction& op, double tol = 1e-9) {
  return conjunction_violation(op) <= tol;
}

// Exact Euclidean projection of (beta, w) onto the feasible polyhedron by
// active-set enumeration. Per coordinate the optimum has w_i free, pinned at
// zero, or on its Eq-1 plane, and Eq 2 is active or not: 2 * 3^n candidate
// KKT systems, each reducible to a 2x2 solve. Fine for the small arities a
// chain rule needs (cyclic projection was tried first and crawls along the
// thin wedge between the Eq-1 and Eq-2 planes).
inline void project_conjunction(LnnConjunction& op, double tol = 1e-9) {
  const std::size_t n = op.weights.size();
  if (n == 0) throw std::invalid_argument("project_conjunction: empty weights");
  if (n > 12) throw std::invalid_argument("project_conjunction: arity > 12 unsupported");
  if (conjunction_feasible(op, tol)) return;  // fixed point

  const double a = op.alpha;
  const double b0 = op.beta;
  const std::vector<double> w0 = op.weights;

  double best_dist = std::numeric_limits<double>::max();
  double best_beta = 0.0;
  std::vector<double> best_w;

  // state digit per coordinate: 0 = free, 1 = at zero, 2 = on the Eq-1 plane
  std::vector<int> state(n, 0);
  std::vector<double> w(n);
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= 3;

  constexpr double kSlack = 1e-10;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t rem = code;
    std::size_t e = 0, f = 0;
    double se = 0.0, sf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      state[i] = static_cast<int>(rem % 3);
      rem /= 3;
      if (state[i] == 2) {
        ++e;
        se += w0[i];
      } else if (state[i] == 0) {
        ++f;
        sf += w0[i];
      }
    }
    for (int eq2_active = 0; eq2_active < 2; ++eq2_active) {
      // stationarity in beta gives  beta*(1 + e/a^2) - mu*(1 - e(1-a)/a)
      //                               = b0 + se/a + e(1-a)/a^2
      const double c11 = 1.0 + static_cast<double>(e) / (a * a);
      const double c12 = -(1.0 - static_cast<double>(e) * (1.0 - a) / a);
      const double r1 = b0 + se / a + static_cast<double>(e) * (1.0 - a) / (a * a);
      double beta, mu;
      if (!eq2_active) {
        mu = 0.0;
        beta = r1 / c11;
      } else {
        // active Eq 2:  beta*(1 - e(1-a)/a) + mu*f(1-a)^2
        //                 = a - e(1-a)^2/a + (1-a)*sf
        const double c21 = 1.0 - static_cast<double>(e) * (1.0 - a) / a;
        const double c22 = static_cast<double>(f) * (1.0 - a) * (1.0 - a);
        const double r2 = a - static_cast<double>(e) * (1.0 - a) * (1.0 - a) / a + (1.0 - a) * sf;
        const double det = c11 * c22 - c12 * c21;
        if (std::abs(det) < 1e-14) continue;
        beta = (r1 * c22 - c12 * r2) / det;
        mu = (c11 * r2 - c21 * r1) / det;
        if (mu < -kSlack) continue;
      }
      const double we = (beta - (1.0 - a)) / a;  // shared value on the Eq-1 plane
      bool ok = true;
      double wsum = 0.0;
      for (std::size_t i = 0; i < n && ok; ++i) {
        if (state[i] == 2) {
          w[i] = we;
          const double lambda = (we - w0[i] + mu * (1.0 - a)) / a;
          if (lambda < -kSlack || w[i] < -kSlack) ok = false;
        } else if (state[i] == 1) {
          w[i] = 0.0;
          const double nu = mu * (1.0 - a) - w0[i];
          if (nu < -kSlack) ok = false;
          if (beta - (1.0 - a) > kSlack) ok = false;  // Eq 1 must still hold at w_i = 0
        } else {
          w[i] = w0[i] - mu * (1.0 - a);
          if (w[i] < -kSlack) ok = false;
          if (beta - a * w[i] - (1.0 - a) > kSlack) ok = false;
        }
        wsum += w[i];
      }
      if (!ok) continue;
      const double eq2 = beta - (1.0 - a) * wsum;
      if (!eq2_active && eq2 < a - kSlack) continue;
      double dist = (beta - b0) * (beta - b0);
      for (std::size_t i = 0; i < n; ++i) dist += (w[i] - w0[i]) * (w[i] - w0[i]);
      if (dist < best_dist) {
        best_dist = dist;
        best_beta = beta;
        best_w = w;
      }
    }
  }
  if (best_w.empty())
    throw std::runtime_error("project_conjunction: no KKT candidate found (alpha in (0.5, 1]?)");
  op.beta = best_beta;
  op.weights = std::move(best_w);
  // Clear the tiny negatives tolerated during candidate screening.
  for (double& v : op.weights) v = std::max(0.0, v);
}

// Neutral deterministic start: the Lukasiewicz point pushed into the
// feasible set.
inline LnnConjunction initial_conjunction(std::size_t arity, double alpha) {
  LnnConjunction op;
  op.beta = 1.0;
  op.weights.assign(arity, 1.0);
  op.alpha = alpha;
  project_conjunction(op);
  return op;
}

}  // namespace kbc
