#pragma once

// Two-sample statistics for group comparisons: descriptive summaries,
// Shapiro-Wilk normality (Royston's AS R94), the pooled-variance Student t
// test and the Mann-Whitney U test (normal approximation with tie and
// continuity corrections, plus exact enumeration for small samples).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vvp/error.hpp"

namespace vvp::stats {

struct GroupSummary {
  std::string metric_name;
  std::size_t n = 0;
  double mean = 0;
  double median = 0;
  double sample_sd = 0;  // n-1 denominator; 0 when n == 1
  double min = 0;
  double max = 0;
  bool degenerate = false;  // n == 1, sd undefined
  std::vector<double> values;
};

inline GroupSummary aggregate_group(std::span<const double> values, std::string metric_name = {}) {
  if (values.empty()) throw StatsError(StatsErrorKind::EmptySample, "empty sample for '" + metric_name + "'");
  GroupSummary g;
  g.metric_name = std::move(metric_name);
  g.values.assign(values.begin(), values.end());
  g.n = values.size();
  g.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(g.n);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  g.min = sorted.front();
  g.max = sorted.back();
  const std::size_t mid = g.n / 2;
  g.median = g.n % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2.0;
  if (g.n == 1) {
    g.degenerate = true;
  } else {
    double ss = 0;
    for (double v : values) ss += (v - g.mean) * (v - g.mean);
    g.sample_sd = std::sqrt(ss / static_cast<double>(g.n - 1));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Distributions

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_upper_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Wichura's AS 241 (PPND16), accurate to about 1e-16.
inline double normal_quantile(double p) {
  if (p <= 0) return -std::numeric_limits<double>::infinity();
  if (p >= 1) return std::numeric_limits<double>::infinity();
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r + 6.7265770927008700853e+4) * r +
                4.5921953931549871457e+4) * r + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r + 3.9307895800092710610e+4) * r +
                2.1213794301586595867e+4) * r + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  double r = q < 0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
               1.27045825245236838258e0) * r + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
               1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
               2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
               7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0 ? -val : val;
}

namespace detail {

// Continued fraction for the incomplete beta (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double student_t_two_tailed(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  return std::clamp(incomplete_beta(df / 2.0, 0.5, df / (df + t * t)), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Tests

enum class TestKind { ShapiroWilk, StudentT, MannWhitneyU };

inline std::string_view to_string(TestKind k) {
  switch (k) {
    case TestKind::ShapiroWilk: return "ShapiroWilk";
    case TestKind::StudentT: return "StudentT";
    case TestKind::MannWhitneyU: return "MannWhitneyU";
  }
  return "?";
}

struct TestResult {
  TestKind test = TestKind::ShapiroWilk;
  double statistic = 0;
  std::optional<double> df;       // StudentT
  std::optional<double> u;        // MannWhitneyU
  std::optional<double> z;        // MannWhitneyU
  double p_two_tailed = 1;
  std::optional<double> p_exact;  // MannWhitneyU, small samples
};

namespace detail {

inline double poly(std::span<const double> c, double x) {
  double r = 0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) r = r * x + *it;
  return r;
}

}  // namespace detail

/// Shapiro-Wilk W and p-value for 3 <= n <= 5000 (AS R94, uncensored).
inline TestResult shapiro_wilk(std::span<const double> sample) {
  const std::size_t n = sample.size();
  if (n < 3) throw StatsError(StatsErrorKind::SampleTooSmall, "Shapiro-Wilk needs at least 3 values");
  if (n > 5000) throw StatsError(StatsErrorKind::SampleTooSmall, "Shapiro-Wilk supports at most 5000 values");
  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double range = x.back() - x.front();
  if (!(range > 0) || range < 1e-19 * std::max(1.0, std::abs(x.back())))
    throw StatsError(StatsErrorKind::ConstantSample, "Shapiro-Wilk needs a non-constant sample");

  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static constexpr double c3[] = {0.5440, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};
  static constexpr double g[] = {-2.273, 0.459};

  const double an = static_cast<double>(n);
  const std::size_t half = n / 2;
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    const double an25 = an + 0.25;
    double summ2 = 0;
    for (std::size_t i = 0; i < half; ++i) {
      a[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / an25);
      summ2 += a[i] * a[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = detail::poly(c1, rsn) - a[0] / ssumm2;
    std::size_t first_scaled;
    double fac;
    if (n > 5) {
      const double a2 = -a[1] / ssumm2 + detail::poly(c2, rsn);
      fac = std::sqrt((summ2 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[0] = a1;
      a[1] = a2;
      first_scaled = 2;
    } else {
      fac = std::sqrt((summ2 - 2.0 * a[0] * a[0]) / (1.0 - 2.0 * a1 * a1));
      a[0] = a1;
      first_scaled = 1;
    }
    for (std::size_t i = first_scaled; i < half; ++i) a[i] = -a[i] / fac;
  }

  // W as the squared correlation between the ordered sample and the
  // (antisymmetric) coefficient vector; scale-free by construction.
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / an;
  double num = 0, ss = 0;
  for (std::size_t i = 0; i < half; ++i) num += a[i] * ((x[n - 1 - i] - mean) - (x[i] - mean));
  for (double v : x) ss += (v - mean) * (v - mean);
  double ssa = 0;
  for (double v : a) ssa += 2.0 * v * v;
  double w = (num * num) / (ssa * ss);
  w = std::min(w, 1.0);
  const double w1 = 1.0 - w;

  double pw;
  if (n == 3) {
    pw = std::clamp(6.0 / std::numbers::pi * (std::asin(std::sqrt(w)) - std::numbers::pi / 3.0), 0.0, 1.0);
  } else if (w1 <= 0) {
    pw = 1.0;
  } else {
    double y = std::log(w1);
    const double xx = std::log(an);
    double m, s;
    if (n <= 11) {
      const double gamma = detail::poly(g, an);
      if (y >= gamma) {
        pw = 1e-19;
        return {TestKind::ShapiroWilk, w, {}, {}, {}, pw, {}};
      }
      y = -std::log(gamma - y);
      m = detail::poly(c3, an);
      s = std::exp(detail::poly(c4, an));
    } else {
      m = detail::poly(c5, xx);
      s = std::exp(detail::poly(c6, xx));
    }
    pw = normal_upper_tail((y - m) / s);
  }
  return {TestKind::ShapiroWilk, w, {}, {}, {}, pw, {}};
}

/// Pooled-variance two-sample t test, two-tailed.
inline TestResult students_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw StatsError(StatsErrorKind::SampleTooSmall, "t test needs at least 2 values per group");
  auto moments = [](std::span<const double> v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss};
  };
  const auto [ma, ssa] = moments(a);
  const auto [mb, ssb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double df = na + nb - 2.0;
  const double pooled = (ssa + ssb) / df;
  if (!(pooled > 0)) throw StatsError(StatsErrorKind::DegenerateVariance, "pooled variance is zero");
  const double t = (ma - mb) / std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  return {TestKind::StudentT, t, df, {}, {}, student_t_two_tailed(t, df), {}};
}

namespace detail {

/// 1-based ranks of the pooled values, ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double tie_term(std::span<const double> pooled) {
  std::vector<double> v(pooled.begin(), pooled.end());
  std::sort(v.begin(), v.end());
  double t = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    const double c = static_cast<double>(j - i);
    t += c * c * c - c;
    i = j;
  }
  return t;
}

}  // namespace detail

struct MannWhitneyStatistics {
  double u_a = 0;  // pairs (x in a, y in b) with x > y, ties counting one half
  double u_b = 0;
};

inline MannWhitneyStatistics mann_whitney_statistics(std::span<const double> a, std::span<const double> b) {
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = detail::average_ranks(pooled);
  double ra = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double u_a = ra - na * (na + 1.0) / 2.0;
  return {u_a, na * nb - u_a};
}

inline constexpr std::size_t kExactMannWhitneyLimit = 20;

/// Exact two-tailed p: the share of all C(n_a + n_b, n_a) relabelings of
/// the pooled data whose U lies at least as far from n_a*n_b/2 as observed.
/// Returns nothing when the pooled size exceeds `limit`.
inline std::optional<double> mann_whitney_exact_p(std::span<const double> a, std::span<const double> b,
                                                  std::size_t limit = kExactMannWhitneyLimit) {
  const std::size_t na = a.size(), n = a.size() + b.size();
  if (a.empty() || b.empty() || n > limit) return std::nullopt;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = detail::average_ranks(pooled);
  const double base = static_cast<double>(na) * (static_cast<double>(na) + 1.0) / 2.0;
  const double mean = static_cast<double>(na) * static_cast<double>(n - na) / 2.0;
  double observed = 0;
  for (std::size_t i = 0; i < na; ++i) observed += ranks[i];
  const double observed_dev = std::abs(observed - base - mean) - 1e-9;

  std::uint64_t total = 0, extreme = 0;
  // Depth-first over index subsets of size na.
  auto walk = [&](auto&& self, std::size_t next, std::size_t chosen, double rank_sum) -> void {
    if (chosen == na) {
      ++total;
      if (std::abs(rank_sum - base - mean) >= observed_dev) ++extreme;
      return;
    }
    for (std::size_t i = next; i + (na - chosen) <= n; ++i) self(self, i + 1, chosen + 1, rank_sum + ranks[i]);
  };
  walk(walk, 0, 0, 0.0);
  return static_cast<double>(extreme) / static_cast<double>(total);
}

/// U = min(U_a, U_b) with the normal approximation: tie-corrected variance
/// and a half-unit continuity correction toward the mean (never past it).
inline TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw StatsError(StatsErrorKind::EmptySample, "Mann-Whitney needs non-empty samples");
  const auto [u_a, u_b] = mann_whitney_statistics(a, b);
  const double u = std::min(u_a, u_b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size()), n = na + nb;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const double mean = na * nb / 2.0;
  const double variance = na * nb / 12.0 * ((n + 1.0) - detail::tie_term(pooled) / (n * (n - 1.0)));
  double z = 0, p = 1;
  if (variance > 0) {
    z = std::min(u - mean + 0.5, 0.0) / std::sqrt(variance);
    p = std::min(1.0, 2.0 * normal_cdf(z));
  }
  return {TestKind::MannWhitneyU, u, {}, u, z, p, mann_whitney_exact_p(a, b)};
}

}  // namespace vvp::stats
