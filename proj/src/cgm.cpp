#include "npss/cgm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "npss/errors.hpp"

namespace npss::cgm {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kWidth2 = kComponentWidth * kComponentWidth;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_valid(const CgmParams& p) {
  if (!(p.sigma > 0.0) || !std::isfinite(p.sigma))
    throw DomainError("constrained mixture needs sigma > 0, got " + std::to_string(p.sigma));
  if (!std::isfinite(p.mu) || !(std::abs(p.alpha) < 1.0) || !(std::abs(p.beta) < 1.0))
    throw DomainError("constrained mixture parameters out of domain");
}

// Softmax weights and their first moments over the offsets.
struct WeightMoments {
  std::array<double, kComponents> w{};
  double m = 0.0;  // E[d]
  double v = 0.0;  // Var[d]
};

WeightMoments weight_moments(double alpha, double beta) {
  WeightMoments out;
  std::array<double, kComponents> logit{};
  double top = -INFINITY;
  for (std::size_t k = 0; k < kComponents; ++k) {
    logit[k] = alpha * kOffsets[k] + beta * (1.0 - std::abs(kOffsets[k]));
    top = std::max(top, logit[k]);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < kComponents; ++k) z += (out.w[k] = std::exp(logit[k] - top));
  for (auto& w : out.w) w /= z;
  for (std::size_t k = 0; k < kComponents; ++k) out.m += out.w[k] * kOffsets[k];
  for (std::size_t k = 0; k < kComponents; ++k) out.v += out.w[k] * (kOffsets[k] - out.m) * (kOffsets[k] - out.m);
  return out;
}

// Log of each weighted component density at x.
std::array<double, kComponents> component_logs(const Mixture& mix, double x) {
  std::array<double, kComponents> out{};
  const double log_s = std::log(mix.stddev);
  for (std::size_t k = 0; k < kComponents; ++k) {
    const double z = (x - mix.mean[k]) / mix.stddev;
    out[k] = std::log(mix.weight[k]) - 0.5 * z * z - log_s - kLogSqrt2Pi;
  }
  return out;
}

double log_sum_exp(const std::array<double, kComponents>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

// d/dx log p and d2/dx2 log p.
std::pair<double, double> log_pdf_slope(const Mixture& mix, double x) {
  auto logs = component_logs(mix, x);
  const double lse = log_sum_exp(logs);
  const double inv_var = 1.0 / (mix.stddev * mix.stddev);
  double g = 0.0, h = 0.0;
  for (std::size_t k = 0; k < kComponents; ++k) {
    const double r = std::exp(logs[k] - lse);
    const double gk = (mix.mean[k] - x) * inv_var;
    g += r * gk;
    h += r * (gk * gk - inv_var);
  }
  return {g, h - g * g};
}

}  // namespace

Mixture expand(const CgmParams& p) {
  check_valid(p);
  const auto wm = weight_moments(p.alpha, p.beta);
  const double spacing = p.sigma / std::sqrt(kWidth2 + wm.v);
  Mixture mix;
  mix.weight = wm.w;
  mix.stddev = kComponentWidth * spacing;
  for (std::size_t k = 0; k < kComponents; ++k) mix.mean[k] = p.mu + spacing * (kOffsets[k] - wm.m);
  return mix;
}

CgmParams squash_raw(double r0, double r1, double r2, double r3) {
  if (!std::isfinite(r0) || !std::isfinite(r1) || !std::isfinite(r2) || !std::isfinite(r3))
    throw NumericError("non-finite raw mixture parameter");
  return {r0, softplus(r1) + kSigmaFloor, std::tanh(r2), std::tanh(r3)};
}

CgmParams squash_raw(std::span<const double, kRawPerChannel> raw) {
  return squash_raw(raw[0], raw[1], raw[2], raw[3]);
}

double log_pdf(const CgmParams& p, double x) { return log_sum_exp(component_logs(expand(p), x)); }

double pdf(const CgmParams& p, double x) { return std::exp(log_pdf(p, x)); }

double cdf(const CgmParams& p, double x) {
  const auto mix = expand(p);
  double c = 0.0;
  for (std::size_t k = 0; k < kComponents; ++k)
    c += mix.weight[k] * 0.5 * std::erfc(-(x - mix.mean[k]) / (mix.stddev * std::numbers::sqrt2));
  return c;
}

Nll nll(const CgmParams& p, double x) {
  check_valid(p);
  const auto wm = weight_moments(p.alpha, p.beta);
  const double c = 1.0 / std::sqrt(kWidth2 + wm.v);
  const double spacing = p.sigma * c;
  const double s = kComponentWidth * spacing;

  Mixture mix;
  mix.weight = wm.w;
  mix.stddev = s;
  for (std::size_t k = 0; k < kComponents; ++k) mix.mean[k] = p.mu + spacing * (kOffsets[k] - wm.m);
  auto logs = component_logs(mix, x);
  const double lse = log_sum_exp(logs);

  // Moments of the offsets and of the shape feature e = 1 - |d| under w.
  double Ee = 0.0, Ed2 = 0.0, Ed3 = 0.0, Ede = 0.0, Ed2e = 0.0;
  for (std::size_t k = 0; k < kComponents; ++k) {
    const double d = kOffsets[k], e = 1.0 - std::abs(d), w = wm.w[k];
    Ee += w * e;
    Ed2 += w * d * d;
    Ed3 += w * d * d * d;
    Ede += w * d * e;
    Ed2e += w * d * d * e;
  }
  const double m = wm.m, v = wm.v;
  const double dm_da = v;
  const double dm_db = Ede - m * Ee;
  const double dv_da = Ed3 - Ed2 * m - 2.0 * m * v;
  const double dv_db = Ed2e - Ed2 * Ee - 2.0 * m * dm_db;
  const double dspacing_dv = -0.5 * spacing / (kWidth2 + v);

  std::array<double, 4> g{};
  for (std::size_t k = 0; k < kComponents; ++k) {
    const double r = std::exp(logs[k] - lse);
    const double d = kOffsets[k], e = 1.0 - std::abs(d);
    const double z = (x - mix.mean[k]) / s;
    const double dl_dmean = z / s;
    const double dl_ds = (z * z - 1.0) / s;
    // mu
    g[0] += r * dl_dmean;
    // sigma
    g[1] += r * (dl_dmean * c * (d - m) + dl_ds * kComponentWidth * c);
    // alpha
    {
      const double dsp = dspacing_dv * dv_da;
      const double dmean = dsp * (d - m) - spacing * dm_da;
      g[2] += r * ((d - m) + dl_dmean * dmean + dl_ds * kComponentWidth * dsp);
    }
    // beta
    {
      const double dsp = dspacing_dv * dv_db;
      const double dmean = dsp * (d - m) - spacing * dm_db;
      g[3] += r * ((e - Ee) + dl_dmean * dmean + dl_ds * kComponentWidth * dsp);
    }
  }
  Nll out;
  out.value = -lse;
  for (std::size_t i = 0; i < 4; ++i) out.grad[i] = -g[i];
  return out;
}

Nll nll_raw(std::span<const double, kRawPerChannel> raw, double x) {
  const auto p = squash_raw(raw);
  auto out = nll(p, x);
  out.grad[1] *= sigmoid(raw[1]);
  out.grad[2] *= 1.0 - p.alpha * p.alpha;
  out.grad[3] *= 1.0 - p.beta * p.beta;
  return out;
}

double mode(const CgmParams& p) {
  const auto mix = expand(p);
  auto f = [&](double x) { return log_sum_exp(component_logs(mix, x)); };

  // Golden-section over the +-4 sigma bracket; the density is unimodal.
  constexpr double kInvPhi = 0.61803398874989484820;
  double a = p.mu - 4.0 * p.sigma, b = p.mu + 4.0 * p.sigma;
  double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > 1e-4 * p.sigma) {
    if (f1 < f2) {
      a = x1, x1 = x2, f1 = f2;
      x2 = a + kInvPhi * (b - a), f2 = f(x2);
    } else {
      b = x2, x2 = x1, f2 = f1;
      x1 = b - kInvPhi * (b - a), f1 = f(x1);
    }
  }

  // The top is too flat for value comparisons below ~sqrt(eps); finish with
  // safeguarded Newton on the slope, which keeps full precision.
  const std::size_t heaviest =
      static_cast<std::size_t>(std::max_element(mix.weight.begin(), mix.weight.end()) - mix.weight.begin());
  double x = std::clamp(mix.mean[heaviest], a, b);
  if (x == a || x == b) x = 0.5 * (a + b);
  const double ga = log_pdf_slope(mix, a).first;
  const double gb = log_pdf_slope(mix, b).first;
  if (ga > 0.0 && gb < 0.0) {
    for (int it = 0; it < 100 && b - a > 1e-12 * p.sigma; ++it) {
      auto [g, h] = log_pdf_slope(mix, x);
      if (g == 0.0) break;
      if (g > 0.0) a = x;
      else b = x;
      double next = h < 0.0 ? x - g / h : 0.5 * (a + b);
      if (!(next > a && next < b)) next = 0.5 * (a + b);
      if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x))) {
        x = next;
        break;
      }
      x = next;
    }
  } else {
    x = 0.5 * (a + b);
  }
  return x;
}

Draw sample(const CgmParams& p, double tau, Rng& rng) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("temperature must be in [0,1], got " + std::to_string(tau));
  Draw d;
  if (tau == 0.0) {
    d.value = mode(p);
    return d;
  }
  const auto mix = expand(p);
  d.uniform = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  d.component = kComponents - 1;
  for (std::size_t k = 0; k < kComponents; ++k) {
    acc += mix.weight[k];
    if (d.uniform < acc) {
      d.component = k;
      break;
    }
  }
  d.normal = std::normal_distribution<double>(0.0, 1.0)(rng);
  const double x0 = mix.mean[d.component] + mix.stddev * d.normal;
  if (tau == 1.0) {
    d.value = x0;
  } else {
    const double m = mode(p);
    d.value = m + tau * (x0 - m);
  }
  return d;
}

double vuv_prob(double raw) {
  if (!std::isfinite(raw)) throw NumericError("non-finite raw V/UV output");
  return std::clamp(sigmoid(raw), kProbClamp, 1.0 - kProbClamp);
}

VuvNll vuv_nll(double p, double target) {
  if (target != 0.0 && target != 1.0) throw DomainError("V/UV target must be 0 or 1");
  if (!(p > 0.0 && p < 1.0)) throw DomainError("V/UV probability must be in (0,1)");
  VuvNll out;
  out.value = target == 1.0 ? -std::log(p) : -std::log1p(-p);
  out.grad_p = target == 1.0 ? -1.0 / p : 1.0 / (1.0 - p);
  return out;
}

VuvNll vuv_nll_raw(double raw, double target) {
  const double p = vuv_prob(raw);
  auto out = vuv_nll(p, target);
  const double s = sigmoid(raw);
  const bool clamped = s < kProbClamp || s > 1.0 - kProbClamp;
  if (clamped) {
    out.grad_raw = 0.0;
    return out;
  }
  // Log-sigmoid form: avoids the cancellation in 1 - p for confident outputs.
  const double z = target == 1.0 ? -raw : raw;
  out.value = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  out.grad_raw = s - target;
  return out;
}

int vuv_sample(double p, double tau, Rng& rng) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("temperature must be in [0,1], got " + std::to_string(tau));
  if (tau == 0.0) return p >= 0.5 ? 1 : 0;
  const double logit = std::log(p) - std::log1p(-p);
  const double sharpened = sigmoid(logit / tau);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u < sharpened ? 1 : 0;
}

}  // namespace npss::cgm
