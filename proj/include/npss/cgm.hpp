#pragma once

// Constrained four-component Gaussian mixture output and the Bernoulli
// voiced/unvoiced head.
//
// The mixture has fixed offsets d = [-1.5, -0.5, 0.5, 1.5] and weights
// w_k = softmax(alpha * d_k + beta * (1 - |d_k|)). With m = E_w[d] and
// v = Var_w(d), the spacing unit is sigma_c = sigma / sqrt(r^2 + v) where
// r = kComponentWidth; components have std r * sigma_c and means
// mu + sigma_c * (d_k - m). The mixture mean is exactly mu and its variance
// exactly sigma^2 for every (alpha, beta).

#include <array>
#include <cstddef>
#include <span>

#include "npss/rng.hpp"

namespace npss::cgm {

inline constexpr std::size_t kComponents = 4;
inline constexpr std::size_t kRawPerChannel = 4;
inline constexpr std::array<double, kComponents> kOffsets = {-1.5, -0.5, 0.5, 1.5};
/// Component std in units of the component spacing. Any value >= 1.2 keeps
/// every (alpha, beta) in [-1, 1]^2 unimodal.
inline constexpr double kComponentWidth = 1.25;
inline constexpr double kSigmaFloor = 1e-4;
inline constexpr double kProbClamp = 1e-6;

struct CgmParams {
  double mu = 0.0;
  double sigma = 1.0;
  double alpha = 0.0;  // skewness, (-1, 1)
  double beta = 0.0;   // shape, (-1, 1)
};

/// Explicit component form of a CgmParams.
struct Mixture {
  std::array<double, kComponents> weight{};
  std::array<double, kComponents> mean{};
  double stddev = 0.0;
};

Mixture expand(const CgmParams& p);

/// mu = raw0, sigma = softplus(raw1) + 1e-4, alpha = tanh(raw2), beta = tanh(raw3).
CgmParams squash_raw(std::span<const double, kRawPerChannel> raw);
CgmParams squash_raw(double r0, double r1, double r2, double r3);

double pdf(const CgmParams& p, double x);
double log_pdf(const CgmParams& p, double x);
double cdf(const CgmParams& p, double x);

struct Nll {
  double value = 0.0;
  std::array<double, 4> grad{};  // d/d(mu, sigma, alpha, beta)
};
Nll nll(const CgmParams& p, double x);

/// NLL of x under squash_raw(raw), with the gradient taken wrt the raw values.
Nll nll_raw(std::span<const double, kRawPerChannel> raw, double x);

/// Argmax of the density.
double mode(const CgmParams& p);

/// Record of the random choices made by one draw.
struct Draw {
  std::size_t component = 0;
  double uniform = 0.0;
  double normal = 0.0;
  double value = 0.0;
};

/// x0 ~ mixture; returns mode + tau * (x0 - mode). tau = 0 yields the mode
/// and consumes no randomness.
Draw sample(const CgmParams& p, double tau, Rng& rng);

// Bernoulli V/UV head.

/// sigmoid(raw) clamped to [1e-6, 1 - 1e-6].
double vuv_prob(double raw);

struct VuvNll {
  double value = 0.0;
  double grad_p = 0.0;    // d/dp
  double grad_raw = 0.0;  // d/draw through the clamped sigmoid
};
VuvNll vuv_nll(double p, double target);
VuvNll vuv_nll_raw(double raw, double target);

/// tau = 0 thresholds p at 0.5; otherwise samples with the sharpened
/// probability p^(1/tau) / (p^(1/tau) + (1-p)^(1/tau)).
int vuv_sample(double p, double tau, Rng& rng);

}  // namespace npss::cgm
