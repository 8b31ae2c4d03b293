#pragma once

#include <cmath>
#include <cstdint>

namespace mjls {

// Counter-based random draws: every variate is a pure function of
// (seed, trajectory, step, stream, component), so simulation output is
// independent of evaluation order and thread count.

enum class Stream : uint64_t {
  initial_mode = 0,
  initial_state = 1,
  policy_noise = 2,
  mult_state = 3,
  mult_control = 4,
  additive = 5,
  mode_transition = 6,
};

namespace rng_detail {

// stafford mix13 finalizer (the splitmix64 output stage).
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t absorb(uint64_t h, uint64_t w) {
  return mix64(h ^ (w + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

}  // namespace rng_detail

inline uint64_t counter_bits(uint64_t seed, uint64_t traj, uint64_t step,
                             Stream stream, uint64_t comp) {
  uint64_t h = rng_detail::mix64(seed + 0x9e3779b97f4a7c15ULL);
  h = rng_detail::absorb(h, traj);
  h = rng_detail::absorb(h, step);
  h = rng_detail::absorb(h, static_cast<uint64_t>(stream));
  h = rng_detail::absorb(h, comp);
  return h;
}

// Uniform draw strictly inside (0, 1).
inline double uniform01(uint64_t seed, uint64_t traj, uint64_t step,
                        Stream stream, uint64_t comp) {
  const uint64_t bits = counter_bits(seed, traj, step, stream, comp);
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Inverse standard normal CDF (Wichura's AS 241, double precision).
inline double inverse_normal_cdf(double p) {
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double z;
  if (r <= 5.0) {
    r -= 1.6;
    z = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    z = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -z : z;
}

inline double normal(uint64_t seed, uint64_t traj, uint64_t step,
                     Stream stream, uint64_t comp) {
  return inverse_normal_cdf(uniform01(seed, traj, step, stream, comp));
}

// Symmetric +/-1 variate (zero mean, unit variance).
inline double rademacher(uint64_t seed, uint64_t traj, uint64_t step,
                         Stream stream, uint64_t comp) {
  return (counter_bits(seed, traj, step, stream, comp) & 1u) ? 1.0 : -1.0;
}

}  // namespace mjls
