#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "aprecond/common.hpp"
#include "aprecond/teacher.hpp"

namespace testing {

inline double rel_err(double a, double b, double floor = 1e-300) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double norm(const aprecond::Vec& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline double dist(const aprecond::Vec& a, const aprecond::Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

inline aprecond::GaussianMixture single_gaussian(double sigma, std::size_t dim = 1, double mean = 0.0) {
  return aprecond::GaussianMixture({1.0}, {aprecond::Vec(dim, mean)}, {sigma});
}

// Two-dimensional three-component mixture used where d > 1 matters.
inline aprecond::GaussianMixture mixture_2d() {
  return aprecond::GaussianMixture({0.2, 0.5, 0.3}, {{-1.5, 0.5}, {1.0, 1.0}, {0.3, -2.0}}, {0.4, 0.7, 0.3});
}

inline double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

}  // namespace testing
