// Copyright 2026 The qrc-mol Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Test-only reference computations. Nothing here calls into the library's
// numerical paths; each oracle rebuilds its answer from first principles.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

namespace qrc::oracle {

using CMatrix = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Dense Rydberg Hamiltonian assembled from Kronecker products of 2x2 site
/// operators. Site j is the j-th least significant bit (matches the library's
/// ordering), |g> = (1,0), |r> = (0,1).
inline CMatrix dense_rydberg(const std::vector<std::array<double, 3>>& pos, double omega, double delta_g,
                             double delta_l, double c6, const std::vector<double>& f) {
  const std::size_t n = pos.size();
  const Eigen::Index dim = Eigen::Index{1} << n;
  CMatrix sx(2, 2), nr(2, 2), id = CMatrix::Identity(2, 2);
  sx << 0, 1, 1, 0;
  nr << 0, 0, 0, 1;
  // Operator acting as `op` on site j: kron over sites from most to least significant.
  auto site_op = [&](std::size_t j, const CMatrix& op) {
    CMatrix acc = CMatrix::Identity(1, 1);
    for (std::size_t s = n; s-- > 0;) {
      const CMatrix& factor = (s == j) ? op : id;
      CMatrix next(acc.rows() * 2, acc.cols() * 2);
      for (Eigen::Index a = 0; a < acc.rows(); ++a)
        for (Eigen::Index b = 0; b < acc.cols(); ++b) next.block(a * 2, b * 2, 2, 2) = acc(a, b) * factor;
      acc = next;
    }
    return acc;
  };
  CMatrix h = CMatrix::Zero(dim, dim);
  std::vector<CMatrix> n_ops;
  for (std::size_t j = 0; j < n; ++j) {
    h += 0.5 * omega * site_op(j, sx);
    n_ops.push_back(site_op(j, nr));
    h -= (delta_g + f[j] * delta_l) * n_ops.back();
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = j + 1; k < n; ++k) {
      const double dx = pos[j][0] - pos[k][0], dy = pos[j][1] - pos[k][1], dz = pos[j][2] - pos[k][2];
      const double r2 = dx * dx + dy * dy + dz * dz;
      h += (c6 / (r2 * r2 * r2)) * (n_ops[j] * n_ops[k]);
    }
  }
  return h;
}

/// exp(A) by scaling and squaring with a Taylor series summed to convergence.
inline CMatrix expm_taylor(const CMatrix& a, int extra_squarings) {
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int s = std::max(0, static_cast<int>(std::ceil(std::log2(std::max(norm, 1e-300) / 0.25)))) + extra_squarings;
  const CMatrix scaled = a / std::ldexp(1.0, s);
  CMatrix term = CMatrix::Identity(a.rows(), a.cols());
  CMatrix sum = term;
  for (int k = 1; k < 60; ++k) {
    term = term * scaled / static_cast<double>(k);
    sum += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

/// exp(-i H t): repeats with one extra squaring until successive results
/// agree to 1e-12.
inline CMatrix propagator(const CMatrix& h, double t) {
  const CMatrix a = Complex(0.0, -t) * h;
  CMatrix prev = expm_taylor(a, 0);
  for (int extra = 1; extra < 8; ++extra) {
    CMatrix next = expm_taylor(a, extra);
    const double change = (next - prev).cwiseAbs().maxCoeff();
    prev = std::move(next);
    if (change < 1e-12) break;
  }
  return prev;
}

/// exp(-i H t) psi via full diagonalisation of a Hermitian matrix.
inline Eigen::VectorXcd propagate_eig(const CMatrix& h, const Eigen::VectorXcd& psi, double t) {
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(h);
  const CMatrix& v = eig.eigenvectors();
  Eigen::VectorXcd c = v.adjoint() * psi;
  for (Eigen::Index k = 0; k < c.size(); ++k) c[k] *= std::polar(1.0, -eig.eigenvalues()[k] * t);
  return v * c;
}

/// Exact Shapley values by subset enumeration for a set function `value`
/// over d players (bitmask coalitions).
inline std::vector<double> shapley_exact(std::size_t d, const std::function<double(unsigned)>& value) {
  std::vector<double> fact(d + 1, 1.0);
  for (std::size_t i = 1; i <= d; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  std::vector<double> phi(d, 0.0);
  const unsigned full = (1u << d);
  std::vector<double> v(full);
  for (unsigned s = 0; s < full; ++s) v[s] = value(s);
  for (std::size_t i = 0; i < d; ++i) {
    for (unsigned s = 0; s < full; ++s) {
      if (s >> i & 1u) continue;
      const auto size = static_cast<std::size_t>(__builtin_popcount(s));
      const double w = fact[size] * fact[d - size - 1] / fact[d];
      phi[i] += w * (v[s | (1u << i)] - v[s]);
    }
  }
  return phi;
}

}  // namespace qrc::oracle
