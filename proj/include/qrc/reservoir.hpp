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

// Neutral-atom Rydberg reservoir: Hamiltonian construction, state-vector
// propagation and computational-basis observables.
//
// Basis convention: atom j is bit j of the basis index (atom 0 is the least
// significant bit); a set bit means the atom is in the Rydberg state |r>.
// Z_j = I - 2 n_j, so the ground state |g> has Z = +1.
//
// Units: positions in micrometres, frequencies in rad/us, times in us.

#pragma once

#include "qrc/common.hpp"

#include <array>
#include <complex>
#include <fstream>

namespace qrc {

using Complex = std::complex<double>;
using Position = std::array<double, 3>;

struct ReservoirConfig {
  std::size_t n_atoms = 1;
  std::vector<Position> positions;  // empty: linear chain with `chain_spacing`
  double chain_spacing = 10.0;
  double rabi_amplitude = 2.0 * std::numbers::pi;
  double global_detuning = 0.0;
  double local_detuning_amplitude = 6.0;
  double interaction_coefficient = 2.0 * std::numbers::pi * 862690.0;
  double total_time = 4.3;
  double snapshot_step = 0.4;

  static ReservoirConfig chain(std::size_t n, double spacing = 10.0) {
    ReservoirConfig c;
    c.n_atoms = n;
    c.chain_spacing = spacing;
    return c;
  }

  std::vector<Position> atom_positions() const {
    if (!positions.empty()) return positions;
    std::vector<Position> out(n_atoms);
    for (std::size_t j = 0; j < n_atoms; ++j) out[j] = {chain_spacing * static_cast<double>(j), 0.0, 0.0};
    return out;
  }

  /// k * snapshot_step for k = 1..floor(total_time / snapshot_step), followed
  /// by total_time itself when it is not already on that grid.
  std::vector<double> snapshot_times() const {
    std::vector<double> times;
    const auto k_max = static_cast<std::size_t>(std::floor(total_time / snapshot_step + 1e-9));
    for (std::size_t k = 1; k <= k_max; ++k) times.push_back(static_cast<double>(k) * snapshot_step);
    if (times.empty() || std::abs(times.back() - total_time) > 1e-9) {
      times.push_back(total_time);
    } else {
      times.back() = total_time;
    }
    return times;
  }

  void validate() const {
    require(n_atoms >= 1, ErrorKind::invalid_argument, "reservoir: n_atoms must be >= 1");
    require(n_atoms <= 26, ErrorKind::invalid_argument, "reservoir: n_atoms > 26 exceeds the state-vector budget");
    require(positions.empty() || positions.size() == n_atoms, ErrorKind::dimension_mismatch,
            "reservoir: positions length != n_atoms");
    require(rabi_amplitude >= 0.0 && local_detuning_amplitude >= 0.0, ErrorKind::invalid_argument,
            "reservoir: rabi amplitude and local detuning amplitude must be >= 0");
    require(interaction_coefficient > 0.0, ErrorKind::invalid_argument, "reservoir: interaction coefficient must be > 0");
    require(total_time > 0.0 && snapshot_step > 0.0 && snapshot_step <= total_time, ErrorKind::invalid_argument,
            "reservoir: need total_time > 0 and 0 < snapshot_step <= total_time");
    require(std::isfinite(global_detuning), ErrorKind::invalid_argument, "reservoir: global detuning not finite");
    const auto pos = atom_positions();
    for (std::size_t j = 0; j < n_atoms; ++j) {
      for (std::size_t k = j + 1; k < n_atoms; ++k) {
        require(distance(pos[j], pos[k]) > 0.0, ErrorKind::invalid_argument,
                "reservoir: coincident atom positions " + std::to_string(j) + " and " + std::to_string(k));
      }
    }
  }

  static double distance(const Position& a, const Position& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
};

/// Per-site detuning modulation, every entry in [-1, 1].
struct DetuningPattern {
  std::vector<double> f;

  void validate(std::size_t n_atoms) const {
    require(f.size() == n_atoms, ErrorKind::dimension_mismatch,
            "detuning pattern length " + std::to_string(f.size()) + " != n_atoms " + std::to_string(n_atoms));
    for (double v : f) {
      require(std::isfinite(v) && v >= -1.0 && v <= 1.0, ErrorKind::invalid_argument,
              "detuning pattern entries must lie in [-1, 1]");
    }
  }
};

/// H = (Omega/2) sum_j X_j + diag, stored as the diagonal plus the uniform
/// single-bit-flip coupling.
struct HamiltonianRep {
  std::size_t n_atoms = 0;
  std::vector<double> diagonal;  // length 2^n_atoms
  double flip_amplitude = 0.0;   // Omega / 2

  std::size_t dimension() const { return diagonal.size(); }

  /// Upper bound on the spectral radius (Gershgorin).
  double norm_bound() const {
    double d = 0.0;
    for (double v : diagonal) d = std::max(d, std::abs(v));
    return d + static_cast<double>(n_atoms) * std::abs(flip_amplitude);
  }
};

struct QuantumState {
  Eigen::VectorXcd amplitudes;

  std::size_t dimension() const { return static_cast<std::size_t>(amplitudes.size()); }
  double norm() const { return amplitudes.norm(); }

  static QuantumState ground(std::size_t n_atoms) {
    QuantumState s;
    s.amplitudes = Eigen::VectorXcd::Zero(Eigen::Index{1} << n_atoms);
    s.amplitudes[0] = 1.0;
    return s;
  }

  static QuantumState basis(std::size_t n_atoms, std::size_t index) {
    QuantumState s;
    s.amplitudes = Eigen::VectorXcd::Zero(Eigen::Index{1} << n_atoms);
    s.amplitudes[static_cast<Eigen::Index>(index)] = 1.0;
    return s;
  }
};

inline std::size_t atoms_for_dimension(std::size_t dim) {
  std::size_t n = 0;
  while ((std::size_t{1} << n) < dim) ++n;
  require((std::size_t{1} << n) == dim && n > 0, ErrorKind::dimension_mismatch, "state dimension is not 2^N");
  return n;
}

/// Pair interaction V_jk = C / |r_j - r_k|^6.
inline double interaction(const ReservoirConfig& config, std::size_t j, std::size_t k) {
  const auto pos = config.atom_positions();
  const double r = ReservoirConfig::distance(pos[j], pos[k]);
  return config.interaction_coefficient / std::pow(r, 6);
}

inline HamiltonianRep build_hamiltonian(const ReservoirConfig& config, const DetuningPattern& pattern) {
  config.validate();
  pattern.validate(config.n_atoms);
  const std::size_t n = config.n_atoms;
  const auto pos = config.atom_positions();

  std::vector<double> pair(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = j + 1; k < n; ++k) {
      const double r = ReservoirConfig::distance(pos[j], pos[k]);
      pair[j * n + k] = pair[k * n + j] = config.interaction_coefficient / std::pow(r, 6);
    }
  }
  std::vector<double> site(n);
  for (std::size_t j = 0; j < n; ++j) site[j] = -(config.global_detuning + pattern.f[j] * config.local_detuning_amplitude);

  HamiltonianRep h;
  h.n_atoms = n;
  h.flip_amplitude = 0.5 * config.rabi_amplitude;
  h.diagonal.assign(std::size_t{1} << n, 0.0);
  // Build by adding the highest set bit on top of an already computed entry.
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t top = std::size_t{1} << j;
    for (std::size_t rest = 0; rest < top; ++rest) {
      double e = site[j];
      for (std::size_t k = 0; k < j; ++k) {
        if (rest >> k & 1u) e += pair[j * n + k];
      }
      h.diagonal[top | rest] = h.diagonal[rest] + e;
    }
  }
  return h;
}

/// dst = H * src, both of length 2^N.
inline void apply_hamiltonian(const HamiltonianRep& h, const Complex* src, Complex* dst) {
  const std::size_t dim = h.dimension();
  for (std::size_t b = 0; b < dim; ++b) dst[b] = h.diagonal[b] * src[b];
  if (h.flip_amplitude == 0.0) return;
  const double c = h.flip_amplitude;
  for (std::size_t j = 0; j < h.n_atoms; ++j) {
    const std::size_t bit = std::size_t{1} << j;
    for (std::size_t base = 0; base < dim; base += 2 * bit) {
      for (std::size_t i = base; i < base + bit; ++i) {
        dst[i] += c * src[i + bit];
        dst[i + bit] += c * src[i];
      }
    }
  }
}

inline Eigen::VectorXcd apply_hamiltonian(const HamiltonianRep& h, const Eigen::VectorXcd& in) {
  require(static_cast<std::size_t>(in.size()) == h.dimension(), ErrorKind::dimension_mismatch,
          "apply_hamiltonian: dimension mismatch");
  Eigen::VectorXcd out(in.size());
  apply_hamiltonian(h, in.data(), out.data());
  return out;
}

enum class Propagator { chebyshev, krylov };

struct EvolveOptions {
  Propagator method = Propagator::chebyshev;
  double chebyshev_cutoff = 1e-16;  // drop expansion terms below this magnitude
  std::size_t krylov_dim = 30;
  double step_tolerance = 1e-11;  // a-posteriori Lanczos error bound per substep
};

namespace detail {

/// Lanczos propagation of exp(-i H t) psi with adaptive substeps. The basis is
/// re-orthogonalised against every previous vector so the update stays
/// unitary to rounding.
inline void krylov_propagate(const HamiltonianRep& h, Eigen::VectorXcd& psi, double duration,
                             const EvolveOptions& opt) {
  const auto dim = static_cast<Eigen::Index>(h.dimension());
  const Eigen::Index m_max = std::max<Eigen::Index>(2, std::min<Eigen::Index>(static_cast<Eigen::Index>(opt.krylov_dim), dim));
  Eigen::MatrixXcd basis(dim, m_max + 1);
  Eigen::VectorXcd w(dim);
  std::vector<double> alpha(static_cast<std::size_t>(m_max)), beta(static_cast<std::size_t>(m_max));
  const double scale = std::max(1.0, h.norm_bound());

  double remaining = duration;
  while (remaining > 0.0) {
    const double psi_norm = psi.norm();
    if (psi_norm == 0.0) return;
    basis.col(0) = psi / psi_norm;
    Eigen::Index m = m_max;
    bool breakdown = false;
    for (Eigen::Index j = 0; j < m_max; ++j) {
      apply_hamiltonian(h, basis.col(j).data(), w.data());
      // Three-term recurrence, then one full re-orthogonalisation pass.
      const double a = basis.col(j).dot(w).real();
      alpha[static_cast<std::size_t>(j)] = a;
      w -= a * basis.col(j);
      if (j > 0) w -= beta[static_cast<std::size_t>(j - 1)] * basis.col(j - 1);
      const Eigen::VectorXcd proj = basis.leftCols(j + 1).adjoint() * w;
      w.noalias() -= basis.leftCols(j + 1) * proj;
      const double b = w.norm();
      beta[static_cast<std::size_t>(j)] = b;
      if (b <= 1e-13 * scale) {
        m = j + 1;
        breakdown = true;
        break;
      }
      basis.col(j + 1) = w / b;
    }

    Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
      tri(j, j) = alpha[static_cast<std::size_t>(j)];
      if (j + 1 < m) tri(j, j + 1) = tri(j + 1, j) = beta[static_cast<std::size_t>(j)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(tri);
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const Eigen::MatrixXd& q = eig.eigenvectors();
    const Eigen::VectorXd q0 = q.row(0).transpose();

    auto coefficients = [&](double dt) {
      Eigen::VectorXcd phase(m);
      for (Eigen::Index k = 0; k < m; ++k) phase[k] = std::polar(q0[k], -lambda[k] * dt);
      return Eigen::VectorXcd(q.cast<Complex>() * phase);
    };

    double dt = remaining;
    Eigen::VectorXcd coeff = coefficients(dt);
    if (!breakdown) {
      const double residual_beta = beta[static_cast<std::size_t>(m - 1)];
      auto acceptable = [&](const Eigen::VectorXcd& c) {
        return residual_beta * std::abs(c[m - 1]) <= opt.step_tolerance;
      };
      int halvings = 0;
      while (!acceptable(coeff)) {
        require(++halvings < 200, ErrorKind::numerical, "evolve: Krylov step size underflow");
        dt *= 0.5;
        coeff = coefficients(dt);
      }
      // Grow the accepted step towards the rejected one by bisection.
      if (halvings > 0) {
        double lo = dt, hi = 2.0 * dt;
        for (int it = 0; it < 12; ++it) {
          const double mid = 0.5 * (lo + hi);
          Eigen::VectorXcd trial = coefficients(mid);
          if (acceptable(trial)) {
            lo = mid;
            coeff = std::move(trial);
          } else {
            hi = mid;
          }
        }
        dt = lo;
      }
    }
    psi = psi_norm * (basis.leftCols(m) * coeff);
    remaining = dt >= remaining ? 0.0 : remaining - dt;
  }
}

/// Bessel functions J_0(x) .. J_m(x) by Miller's backward recurrence,
/// normalised with J_0 + 2 sum_k J_2k = 1. Valid for any x >= 0.
inline std::vector<double> bessel_j_sequence(double x, std::size_t m) {
  std::vector<double> j(m + 1, 0.0);
  if (x == 0.0) {
    j[0] = 1.0;
    return j;
  }
  const auto start = static_cast<std::size_t>(std::max<double>(static_cast<double>(m), x) + 20.0 +
                                               std::sqrt(40.0 * std::max<double>(static_cast<double>(m), x)));
  double next = 0.0, cur = 1e-300, norm = 0.0;
  for (std::size_t k = start + (start % 2); k > 0; --k) {
    const double prev = 2.0 * static_cast<double>(k) / x * cur - next;
    next = cur;
    cur = prev;  // J_{k-1}
    if (k - 1 <= m) j[k - 1] = cur;
    if ((k - 1) % 2 == 0) norm += (k - 1 == 0) ? cur : 2.0 * cur;
    if (std::abs(cur) > 1e250) {
      next *= 1e-250;
      cur *= 1e-250;
      norm *= 1e-250;
      for (auto& v : j) v *= 1e-250;
    }
  }
  for (auto& v : j) v /= norm;
  return j;
}

/// Chebyshev expansion of exp(-i H t) over the Gershgorin interval of H:
/// exp(-i H t) = exp(-i c t) sum_k (2 - delta_k0) (-i)^k J_k(R t) T_k((H - c) / R).
inline void chebyshev_propagate(const HamiltonianRep& h, Eigen::VectorXcd& psi, double duration,
                                const EvolveOptions& opt) {
  const std::size_t dim = h.dimension();
  const auto [lo_it, hi_it] = std::minmax_element(h.diagonal.begin(), h.diagonal.end());
  const double off = static_cast<double>(h.n_atoms) * std::abs(h.flip_amplitude);
  const double e_min = *lo_it - off, e_max = *hi_it + off;
  const double center = 0.5 * (e_max + e_min);
  const double radius = std::max(0.5 * (e_max - e_min), 1e-12);
  const double x = radius * duration;

  // J_k(x) decays faster than geometrically once k > x.
  std::size_t m = static_cast<std::size_t>(x + 10.0 * std::cbrt(std::max(x, 1.0)) + 30.0);
  std::vector<double> bessel = bessel_j_sequence(x, m);
  while (m > 1 && std::abs(bessel[m]) < opt.chebyshev_cutoff) --m;

  std::vector<double> shifted(dim);
  for (std::size_t b = 0; b < dim; ++b) shifted[b] = (h.diagonal[b] - center) / radius;
  const double flip = h.flip_amplitude / radius;

  // dst = a * Hs * src - prev, with Hs = (H - c) / R; prev may be null.
  auto step = [&](double a, const Complex* src, const Complex* prev, Complex* dst) {
    for (std::size_t b = 0; b < dim; ++b) dst[b] = (a * shifted[b]) * src[b] - (prev ? prev[b] : Complex{});
    if (flip == 0.0) return;
    const double c = a * flip;
    for (std::size_t j = 0; j < h.n_atoms; ++j) {
      const std::size_t bit = std::size_t{1} << j;
      for (std::size_t base = 0; base < dim; base += 2 * bit) {
        for (std::size_t i = base; i < base + bit; ++i) {
          dst[i] += c * src[i + bit];
          dst[i + bit] += c * src[i];
        }
      }
    }
  };

  const auto n = static_cast<Eigen::Index>(dim);
  Eigen::VectorXcd t_prev = psi;  // T_0 psi
  Eigen::VectorXcd t_cur(n);      // T_1 psi
  step(1.0, t_prev.data(), nullptr, t_cur.data());
  Eigen::VectorXcd acc = bessel[0] * t_prev;
  Complex phase(0.0, -1.0);  // (-i)^k
  acc += (2.0 * bessel[1] * phase) * t_cur;
  for (std::size_t k = 2; k <= m; ++k) {
    // T_{k} = 2 Hs T_{k-1} - T_{k-2}, written over T_{k-2}.
    step(2.0, t_cur.data(), t_prev.data(), t_prev.data());
    std::swap(t_prev, t_cur);
    phase *= Complex(0.0, -1.0);
    acc += (2.0 * bessel[k] * phase) * t_cur;
  }
  psi = std::polar(1.0, -center * duration) * acc;
}

}  // namespace detail

/// exp(-i H t) |state>. A zero duration returns the input unchanged.
inline QuantumState evolve(const HamiltonianRep& h, const QuantumState& state, double duration,
                           const EvolveOptions& options = {}) {
  require(state.dimension() == h.dimension(), ErrorKind::dimension_mismatch,
          "evolve: state dimension " + std::to_string(state.dimension()) + " != Hamiltonian dimension " +
              std::to_string(h.dimension()));
  require(duration >= 0.0 && std::isfinite(duration), ErrorKind::invalid_argument, "evolve: duration must be >= 0");
  QuantumState out = state;
  if (duration == 0.0) return out;
  if (options.method == Propagator::krylov) {
    detail::krylov_propagate(h, out.amplitudes, duration, options);
  } else {
    detail::chebyshev_propagate(h, out.amplitudes, duration, options);
  }
  return out;
}

inline double expect_z(const QuantumState& state, std::size_t i) {
  const std::size_t n = atoms_for_dimension(state.dimension());
  require(i < n, ErrorKind::invalid_argument, "expect_z: atom index out of range");
  double acc = 0.0;
  for (std::size_t b = 0; b < state.dimension(); ++b) {
    const double p = std::norm(state.amplitudes[static_cast<Eigen::Index>(b)]);
    acc += (b >> i & 1u) ? -p : p;
  }
  return std::clamp(acc, -1.0, 1.0);
}

inline double expect_zz(const QuantumState& state, std::size_t i, std::size_t j) {
  const std::size_t n = atoms_for_dimension(state.dimension());
  require(i != j, ErrorKind::invalid_argument, "expect_zz: i == j");
  require(i < n && j < n, ErrorKind::invalid_argument, "expect_zz: atom index out of range");
  double acc = 0.0;
  for (std::size_t b = 0; b < state.dimension(); ++b) {
    const double p = std::norm(state.amplitudes[static_cast<Eigen::Index>(b)]);
    acc += ((b >> i ^ b >> j) & 1u) ? -p : p;
  }
  return std::clamp(acc, -1.0, 1.0);
}

/// Number of unordered atom pairs i < j.
inline std::size_t pair_count(std::size_t n) { return n * (n - 1) / 2; }

/// Column of pair (i, j), i < j, in lexicographic order.
inline std::size_t pair_column(std::size_t n, std::size_t i, std::size_t j) {
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

struct ObservableTrace {
  std::vector<double> snapshot_times;
  Matrix one_body;  // T x N, <Z_i>
  Matrix two_body;  // T x N(N-1)/2, <Z_i Z_j> with (i, j) lexicographic
  std::size_t n_atoms = 0;
  std::string schedule_note;
};

namespace detail {

inline void record_observables(const Eigen::VectorXcd& amps, std::size_t n, Eigen::Index row, Matrix& one,
                               Matrix& two) {
  const std::size_t dim = static_cast<std::size_t>(amps.size());
  std::vector<double> z(n, 0.0);
  std::vector<double> zz(pair_count(n), 0.0);
  std::vector<double> signs(n);
  for (std::size_t b = 0; b < dim; ++b) {
    const double p = std::norm(amps[static_cast<Eigen::Index>(b)]);
    if (p == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) signs[i] = (b >> i & 1u) ? -1.0 : 1.0;
    std::size_t col = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double pi = p * signs[i];
      z[i] += pi;
      for (std::size_t j = i + 1; j < n; ++j) zz[col++] += pi * signs[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) one(row, static_cast<Eigen::Index>(i)) = std::clamp(z[i], -1.0, 1.0);
  for (std::size_t c = 0; c < zz.size(); ++c) two(row, static_cast<Eigen::Index>(c)) = std::clamp(zz[c], -1.0, 1.0);
}

}  // namespace detail

/// Evolves the all-ground state under the pattern's Hamiltonian and records
/// every <Z_i> and <Z_i Z_j> at each snapshot time.
inline ObservableTrace snapshot_observables(const ReservoirConfig& config, const DetuningPattern& pattern,
                                            const EvolveOptions& options = {}) {
  const HamiltonianRep h = build_hamiltonian(config, pattern);
  const std::size_t n = config.n_atoms;
  ObservableTrace trace;
  trace.n_atoms = n;
  trace.snapshot_times = config.snapshot_times();
  const auto t_count = static_cast<Eigen::Index>(trace.snapshot_times.size());
  trace.one_body.resize(t_count, static_cast<Eigen::Index>(n));
  trace.two_body.resize(t_count, static_cast<Eigen::Index>(pair_count(n)));
  trace.schedule_note = "snapshots at k*" + format_double(config.snapshot_step) + " us, final snapshot at total_time " +
                        format_double(config.total_time) + " us";

  QuantumState state = QuantumState::ground(n);
  double now = 0.0;
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const double target = trace.snapshot_times[static_cast<std::size_t>(t)];
    state = evolve(h, state, std::max(0.0, target - now), options);
    now = target;
    detail::record_observables(state.amplitudes, n, t, trace.one_body, trace.two_body);
  }
  return trace;
}

/// Columnar export: time_us,kind,i,j,value (j empty for Z rows).
inline void write_trace_csv(const ObservableTrace& trace, std::ostream& out) {
  out << "time_us,kind,i,j,value\n";
  const std::size_t n = trace.n_atoms;
  for (std::size_t t = 0; t < trace.snapshot_times.size(); ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const std::string time = format_double(trace.snapshot_times[t]);
    for (std::size_t i = 0; i < n; ++i) {
      out << time << ",Z," << i << ",," << format_double(trace.one_body(row, static_cast<Eigen::Index>(i))) << '\n';
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        out << time << ",ZZ," << i << ',' << j << ','
            << format_double(trace.two_body(row, static_cast<Eigen::Index>(pair_column(n, i, j)))) << '\n';
      }
    }
  }
}

}  // namespace qrc
