#pragma once

// Complete electrode model on P1 triangles.
//
// Unknowns are nodal potentials u and electrode voltages V = B beta, where
// the columns e_1 - e_{j+1} of B span the zero-sum subspace. The system
//
//   [ A(sigma) + A_z   C B   ] [u   ]   [0    ]
//   [ B^T C^T       B^T D B  ] [beta] = [B^T I]
//
// is SPD. Element conductivity is the mean of its three nodal values.

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "epinv/eit/mesh.hpp"
#include "epinv/errors.hpp"

namespace epinv::eit {

/// Injection pair: `current` amperes enter at `source` and leave at `sink`.
struct Pattern {
  int source = 0;
  int sink = 1;
  double current = 1e-3;
};

struct CEMConfig {
  /// Contact impedances per electrode [Ohm m, 2D-reduced].
  std::vector<double> z;
  std::vector<Pattern> patterns;

  int electrodes() const { return int(z.size()); }

  /// L x P matrix of injected currents.
  MatrixXd currents() const {
    MatrixXd I = MatrixXd::Zero(electrodes(), Index(patterns.size()));
    for (std::size_t p = 0; p < patterns.size(); ++p) {
      I(patterns[p].source, Index(p)) += patterns[p].current;
      I(patterns[p].sink, Index(p)) -= patterns[p].current;
    }
    return I;
  }

  void validate() const {
    if (z.empty()) throw ShapeMismatch("CEMConfig: no electrodes");
    for (double zl : z) {
      if (!(zl > 0.0) || !std::isfinite(zl)) throw SingularSystem("CEMConfig: contact impedance must be positive");
    }
    for (const auto& p : patterns) {
      if (p.source < 0 || p.sink < 0 || p.source >= electrodes() || p.sink >= electrodes() ||
          p.source == p.sink) {
        throw ShapeMismatch("CEMConfig: injection pair out of range");
      }
    }
  }
};

/// Physical constants of the water-tank setup.
struct TankDefaults {
  static constexpr double radius = 0.14;
  static constexpr int electrodes = 16;
  static constexpr double electrode_width = 0.025;
  static constexpr double sigma_bg = 1.41e-3;
  static constexpr double floor = 1e-5;
  static constexpr double alpha = 6.9e4;
  static constexpr double lambda = 3.0e4;
  static constexpr double current = 1e-3;
  static constexpr std::array<double, 16> impedances = {
      2.64e-4, 3.00e-4, 2.76e-4, 4.27e-4, 3.50e-4, 4.30e-4, 3.91e-4, 2.35e-4,
      2.01e-4, 2.21e-4, 2.04e-4, 1.43e-4, 2.98e-4, 2.78e-4, 2.92e-4, 3.40e-4};

  static double coverage() { return electrodes * electrode_width / (2.0 * std::numbers::pi * radius); }
};

/// Injections between electrodes l and l+1 for l = 0..L-2.
inline std::vector<Pattern> adjacent_patterns(int L, double current = TankDefaults::current) {
  std::vector<Pattern> out;
  for (int l = 0; l + 1 < L; ++l) out.push_back({l, l + 1, current});
  return out;
}

/// Tank impedances for L = 16, otherwise their mean on every electrode.
inline CEMConfig default_config(int L = TankDefaults::electrodes) {
  CEMConfig cfg;
  if (L == int(TankDefaults::impedances.size())) {
    cfg.z.assign(TankDefaults::impedances.begin(), TankDefaults::impedances.end());
  } else {
    double mean = 0.0;
    for (double z : TankDefaults::impedances) mean += z;
    cfg.z.assign(std::size_t(L), mean / double(TankDefaults::impedances.size()));
  }
  cfg.patterns = adjacent_patterns(L);
  return cfg;
}

/// (pattern, electrode) of each measurement row.
struct MeasurementIndex {
  int pattern = 0;
  int electrode = 0;
};

/// Keeps every electrode except the two carrying current, pattern-major.
inline std::vector<MeasurementIndex> measurement_index(const CEMConfig& cfg) {
  std::vector<MeasurementIndex> out;
  for (int p = 0; p < int(cfg.patterns.size()); ++p) {
    for (int l = 0; l < cfg.electrodes(); ++l) {
      if (l == cfg.patterns[p].source || l == cfg.patterns[p].sink) continue;
      out.push_back({p, l});
    }
  }
  return out;
}

/// Stacks the kept entries of the L x P voltage matrix.
inline VectorXd apply_measurement(const std::vector<MeasurementIndex>& idx, const MatrixXd& V) {
  VectorXd out(Index(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) out(Index(r)) = V(idx[r].electrode, idx[r].pattern);
  return out;
}

class CEMSolver {
 public:
  using SpMat = Eigen::SparseMatrix<double>;
  /// Assembly runs in extended precision: electrode rows nearly cancel, so
  /// entry rounding in double would cost about five digits in V.
  using Real = long double;
  using SpMatX = Eigen::SparseMatrix<Real>;
  using MatX = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

  CEMSolver(Mesh mesh, CEMConfig cfg) : mesh_(std::move(mesh)), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.electrodes() != int(mesh_.electrodes.size())) {
      throw ShapeMismatch("CEMSolver: impedance count differs from mesh electrodes");
    }
    const Index N = mesh_.node_count();
    const int L = cfg_.electrodes();
    area_.reserve(mesh_.triangles.size());
    grad_.reserve(mesh_.triangles.size());
    for (const auto& t : mesh_.triangles) {
      Eigen::Matrix<Real, 2, 3> P;
      for (int k = 0; k < 3; ++k) P.col(k) = mesh_.nodes[t[k]].cast<Real>();
      const Real a = ((P(0, 1) - P(0, 0)) * (P(1, 2) - P(1, 0)) - (P(0, 2) - P(0, 0)) * (P(1, 1) - P(1, 0))) / 2;
      if (!(a > 0)) throw SingularSystem("CEMSolver: degenerate or inverted triangle");
      Eigen::Matrix<Real, 2, 3> g;
      for (int k = 0; k < 3; ++k) {
        const int i = (k + 1) % 3, j = (k + 2) % 3;
        g(0, k) = (P(1, i) - P(1, j)) / (2 * a);
        g(1, k) = (P(0, j) - P(0, i)) / (2 * a);
      }
      area_.push_back(a);
      grad_.push_back(g);
      stiff_.push_back(a * (g.transpose() * g));
    }

    // sigma-independent electrode blocks.
    std::vector<Eigen::Triplet<Real>> trip;
    MatX C = MatX::Zero(N, L);
    Eigen::Matrix<Real, Eigen::Dynamic, 1> D = Eigen::Matrix<Real, Eigen::Dynamic, 1>::Zero(L);
    for (int l = 0; l < L; ++l) {
      const Real zi = 1 / Real(cfg_.z[std::size_t(l)]);
      for (const auto& e : mesh_.electrodes[std::size_t(l)]) {
        const Real len = (mesh_.nodes[e[0]].cast<Real>() - mesh_.nodes[e[1]].cast<Real>()).norm();
        trip.emplace_back(e[0], e[0], zi * len / 3);
        trip.emplace_back(e[1], e[1], zi * len / 3);
        trip.emplace_back(e[0], e[1], zi * len / 6);
        trip.emplace_back(e[1], e[0], zi * len / 6);
        C(e[0], l) -= zi * len / 2;
        C(e[1], l) -= zi * len / 2;
        D(l) += zi * len;
      }
    }
    B_ = MatrixXd::Zero(L, L - 1);
    for (int j = 0; j + 1 < L; ++j) {
      B_(0, j) = 1.0;
      B_(j + 1, j) = -1.0;
    }
    const MatX Bx = B_.cast<Real>();
    const MatX CB = C * Bx;
    const MatX BDB = Bx.transpose() * D.asDiagonal() * Bx;
    for (Index i = 0; i < N; ++i) {
      for (Index j = 0; j < L - 1; ++j) {
        if (CB(i, j) != 0) {
          trip.emplace_back(i, N + j, CB(i, j));
          trip.emplace_back(N + j, i, CB(i, j));
        }
      }
    }
    for (Index i = 0; i < L - 1; ++i) {
      for (Index j = 0; j < L - 1; ++j) trip.emplace_back(N + i, N + j, BDB(i, j));
    }
    fixed_.resize(N + L - 1, N + L - 1);
    fixed_.setFromTriplets(trip.begin(), trip.end());

    currents_ = cfg_.currents();
    index_ = measurement_index(cfg_);
  }

  const Mesh& mesh() const { return mesh_; }
  const CEMConfig& config() const { return cfg_; }
  const std::vector<MeasurementIndex>& measurements() const { return index_; }
  Index measurement_count() const { return Index(index_.size()); }
  Index node_count() const { return mesh_.node_count(); }

  /// Iterative refinement passes after the double-precision Cholesky solve.
  int refinement_steps = 3;

  /// Assembled SPD system for nodal conductivity sigma, in extended precision.
  SpMatX system_extended(const VectorXd& sigma) const {
    check_sigma(sigma);
    std::vector<Eigen::Triplet<Real>> trip;
    trip.reserve(mesh_.triangles.size() * 9);
    for (std::size_t k = 0; k < mesh_.triangles.size(); ++k) {
      const auto& t = mesh_.triangles[k];
      const Real s = (Real(sigma(t[0])) + Real(sigma(t[1])) + Real(sigma(t[2]))) / 3;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) trip.emplace_back(t[a], t[b], s * stiff_[k](a, b));
      }
    }
    SpMatX A(fixed_.rows(), fixed_.cols());
    A.setFromTriplets(trip.begin(), trip.end());
    return A + fixed_;
  }

  SpMat system(const VectorXd& sigma) const { return system_extended(sigma).cast<double>(); }

  /// Fields for the zero-sum unit currents e_l - 1/L. Column l of `u` is the
  /// nodal potential and column l of `V` the electrode voltages.
  struct UnitFields {
    MatrixXd u;  // N x L
    MatrixXd V;  // L x L
  };

  UnitFields unit_fields(const VectorXd& sigma) const {
    const Index N = mesh_.node_count();
    const int L = cfg_.electrodes();
    const SpMatX Sx = system_extended(sigma);
    Eigen::SimplicialLLT<SpMat> llt(SpMat(Sx.cast<double>()));
    if (llt.info() != Eigen::Success) throw SingularSystem("CEM system is not positive definite");
    // B^T (e_l - 1/L) = B^T e_l since the columns of B sum to zero.
    MatX rhs = MatX::Zero(N + L - 1, L);
    rhs.bottomRows(L - 1) = B_.transpose().cast<Real>();
    MatX x = llt.solve(MatrixXd(rhs.cast<double>())).cast<Real>();
    for (int it = 0; it < refinement_steps; ++it) {
      const MatX r = rhs - Sx * x;
      x += llt.solve(MatrixXd(r.cast<double>())).cast<Real>();
    }
    if (llt.info() != Eigen::Success) throw SingularSystem("CEM solve failed");
    const MatrixXd xd = x.cast<double>();
    if (!xd.allFinite()) throw SingularSystem("CEM solve failed");
    return {xd.topRows(N), (B_.cast<Real>() * x.bottomRows(L - 1)).cast<double>()};
  }

  /// Electrode voltages, L x P, one column per pattern.
  MatrixXd voltages(const VectorXd& sigma) const { return unit_fields(sigma).V * currents_; }

  /// Measurement vector F(sigma).
  VectorXd forward(const VectorXd& sigma) const { return apply_measurement(index_, voltages(sigma)); }

  /// F(sigma) and dF/dsigma over all nodes (m x N), by the adjoint method:
  /// the adjoint of measuring V_l is the unit field for electrode l.
  std::pair<VectorXd, MatrixXd> forward_and_jacobian(const VectorXd& sigma) const {
    const UnitFields f = unit_fields(sigma);
    const Index N = mesh_.node_count();
    const int L = cfg_.electrodes();
    const MatrixXd V = f.V * currents_;
    MatrixXd J = MatrixXd::Zero(measurement_count(), N);
    Eigen::Matrix<double, 3, Eigen::Dynamic> Wt(3, L);
    for (std::size_t k = 0; k < mesh_.triangles.size(); ++k) {
      const auto& t = mesh_.triangles[k];
      for (int a = 0; a < 3; ++a) Wt.row(a) = f.u.row(t[a]);
      const MatrixXd G = grad_[k].cast<double>() * Wt;              // 2 x L gradients
      const MatrixXd M = double(area_[k]) * (G.transpose() * G);    // L x L
      const MatrixXd R = M * currents_;                             // L x P
      for (Index r = 0; r < measurement_count(); ++r) {
        const double v = -R(index_[std::size_t(r)].electrode, index_[std::size_t(r)].pattern) / 3.0;
        J(r, t[0]) += v;
        J(r, t[1]) += v;
        J(r, t[2]) += v;
      }
    }
    return {apply_measurement(index_, V), std::move(J)};
  }

  MatrixXd jacobian(const VectorXd& sigma) const { return forward_and_jacobian(sigma).second; }

 private:
  void check_sigma(const VectorXd& sigma) const {
    if (sigma.size() != mesh_.node_count()) throw ShapeMismatch("CEM: conductivity length differs from node count");
    for (const auto& t : mesh_.triangles) {
      const double s = (sigma(t[0]) + sigma(t[1]) + sigma(t[2])) / 3.0;
      if (!(s > 0.0) || !std::isfinite(s)) throw SingularSystem("CEM: element conductivity is not positive");
    }
  }

  Mesh mesh_;
  CEMConfig cfg_;
  std::vector<Real> area_;
  std::vector<Eigen::Matrix<Real, 2, 3>> grad_;
  std::vector<Eigen::Matrix<Real, 3, 3>> stiff_;
  SpMatX fixed_;
  MatrixXd B_;
  MatrixXd currents_;
  std::vector<MeasurementIndex> index_;
};

/// Measurement vector for one-off evaluations.
inline VectorXd forward(const Mesh& mesh, const CEMConfig& cfg, const VectorXd& sigma) {
  return CEMSolver(mesh, cfg).forward(sigma);
}

/// Jacobian with respect to the interior nodal conductivities.
inline MatrixXd jacobian(const Mesh& mesh, const CEMConfig& cfg, const VectorXd& sigma) {
  const MatrixXd J = CEMSolver(mesh, cfg).jacobian(sigma);
  MatrixXd out(J.rows(), Index(mesh.interior.size()));
  for (std::size_t k = 0; k < mesh.interior.size(); ++k) out.col(Index(k)) = J.col(mesh.interior[k]);
  return out;
}

}  // namespace epinv::eit
