#pragma once

// EIT inverse problem: forward model over interior conductivities, synthetic
// data on a finer mesh, data files and the factorized posterior.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "epinv/eit/cem.hpp"
#include "epinv/ep/engine.hpp"
#include "epinv/nonlinear/driver.hpp"
#include "epinv/tilted/factors.hpp"

namespace epinv::eit {

/// F restricted to interior nodes; boundary nodes stay at `sigma_bg`.
class EITModel final : public nonlinear::ForwardModel {
 public:
  EITModel(Mesh mesh, CEMConfig cfg, double sigma_bg, double floor)
      : solver_(std::move(mesh), std::move(cfg)), sigma_bg_(sigma_bg), floor_(floor) {}

  Index data_dim() const override { return solver_.measurement_count(); }
  Index param_dim() const override { return Index(solver_.mesh().interior.size()); }

  VectorXd full_sigma(const VectorXd& x) const {
    if (x.size() != param_dim()) throw ShapeMismatch("EITModel: parameter length differs from interior count");
    VectorXd s = VectorXd::Constant(solver_.node_count(), sigma_bg_);
    const auto& in = solver_.mesh().interior;
    for (std::size_t k = 0; k < in.size(); ++k) s(in[k]) = x(Index(k));
    return s;
  }

  VectorXd evaluate(const VectorXd& x) const override { return solver_.forward(full_sigma(x)); }
  MatrixXd jacobian(const VectorXd& x) const override { return evaluate_with_jacobian(x).second; }

  std::pair<VectorXd, MatrixXd> evaluate_with_jacobian(const VectorXd& x) const override {
    auto [F, Jfull] = solver_.forward_and_jacobian(full_sigma(x));
    const auto& in = solver_.mesh().interior;
    MatrixXd J(Jfull.rows(), Index(in.size()));
    for (std::size_t k = 0; k < in.size(); ++k) J.col(Index(k)) = Jfull.col(in[k]);
    return {std::move(F), std::move(J)};
  }

  VectorXd admissible(const VectorXd& x) const override { return x.cwiseMax(floor_); }

  const CEMSolver& solver() const { return solver_; }
  double sigma_bg() const { return sigma_bg_; }
  double floor() const { return floor_; }

 private:
  CEMSolver solver_;
  double sigma_bg_;
  double floor_;
};

/// One Laplace-times-positivity site per interior node.
inline std::vector<ep::Site> laplace_prior_sites(Index n, double lambda, double sigma_bg, double floor) {
  std::vector<ep::Site> sites;
  sites.reserve(std::size_t(n));
  const auto fam = std::make_shared<tilted::LaplacePositivity>(
      tilted::LaplacePositivityFactor{lambda, sigma_bg, floor});
  for (Index k = 0; k < n; ++k) sites.push_back(ep::coordinate_site(n, k, fam));
  return sites;
}

struct Inclusion {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
  double sigma = 0.0;
};

/// Nodal conductivity: background, overwritten inside each inclusion.
inline VectorXd piecewise_conductivity(const Mesh& mesh, double sigma_bg,
                                       const std::vector<Inclusion>& inclusions) {
  VectorXd s = VectorXd::Constant(mesh.node_count(), sigma_bg);
  for (Index i = 0; i < mesh.node_count(); ++i) {
    for (const auto& inc : inclusions) {
      if ((mesh.nodes[std::size_t(i)] - Point(inc.x, inc.y)).norm() <= inc.radius) s(i) = inc.sigma;
    }
  }
  return s;
}

/// Interior nodes inside the inclusion, grown by `layers` rings of neighbours.
inline std::vector<int> inclusion_support(const Mesh& mesh, const Inclusion& inc, int layers) {
  std::vector<char> in(mesh.nodes.size(), 0);
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i) {
    in[i] = (mesh.nodes[i] - Point(inc.x, inc.y)).norm() <= inc.radius;
  }
  for (int layer = 0; layer < layers; ++layer) {
    std::vector<char> next = in;
    for (const auto& t : mesh.triangles) {
      if (in[t[0]] || in[t[1]] || in[t[2]]) next[t[0]] = next[t[1]] = next[t[2]] = 1;
    }
    in.swap(next);
  }
  std::vector<int> out;
  for (int v : mesh.interior) {
    if (in[std::size_t(v)]) out.push_back(v);
  }
  return out;
}

struct SynthResult {
  VectorXd clean;  // F_fine(sigma_true)
  VectorXd data;   // clean plus noise
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

/// Fine-mesh forward output plus i.i.d. N(0, noise_std^2) noise from a
/// seeded mt19937_64.
inline SynthResult synth_data(const Mesh& fine, const CEMConfig& cfg, const VectorXd& sigma_true,
                              double noise_std, std::uint64_t seed) {
  if (noise_std < 0.0) throw std::invalid_argument("synth_data: noise_std must be non-negative");
  SynthResult r;
  r.clean = CEMSolver(fine, cfg).forward(sigma_true);
  r.data = r.clean;
  r.noise_std = noise_std;
  r.seed = seed;
  if (noise_std > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, noise_std);
    for (Index i = 0; i < r.data.size(); ++i) r.data(i) += nd(rng);
  }
  return r;
}

/// CSV with header pattern_id,electrode_id,voltage.
inline void write_data_csv(std::ostream& os, const std::vector<MeasurementIndex>& idx, const VectorXd& v) {
  if (Index(idx.size()) != v.size()) throw ShapeMismatch("write_data_csv: length mismatch");
  os << "pattern_id,electrode_id,voltage\n";
  char buf[64];
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%.17e", v(Index(r)));
    os << idx[r].pattern << ',' << idx[r].electrode << ',' << buf << "\n";
  }
}

inline void write_data_csv(const std::string& path, const std::vector<MeasurementIndex>& idx,
                           const VectorXd& v) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  write_data_csv(os, idx, v);
}

/// Reads a data CSV and orders it by `idx`; every indexed row must be present once.
inline VectorXd read_data_csv(std::istream& is, const std::vector<MeasurementIndex>& idx) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("data: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "pattern_id,electrode_id,voltage") throw ParseError("data: unexpected header '" + line + "'");
  std::map<std::pair<int, int>, double> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    int p, l;
    double v;
    char c1, c2;
    if (!(ls >> p >> c1 >> l >> c2 >> v) || c1 != ',' || c2 != ',') {
      throw ParseError("data: malformed row at line " + std::to_string(lineno));
    }
    if (!rows.emplace(std::make_pair(p, l), v).second) {
      throw ParseError("data: duplicate row at line " + std::to_string(lineno));
    }
  }
  if (rows.size() != idx.size()) throw ParseError("data: row count differs from the measurement set");
  VectorXd out(Index(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto it = rows.find({idx[r].pattern, idx[r].electrode});
    if (it == rows.end()) throw ParseError("data: missing measurement for pattern " +
                                           std::to_string(idx[r].pattern) + ", electrode " +
                                           std::to_string(idx[r].electrode));
    out(Index(r)) = it->second;
  }
  return out;
}

inline VectorXd read_data_csv(const std::string& path, const std::vector<MeasurementIndex>& idx) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open data file " + path);
  return read_data_csv(is, idx);
}

}  // namespace epinv::eit
