#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rdiff/error.hpp"
#include "rdiff/rng.hpp"

namespace rdiff {

/// Undirected simple graph on nodes 0..n-1. Edges are stored once as (i, j)
/// with i < j, sorted.
struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;

  std::vector<int> degrees() const {
    std::vector<int> deg(static_cast<std::size_t>(n), 0);
    for (auto [i, j] : edges) {
      ++deg[static_cast<std::size_t>(i)];
      ++deg[static_cast<std::size_t>(j)];
    }
    return deg;
  }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (auto [i, j] : edges) {
      adj[static_cast<std::size_t>(i)].push_back(j);
      adj[static_cast<std::size_t>(j)].push_back(i);
    }
    return adj;
  }

  bool connected() const {
    if (n <= 1) return true;
    const auto adj = adjacency();
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : adj[static_cast<std::size_t>(u)]) {
        if (!seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = 1;
          ++count;
          stack.push_back(v);
        }
      }
    }
    return count == n;
  }

  void normalize() {
    for (auto& e : edges)
      if (e.first > e.second) std::swap(e.first, e.second);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  }
};

/// Symmetric doubly-stochastic mixing matrix with its second singular value.
struct MixingMatrix {
  Eigen::MatrixXd w;
  double sigma2 = 0.0;

  int n() const { return static_cast<int>(w.rows()); }
};

inline Graph gen_cycle(int n) {
  if (n < 3) throw Error(ErrorCode::ConfigError, "cycle graph needs n >= 3");
  Graph g{n, {}};
  for (int i = 0; i < n; ++i) g.edges.emplace_back(i, (i + 1) % n);
  g.normalize();
  return g;
}

inline Graph gen_complete(int n) {
  if (n < 2) throw Error(ErrorCode::ConfigError, "complete graph needs n >= 2");
  Graph g{n, {}};
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) g.edges.emplace_back(i, j);
  return g;
}

inline constexpr int kErMaxRetries = 1000;

/// Erdos-Renyi G(n, p) conditioned on connectivity by rejection; attempt k
/// draws from substream k of `rng`.
inline Graph gen_er(int n, double p, const Rng& rng) {
  if (n < 2) throw Error(ErrorCode::ConfigError, "ER graph needs n >= 2");
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::ConfigError, "ER edge probability must be in (0,1]");
  for (int attempt = 0; attempt < kErMaxRetries; ++attempt) {
    Rng sub = rng.split({0xe5ULL, static_cast<std::uint64_t>(attempt)});
    Graph g{n, {}};
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (sub.bernoulli(p)) g.edges.emplace_back(i, j);
    if (g.connected()) return g;
  }
  throw Error(ErrorCode::ConnectivityFailure,
              "no connected ER(" + std::to_string(n) + ", " + std::to_string(p) + ") sample in " +
                  std::to_string(kErMaxRetries) + " attempts");
}

/// Second-largest singular value of W.
inline double sigma2(const Eigen::MatrixXd& w) {
  if (w.rows() <= 1) return 0.0;
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(w).singularValues();
  const double s2 = sv(1);
  if (!(s2 < 1.0 - 1e-12))
    throw Error(ErrorCode::AssumptionViolation,
                "network topology assumption violated: sigma2(W) = " + std::to_string(s2) +
                    " is not below 1 (disconnected network or invalid W)");
  return s2;
}

/// Metropolis-Hastings weights: w_ij = 1 / (1 + max(deg_i, deg_j)) on edges,
/// self-weight takes up the remainder of each row.
inline MixingMatrix metropolis_weights(const Graph& g) {
  if (!g.connected()) throw Error(ErrorCode::AssumptionViolation, "graph is not connected");
  const auto deg = g.degrees();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(g.n, g.n);
  for (auto [i, j] : g.edges) {
    const double v =
        1.0 / (1.0 + std::max(deg[static_cast<std::size_t>(i)], deg[static_cast<std::size_t>(j)]));
    w(i, j) = v;
    w(j, i) = v;
  }
  for (int i = 0; i < g.n; ++i) w(i, i) = 1.0 - w.row(i).sum();
  return {w, sigma2(w)};
}

/// Support graph of W (off-diagonal nonzeros).
inline Graph graph_from_weights(const Eigen::MatrixXd& w) {
  Graph g{static_cast<int>(w.rows()), {}};
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = i + 1; j < w.cols(); ++j)
      if (w(i, j) != 0.0 || w(j, i) != 0.0) g.edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return g;
}

inline constexpr double kMixingTol = 1e-12;

/// Enforces every clause of the network topology assumption. When `g` is
/// given, W must also vanish off its edges. Returns sigma2(W).
inline double validate_mixing(const Eigen::MatrixXd& w, const Graph* g = nullptr) {
  auto fail = [](const std::string& clause) {
    throw Error(ErrorCode::AssumptionViolation,
                "network topology assumption violated (" + clause + ")");
  };
  if (w.rows() != w.cols() || w.rows() == 0) fail("W must be a non-empty square matrix");
  if (!w.allFinite()) fail("entries must be finite");
  const Eigen::Index n = w.rows();
  if ((w - w.transpose()).cwiseAbs().maxCoeff() > kMixingTol) fail("symmetric: W != W^T");
  if (w.minCoeff() < 0.0) fail("entrywise nonnegative: W has a negative entry");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(w.row(i).sum() - 1.0) > kMixingTol)
      fail("doubly stochastic: row " + std::to_string(i) + " does not sum to 1");
    if (std::abs(w.col(i).sum() - 1.0) > kMixingTol)
      fail("doubly stochastic: column " + std::to_string(i) + " does not sum to 1");
    if (!(w(i, i) > 0.0)) fail("positive diagonal: w_" + std::to_string(i) + std::to_string(i) + " <= 0");
  }
  if (g != nullptr) {
    if (g->n != n) fail("W size does not match the graph");
    Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(n, n);
    for (auto [i, j] : g->edges) adj(i, j) = adj(j, i) = 1;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j && !adj(i, j) && w(i, j) != 0.0)
          fail("w_ij = 0 for non-neighbors: w(" + std::to_string(i) + "," + std::to_string(j) + ") != 0");
  }
  if (!graph_from_weights(w).connected()) fail("connected: support of W is disconnected");
  return sigma2(w);
}

inline MixingMatrix make_mixing(const Eigen::MatrixXd& w) {
  return {w, validate_mixing(w)};
}

/// Plain CSV: n header-less rows of n decimal entries.
inline Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw Error(ErrorCode::IoError,
                    path + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorCode::IoError, path + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::IoError, path + ": empty matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

}  // namespace rdiff
