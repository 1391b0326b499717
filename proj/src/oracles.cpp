#include "permflow/oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace permflow::oracles {

namespace {

struct Edge {
  int to;
  double cap;
  double cost;
  int rev;
};

class MinCostFlow {
 public:
  explicit MinCostFlow(int n) : graph_(static_cast<size_t>(n)) {}

  void add_edge(int from, int to, double cap, double cost) {
    graph_[static_cast<size_t>(from)].push_back(
        {to, cap, cost, static_cast<int>(graph_[static_cast<size_t>(to)].size())});
    graph_[static_cast<size_t>(to)].push_back(
        {from, 0.0, -cost, static_cast<int>(graph_[static_cast<size_t>(from)].size()) - 1});
  }

  // Sends `flow` units from s to t, returns total cost. Successive
  // shortest paths with Johnson potentials: reduced costs are clamped
  // at zero so floating-point noise cannot produce cycles, and Dijkstra
  // assigns each predecessor once so path reconstruction terminates.
  double run(int s, int t, double flow) {
    const double inf = std::numeric_limits<double>::infinity();
    const double eps = 1e-15;
    double total = 0.0;
    int n = static_cast<int>(graph_.size());
    std::vector<double> pot(static_cast<size_t>(n), 0.0);
    while (flow > eps) {
      std::vector<double> dist(static_cast<size_t>(n), inf);
      std::vector<char> done(static_cast<size_t>(n), 0);
      std::vector<int> prev_node(static_cast<size_t>(n), -1), prev_edge(static_cast<size_t>(n), -1);
      dist[static_cast<size_t>(s)] = 0.0;
      for (int iter = 0; iter < n; ++iter) {
        int u = -1;
        for (int v = 0; v < n; ++v)
          if (!done[static_cast<size_t>(v)] && dist[static_cast<size_t>(v)] < inf &&
              (u < 0 || dist[static_cast<size_t>(v)] < dist[static_cast<size_t>(u)]))
            u = v;
        if (u < 0) break;
        done[static_cast<size_t>(u)] = 1;
        for (size_t e = 0; e < graph_[static_cast<size_t>(u)].size(); ++e) {
          const Edge& ed = graph_[static_cast<size_t>(u)][e];
          if (ed.cap <= eps || done[static_cast<size_t>(ed.to)]) continue;
          double rc = ed.cost + pot[static_cast<size_t>(u)] - pot[static_cast<size_t>(ed.to)];
          if (rc < 0.0) rc = 0.0;
          double nd = dist[static_cast<size_t>(u)] + rc;
          if (nd < dist[static_cast<size_t>(ed.to)]) {
            dist[static_cast<size_t>(ed.to)] = nd;
            prev_node[static_cast<size_t>(ed.to)] = u;
            prev_edge[static_cast<size_t>(ed.to)] = static_cast<int>(e);
          }
        }
      }
      if (dist[static_cast<size_t>(t)] == inf)
        throw std::runtime_error("lp_transport_w1: no augmenting path");
      for (int v = 0; v < n; ++v)
        pot[static_cast<size_t>(v)] +=
            std::min(dist[static_cast<size_t>(v)], dist[static_cast<size_t>(t)]);
      double push = flow;
      for (int v = t; v != s; v = prev_node[static_cast<size_t>(v)]) {
        const Edge& ed =
            graph_[static_cast<size_t>(prev_node[static_cast<size_t>(v)])]
                  [static_cast<size_t>(prev_edge[static_cast<size_t>(v)])];
        push = std::min(push, ed.cap);
      }
      for (int v = t; v != s; v = prev_node[static_cast<size_t>(v)]) {
        Edge& ed = graph_[static_cast<size_t>(prev_node[static_cast<size_t>(v)])]
                         [static_cast<size_t>(prev_edge[static_cast<size_t>(v)])];
        ed.cap -= push;
        graph_[static_cast<size_t>(v)][static_cast<size_t>(ed.rev)].cap += push;
      }
      total += push * pot[static_cast<size_t>(t)];
      flow -= push;
    }
    return total;
  }

 private:
  std::vector<std::vector<Edge>> graph_;
};

}  // namespace

double lp_transport_w1(const std::vector<double>& mass_a, const std::vector<double>& pos_a,
                       const std::vector<double>& mass_b, const std::vector<double>& pos_b) {
  if (mass_a.size() != pos_a.size() || mass_b.size() != pos_b.size() || mass_a.empty() ||
      mass_b.empty())
    throw std::invalid_argument("lp_transport_w1: bad inputs");
  double sum_a = 0.0, sum_b = 0.0;
  for (double m : mass_a) sum_a += m;
  for (double m : mass_b) sum_b += m;
  if (sum_a <= 0.0 || sum_b <= 0.0)
    throw std::invalid_argument("lp_transport_w1: masses must be positive");

  int n = static_cast<int>(mass_a.size()), m = static_cast<int>(mass_b.size());
  int source = 0, sink = n + m + 1;
  MinCostFlow mcf(n + m + 2);
  for (int i = 0; i < n; ++i) mcf.add_edge(source, 1 + i, mass_a[static_cast<size_t>(i)] / sum_a, 0.0);
  for (int j = 0; j < m; ++j) mcf.add_edge(1 + n + j, sink, mass_b[static_cast<size_t>(j)] / sum_b, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      mcf.add_edge(1 + i, 1 + n + j, std::numeric_limits<double>::infinity(),
                   std::abs(pos_a[static_cast<size_t>(i)] - pos_b[static_cast<size_t>(j)]));
  return mcf.run(source, sink, 1.0);
}

namespace {

void dtw_recurse(const dsp::FrameSeries& a, const dsp::FrameSeries& b, int64_t i, int64_t j,
                 double acc, double& best) {
  double c = 0.0;
  for (int64_t e = 0; e < a.n_features; ++e) c += std::abs(a.at(i, e) - b.at(j, e));
  acc += c;
  if (i == a.n_frames - 1 && j == b.n_frames - 1) {
    if (acc < best) best = acc;
    return;
  }
  if (i + 1 < a.n_frames) dtw_recurse(a, b, i + 1, j, acc, best);
  if (j + 1 < b.n_frames) dtw_recurse(a, b, i, j + 1, acc, best);
  if (i + 1 < a.n_frames && j + 1 < b.n_frames) dtw_recurse(a, b, i + 1, j + 1, acc, best);
}

}  // namespace

double dtw_enumerate(const dsp::FrameSeries& a, const dsp::FrameSeries& b) {
  if (a.n_features != b.n_features || a.n_frames == 0 || b.n_frames == 0)
    throw std::invalid_argument("dtw_enumerate: bad inputs");
  if (a.n_frames > 8 || b.n_frames > 8)
    throw std::invalid_argument("dtw_enumerate: series too long to enumerate");
  double best = std::numeric_limits<double>::infinity();
  dtw_recurse(a, b, 0, 0, 0.0, best);
  return best;
}

std::vector<double> bandlimited_square(double dphase, int n_samples) {
  std::vector<double> y(static_cast<size_t>(n_samples), 0.0);
  constexpr double pi = 3.14159265358979323846;
  for (int h = 1; h * dphase < 0.5; h += 2) {
    double amp = 4.0 / (pi * h);
    for (int t = 0; t < n_samples; ++t) {
      double phase = t * dphase;
      phase -= std::floor(phase);
      y[static_cast<size_t>(t)] += amp * std::sin(2.0 * pi * h * phase);
    }
  }
  return y;
}

}  // namespace permflow::oracles
