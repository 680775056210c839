#pragma once

// Benchmark driver: seeded instances, median-of-repeats timing and tracked
// workspace for forward and backward passes of both nodes, plus CSV output.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ddn/errors.hpp"
#include "ddn/gradcheck.hpp"
#include "ddn/penalties.hpp"
#include "ddn/robust_pool.hpp"
#include "ddn/sinkhorn.hpp"
#include "ddn/workspace.hpp"

namespace ddn::bench {

/// Raised for invalid benchmark configurations (CLI exit code 1).
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class Node { pooling, ot };
enum class Method { structured, full_inverse, unrolled, naive_jacobian, fd };

constexpr std::string_view node_name(Node node) noexcept { return node == Node::pooling ? "pooling" : "ot"; }

constexpr std::string_view method_name(Method method) noexcept {
  switch (method) {
    case Method::structured: return "structured";
    case Method::full_inverse: return "full-inverse";
    case Method::unrolled: return "unrolled";
    case Method::naive_jacobian: return "naive-jacobian";
    case Method::fd: return "fd";
  }
  return "unknown";
}

inline Node parse_node(std::string_view name) {
  if (name == "pooling") return Node::pooling;
  if (name == "ot") return Node::ot;
  throw ConfigError("unknown node '" + std::string(name) + "' (expected pooling or ot)");
}

inline Method parse_method(std::string_view name) {
  for (Method m : {Method::structured, Method::full_inverse, Method::unrolled, Method::naive_jacobian, Method::fd})
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

inline bool method_valid_for(Node node, Method method) {
  switch (method) {
    case Method::structured:
    case Method::fd: return true;
    case Method::full_inverse:
    case Method::unrolled: return node == Node::ot;
    case Method::naive_jacobian: return node == Node::pooling;
  }
  return false;
}

struct BenchConfig {
  Node node = Node::pooling;
  std::vector<Method> methods{Method::structured};
  std::string penalty = "quadratic";
  double alpha = 1.0;
  double gamma = 10.0;
  std::size_t batch = 1;
  std::size_t m = 128;
  std::size_t n = 1024;
  /// Pooling: L-BFGS iteration cap (0 = default). OT: exact number of
  /// Sinkhorn iterations (0 = run to tolerance).
  std::size_t iterations = 0;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  std::string out_path;
  bool log_domain = false;
  bool float32 = false;
  bool parallel_batch = false;

  void validate() const {
    if (methods.empty()) throw ConfigError("at least one method is required");
    for (Method method : methods)
      if (!method_valid_for(node, method))
        throw ConfigError("method '" + std::string(method_name(method)) + "' is not available for node '" +
                          std::string(node_name(node)) + "'");
    if (repeats < 1) throw ConfigError("repeats must be at least 1");
    if (batch < 1 || m < 1 || n < 1) throw ConfigError("batch, m and n must be positive");
    if (node == Node::pooling) {
      try {
        parse_penalty(penalty);
      } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
      }
      if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    } else if (!(gamma > 0.0)) {
      throw ConfigError("gamma must be positive");
    }
  }
};

struct BenchRecord {
  std::string node;
  std::string method;
  std::string penalty;
  double gamma = 0.0;
  std::size_t batch = 0, m = 0, n = 0, iterations = 0, repeats = 0;
  std::uint64_t seed = 0;
  std::uint64_t time_forward_ns = 0;
  std::uint64_t time_backward_ns = 0;
  std::size_t peak_bytes_forward = 0;
  std::size_t peak_bytes_backward = 0;
  bool converged = false;
  /// FNV-1a hash of the gradient bits; not written to CSV.
  std::uint64_t gradient_digest = 0;

  bool operator==(const BenchRecord&) const = default;
};

inline constexpr std::string_view kCsvHeader =
    "node,method,penalty,gamma,batch,m,n,iterations,repeats,seed,time_forward_ns,time_backward_ns,"
    "peak_bytes_forward,peak_bytes_backward,converged";

namespace detail {

template <class Real>
std::uint64_t digest(std::span<const Real> values, std::uint64_t hash = 1469598103934665603ULL) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

struct Measured {
  std::uint64_t median_ns = 0;
  std::size_t peak_bytes = 0;
};

/// One untimed warm-up, then `repeats` timed runs. Peak workspace is taken
/// from the warm-up.
template <class F>
Measured measure(std::size_t repeats, F&& fn) {
  Measured out;
  {
    WorkspaceScope scope;
    fn();
    out.peak_bytes = scope.peak_bytes();
  }
  std::vector<std::uint64_t> times;
  for (std::size_t k = 0; k < repeats; ++k) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count()));
  }
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  out.median_ns = times[times.size() / 2];
  return out;
}

}  // namespace detail

/// b x m x n standard normal points.
template <class Real>
PointSet<Real> make_pool_instance(const BenchConfig& cfg, std::mt19937_64& rng) {
  PointSet<Real> x(cfg.batch, cfg.m, cfg.n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Real& value : x.values()) value = static_cast<Real>(normal(rng));
  return x;
}

/// Uniform [0, 1) costs with uniform marginals.
template <class Real>
TransportProblem<Real> make_ot_instance(const BenchConfig& cfg, std::mt19937_64& rng) {
  TransportProblem<Real> prob(cfg.batch, cfg.m, cfg.n, static_cast<Real>(cfg.gamma));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (Real& value : prob.M) value = static_cast<Real>(uniform(rng));
  std::fill(prob.r.begin(), prob.r.end(), Real(1) / static_cast<Real>(cfg.m));
  std::fill(prob.c.begin(), prob.c.end(), Real(1) / static_cast<Real>(cfg.n));
  return prob;
}

template <class Real>
std::vector<BenchRecord> run_bench_typed(const BenchConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<BenchRecord> records;

  BenchRecord base;
  base.node = std::string(node_name(cfg.node));
  base.batch = cfg.batch;
  base.m = cfg.m;
  base.n = cfg.n;
  base.iterations = cfg.iterations;
  base.repeats = cfg.repeats;
  base.seed = cfg.seed;

  // Single-precision solves cannot reach the double-precision tolerances.
  const bool single = sizeof(Real) < sizeof(double);

  if (cfg.node == Node::pooling) {
    const PenaltyKind kind(parse_penalty(cfg.penalty), cfg.alpha);
    base.penalty = std::string(penalty_name(kind.variant));
    const auto x = make_pool_instance<Real>(cfg, rng);
    Matrix<Real> v(cfg.batch, cfg.m);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Real& value : v.values()) value = static_cast<Real>(normal(rng));

    PoolOptions fopts;
    if (cfg.iterations > 0) fopts.max_iter = cfg.iterations;
    if (single) fopts.tol = 1e-4;
    fopts.parallel_batch = cfg.parallel_batch;
    PoolResult<Real> result;
    const auto fwd = detail::measure(cfg.repeats, [&] { result = pool_forward(x, kind, fopts); });
    base.time_forward_ns = fwd.median_ns;
    base.peak_bytes_forward = fwd.peak_bytes;
    base.converged = std::all_of(result.converged.begin(), result.converged.end(), [](auto c) { return c != 0; });

    for (Method method : cfg.methods) {
      BenchRecord rec = base;
      rec.method = std::string(method_name(method));
      PointSet<Real> grad;
      detail::Measured bwd;
      switch (method) {
        case Method::structured: {
          PoolBackwardOptions bopts;
          bopts.parallel_batch = cfg.parallel_batch;
          bwd = detail::measure(cfg.repeats, [&] { grad = pool_backward(x, result.y, kind, v, bopts); });
          break;
        }
        case Method::naive_jacobian:
          bwd = detail::measure(cfg.repeats, [&] { grad = contract_jacobian(pool_jacobian_naive(x, result.y, kind), v); });
          break;
        case Method::fd: {
          PoolOptions tight = fopts;
          tight.tol = single ? 1e-4 : 1e-12;
          bwd = detail::measure(cfg.repeats, [&] {
            std::vector<double> xs(x.values().begin(), x.values().end());
            std::vector<double> vs(v.values().begin(), v.values().end());
            PointSet<Real> probe = x;
            const auto g = fd_vjp(
                [&](std::span<const double> at) {
                  std::copy(at.begin(), at.end(), probe.values().begin());
                  const auto res = pool_forward(probe, kind, tight);
                  return std::vector<double>(res.y.values().begin(), res.y.values().end());
                },
                xs, vs);
            grad = PointSet<Real>(cfg.batch, cfg.m, cfg.n);
            std::copy(g.begin(), g.end(), grad.values().begin());
          });
          break;
        }
        default:
          throw ConfigError("method not available for pooling");
      }
      rec.time_backward_ns = bwd.median_ns;
      rec.peak_bytes_backward = bwd.peak_bytes;
      rec.gradient_digest = detail::digest<Real>(grad.values());
      records.push_back(std::move(rec));
    }
    return records;
  }

  base.gamma = cfg.gamma;
  const auto prob = make_ot_instance<Real>(cfg, rng);
  tracked_vector<Real> dJdP(prob.M.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Real& value : dJdP) value = static_cast<Real>(normal(rng));

  SinkhornOptions fopts;
  fopts.log_domain = cfg.log_domain;
  fopts.parallel_batch = cfg.parallel_batch;
  if (single) fopts.tol = 1e-6;
  if (cfg.iterations > 0) {
    fopts.max_iter = cfg.iterations;
    fopts.fixed_iterations = true;
  }
  TransportPlan<Real> plan;
  const auto fwd = detail::measure(cfg.repeats, [&] { plan = ot_forward(prob, fopts); });
  base.time_forward_ns = fwd.median_ns;
  base.peak_bytes_forward = fwd.peak_bytes;
  base.converged = std::all_of(plan.converged.begin(), plan.converged.end(), [](auto c) { return c != 0; });

  for (Method method : cfg.methods) {
    BenchRecord rec = base;
    rec.method = std::string(method_name(method));
    OtGradients<Real> grads;
    detail::Measured bwd;
    auto implicit = [&](OtBackwardMethod which) {
      return detail::measure(cfg.repeats, [&] { grads = ot_backward(prob, plan, std::span<const Real>(dJdP), which, cfg.parallel_batch); });
    };
    switch (method) {
      case Method::structured: bwd = implicit(OtBackwardMethod::structured_block); break;
      case Method::full_inverse: bwd = implicit(OtBackwardMethod::structured_full); break;
      case Method::unrolled: bwd = implicit(OtBackwardMethod::unrolled); break;
      case Method::fd: {
        SinkhornOptions tight = fopts;
        if (!fopts.fixed_iterations) tight.tol = single ? 1e-6 : 1e-13;
        bwd = detail::measure(cfg.repeats, [&] {
          std::vector<double> ms(prob.M.begin(), prob.M.end());
          std::vector<double> gs(dJdP.begin(), dJdP.end());
          TransportProblem<Real> probe = prob;
          const auto g = fd_vjp(
              [&](std::span<const double> at) {
                std::copy(at.begin(), at.end(), probe.M.begin());
                const auto p = ot_forward(probe, tight);
                return std::vector<double>(p.P.begin(), p.P.end());
              },
              ms, gs);
          grads.dJdM.assign(g.begin(), g.end());
          grads.dJdr.assign(prob.r.size(), Real(0));
          grads.dJdc.assign(prob.c.size(), Real(0));
        });
        break;
      }
      default:
        throw ConfigError("method not available for ot");
    }
    rec.time_backward_ns = bwd.median_ns;
    rec.peak_bytes_backward = bwd.peak_bytes;
    auto hash = detail::digest<Real>(grads.dJdM);
    hash = detail::digest<Real>(grads.dJdr, hash);
    rec.gradient_digest = detail::digest<Real>(grads.dJdc, hash);
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::vector<BenchRecord> run_bench(const BenchConfig& cfg) {
  return cfg.float32 ? run_bench_typed<float>(cfg) : run_bench_typed<double>(cfg);
}

namespace detail {

inline std::string format_number(double value) {
  char buffer[64];
  const auto res = std::to_chars(buffer, buffer + sizeof(buffer), value, std::chars_format::fixed);
  return std::string(buffer, res.ptr);
}

}  // namespace detail

inline std::string format_csv(const std::vector<BenchRecord>& records) {
  if (records.empty()) throw InvalidArgument("write_csv: no records to write");
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : records) {
    out += r.node + ',' + r.method + ',' + r.penalty + ',' + detail::format_number(r.gamma) + ',' +
           std::to_string(r.batch) + ',' + std::to_string(r.m) + ',' + std::to_string(r.n) + ',' +
           std::to_string(r.iterations) + ',' + std::to_string(r.repeats) + ',' + std::to_string(r.seed) + ',' +
           std::to_string(r.time_forward_ns) + ',' + std::to_string(r.time_backward_ns) + ',' +
           std::to_string(r.peak_bytes_forward) + ',' + std::to_string(r.peak_bytes_backward) + ',' +
           (r.converged ? "1" : "0") + '\n';
  }
  return out;
}

inline void write_csv(const std::vector<BenchRecord>& records, const std::string& path) {
  const std::string text = format_csv(records);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("write_csv: cannot open '" + path + "' for writing");
  file << text;
  file.flush();
  if (!file) throw IoError("write_csv: failed writing '" + path + "'");
}

}  // namespace ddn::bench
