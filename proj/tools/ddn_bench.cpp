// Benchmark CLI: times forward and backward passes of the pooling and OT
// nodes and writes one CSV row per backward method.
//
// Exit codes: 0 success, 1 invalid configuration, 2 solver failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "ddn/bench.hpp"

namespace {

void print_summary(const std::vector<ddn::bench::BenchRecord>& records) {
  for (const auto& r : records) {
    std::printf("%-8s %-15s m=%zu n=%zu batch=%zu  fwd %.3f ms  bwd %.3f ms  peak fwd %zu B  peak bwd %zu B%s\n",
                r.node.c_str(), r.method.c_str(), r.m, r.n, r.batch, r.time_forward_ns * 1e-6,
                r.time_backward_ns * 1e-6, r.peak_bytes_forward, r.peak_bytes_backward,
                r.converged ? "" : "  (forward not converged)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forward/backward timing and workspace profiles for the robust pooling and optimal transport nodes"};
  app.set_version_flag("--version", "ddn_bench 0.1");

  ddn::bench::BenchConfig cfg;
  std::string node = "pooling";
  std::vector<std::string> methods{"structured"};

  app.add_option("--node", node, "pooling | ot")->capture_default_str();
  app.add_option("--method", methods,
                 "Backward method(s): structured, full-inverse, unrolled, naive-jacobian, fd. "
                 "Repeat the flag or separate with commas")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--penalty", cfg.penalty, "quadratic | pseudo-huber | huber | welsch | trunc-quad (pooling)")
      ->capture_default_str();
  app.add_option("--alpha", cfg.alpha, "Penalty scale alpha (pooling)")->capture_default_str();
  app.add_option("--gamma", cfg.gamma,
                 "Entropic weight (ot). The KL term is divided by gamma, so larger gamma means "
                 "weaker regularization and sharper plans")
      ->capture_default_str();
  app.add_option("--batch", cfg.batch, "Batch size")->capture_default_str();
  app.add_option("--m", cfg.m, "Pooling: feature dimension. OT: rows")->capture_default_str();
  app.add_option("--n", cfg.n, "Pooling: number of points. OT: columns")->capture_default_str();
  app.add_option("--iterations", cfg.iterations,
                 "OT: exact Sinkhorn iteration count (0 = run to tolerance). Pooling: L-BFGS cap (0 = default)")
      ->capture_default_str();
  app.add_option("--repeats", cfg.repeats, "Timed repeats; the median is reported")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Instance seed")->capture_default_str();
  app.add_option("--out", cfg.out_path, "CSV output path (stdout summary only when omitted)");
  app.add_flag("--log-domain", cfg.log_domain, "Use log-domain Sinkhorn (ot)");
  app.add_flag("--float32", cfg.float32, "Run in single precision");
  app.add_flag("--parallel-batch", cfg.parallel_batch,
               "Process batch elements in parallel; timings then measure throughput, not latency");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::vector<ddn::bench::BenchRecord> records;
  try {
    cfg.node = ddn::bench::parse_node(node);
    cfg.methods.clear();
    for (const auto& m : methods) cfg.methods.push_back(ddn::bench::parse_method(m));
    cfg.validate();
  } catch (const ddn::Error& e) {
    std::cerr << "ddn_bench: configuration error: " << e.what() << '\n';
    return 1;
  }

  try {
    records = ddn::bench::run_bench(cfg);
  } catch (const ddn::bench::ConfigError& e) {
    std::cerr << "ddn_bench: configuration error: " << e.what() << '\n';
    return 1;
  } catch (const ddn::Error& e) {
    std::cerr << "ddn_bench: solver failure: " << e.what() << '\n';
    return 2;
  }

  print_summary(records);
  if (!cfg.out_path.empty()) {
    try {
      ddn::bench::write_csv(records, cfg.out_path);
    } catch (const ddn::Error& e) {
      std::cerr << "ddn_bench: " << e.what() << '\n';
      return 2;
    }
  }
  return 0;
}
