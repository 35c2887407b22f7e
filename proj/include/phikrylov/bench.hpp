#pragma once

// Sweeps of (problem, scheme, n, h) with errors against a reference
// solution, written as CSV for precision diagrams.

#include <optional>
#include <string>
#include <vector>

#include "phikrylov/test_problems.hpp"

namespace phikrylov {

enum class Reference { Exact, Self };

struct SweepConfig {
  std::string problem;
  std::string scheme;
  Index n = 0;
  std::vector<double> h;
  double tol = 1e-14;
  /// Defaults to Exact when the problem has an exact solution, else Self.
  std::optional<Reference> reference;
  std::optional<double> t_end;
  /// Worker threads; 0 picks the hardware count. PHIKRYLOV_THREADS caps it.
  unsigned threads = 0;
};

struct RunRecord {
  std::string problem;
  std::string scheme;
  Index n = 0;
  double h = 0;
  double tol = 0;
  /// Max norm against the reference; NaN if the run failed.
  double error = 0;
  double wall_s = 0;
  long substeps = 0;
  long matvecs = 0;
  double avg_m = 0;
  /// Empty on success.
  std::string failure;
};

/// Parallel worker count after applying PHIKRYLOV_THREADS.
unsigned sweep_threads(unsigned requested);

/// One record per h, in input order. Failures are recorded, not thrown;
/// only configuration errors (unknown ids, empty h list) throw.
std::vector<RunRecord> run_sweep(const SweepConfig& config);

inline constexpr const char* kCsvHeader = "problem,scheme,n,h,tol,error,wall_s,substeps,matvecs,avg_m";

std::string format_csv(const std::vector<RunRecord>& records);
void emit_csv(const std::vector<RunRecord>& records, const std::string& path);
std::vector<RunRecord> parse_csv(const std::string& text);

}  // namespace phikrylov
