#include "phikrylov/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace phikrylov {

unsigned sweep_threads(unsigned requested) {
  unsigned n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  if (const char* env = std::getenv("PHIKRYLOV_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return std::max(1u, n);
}

namespace {

constexpr double kReferenceRefinement = 8.0;
constexpr double kReferenceTol = 1e-14;

RunRecord run_one(const SweepConfig& cfg, const OdeProblem& prob, const EpirkTableau& scheme,
                  double h, const Vector<double>& reference) {
  RunRecord rec;
  rec.problem = cfg.problem;
  rec.scheme = cfg.scheme;
  rec.n = cfg.n;
  rec.h = h;
  rec.tol = cfg.tol;
  try {
    KrylovOptions opts;
    opts.tol = cfg.tol;
    const auto t0 = std::chrono::steady_clock::now();
    const IntegrateResult res = integrate(scheme, prob, h, opts);
    const auto t1 = std::chrono::steady_clock::now();
    rec.wall_s = std::chrono::duration<double>(t1 - t0).count();
    rec.error = (res.u - reference).lpNorm<Eigen::Infinity>();
    if (!std::isfinite(rec.error)) throw DomainError("non-finite solution");
    rec.substeps = res.stats.substeps;
    rec.matvecs = res.stats.matvecs;
    rec.avg_m = res.avg_m;
  } catch (const std::exception& e) {
    rec.error = std::numeric_limits<double>::quiet_NaN();
    rec.failure = e.what();
  }
  return rec;
}

}  // namespace

std::vector<RunRecord> run_sweep(const SweepConfig& cfg) {
  if (cfg.h.empty()) throw DomainError("run_sweep: empty h list");
  for (double h : cfg.h) {
    if (!(h > 0) || !std::isfinite(h)) throw DomainError("run_sweep: h values must be positive");
  }
  ProblemOptions popts;
  popts.t_end = cfg.t_end;
  const OdeProblem prob = make_problem(cfg.problem, cfg.n, popts);
  const EpirkTableau& scheme = tableau(parse_scheme(cfg.scheme));

  const Reference ref_kind = cfg.reference.value_or(prob.exact ? Reference::Exact : Reference::Self);
  Vector<double> reference;
  if (ref_kind == Reference::Exact) {
    if (!prob.exact) throw DomainError("run_sweep: problem '" + cfg.problem + "' has no exact solution");
    reference = prob.exact(prob.t_end);
  } else {
    const double h_ref = *std::min_element(cfg.h.begin(), cfg.h.end()) / kReferenceRefinement;
    KrylovOptions opts;
    opts.tol = kReferenceTol;
    try {
      reference = integrate(scheme, prob, h_ref, opts).u;
    } catch (const std::exception& e) {
      // Every row would be meaningless; record them all as failed.
      std::vector<RunRecord> out;
      for (double h : cfg.h) {
        RunRecord rec;
        rec.problem = cfg.problem;
        rec.scheme = cfg.scheme;
        rec.n = cfg.n;
        rec.h = h;
        rec.tol = cfg.tol;
        rec.error = std::numeric_limits<double>::quiet_NaN();
        rec.failure = std::string("reference solution failed: ") + e.what();
        out.push_back(rec);
      }
      return out;
    }
  }

  std::vector<RunRecord> records(cfg.h.size());
  const unsigned workers = std::min<unsigned>(sweep_threads(cfg.threads),
                                              static_cast<unsigned>(cfg.h.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < cfg.h.size(); ++i) {
      records[i] = run_one(cfg, prob, scheme, cfg.h[i], reference);
    }
    return records;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < cfg.h.size(); i = next++) {
        records[i] = run_one(cfg, prob, scheme, cfg.h[i], reference);
      }
    });
  }
  for (auto& t : pool) t.join();
  return records;
}

std::string format_csv(const std::vector<RunRecord>& records) {
  std::string out = std::string(kCsvHeader) + "\n";
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, ",%ld,%.17g,%.17g,%.17g,%.17g,%ld,%ld,%.17g\n",
                  static_cast<long>(r.n), r.h, r.tol, r.error, r.wall_s, r.substeps, r.matvecs,
                  r.avg_m);
    out += r.problem + "," + r.scheme + buf;
  }
  return out;
}

void emit_csv(const std::vector<RunRecord>& records, const std::string& path) {
  if (records.empty()) throw DomainError("emit_csv: no records");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("emit_csv: cannot open '" + path + "' for writing");
  f << format_csv(records);
  f.close();
  if (!f) throw std::runtime_error("emit_csv: write to '" + path + "' failed");
}

std::vector<RunRecord> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw DomainError("parse_csv: missing or unexpected header");
  }
  std::vector<RunRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) {
      throw DomainError("parse_csv: line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " fields");
    }
    auto num = [&](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || *end != '\0') {
        throw DomainError("parse_csv: bad number '" + s + "' on line " + std::to_string(line_no));
      }
      return v;
    };
    RunRecord r;
    r.problem = cells[0];
    r.scheme = cells[1];
    r.n = static_cast<Index>(num(cells[2]));
    r.h = num(cells[3]);
    r.tol = num(cells[4]);
    r.error = num(cells[5]);
    r.wall_s = num(cells[6]);
    r.substeps = static_cast<long>(num(cells[7]));
    r.matvecs = static_cast<long>(num(cells[8]));
    r.avg_m = num(cells[9]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace phikrylov
