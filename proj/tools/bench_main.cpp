// Precision-diagram sweeps from the command line.
//
//   bench --problem adr --scheme epirk4s3a --n 100 \
//         --h 0.01,0.005,0.0025 --tol 1e-14 --out adr.csv

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "phikrylov/bench.hpp"

int main(int argc, char** argv) {
  using namespace phikrylov;

  CLI::App app{"Constant-step exponential integrator sweeps with a Krylov phi-function solver"};
  // -h is taken by the step-size option.
  app.set_help_flag("--help", "print this help and exit");
  SweepConfig cfg;
  std::vector<double> h;
  std::string out;
  std::string reference;
  double t_end = 0;
  long n = 0;

  app.add_option("--problem", cfg.problem, "allen-cahn | adr | brusselator | gray-scott | semilinear")
      ->required();
  app.add_option("--scheme", cfg.scheme, "epirk4s3 | epirk4s3a | epirk5p1 | exprb5s3")->required();
  app.add_option("--n", n, "grid points per dimension")->required()->check(CLI::PositiveNumber);
  app.add_option("--h", h, "comma-separated step sizes")->required()->delimiter(',');
  app.add_option("--tol", cfg.tol, "solver tolerance")->default_val(1e-14);
  app.add_option("--out", out, "CSV output path")->required();
  auto* ref_opt = app.add_option("--reference", reference, "exact | self")
                      ->check(CLI::IsMember({"exact", "self"}));
  auto* tend_opt = app.add_option("--tend", t_end, "end time override");
  app.add_option("--threads", cfg.threads, "worker threads (0 = all cores)")->default_val(0);

  CLI11_PARSE(app, argc, argv);

  cfg.n = n;
  cfg.h = h;
  if (*ref_opt) cfg.reference = reference == "exact" ? Reference::Exact : Reference::Self;
  if (*tend_opt) cfg.t_end = t_end;

  try {
    const std::vector<RunRecord> records = run_sweep(cfg);
    emit_csv(records, out);
    int failed = 0;
    for (const auto& r : records) {
      if (!r.failure.empty()) {
        ++failed;
        std::fprintf(stderr, "h = %g failed: %s\n", r.h, r.failure.c_str());
      } else {
        std::printf("h = %-12g error = %-12.6e wall = %.3fs  substeps = %ld  avg_m = %.2f\n", r.h,
                    r.error, r.wall_s, r.substeps, r.avg_m);
      }
    }
    return failed > 0 ? 2 : 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bench: %s\n", e.what());
    return 1;
  }
}
