// MovieLens-1M acceptance run. Needs GME_ML1M_DIR pointing at ratings.dat, movies.dat
// and users.dat; exits 77 (skipped) without it.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

#include "gme/experiment.hpp"

using namespace gme;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void line(bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("%s  %-34s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
}

std::string fmt4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

}  // namespace

int main() {
  const char* dir = std::getenv("GME_ML1M_DIR");
  if (!dir || !*dir) {
    std::printf("SKIP  ML-1M criteria: set GME_ML1M_DIR to the extracted ml-1m directory\n");
    return 77;
  }
  auto cfg = load_config(GME_CONFIG_DIR "/ml1m.json");
  cfg.source.movielens_dir = dir;
  cfg.out_dir = (fs::current_path() / "acceptance-runs" / "ml1m").string();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Pipeline p(cfg, &std::cerr);
    p.run_all();
  } catch (const std::exception& e) {
    std::printf("FAIL  ML-1M pipeline threw: %s\n", e.what());
    return 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::map<std::string, std::map<std::string, std::pair<double, int>>> acc;
  for (const auto& r : read_results_csv(read_file(fs::path(cfg.out_dir) / "metrics.csv"))) {
    auto& a = acc[r.variant][r.phase];
    a.first += r.auc;
    ++a.second;
  }
  auto mean = [&](const std::string& v, const std::string& ph) {
    const auto& a = acc.at(v).at(ph);
    return a.first / a.second;
  };

  const double rnd = mean("RndEmb", "cold"), meta = mean("MetaEmb", "cold"), g = mean("GME-G", "cold"),
               a = mean("GME-A", "cold");
  line(a > g && g > meta && meta > rnd, "7a ML-1M cold-start ordering",
       "RndEmb " + fmt4(rnd) + " MetaEmb " + fmt4(meta) + " GME-G " + fmt4(g) + " GME-A " + fmt4(a));
  line(std::abs(rnd - 0.7107) <= 0.03 && std::abs(a - 0.7232) <= 0.03, "7b ML-1M absolute AUC",
       "RndEmb " + fmt4(rnd) + " (0.7107 +- 0.03), GME-A " + fmt4(a) + " (0.7232 +- 0.03)");
  line(a - rnd >= 0.008, "7c ML-1M GME-A gain", "GME-A - RndEmb " + fmt4(a - rnd) + " (>= 0.008)");
  line(secs < 45 * 60, "7 ML-1M runtime", std::to_string(static_cast<int>(secs)) + " s (limit 2700 s)");

  const double u = mean("GME-A\\GAT", "cold");
  line(a > u, "8 GAT ablation (ML-1M)", "GME-A " + fmt4(a) + " vs average pooling " + fmt4(u));

  bool monotone = true, top = true;
  std::string worst;
  for (const auto& [v, phases] : acc) {
    const double c = mean(v, "cold"), w1 = mean(v, "warm-1"), w2 = mean(v, "warm-2");
    if (!(c <= w1 && w1 <= w2)) {
      monotone = false;
      worst += " " + v;
    }
    for (const char* ph : {"warm-1", "warm-2"})
      if (v != "GME-A" && mean(v, ph) > mean("GME-A", ph)) top = false;
  }
  line(monotone && top, "9 ML-1M warm-up trend",
       std::string("non-decreasing for every variant: ") + (monotone ? "yes" : "no (" + worst + " )") +
           "; GME-A top in both warm rounds: " + (top ? "yes" : "no"));

  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
