// Acceptance runner: one PASS/FAIL line per criterion, exit code 0 iff all pass.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "attacks.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "detector.hpp"
#include "energy.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "io.hpp"
#include "oracles.hpp"
#include "pipeline.hpp"
#include "soi.hpp"
#include "xbar.hpp"

using namespace soiguard;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path work;
  fs::path cli;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::set<int> only;
  bool verbose = false;
};

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v, int prec = 3) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num(v[i], prec);
  return s + "]";
}

double rel(double a, double b) {
  if (a == b) return 0.0;
  return std::fabs(a - b) / std::max(std::fabs(b), std::numeric_limits<double>::min());
}

// Lazily trained MNIST runs, one per seed, checkpointed under the work directory.
class MnistRuns {
 public:
  explicit MnistRuns(const Options& opt) : opt_(opt) {
    cfg_ = load_config(fs::path(SOIGUARD_SOURCE_DIR) / "configs" / "mnist.json");
  }

  const ExperimentConfig& config() const { return cfg_; }

  RunContext& at(std::uint64_t seed) {
    auto& slot = runs_[seed];
    if (!slot) {
      const auto dir = opt_.work / "mnist" / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      Logger log;
      if (opt_.verbose) {
        log = [seed](const std::string& stage, const std::string& msg) {
          std::fprintf(stderr, "  [seed %llu %s] %s\n", static_cast<unsigned long long>(seed), stage.c_str(),
                       msg.c_str());
        };
      }
      slot = std::make_unique<RunContext>(cfg_, seed, dir, log);
    }
    return *slot;
  }

  const SoIProbabilityLUT& lut(std::uint64_t seed, Stage s) {
    const auto key = std::make_pair(seed, s);
    auto it = luts_.find(key);
    if (it == luts_.end()) it = luts_.emplace(key, at(seed).build_lut(s)).first;
    return it->second;
  }

 private:
  const Options& opt_;
  ExperimentConfig cfg_;
  std::map<std::uint64_t, std::unique_ptr<RunContext>> runs_;
  std::map<std::pair<std::uint64_t, Stage>, SoIProbabilityLUT> luts_;
};

const MetricRow& threshold_row(const std::vector<MetricRow>& rows, std::size_t attack_index) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].mode != DetectMode::threshold) continue;
    if (seen++ == attack_index) return rows[i];
  }
  throw std::runtime_error("no threshold row for attack " + std::to_string(attack_index));
}

// ---------------------------------------------------------------------------

Outcome energy_fixtures() {
  CrossbarConfig cfg;
  cfg.rows = cfg.cols = 128;
  cfg.mux_ratio = 8;
  const auto c = derive_counts(cfg, 32, 32);
  const ComponentEnergies ce;
  const double e_static = static_energy(c, ce) * 1e12;
  const double e_soi = soi_energy(c, ce, 9).e_soi * 1e12;
  const bool counts_ok = c.n_l1 == 16 && c.n_l2 == 31 && c.n_r == 16 && c.n_c == 8192;
  const bool ok = counts_ok && rel(e_static, 2674.7) <= 0.005 && rel(e_soi, 2679.7) <= 0.005;
  std::ostringstream os;
  os << "N_L1=" << c.n_l1 << " N_L2=" << c.n_l2 << " N_R=" << c.n_r << " N_C=" << c.n_c
     << " E_STATIC=" << num(e_static, 1) << " pJ E_SoI(9)=" << num(e_soi, 1) << " pJ";
  return {ok, os.str()};
}

Outcome gradient_suite() {
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0, models = 0;
  for (std::uint64_t s = 0; s < 24; ++s) {
    const auto m = testutil::random_model(5000 + s);
    const auto x = testutil::random_input(m.input_shape, 3, 70 + s);
    const std::size_t classes = num_classes(m);
    const std::vector<int> y{0, static_cast<int>(1 % classes), static_cast<int>(2 % classes)};
    const std::vector<int> adv{1, 0, 1};
    const auto ce = oracle::check_gradients(m, x, y, LossSpec{}, {});
    const auto p1 = oracle::check_gradients(m, x, y, LossSpec{LossKind::phase1, 0.3, 0.1, 0.6}, adv);
    worst = std::max({worst, ce.max_rel_error, p1.max_rel_error});
    checked += ce.checked + p1.checked;
    skipped += ce.skipped + p1.skipped;
    ++models;
  }
  const bool ok = models >= 20 && worst < 1e-4 && skipped * 100 < checked;
  return {ok, std::to_string(models) + " models, " + std::to_string(checked) + " coordinates, max rel error " +
                  sci(worst) + ", kink-skipped " + std::to_string(skipped)};
}

Outcome attack_constraints(MnistRuns& runs) {
  auto& ctx = runs.at(runs.config().seeds.front());
  const auto& model = ctx.model(Stage::pretrain);
  const auto& test = ctx.data().test;
  const std::size_t n = std::min<std::size_t>(1000, test.size());
  const auto x = slice_batch(test.images, 0, n);
  const std::vector<int> y(test.labels.begin(), test.labels.begin() + static_cast<long>(n));

  const double tol = std::ldexp(1.0, -40);
  auto check = [&](const Tensor& adv, double eps, std::size_t& bad) {
    for (std::size_t i = 0; i < n; ++i) {
      bool ok = true;
      const auto a = adv.item(i), b = x.item(i);
      for (std::size_t k = 0; k < a.size(); ++k) {
        ok = ok && std::fabs(a[k] - b[k]) <= eps + tol && a[k] >= 0.0 && a[k] <= 1.0;
      }
      bad += ok ? 0 : 1;
    }
  };
  std::size_t bad_fgsm = 0, bad_pgd = 0;
  const double eps_f = 8.0 / 255.0;
  check(fgsm(model, x, y, eps_f), eps_f, bad_fgsm);
  const auto spec = make_pgd("16/255", "8/255", 10, 1);
  check(pgd(model, x, y, ctx.seeded(spec)), spec.eps.value, bad_pgd);

  const auto one = make_pgd("8/255", "8/255", 1);
  const bool same = pgd(model, x, y, one, PgdStart::zero) == fgsm(model, x, y, one.eps.value);
  const bool ok = n == 1000 && bad_fgsm == 0 && bad_pgd == 0 && same;
  return {ok, std::to_string(n) + " FGSM + " + std::to_string(n) + " PGD samples, violations " +
                  std::to_string(bad_fgsm) + "/" + std::to_string(bad_pgd) +
                  ", PGD(n=1,alpha=eps,zero start)==FGSM: " + (same ? "yes" : "no")};
}

Outcome soi_oracle(MnistRuns& runs) {
  double worst_oracle = 0.0, worst_scale = 0.0;
  std::size_t samples = 0;
  auto check_model = [&](const ModelGraph& m, const Tensor& x) {
    const auto soi = compute_soi(m, x);
    for (std::size_t i = 0; i < soi.size(); ++i) {
      worst_oracle = std::max(worst_oracle, rel(soi[i], oracle::soi(m, x.item(i))));
      ++samples;
    }
    for (double c : {0.125, 0.7, 3.0, 41.5}) {
      auto scaled = m;
      for (auto& v : scaled.params.at(weight_name(0)).data) v *= c;
      const auto s2 = compute_soi(scaled, x);
      for (std::size_t i = 0; i < s2.size(); ++i) worst_scale = std::max(worst_scale, rel(s2[i], c * soi[i]));
    }
  };
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (int bits : {0, 8}) {
      const auto m = testutil::random_model(9000 + s, bits);
      check_model(m, testutil::random_input(m.input_shape, 5, s));
    }
  }
  auto& ctx = runs.at(runs.config().seeds.front());
  check_model(ctx.model(Stage::pretrain), slice_batch(ctx.data().test.images, 0, 50));
  const bool ok = worst_oracle < 1e-12 && worst_scale < 1e-12;
  return {ok, std::to_string(samples) + " samples, max rel error vs oracle " + sci(worst_oracle) +
                  ", homogeneity " + sci(worst_scale)};
}

Outcome detector_oracles() {
  Rng rng(2024);
  std::size_t probes = 0, lookup_bad = 0;
  for (std::size_t n : {1, 2, 3, 5, 8, 16, 31, 64, 100, 257}) {
    SoIProbabilityLUT lut;
    double s = standard_normal(rng);
    for (std::size_t k = 0; k < n; ++k) {
      lut.samples.push_back(s);
      lut.probs.push_back(uniform01(rng));
      s += 1e-3 + uniform01(rng);
    }
    std::vector<double> pts{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (double e : lut.samples) {
      pts.push_back(e);
      pts.push_back(std::nextafter(e, -1e300));
      pts.push_back(std::nextafter(e, 1e300));
    }
    for (int i = 0; i < 10000; ++i) pts.push_back(uniform(rng, lut.samples.front() - 2.0, lut.samples.back() + 2.0));
    for (double p : pts) {
      const auto r = lookup(lut, p);
      const auto idx = oracle::linear_lookup(lut, p);
      lookup_bad += (r.index != idx || r.prob != lut.probs[idx]) ? 1 : 0;
      ++probes;
    }
  }

  std::size_t auc_bad = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(1 + rng() % 25), b(1 + rng() % 25);
    for (auto& v : a) v = static_cast<double>(rng() % 6);
    for (auto& v : b) v = static_cast<double>(rng() % 6);
    auc_bad += roc_auc(a, b) == oracle::pairwise_auc(a, b) ? 0 : 1;
  }

  SoIProbabilityLUT lut{{0.0}, {0.7}, {}};
  Rng draw(77);
  const int draws = 100000;
  int ones = 0;
  for (int i = 0; i < draws; ++i) ones += detect(lut, 0.5, draw);
  const double rate = ones / static_cast<double>(draws);
  const bool ok = lookup_bad == 0 && auc_bad == 0 && std::fabs(rate - 0.7) <= 0.01;
  return {ok, "lookup mismatches " + std::to_string(lookup_bad) + "/" + std::to_string(probes) +
                  ", AUC mismatches " + std::to_string(auc_bad) + "/100, P=0.7 rate " + num(rate)};
}

Outcome dual_phase(MnistRuns& runs, const Options& opt) {
  const auto strong = runs.config().eval.attacks.at(0);
  bool ok = true;
  std::vector<double> before, after, gap_b, gap_a;
  for (auto seed : opt.seeds) {
    auto& ctx = runs.at(seed);
    const auto pre = ctx.evaluate(Stage::pretrain, runs.lut(seed, Stage::pretrain), {strong}, false).front();
    const auto post = ctx.evaluate(Stage::phase1, runs.lut(seed, Stage::phase1), {strong}, false).front();
    before.push_back(pre.soi_auc);
    after.push_back(post.soi_auc);
    gap_b.push_back(pre.mean_soi_adv - pre.mean_soi_clean);
    gap_a.push_back(post.mean_soi_adv - post.mean_soi_clean);
    ok = ok && post.soi_auc >= 0.90 && pre.soi_auc <= 0.75 && gap_a.back() > gap_b.back();
  }
  return {ok, "AUC before " + join(before) + " after " + join(after) + ", SoI gap before " + join(gap_b, 4) +
                  " after " + join(gap_a, 4)};
}

std::vector<AttackSpec> weak_attacks(const ExperimentConfig& cfg) {
  return {cfg.eval.attacks.at(1), make_pgd("2/255", "0.5/255", 10, 21)};
}

Outcome phase2_contract(MnistRuns& runs, const Options& opt) {
  bool frozen = true;
  std::vector<double> acc1, acc2, dacc, err1, err2, derr;
  const auto weak = weak_attacks(runs.config());
  for (auto seed : opt.seeds) {
    auto& ctx = runs.at(seed);
    const auto& m1 = ctx.model(Stage::phase1);
    const auto& m2 = ctx.model(Stage::phase2);
    frozen = frozen && m1.params.at(weight_name(0)) == m2.params.at(weight_name(0)) &&
             m1.params.at(bias_name(0)) == m2.params.at(bias_name(0));
    const auto& ev = ctx.eval_set();
    acc1.push_back(classification_accuracy(m1, ev.images, ev.labels));
    acc2.push_back(classification_accuracy(m2, ev.images, ev.labels));
    dacc.push_back(acc2.back() - acc1.back());
    const auto r1 = ctx.evaluate(Stage::phase1, runs.lut(seed, Stage::phase1), weak, false);
    const auto r2 = ctx.evaluate(Stage::phase2, runs.lut(seed, Stage::phase2), weak, false);
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t a = 0; a < weak.size(); ++a) {
      e1 += threshold_row(r1, a).error / static_cast<double>(weak.size());
      e2 += threshold_row(r2, a).error / static_cast<double>(weak.size());
    }
    err1.push_back(e1);
    err2.push_back(e2);
    derr.push_back(e2 - e1);
  }
  const bool ok = frozen && median(dacc) >= 0.0 && median(derr) <= 0.0;
  return {ok, std::string("layer 0 frozen: ") + (frozen ? "yes" : "no") + ", clean acc phase1 " + join(acc1) +
                  " phase2 " + join(acc2) + ", weak-attack Error phase1 " + join(err1) + " phase2 " + join(err2)};
}

Outcome wb_bb(MnistRuns& runs, const Options& opt) {
  std::vector<AttackSpec> wb{make_pgd("8/255", "2/255", 10, 31), make_pgd("16/255", "4/255", 10, 32),
                             make_pgd("32/255", "4/255", 10, 33), make_pgd("32/255", "8/255", 10, 34)};
  std::vector<AttackSpec> bb = wb;
  for (auto& a : bb) a.surrogate = true;
  std::vector<std::vector<double>> diffs(wb.size()), aw(wb.size()), ab(wb.size());
  std::ostringstream os;
  for (auto seed : opt.seeds) {
    auto& ctx = runs.at(seed);
    const auto rw = ctx.evaluate(Stage::phase2, ctx.lut(), wb, false);
    const auto rb = ctx.evaluate(Stage::phase2, ctx.lut(), bb, false);
    for (std::size_t a = 0; a < wb.size(); ++a) {
      aw[a].push_back(threshold_row(rw, a).roc_auc);
      ab[a].push_back(threshold_row(rb, a).roc_auc);
      diffs[a].push_back(std::fabs(aw[a].back() - ab[a].back()));
    }
  }
  bool ok = true;
  for (std::size_t a = 0; a < wb.size(); ++a) {
    const double m = median(diffs[a]);
    ok = ok && m <= 0.05;
    os << (a ? "; " : "") << wb[a].eps.text << "," << wb[a].alpha.text << ": WB " << num(median(aw[a]), 3)
       << " BB " << num(median(ab[a]), 3) << " |dAUC| " << num(m, 3);
  }
  return {ok, os.str()};
}

Outcome xbar_fidelity(MnistRuns& runs, const Options& opt) {
  const auto strong = runs.config().eval.attacks.at(0);
  const auto base = runs.config().xbar.crossbar;
  double worst_ideal = 0.0, worst_bound_ratio = 0.0;
  std::map<std::string, std::vector<double>> auc;
  for (auto seed : opt.seeds) {
    auto& ctx = runs.at(seed);
    CrossbarConfig ideal = with_preset(base, "sram");
    ideal.on_off_ratio = 100.0;
    ideal.adc_bits = 12;
    worst_ideal = std::max(worst_ideal, ctx.simulate_xbar(ideal, {}, false).max_rel_error);

    const auto& m = ctx.model(Stage::phase2);
    const auto x = slice_batch(ctx.eval_set().images, 0, 100);
    const auto mapped = map_layer(m, 0, with_preset(base, "sram"));
    double bound = 0.0;
    for (const auto& t : mapped.tiles) bound += mapped.partial_sum_bound(t);
    const auto hw = hardware_soi(mapped, x, m.quant_bits > 0 ? m.quant_bits : 8);
    const auto sw = compute_soi(m, x);
    for (std::size_t i = 0; i < sw.size(); ++i) {
      worst_bound_ratio = std::max(worst_bound_ratio, std::fabs(hw[i].soi - sw[i]) / bound);
    }

    for (const char* preset : {"sram", "rram", "fefet"}) {
      auc[preset].push_back(ctx.simulate_xbar(with_preset(base, preset), {strong}, false).rows.front().roc_auc);
    }
    for (double ratio : {10.0, 100.0}) {
      auto c = with_preset(base, "rram");
      c.on_off_ratio = ratio;
      auc["on_off_" + num(ratio, 0)].push_back(ctx.simulate_xbar(c, {strong}, false).rows.front().roc_auc);
    }
  }
  const double sram = median(auc["sram"]), rram = median(auc["rram"]), fefet = median(auc["fefet"]);
  const double lo = median(auc["on_off_10"]), hi = median(auc["on_off_100"]);
  const bool ok = worst_ideal < 1e-3 && worst_bound_ratio <= 1.0 + 1e-9 && sram >= rram && rram >= fefet && hi >= lo;
  return {ok, "ideal max rel error " + sci(worst_ideal) + ", |hw-sw| SoI / bound " + num(worst_bound_ratio, 3) +
                  ", AUC sram/rram/fefet " + join(auc["sram"]) + "/" + join(auc["rram"]) + "/" + join(auc["fefet"]) +
                  ", on_off 10/100 " + join(auc["on_off_10"]) + "/" + join(auc["on_off_100"])};
}

Outcome gaussian_trend(MnistRuns& runs, const Options& opt) {
  const std::vector<double> fracs{0.25, 0.5, 1.0};
  std::vector<std::vector<double>> auc(fracs.size());
  for (auto seed : opt.seeds) {
    auto& ctx = runs.at(seed);
    std::vector<AttackSpec> attacks;
    for (std::size_t f = 0; f < fracs.size(); ++f) {
      AttackSpec a;
      a.family = AttackFamily::gaussian_patch;
      a.frac_volume = fracs[f];
      a.sigma_noise = 0.5;
      a.seed = 40 + f;
      attacks.push_back(a);
    }
    const auto rows = ctx.evaluate(Stage::phase2, ctx.lut(), attacks, false);
    for (std::size_t f = 0; f < fracs.size(); ++f) auc[f].push_back(threshold_row(rows, f).roc_auc);
  }
  std::vector<double> med;
  for (const auto& a : auc) med.push_back(median(a));
  const bool ok = med[0] <= med[1] && med[1] <= med[2];
  return {ok, "median AUC at frac 0.25/0.5/1.0: " + join(med)};
}

Outcome determinism(const Options& opt) {
  const auto cfg = fs::path(SOIGUARD_SOURCE_DIR) / "configs" / "mnist.json";
  std::vector<std::string> csv;
  for (const char* name : {"det_a", "det_b"}) {
    const auto out = opt.work / name;
    fs::remove_all(out);
    const std::string cmd = "\"" + opt.cli.string() + "\" -q pipeline --config \"" + cfg.string() + "\" --out \"" +
                            out.string() + "\"";
    if (std::system(cmd.c_str()) != 0) return {false, "pipeline run failed: " + cmd};
    csv.push_back(read_file_text(out / "metrics.csv"));
  }
  const bool ok = !csv[0].empty() && csv[0] == csv[1];
  return {ok, "two fresh MNIST pipeline runs, metrics.csv " + std::to_string(csv[0].size()) + " bytes, " +
                  (ok ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  std::vector<int> only;
  CLI::App app{"acceptance criteria runner"};
  app.add_option("--work", opt.work, "scratch directory for runs")->required();
  app.add_option("--cli", opt.cli, "path to the soiguard command-line binary")->required();
  app.add_option("--seeds", opt.seeds, "seeds for the MNIST criteria");
  app.add_option("--only", only, "criterion numbers to run");
  app.add_flag("-v,--verbose", opt.verbose, "log training progress");
  CLI11_PARSE(app, argc, argv);
  opt.only.insert(only.begin(), only.end());
  fs::create_directories(opt.work);

  MnistRuns runs(opt);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"energy fixtures", energy_fixtures},
      {"gradient suite", gradient_suite},
      {"attack constraints", [&] { return attack_constraints(runs); }},
      {"SoI oracle", [&] { return soi_oracle(runs); }},
      {"detector oracles", detector_oracles},
      {"dual-phase efficacy", [&] { return dual_phase(runs, opt); }},
      {"Phase2 contract", [&] { return phase2_contract(runs, opt); }},
      {"white-box/black-box agnosticism", [&] { return wb_bb(runs, opt); }},
      {"crossbar fidelity", [&] { return xbar_fidelity(runs, opt); }},
      {"Gaussian-patch trend", [&] { return gaussian_trend(runs, opt); }},
      {"end-to-end determinism", [&] { return determinism(opt); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!opt.only.empty() && !opt.only.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %2d %s: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                r.detail.c_str(), secs);
    std::fflush(stdout);
    failed += r.pass ? 0 : 1;
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
