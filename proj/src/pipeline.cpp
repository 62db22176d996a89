#include "pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <tuple>

#include "errors.hpp"
#include "io.hpp"

namespace soiguard {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string slug(const std::string& label) {
  std::string out;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.') {
      out += c;
    } else if (c == '/') {
      out += '-';
    } else if (!out.empty() && out.back() != '_') {
      out += '_';
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

std::string soi_csv(std::span<const double> soi, int is_adv, const std::string& provenance) {
  std::ostringstream os;
  os << provenance << "sample_id,soi,is_adv\n";
  for (std::size_t i = 0; i < soi.size(); ++i) os << i << ',' << fmt(soi[i]) << ',' << is_adv << '\n';
  return os.str();
}

std::string histogram_csv(std::span<const double> clean, std::span<const double> adv, std::size_t bins,
                          const std::string& provenance) {
  double lo = clean[0], hi = clean[0];
  for (auto list : {clean, adv}) {
    for (double v : list) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> nc(bins, 0), na(bins, 0);
  auto bin_of = [&](double v) { return std::min(bins - 1, static_cast<std::size_t>((v - lo) / width)); };
  for (double v : clean) ++nc[bin_of(v)];
  for (double v : adv) ++na[bin_of(v)];
  std::ostringstream os;
  os << provenance << "bin_left,bin_right,clean_count,adv_count\n";
  for (std::size_t k = 0; k < bins; ++k) {
    os << fmt(lo + width * static_cast<double>(k)) << ',' << fmt(lo + width * static_cast<double>(k + 1))
       << ',' << nc[k] << ',' << na[k] << '\n';
  }
  return os.str();
}

std::vector<double> negated(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = -v[i];
  return out;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void fill_attack_fields(MetricRow& r, const AttackSpec& a) {
  r.attack = attack_label(a);
  if (a.family == AttackFamily::gaussian_patch) return;
  r.eps = a.eps.text;
  if (a.family == AttackFamily::pgd) {
    r.alpha = a.alpha.text;
    r.n = std::to_string(a.n);
  }
}

std::uint64_t label_seed(std::uint64_t seed, const std::string& label) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : label) h = (h ^ c) * 1099511628211ULL;
  return derive_seed(seed, h);
}

std::string checkpoint_file(Stage s) {
  switch (s) {
    case Stage::pretrain:
      return "pretrained.json";
    case Stage::surrogate:
      return "surrogate.json";
    case Stage::phase1:
      return "phase1.json";
    case Stage::phase2:
      return "phase2.json";
  }
  return "model.json";
}

}  // namespace

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::pretrain:
      return "pretrain";
    case Stage::surrogate:
      return "surrogate";
    case Stage::phase1:
      return "phase1";
    case Stage::phase2:
      return "phase2";
  }
  return "?";
}

RunContext::RunContext(ExperimentConfig cfg, std::uint64_t seed,
                       std::optional<std::filesystem::path> dir, Logger log)
    : cfg_(std::move(cfg)), seed_(seed), dir_(std::move(dir)), log_(std::move(log)),
      config_hash_(config_hash(cfg_)) {
  // Fields may have been edited after parsing.
  cfg_.source = config_to_json(cfg_);
}

void RunContext::log(const std::string& stage, const std::string& msg) const {
  if (log_) log_(stage, msg);
}

std::string RunContext::provenance_line() const {
  return "# config_hash=" + config_hash_ + " seed=" + std::to_string(seed_) + "\n";
}

void RunContext::write_text(const std::string& name, const std::string& content) const {
  if (dir_) write_file_atomic(*dir_ / name, content);
}

const DataSplit& RunContext::data() {
  if (!data_) {
    data_ = run_stage("data", [&] {
      auto opt = cfg_.dataset;
      opt.seed = derive_seed(seed_, 0x64617461);
      auto d = load_dataset(opt);
      log("data", std::to_string(d.train.size()) + " train / " + std::to_string(d.test.size()) +
                      " test samples of " + shape_to_string(d.train.images.shape));
      return d;
    });
  }
  return *data_;
}

const Dataset& RunContext::calib_set() {
  if (!calib_) {
    const auto& test = data().test;
    const auto need = cfg_.eval.calib_samples + cfg_.eval.eval_samples;
    if (test.size() < need) {
      throw StageError("data", "test split has " + std::to_string(test.size()) +
                                   " samples, calib_samples + eval_samples needs " + std::to_string(need));
    }
    calib_ = test.head(cfg_.eval.calib_samples);
    std::vector<std::size_t> idx(cfg_.eval.eval_samples);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = cfg_.eval.calib_samples + i;
    eval_ = test.subset(idx);
  }
  return *calib_;
}

const Dataset& RunContext::eval_set() {
  calib_set();
  return *eval_;
}

std::string RunContext::stage_hash(Stage s) const {
  const auto& src = cfg_.source;
  json base{{"seed", seed_}, {"dataset", src.at("dataset")}, {"model", src.at("model")}};
  switch (s) {
    case Stage::pretrain:
      base["pretrain"] = src.at("pretrain");
      return json_hash(base);
    case Stage::surrogate:
      base["surrogate"] = src.at("surrogate");
      return json_hash(base);
    case Stage::phase1:
      return json_hash({{"parent", stage_hash(Stage::pretrain)}, {"phase1", src.at("phase1")}});
    case Stage::phase2:
      return json_hash({{"parent", stage_hash(Stage::phase1)}, {"phase2", src.at("phase2")}});
  }
  return {};
}

AttackSpec RunContext::seeded(const AttackSpec& spec) const {
  AttackSpec s = spec;
  s.seed = derive_seed(seed_, spec.seed);
  return s;
}

ModelGraph RunContext::train_stage(Stage s) {
  const auto name = stage_name(s);
  const auto& d = data().train;
  auto epoch_log = [&](const EpochStats& st) {
    log(name, "epoch " + std::to_string(st.epoch + 1) + " loss " + fmt(st.mean_loss));
  };
  auto init = [&](std::uint64_t tag) {
    std::size_t classes = 0;
    for (int y : d.labels) classes = std::max(classes, static_cast<std::size_t>(y) + 1);
    Shape in(d.images.shape.begin() + 1, d.images.shape.end());
    auto layers = cfg_.model.layers.empty() ? mini_vgg_layers(classes) : cfg_.model.layers;
    return build_model(in, layers, cfg_.model.quant_bits, derive_seed(seed_, tag));
  };
  switch (s) {
    case Stage::pretrain: {
      auto t = cfg_.pretrain;
      t.seed = derive_seed(derive_seed(seed_, 2), cfg_.pretrain.seed);
      return train_standard(init(1), d, t, epoch_log);
    }
    case Stage::surrogate: {
      auto t = cfg_.surrogate;
      t.seed = derive_seed(derive_seed(seed_, 4), cfg_.surrogate.seed);
      return train_standard(init(3), d, t, epoch_log);
    }
    case Stage::phase1: {
      auto p = cfg_.phase1;
      p.train.seed = derive_seed(derive_seed(seed_, 5), p.train.seed);
      p.attack = seeded(p.attack);
      const auto& pre = model(Stage::pretrain);
      log(name, "generating adversarial half with " + attack_label(p.attack));
      return train_phase1(pre, d, p, epoch_log);
    }
    case Stage::phase2: {
      auto p = cfg_.phase2;
      p.train.seed = derive_seed(derive_seed(seed_, 6), p.train.seed);
      p.attack = seeded(p.attack);
      return train_phase2(model(Stage::phase1), d, p, epoch_log);
    }
  }
  throw StageError(name, "unknown stage");
}

const ModelGraph& RunContext::model(Stage s) {
  if (const auto it = models_.find(s); it != models_.end()) return it->second;
  const auto name = stage_name(s);
  const auto hash = stage_hash(s);
  ModelGraph m = run_stage(name, [&] {
    if (dir_ && std::filesystem::exists(*dir_ / checkpoint_file(s))) {
      std::map<std::string, std::string> extra;
      auto loaded = load_checkpoint(*dir_ / checkpoint_file(s), &extra);
      if (extra["stage_hash"] != hash) {
        throw StageError(name, (*dir_ / checkpoint_file(s)).string() +
                                   " was produced by a different configuration (stage hash " +
                                   extra["stage_hash"] + ", expected " + hash +
                                   "); use a fresh output directory");
      }
      log(name, "resumed from " + (*dir_ / checkpoint_file(s)).string());
      return loaded;
    }
    auto trained = train_stage(s);
    const auto acc = classification_accuracy(trained, eval_set().images, eval_set().labels);
    log(name, "clean accuracy " + fmt(acc));
    if (dir_) {
      save_checkpoint(trained, *dir_ / checkpoint_file(s),
                      {{"config_hash", config_hash_},
                       {"stage", name},
                       {"stage_hash", hash},
                       {"seed", std::to_string(seed_)}});
    }
    return trained;
  });
  return models_.emplace(s, std::move(m)).first->second;
}

void RunContext::adopt(Stage s, ModelGraph m) { models_.insert_or_assign(s, std::move(m)); }

const Tensor& RunContext::adversarial(Stage target, const Dataset& data, const std::string& split,
                                      const AttackSpec& spec) {
  const auto s = seeded(spec);
  const auto key = stage_name(target) + "|" + split + "|" + attack_label(s) + "|" + std::to_string(s.seed);
  if (const auto it = adv_cache_.find(key); it != adv_cache_.end()) return it->second;
  const ModelGraph* surrogate = spec.surrogate ? &model(Stage::surrogate) : nullptr;
  const auto& tgt = model(target);
  auto adv = run_stage("attack", [&] { return attack_dataset(tgt, surrogate, data, s); });
  return adv_cache_.emplace(key, std::move(adv)).first->second;
}

SoIProbabilityLUT RunContext::build_lut(Stage target) {
  const auto& calib = calib_set();
  const auto& m = model(target);
  const auto& adv = adversarial(target, calib, "calib", cfg_.lut.attack);
  return run_stage("build-lut", [&] {
    const auto dc = compute_soi(m, calib.images);
    const auto da = compute_soi(m, adv);
    auto lut = soiguard::build_lut(dc, da, cfg_.lut.bins, cfg_.lut.smoothing);
    lut.meta.builder = seeded(cfg_.lut.attack);
    log("build-lut", std::to_string(lut.samples.size()) + " entries over [" + fmt(lut.meta.range_lo) +
                         ", " + fmt(lut.meta.range_hi) + "]");
    if (dir_) {
      const auto prov = provenance_line();
      write_text("soi_lut_clean.csv", soi_csv(dc, 0, prov));
      write_text("soi_lut_adv.csv", soi_csv(da, 1, prov));
    }
    return lut;
  });
}

const SoIProbabilityLUT& RunContext::lut() {
  if (lut_) return *lut_;
  const auto lut_hash = json_hash({{"model", stage_hash(Stage::phase2)}, {"lut", cfg_.source.at("lut")},
                                   {"eval", cfg_.source.at("eval").at("calib_samples")}});
  if (dir_ && std::filesystem::exists(*dir_ / "lut.json")) {
    lut_ = run_stage("build-lut", [&] {
      const auto j = json::parse(read_file_text(*dir_ / "lut.json"));
      if (j.at("meta").value("lut_hash", std::string()) != lut_hash) {
        throw StageError("build-lut", (*dir_ / "lut.json").string() +
                                          " was produced by a different configuration; use a fresh output directory");
      }
      log("build-lut", "resumed from " + (*dir_ / "lut.json").string());
      return lut_from_json(j);
    });
    return *lut_;
  }
  lut_ = build_lut(Stage::phase2);
  if (dir_) {
    auto j = lut_to_json(*lut_);
    j["meta"]["lut_hash"] = lut_hash;
    j["meta"]["config_hash"] = config_hash_;
    j["meta"]["seed"] = seed_;
    write_text("lut.json", j.dump(2) + "\n");
  }
  return *lut_;
}

void RunContext::adopt_lut(SoIProbabilityLUT lut) { lut_ = std::move(lut); }

std::vector<MetricRow> RunContext::evaluate(Stage target, const SoIProbabilityLUT& lut,
                                            const std::vector<AttackSpec>& attacks, bool write_files) {
  const auto& ev = eval_set();
  const auto& m = model(target);
  std::vector<MetricRow> rows;
  const auto soi_c = compute_soi(m, ev.images);
  const auto pred_c = predict(m, ev.images);
  const auto score_c = lut_scores(lut, soi_c);
  const auto neg_c = negated(soi_c);
  const auto prov = provenance_line();
  if (write_files) write_text("soi_clean.csv", soi_csv(soi_c, 0, prov));
  for (const auto& a : attacks) {
    const auto& adv = adversarial(target, ev, "eval", a);
    run_stage("evaluate", [&] {
      const auto soi_a = compute_soi(m, adv);
      const auto pred_a = predict(m, adv);
      const auto auc = roc_auc(score_c, lut_scores(lut, soi_a));
      const auto soi_auc = roc_auc(neg_c, negated(soi_a));
      std::size_t hits = 0;
      for (std::size_t i = 0; i < pred_a.size(); ++i) hits += pred_a[i] == ev.labels[i] ? 1 : 0;
      const auto label = attack_label(a);
      for (auto mode : cfg_.eval.modes) {
        MetricRow r;
        fill_attack_fields(r, a);
        r.mode = mode;
        r.roc_auc = auc;
        r.soi_auc = soi_auc;
        r.mean_soi_clean = mean_of(soi_c);
        r.mean_soi_adv = mean_of(soi_a);
        r.adv_accuracy = static_cast<double>(hits) / static_cast<double>(pred_a.size());
        const MetricOptions opt{mode, cfg_.eval.stochastic_repeats, label_seed(seed_, label)};
        r.accuracy = acceptance_metric(lut, soi_c, pred_c, ev.labels, true, opt);
        r.error = acceptance_metric(lut, soi_a, pred_a, ev.labels, false, opt);
        rows.push_back(r);
      }
      log("evaluate", label + " roc_auc " + fmt(auc) + " soi_auc " + fmt(soi_auc));
      if (write_files) {
        write_text("soi_adv_" + slug(label) + ".csv", soi_csv(soi_a, 1, prov));
        write_text("plotdata_" + slug(label) + ".csv",
                   histogram_csv(soi_c, soi_a, cfg_.eval.plot_bins, prov));
      }
      return 0;
    });
  }
  if (write_files) {
    std::ostringstream os;
    os << prov << "sample,prob\n";
    for (std::size_t k = 0; k < lut.samples.size(); ++k) os << fmt(lut.samples[k]) << ',' << fmt(lut.probs[k]) << '\n';
    write_text("plotdata_lut.csv", os.str());
    write_text("metrics.csv", metrics_csv(rows, prov));
  }
  return rows;
}

std::vector<MetricRow> RunContext::evaluate() {
  return evaluate(Stage::phase2, lut(), cfg_.eval.attacks, true);
}

XbarReport RunContext::simulate_xbar(const CrossbarConfig& xcfg, const std::vector<AttackSpec>& attacks,
                                     bool write_files) {
  const auto& m = model(Stage::phase2);
  const auto& calib = calib_set();
  const auto& ev = eval_set();
  const auto& calib_adv = adversarial(Stage::phase2, calib, "calib", cfg_.lut.attack);
  std::vector<const Tensor*> advs;
  for (const auto& a : attacks) advs.push_back(&adversarial(Stage::phase2, ev, "eval", a));

  return run_stage("simulate-xbar", [&] {
    auto mapped = apply_variation(map_layer(m, 0, xcfg), derive_seed(derive_seed(seed_, 0x78626172), xcfg.chip_seed));
    const int in_bits = m.quant_bits > 0 ? m.quant_bits : 8;
    auto hw_soi = [&](const Tensor& x) {
      const auto z = crossbar_forward(mapped, x, in_bits);
      std::vector<double> out(x.shape[0]);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = hardware_soi_from_macs(mapped, z.item(i)).soi;
      return out;
    };
    XbarReport rep;
    rep.cycles_per_soi = datapath_geometry(mapped).cycles;
    auto lut_hw = soiguard::build_lut(hw_soi(calib.images), hw_soi(calib_adv), cfg_.lut.bins, cfg_.lut.smoothing);

    ModelGraph qm = m;
    if (qm.quant_bits == 0) qm.quant_bits = 8;
    const auto z_sw = first_layer_mac(qm, ev.images);
    const auto z_hw = crossbar_forward(mapped, ev.images, in_bits);
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < ev.size(); ++i) {
      const auto a = z_sw.item(i), b = z_hw.item(i);
      double peak = 0.0, worst = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        peak = std::max(peak, std::abs(a[k]));
        worst = std::max(worst, std::abs(a[k] - b[k]));
        abs_sum += std::abs(a[k] - b[k]);
      }
      if (peak > 0.0) rep.max_rel_error = std::max(rep.max_rel_error, worst / peak);
    }
    rep.mean_abs_error = abs_sum / static_cast<double>(z_sw.numel());

    std::vector<double> soi_c(ev.size());
    for (std::size_t i = 0; i < ev.size(); ++i) soi_c[i] = hardware_soi_from_macs(mapped, z_hw.item(i)).soi;
    const auto pred_c = predict(m, ev.images);
    const auto score_c = lut_scores(lut_hw, soi_c);
    const auto neg_c = negated(soi_c);
    for (std::size_t ai = 0; ai < attacks.size(); ++ai) {
      const auto soi_a = hw_soi(*advs[ai]);
      const auto pred_a = predict(m, *advs[ai]);
      const auto auc = roc_auc(score_c, lut_scores(lut_hw, soi_a));
      const auto label = attack_label(attacks[ai]);
      for (auto mode : cfg_.eval.modes) {
        MetricRow r;
        fill_attack_fields(r, attacks[ai]);
        r.mode = mode;
        r.roc_auc = auc;
        r.soi_auc = roc_auc(neg_c, negated(soi_a));
        r.mean_soi_clean = mean_of(soi_c);
        r.mean_soi_adv = mean_of(soi_a);
        const MetricOptions opt{mode, cfg_.eval.stochastic_repeats, label_seed(seed_, label)};
        r.accuracy = acceptance_metric(lut_hw, soi_c, pred_c, ev.labels, true, opt);
        r.error = acceptance_metric(lut_hw, soi_a, pred_a, ev.labels, false, opt);
        rep.rows.push_back(r);
      }
      log("simulate-xbar", label + " hardware roc_auc " + fmt(auc));
    }
    if (write_files) {
      const auto prov = provenance_line();
      write_text("xbar_metrics.csv", metrics_csv(rep.rows, prov));
      write_text("conductances.csv", prov + conductance_csv(mapped));
      json fid{{"config_hash", config_hash_},
               {"seed", seed_},
               {"crossbar", crossbar_to_json(xcfg)},
               {"max_rel_error", rep.max_rel_error},
               {"mean_abs_error", rep.mean_abs_error},
               {"cycles_per_soi", rep.cycles_per_soi},
               {"physical_arrays", mapped.physical_arrays()}};
      write_text("xbar.json", fid.dump(2) + "\n");
    }
    return rep;
  });
}

XbarReport RunContext::simulate_xbar() {
  return simulate_xbar(cfg_.xbar.crossbar, cfg_.xbar.attacks.empty() ? cfg_.eval.attacks : cfg_.xbar.attacks,
                       true);
}

EnergyReport RunContext::energy(bool write_files) {
  return run_stage("energy", [&] {
    std::size_t h = 1, w = 1;
    if (cfg_.energy.out_hw) {
      std::tie(h, w) = *cfg_.energy.out_hw;
    } else {
      const auto& d = data().train;
      std::size_t classes = 0;
      for (int y : d.labels) classes = std::max(classes, static_cast<std::size_t>(y) + 1);
      Shape in(d.images.shape.begin() + 1, d.images.shape.end());
      auto layers = cfg_.model.layers.empty() ? mini_vgg_layers(classes) : cfg_.model.layers;
      const auto shapes = layer_output_shapes(build_model(in, layers, 0, 0));
      if (shapes[0].size() == 3) {
        h = shapes[0][1];
        w = shapes[0][2];
      }
    }
    const auto counts = derive_counts(cfg_.xbar.crossbar, h, w);

    std::map<std::size_t, std::size_t> hist;
    std::optional<SoIProbabilityLUT> lut;
    if (lut_) {
      lut = lut_;
    } else if (dir_ && std::filesystem::exists(*dir_ / "lut.json")) {
      lut = lut_from_json(json::parse(read_file_text(*dir_ / "lut.json")));
    }
    if (lut && dir_) {
      for (const auto& entry : std::filesystem::directory_iterator(*dir_)) {
        const auto fname = entry.path().filename().string();
        if (fname != "soi_clean.csv" && fname.rfind("soi_adv_", 0) != 0) continue;
        std::istringstream in(read_file_text(entry.path()));
        std::string line;
        std::vector<double> soi;
        while (std::getline(in, line)) {
          if (line.empty() || line[0] == '#' || line.rfind("sample_id", 0) == 0) continue;
          const auto c1 = line.find(',');
          soi.push_back(std::stod(line.substr(c1 + 1)));
        }
        for (const auto& [k, v] : nx_histogram(*lut, soi)) hist[k] += v;
      }
    }
    std::size_t n_x = 0;
    if (cfg_.energy.n_x) {
      n_x = *cfg_.energy.n_x;
    } else if (!hist.empty()) {
      n_x = hist.rbegin()->first;
    } else {
      const std::size_t entries = lut ? lut->samples.size() : cfg_.lut.bins;
      n_x = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(entries)))));
    }
    auto rep = energy_report(counts, cfg_.energy.energies, n_x, hist);
    log("energy", "E_STATIC " + pretty_energy(rep.e_static) + ", E_SoI " + pretty_energy(rep.e_soi) +
                      " at N_X=" + std::to_string(n_x));
    if (write_files) {
      auto j = report_to_json(rep);
      j["config_hash"] = config_hash_;
      j["seed"] = seed_;
      j["components"] = energies_to_json(cfg_.energy.energies);
      write_text("energy.json", j.dump(2) + "\n");
      write_text("energy.csv", provenance_line() + report_csv_header() + "\n" + report_csv_row(rep) + "\n");
    }
    return rep;
  });
}

std::string RunContext::attack_summary(bool write_files) {
  const auto& ev = eval_set();
  const auto& m = model(Stage::phase2);
  const auto clean_acc = classification_accuracy(m, ev.images, ev.labels);
  std::ostringstream os;
  os << provenance_line() << "attack,eps,alpha,n,clean_accuracy,adv_accuracy,max_linf,mean_soi_adv\n";
  for (const auto& a : cfg_.eval.attacks) {
    const auto& adv = adversarial(Stage::phase2, ev, "eval", a);
    double linf = 0.0;
    for (std::size_t k = 0; k < adv.data.size(); ++k) linf = std::max(linf, std::abs(adv.data[k] - ev.images.data[k]));
    MetricRow r;
    fill_attack_fields(r, a);
    os << csv_field(r.attack) << ',' << csv_field(r.eps) << ',' << csv_field(r.alpha) << ',' << r.n << ','
       << fmt(clean_acc) << ',' << fmt(classification_accuracy(m, adv, ev.labels)) << ',' << fmt(linf) << ','
       << fmt(mean_of(compute_soi(m, adv))) << '\n';
  }
  if (write_files) write_text("attacks.csv", os.str());
  return os.str();
}

std::vector<MetricRow> RunContext::run_pipeline() {
  if (dir_) {
    std::filesystem::create_directories(*dir_);
    std::filesystem::remove(*dir_ / "FAILED");
  }
  try {
    json report{{"config_hash", config_hash_}, {"seed", seed_}, {"config", cfg_.source}};
    for (auto s : {Stage::pretrain, Stage::phase1, Stage::phase2}) {
      const auto& m = model(s);
      report["clean_accuracy"][stage_name(s)] =
          classification_accuracy(m, eval_set().images, eval_set().labels);
    }
    lut();
    const auto rows = evaluate();
    const auto xb = simulate_xbar();
    const auto en = energy(true);
    if (dir_) {
      for (auto s : {Stage::pretrain, Stage::surrogate, Stage::phase1, Stage::phase2}) {
        const auto path = *dir_ / checkpoint_file(s);
        if (!std::filesystem::exists(path)) continue;
        const auto manifest = json::parse(read_file_text(path));
        report["checkpoints"][stage_name(s)] = {{"manifest", checkpoint_file(s)},
                                                {"manifest_sha1", git_blob_sha1(read_file_text(path))},
                                                {"blob_sha1", manifest.at("blob_sha1")}};
      }
      report["xbar"] = {{"max_rel_error", xb.max_rel_error}, {"mean_abs_error", xb.mean_abs_error}};
      report["energy"] = report_to_json(en);
      json soi_rows = json::array();
      for (const auto& r : rows) {
        if (r.mode != cfg_.eval.modes.front()) continue;
        soi_rows.push_back({{"attack", r.attack},
                            {"soi_auc", r.soi_auc},
                            {"mean_soi_clean", r.mean_soi_clean},
                            {"mean_soi_adv", r.mean_soi_adv},
                            {"adv_accuracy", r.adv_accuracy}});
      }
      report["soi"] = soi_rows;
      write_text("report.json", report.dump(2) + "\n");
    }
    return rows;
  } catch (const std::exception& e) {
    if (dir_) {
      const std::string stage = dynamic_cast<const StageError*>(&e) ? static_cast<const StageError&>(e).stage() : "pipeline";
      write_file_atomic(*dir_ / "FAILED", "stage=" + stage + "\n" + e.what() + "\n");
    }
    throw;
  }
}

std::string metrics_csv(const std::vector<MetricRow>& rows, const std::string& provenance) {
  std::ostringstream os;
  os << provenance << "attack,eps,alpha,n,roc_auc,accuracy,error,mode\n";
  for (const auto& r : rows) {
    os << csv_field(r.attack) << ',' << csv_field(r.eps) << ',' << csv_field(r.alpha) << ',' << r.n << ','
       << fmt(r.roc_auc) << ',' << fmt(r.accuracy) << ',' << fmt(r.error) << ',' << mode_name(r.mode) << '\n';
  }
  return os.str();
}

std::filesystem::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.seeds.size() == 1) return cfg.output_dir;
  return cfg.output_dir / ("seed_" + std::to_string(seed));
}

const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes{"train_strength", "detector_strength", "on_off_ratio",
                                             "xbar_size",      "device_preset",     "frac_volume"};
  return axes;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                const std::vector<json>& values, Logger log) {
  if (std::find(sweep_axes().begin(), sweep_axes().end(), axis) == sweep_axes().end()) {
    throw StageError("sweep", "unknown axis '" + axis + "'");
  }
  if (values.empty()) throw StageError("sweep", "axis '" + axis + "' has no values");
  const bool needs_surrogate = std::any_of(cfg.eval.attacks.begin(), cfg.eval.attacks.end(),
                                           [](const AttackSpec& a) { return a.surrogate; });
  std::vector<SweepRow> out;
  std::string provenance;
  for (auto seed : cfg.seeds) {
    const auto root = cfg.output_dir / ("sweep_" + axis) / ("seed_" + std::to_string(seed));
    RunContext base(cfg, seed, root / "base", log);
    provenance = "# config_hash=" + config_hash(cfg) + " axis=" + axis + "\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto& v = values[i];
      const std::string vtext = v.is_string() ? v.get<std::string>() : v.dump();
      ExperimentConfig c = cfg;
      auto point = [&] {
        RunContext ctx(c, seed, root / ("point_" + std::to_string(i)), log);
        ctx.adopt(Stage::pretrain, base.model(Stage::pretrain));
        if (needs_surrogate) ctx.adopt(Stage::surrogate, base.model(Stage::surrogate));
        return ctx;
      };
      std::vector<MetricRow> rows;
      run_stage("sweep", [&] {
        if (axis == "train_strength") {
          c.phase1.attack = attack_from_json(v);
          c.source = config_to_json(c);
          auto ctx = point();
          rows = ctx.evaluate();
        } else if (axis == "detector_strength") {
          c.lut.attack = attack_from_json(v);
          c.source = config_to_json(c);
          auto ctx = point();
          ctx.adopt(Stage::phase1, base.model(Stage::phase1));
          ctx.adopt(Stage::phase2, base.model(Stage::phase2));
          rows = ctx.evaluate();
        } else if (axis == "frac_volume") {
          AttackSpec g;
          g.family = AttackFamily::gaussian_patch;
          for (const auto& a : cfg.eval.attacks) {
            if (a.family == AttackFamily::gaussian_patch) g = a;
          }
          g.frac_volume = v.get<double>();
          validate_attack(g);
          auto ctx = point();
          ctx.adopt(Stage::phase1, base.model(Stage::phase1));
          ctx.adopt(Stage::phase2, base.model(Stage::phase2));
          rows = ctx.evaluate(Stage::phase2, base.lut(), {g}, true);
        } else {
          if (axis == "on_off_ratio") {
            c.xbar.crossbar.on_off_ratio = v.get<double>();
          } else if (axis == "xbar_size") {
            c.xbar.crossbar.rows = c.xbar.crossbar.cols = v.get<std::size_t>();
          } else {
            c.xbar.crossbar = with_preset(c.xbar.crossbar, v.get<std::string>());
          }
          validate_crossbar(c.xbar.crossbar);
          c.source = config_to_json(c);
          auto ctx = point();
          ctx.adopt(Stage::phase1, base.model(Stage::phase1));
          ctx.adopt(Stage::phase2, base.model(Stage::phase2));
          rows = ctx.simulate_xbar().rows;
        }
        return 0;
      });
      for (const auto& r : rows) out.push_back({seed, vtext, r});
    }
  }
  std::ostringstream os;
  os << provenance << "seed,axis,value,attack,eps,alpha,n,roc_auc,accuracy,error,mode\n";
  for (const auto& r : out) {
    const auto& m = r.metrics;
    os << r.seed << ',' << axis << ',' << csv_field(r.value) << ',' << csv_field(m.attack) << ','
       << csv_field(m.eps) << ',' << csv_field(m.alpha) << ',' << m.n << ',' << fmt(m.roc_auc) << ','
       << fmt(m.accuracy) << ',' << fmt(m.error) << ',' << mode_name(m.mode) << '\n';
  }
  write_file_atomic(cfg.output_dir / ("sweep_" + axis + ".csv"), os.str());
  return out;
}

}  // namespace soiguard
